use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlcsc_cli::commands;
use mlcsc_cli::CliError;

#[derive(Parser)]
#[command(name = "mlcsc", version, about = "Multi-layer convolutional sparse coding")]
struct Cli {
    /// Overrides `training.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn the dictionaries described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sparse-code one PGM image.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also store the intermediate codes of every layer.
        #[arg(long)]
        all_layers: bool,
    },
    /// Synthesize the image of a stored code as PNG.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write dictionary montages, reconstructions and training curves.
    ExportFigures {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, resume } => {
            let s = commands::cmd_train(&config, resume.as_deref(), cli.seed)?;
            match s.final_metrics {
                Some(m) => println!(
                    "trained {} epochs into {}: mse {:.6e}",
                    s.epochs_completed,
                    s.out_dir.display(),
                    m.mse
                ),
                None => println!("nothing to do: {} epochs already complete", s.epochs_completed),
            }
        }
        Command::Encode {
            ckpt,
            image,
            out,
            all_layers,
        } => {
            let s = commands::cmd_encode(&ckpt, &image, &out, all_layers)?;
            println!(
                "{}: {} nonzeros, l1 {:.6e}, mse {:.6e}, {} iterations",
                out.display(),
                s.l0,
                s.l1,
                s.mse,
                s.fista_iterations
            );
        }
        Command::Reconstruct { ckpt, code, out } => {
            let mse = commands::cmd_reconstruct(&ckpt, &code, &out)?;
            match mse {
                Some(m) => println!("{}: mse {m:.6e}", out.display()),
                None => println!("{}", out.display()),
            }
        }
        Command::ExportFigures { ckpt, out } => {
            let s = commands::cmd_export_figures(&ckpt, &out)?;
            for (name, tiles, (h, w)) in &s.montages {
                println!("{name}: {tiles} tiles of {h}x{w}");
            }
            for name in &s.charts {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
