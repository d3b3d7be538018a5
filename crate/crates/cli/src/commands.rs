//! The four subcommands. Each returns a small summary on success so callers
//! (and tests) can inspect what was produced.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mlcsc::data::{load_corpus, load_pgm, preprocess, Corpus};
use mlcsc::model::{compose_effective, project_down, reconstruct, Atoms, SparseCode};
use mlcsc::trainer::{encode, init_model, train_epoch, EpochMetrics, TrainingState};
use mlcsc::Plane;
use ndarray::{Array2, Array3};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::container::{Container, Entry};
use crate::error::CliError;
use crate::figures;

/// Version of the code container written by `encode`.
pub const CODE_FORMAT_VERSION: u64 = 1;
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";
const RECONSTRUCTION_SAMPLES: usize = 6;

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:05}.ckpt")
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads a config and makes its relative paths relative to the file itself.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.output.dir = resolve(base, &cfg.output.dir);
    if let Some(p) = &cfg.data.path {
        cfg.data.path = Some(resolve(base, p));
    }
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let source = cfg.data_path().ok_or_else(|| {
        CliError::Config(format!(
            "data.path: not set and {} is not defined",
            crate::config::DATA_DIR_ENV
        ))
    })?;
    load_corpus(&source, &cfg.preprocess_config())
        .map_err(|e| CliError::Data(format!("{}: {e}", source.display())))
}

pub fn metrics_csv(history: &[EpochMetrics], num_layers: usize) -> String {
    let mut out = String::from("epoch,mse");
    for i in 1..=num_layers {
        out.push_str(&format!(",dict_density_{i}"));
    }
    out.push_str(",code_density,mean_fista_iters\n");
    for m in history {
        out.push_str(&format!("{},{}", m.epoch, m.mse));
        for d in &m.dict_density {
            out.push_str(&format!(",{d}"));
        }
        out.push_str(&format!(",{},{}\n", m.code_density, m.mean_fista_iters));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub epochs_completed: usize,
    pub final_metrics: Option<EpochMetrics>,
}

/// Trains from scratch or from `resume`, writing metrics after every epoch,
/// periodic checkpoints and a final one. On divergence the state at the last
/// completed epoch is saved as `last_good.ckpt`.
pub fn cmd_train(config_path: &Path, resume: Option<&Path>, seed: Option<u64>) -> Result<TrainSummary, CliError> {
    let cfg = load_config(config_path, seed)?;
    let tcfg = cfg.training_config();
    let mut state = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let arch: Vec<_> = ck
                .state
                .model
                .layers()
                .iter()
                .map(|l| (l.num_atoms(), l.in_channels(), l.kernel_size()))
                .collect();
            let mut channels = 1;
            let wanted: Vec<_> = cfg
                .architecture()
                .iter()
                .map(|s| {
                    let e = (s.num_atoms, channels, s.kernel);
                    channels = s.num_atoms;
                    e
                })
                .collect();
            if arch != wanted || ck.state.model.input_shape() != cfg.input_shape() {
                return Err(CliError::Config(format!(
                    "model: checkpoint {} was trained with a different architecture",
                    path.display()
                )));
            }
            info!("resuming from {} at epoch {}", path.display(), ck.state.epoch);
            ck.state
        }
        None => TrainingState::new(init_model(&cfg.architecture(), cfg.input_shape(), tcfg.seed)?, tcfg.seed),
    };

    let corpus = load_data(&cfg)?;
    info!("loaded {} images", corpus.len());
    let out_dir = cfg.output.dir.clone();
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let num_layers = state.model.num_layers();

    while state.epoch < tcfg.epochs {
        let last_good = state.clone();
        match train_epoch(&mut state, &corpus.images, &tcfg, &mut |_, _| {}) {
            Ok(m) => info!(
                "epoch {}/{}: mse {:.6e}, code density {:.4}",
                m.epoch, tcfg.epochs, m.mse, m.code_density
            ),
            Err(e) => {
                let err = CliError::from(e);
                if matches!(err, CliError::Divergence(_)) {
                    Checkpoint::new(last_good, cfg.clone()).save(&out_dir.join(LAST_GOOD_CHECKPOINT))?;
                }
                return Err(err);
            }
        }
        fs::write(out_dir.join(METRICS_FILE), metrics_csv(&state.metrics_history, num_layers))?;
        let every = cfg.output.checkpoint_every;
        if every > 0 && state.epoch % every == 0 {
            Checkpoint::new(state.clone(), cfg.clone()).save(&ckpt_dir.join(checkpoint_name(state.epoch)))?;
        }
    }
    fs::write(out_dir.join(METRICS_FILE), metrics_csv(&state.metrics_history, num_layers))?;
    Checkpoint::new(state.clone(), cfg).save(&out_dir.join(FINAL_CHECKPOINT))?;
    Ok(TrainSummary {
        out_dir,
        epochs_completed: state.epoch,
        final_metrics: state.metrics_history.last().cloned(),
    })
}

fn load_image(cfg: &RunConfig, path: &Path) -> Result<Plane, CliError> {
    let raw = load_pgm(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    preprocess(&raw, &cfg.preprocess_config()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn f64_entry(c: &mut Container, name: &str, a: &Array3<f64>) {
    c.insert_f64(name, a.shape(), a.iter().copied().collect());
}

#[derive(Debug, Clone)]
pub struct EncodeSummary {
    pub l0: usize,
    pub l1: f64,
    pub mse: f64,
    pub fista_iterations: usize,
}

/// Codes one image with the checkpoint's model. The container holds
/// `code/<L>`, the preprocessed `input` and, with `all_layers`, every lower
/// code `code/<i>` obtained top-down.
pub fn cmd_encode(ckpt: &Path, image: &Path, out: &Path, all_layers: bool) -> Result<EncodeSummary, CliError> {
    let ck = Checkpoint::load(ckpt)?;
    let model = &ck.state.model;
    let y = load_image(&ck.config, image)?;
    let enc = encode(model, &y, &ck.config.fista_params()).map_err(CliError::data)?;
    let recon = enc.reconstruction()?;
    let mse = recon.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;

    let l = model.num_layers();
    let mut c = Container::new();
    c.insert("meta", Entry::U64(vec![CODE_FORMAT_VERSION, l as u64]));
    f64_entry(&mut c, &format!("code/{l}"), &enc.code.maps);
    if all_layers {
        let mut code = enc.code.clone();
        for i in (2..=l).rev() {
            code = project_down(&code, model, i)?;
            f64_entry(&mut c, &format!("code/{}", i - 1), &code.maps);
        }
    }
    c.insert_f64("input", &[y.nrows(), y.ncols()], y.iter().copied().collect());
    c.write(out)?;
    Ok(EncodeSummary {
        l0: enc.code.l0_norm(),
        l1: enc.code.l1_norm(),
        mse,
        fista_iterations: enc.fista.iterations_used,
    })
}

/// Reads the deepest code of an `encode` container.
pub fn read_code(path: &Path) -> Result<(SparseCode, Option<Plane>), CliError> {
    let c = Container::read(path)?;
    let meta = c.u64s("meta")?;
    let [version, l] = meta else {
        return Err(CliError::Checkpoint("code meta entry has the wrong length".into()));
    };
    if *version != CODE_FORMAT_VERSION {
        return Err(CliError::Checkpoint(format!("code format {version} is not supported")));
    }
    let l = *l as usize;
    let (shape, data) = c.f64(&format!("code/{l}"))?;
    let [a, b, d] = shape else {
        return Err(CliError::Checkpoint("code is not a 3-d array".into()));
    };
    let maps = Array3::from_shape_vec((*a, *b, *d), data.to_vec())
        .map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let input = match c.f64("input") {
        Ok((s, d)) if s.len() == 2 => {
            Some(Array2::from_shape_vec((s[0], s[1]), d.to_vec()).map_err(|e| CliError::Checkpoint(e.to_string()))?)
        }
        _ => None,
    };
    Ok((SparseCode::new(maps, l), input))
}

/// Synthesizes the image of a code and writes it as a min-max scaled PNG.
/// Returns the MSE against the stored input, when the container has one.
pub fn cmd_reconstruct(ckpt: &Path, code: &Path, out: &Path) -> Result<Option<f64>, CliError> {
    let ck = Checkpoint::load(ckpt)?;
    let (code, input) = read_code(code)?;
    let recon = reconstruct(&ck.state.model, &code).map_err(CliError::data)?;
    figures::save_png(&figures::montage(&[recon.view()], 1), out)?;
    Ok(input.map(|y| recon.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64))
}

#[derive(Debug, Clone, Default)]
pub struct FigureSummary {
    /// File name and tile count of every montage written.
    pub montages: Vec<(String, usize, (usize, usize))>,
    pub charts: Vec<String>,
    pub reconstructions: usize,
}

/// Writes atom montages for every layer, the effective-dictionary montage,
/// reconstruction pairs for a sample of the training data (when it can be
/// found) and the training curves.
pub fn cmd_export_figures(ckpt: &Path, out_dir: &Path) -> Result<FigureSummary, CliError> {
    let ck = Checkpoint::load(ckpt)?;
    let model = &ck.state.model;
    fs::create_dir_all(out_dir)?;
    let mut summary = FigureSummary::default();
    let mut save = |name: String, m: figures::Montage| -> Result<(), CliError> {
        figures::save_png(&m, &out_dir.join(&name))?;
        summary.montages.push((name, m.tiles, m.tile_size));
        Ok(())
    };
    for layer in model.layers() {
        save(format!("layer_{}_atoms.png", layer.layer_index()), figures::atom_montage(layer))?;
    }
    let effective = compose_effective(model, model.num_layers())?;
    save("effective_atoms.png".into(), figures::atom_montage(&effective))?;

    match load_data(&ck.config) {
        Ok(corpus) => {
            let n = corpus.len().min(RECONSTRUCTION_SAMPLES);
            let step = corpus.len() / n.max(1);
            let pairs = (0..n)
                .map(|k| {
                    let y = &corpus.images[k * step];
                    let enc = encode(model, y, &ck.config.fista_params())?;
                    Ok((y.clone(), enc.reconstruction()?))
                })
                .collect::<Result<Vec<_>, mlcsc::Error>>()?;
            save("reconstructions.png".into(), figures::reconstruction_grid(&pairs))?;
            summary.reconstructions = pairs.len();
        }
        Err(e) => warn!("skipping reconstruction grid: {e}"),
    }
    summary.charts = figures::write_curves(&ck.state.metrics_history, out_dir)?;
    Ok(summary)
}
