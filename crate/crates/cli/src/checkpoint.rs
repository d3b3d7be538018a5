//! Training checkpoints: dictionaries, progress, metrics, the config they
//! were trained under and the exact RNG position, so a resumed run replays
//! the uninterrupted one bit for bit.

use std::path::Path;

use mlcsc::model::{Atoms, LayerDictionary, MlcscModel};
use mlcsc::trainer::{EpochMetrics, TrainingState};
use ndarray::Array4;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::config::RunConfig;
use crate::container::{Container, Entry};
use crate::error::CliError;

/// Bumped whenever the set or meaning of entries changes.
pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: TrainingState,
    pub config: RunConfig,
}

fn bad(message: impl Into<String>) -> CliError {
    CliError::Checkpoint(message.into())
}

impl Checkpoint {
    pub fn new(state: TrainingState, config: RunConfig) -> Self {
        Self { state, config }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        let model = &self.state.model;
        let (ih, iw) = model.input_shape();
        c.insert(
            "meta",
            Entry::U64(vec![
                FORMAT_VERSION,
                self.state.epoch as u64,
                model.num_layers() as u64,
                ih as u64,
                iw as u64,
            ]),
        );
        for layer in model.layers() {
            let atoms = layer.atoms();
            c.insert_f64(
                format!("layer/{}", layer.layer_index()),
                atoms.shape(),
                atoms.iter().copied().collect(),
            );
        }
        let history = &self.state.metrics_history;
        let width = 4 + model.num_layers();
        let mut rows = Vec::with_capacity(history.len() * width);
        for m in history {
            rows.push(m.epoch as f64);
            rows.push(m.mse);
            rows.extend(&m.dict_density);
            rows.push(m.code_density);
            rows.push(m.mean_fista_iters);
        }
        c.insert_f64("metrics", &[history.len(), width], rows);

        let rng = &self.state.rng;
        let pos = rng.get_word_pos();
        c.insert("rng/seed", Entry::Bytes(rng.get_seed().to_vec()));
        c.insert(
            "rng/position",
            Entry::U64(vec![rng.get_stream(), pos as u64, (pos >> 64) as u64]),
        );
        c.insert("config", Entry::Bytes(self.config.to_toml().into_bytes()));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, CliError> {
        let meta = c.u64s("meta")?;
        let [version, epoch, layers, ih, iw] = meta else {
            return Err(bad("checkpoint meta entry has the wrong length"));
        };
        if *version != FORMAT_VERSION {
            return Err(bad(format!(
                "checkpoint format {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let num_layers = *layers as usize;
        let mut dicts = Vec::with_capacity(num_layers);
        for i in 1..=num_layers {
            let (shape, data) = c.f64(&format!("layer/{i}"))?;
            let [a, b, h, w] = shape else {
                return Err(bad(format!("layer/{i} is not a 4-d array")));
            };
            let atoms = Array4::from_shape_vec((*a, *b, *h, *w), data.to_vec())
                .map_err(|e| bad(format!("layer/{i}: {e}")))?;
            dicts.push(LayerDictionary::new(atoms, i)?);
        }
        let model = MlcscModel::new(dicts, (*ih as usize, *iw as usize))?;

        let (shape, rows) = c.f64("metrics")?;
        let width = 4 + num_layers;
        if shape.len() != 2 || shape[1] != width {
            return Err(bad("metrics table has the wrong width"));
        }
        let metrics_history = rows
            .chunks_exact(width)
            .map(|r| EpochMetrics {
                epoch: r[0] as usize,
                mse: r[1],
                dict_density: r[2..2 + num_layers].to_vec(),
                code_density: r[2 + num_layers],
                mean_fista_iters: r[3 + num_layers],
            })
            .collect();

        let seed: [u8; 32] = c
            .bytes("rng/seed")?
            .try_into()
            .map_err(|_| bad("rng seed must be 32 bytes"))?;
        let [stream, lo, hi] = c.u64s("rng/position")? else {
            return Err(bad("rng position entry has the wrong length"));
        };
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(*stream);
        rng.set_word_pos(((*hi as u128) << 64) | *lo as u128);

        let text = std::str::from_utf8(c.bytes("config")?).map_err(|_| bad("config is not UTF-8"))?;
        let config = RunConfig::parse(text)?;

        Ok(Self {
            state: TrainingState {
                model,
                epoch: *epoch as usize,
                metrics_history,
                rng,
            },
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_container(&Container::read(path)?)
            .map_err(|e| bad(format!("{}: {e}", path.display())))
    }
}
