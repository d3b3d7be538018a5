//! Run configuration: a TOML document with one section per subsystem.
//!
//! Every section is optional; missing keys take the defaults below, which
//! reproduce the two-layer face architecture (8 atoms of 8x8, then 16 atoms
//! of 16x16, on 64x64 inputs, for 1000 epochs in batches of 20).

use std::fs;
use std::path::{Path, PathBuf};

use mlcsc::data::PreprocessConfig;
use mlcsc::fista::FistaParams;
use mlcsc::trainer::{LayerSpec, TrainingConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the data directory when the config has none.
pub const DATA_DIR_ENV: &str = "MLCSC_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub atoms: usize,
    /// `[height, width]`.
    pub kernel: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: Vec<LayerEntry>,
    /// `[height, width]` of the preprocessed images.
    pub input_size: [usize; 2],
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: vec![
                LayerEntry {
                    atoms: 8,
                    kernel: [8, 8],
                },
                LayerEntry {
                    atoms: 16,
                    kernel: [16, 16],
                },
            ],
            input_size: [64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub eta: f64,
    pub lambda: f64,
    /// One soft-threshold level per layer after the first.
    pub zetas: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            eta: t.eta,
            lambda: t.fista.lambda,
            zetas: t.zetas,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FistaSection {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub lipschitz_iters: usize,
}

impl Default for FistaSection {
    fn default() -> Self {
        let f = FistaParams::default();
        Self {
            max_iters: f.max_iters,
            rel_tol: f.rel_tol,
            lipschitz_iters: f.lipschitz_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// PGM directory tree or manifest file.
    pub path: Option<PathBuf>,
    /// Resize inputs to `model.input_size`; when off, mismatched images are rejected.
    pub resize: bool,
    pub lcn: bool,
    pub lcn_window: usize,
    pub lcn_epsilon: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let p = PreprocessConfig::default();
        Self {
            path: None,
            resize: true,
            lcn: p.lcn,
            lcn_window: p.lcn_window,
            lcn_epsilon: p.lcn_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write a checkpoint every this many epochs (0 disables periodic ones).
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/mlcsc"),
            checkpoint_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub training: TrainingSection,
    pub fista: FistaSection,
    pub data: DataSection,
    pub output: OutputSection,
}

fn invalid(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {message}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Checks every field and names the first offending one.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        if m.layers.is_empty() {
            return Err(invalid("model.layers", "at least one layer is required"));
        }
        for (i, l) in m.layers.iter().enumerate() {
            if l.atoms == 0 {
                return Err(invalid(&format!("model.layers[{i}].atoms"), "must be positive"));
            }
            if l.kernel.contains(&0) {
                return Err(invalid(&format!("model.layers[{i}].kernel"), "sides must be positive"));
            }
        }
        let eff = m.layers.iter().fold([1, 1], |acc, l| {
            [acc[0] + l.kernel[0] - 1, acc[1] + l.kernel[1] - 1]
        });
        if eff[0] > m.input_size[0] || eff[1] > m.input_size[1] {
            return Err(invalid(
                "model.input_size",
                format!("effective atoms are {}x{} and do not fit", eff[0], eff[1]),
            ));
        }
        let t = &self.training;
        if !(t.eta >= 0.0 && t.eta.is_finite()) {
            return Err(invalid("training.eta", "must be a non-negative number"));
        }
        if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
            return Err(invalid("training.lambda", "must be a non-negative number"));
        }
        if t.zetas.len() + 1 != m.layers.len() {
            return Err(invalid(
                "training.zetas",
                format!(
                    "needs {} values (one per layer after the first), got {}",
                    m.layers.len() - 1,
                    t.zetas.len()
                ),
            ));
        }
        if t.zetas.iter().any(|z| !(*z >= 0.0)) {
            return Err(invalid("training.zetas", "values must be non-negative"));
        }
        if t.epochs == 0 {
            return Err(invalid("training.epochs", "must be at least 1"));
        }
        if t.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be at least 1"));
        }
        let f = &self.fista;
        if f.max_iters == 0 {
            return Err(invalid("fista.max_iters", "must be at least 1"));
        }
        if !(f.rel_tol > 0.0) {
            return Err(invalid("fista.rel_tol", "must be positive"));
        }
        if f.lipschitz_iters == 0 {
            return Err(invalid("fista.lipschitz_iters", "must be at least 1"));
        }
        let d = &self.data;
        if d.lcn_window < 3 || d.lcn_window.is_multiple_of(2) {
            return Err(invalid("data.lcn_window", "must be odd and at least 3"));
        }
        if !(d.lcn_epsilon > 0.0) {
            return Err(invalid("data.lcn_epsilon", "must be positive"));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Vec<LayerSpec> {
        self.model
            .layers
            .iter()
            .map(|l| LayerSpec::new(l.atoms, l.kernel[0], l.kernel[1]))
            .collect()
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.model.input_size[0], self.model.input_size[1])
    }

    pub fn fista_params(&self) -> FistaParams {
        FistaParams {
            lambda: self.training.lambda,
            max_iters: self.fista.max_iters,
            rel_tol: self.fista.rel_tol,
            lipschitz_iters: self.fista.lipschitz_iters,
            seed: self.training.seed,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            eta: self.training.eta,
            zetas: self.training.zetas.clone(),
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            seed: self.training.seed,
            fista: self.fista_params(),
        }
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            size: self.input_shape(),
            resize: self.data.resize,
            lcn: self.data.lcn,
            lcn_window: self.data.lcn_window,
            lcn_epsilon: self.data.lcn_epsilon,
        }
    }

    /// The configured data path, falling back to the environment.
    pub fn data_path(&self) -> Option<PathBuf> {
        self.data
            .path
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_face_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.architecture(), vec![LayerSpec::new(8, 8, 8), LayerSpec::new(16, 16, 16)]);
        assert_eq!(cfg.input_shape(), (64, 64));
        assert_eq!(cfg.training.epochs, 1000);
        assert_eq!(cfg.training.batch_size, 20);
        assert_eq!(cfg.data.lcn_window, 9);
    }

    #[test]
    fn round_trip() {
        let text = r#"
            [model]
            layers = [{ atoms = 4, kernel = [3, 3] }, { atoms = 6, kernel = [2, 3] }]
            input_size = [16, 12]

            [training]
            eta = 0.02
            lambda = 0.05
            zetas = [0.001]
            epochs = 7
            seed = 99

            [data]
            path = "faces"
            lcn = false
        "#;
        let cfg = RunConfig::parse(text).unwrap();
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.training_config().fista.lambda, 0.05);
        assert_eq!(again.data.path, Some(PathBuf::from("faces")));
    }

    #[test]
    fn diagnostics_name_line_or_field() {
        let err = RunConfig::parse("[training]\neta = \"fast\"\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = RunConfig::parse("[training]\nzetas = []\n").unwrap_err().to_string();
        assert!(err.contains("training.zetas"), "{err}");
        let err = RunConfig::parse("[training]\nunknown_key = 1\n").unwrap_err().to_string();
        assert!(err.contains("unknown_key"), "{err}");
        let err = RunConfig::parse("[model]\ninput_size = [10, 10]\n").unwrap_err().to_string();
        assert!(err.contains("model.input_size"), "{err}");
        let err = RunConfig::parse("[data]\nlcn_window = 8\n").unwrap_err().to_string();
        assert!(err.contains("data.lcn_window"), "{err}");
    }
}
