//! Toy corpora and configs shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use mlcsc::data::{save_pgm, synthetic_corpus};
use mlcsc::trainer::{init_model, LayerSpec};
use tempfile::TempDir;

/// Writes `count` 12x12 images with values in [0, 1] as PGM files.
pub fn toy_corpus(dir: &Path, count: usize) -> PathBuf {
    let data = dir.join("faces");
    let truth = init_model(&[LayerSpec::new(2, 3, 3), LayerSpec::new(3, 3, 3)], (12, 12), 9).unwrap();
    let images = synthetic_corpus(&truth, count, 0.1, 4).unwrap();
    for (k, img) in images.iter().enumerate() {
        let subject = data.join(format!("s{}", k % 2 + 1));
        fs::create_dir_all(&subject).unwrap();
        let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scaled = img.mapv(|v| (v - lo) / (hi - lo).max(1e-12));
        save_pgm(subject.join(format!("{}.pgm", k + 1)), &scaled).unwrap();
    }
    data
}

pub fn write_config(dir: &Path, data: &Path, epochs: usize, extra: &str) -> PathBuf {
    let text = format!(
        r#"
[model]
layers = [{{ atoms = 2, kernel = [3, 3] }}, {{ atoms = 3, kernel = [3, 3] }}]
input_size = [12, 12]

[training]
eta = 0.01
lambda = 0.05
zetas = [0.0001]
epochs = {epochs}
batch_size = 2
seed = 17

[fista]
max_iters = 60

[data]
path = "{}"
lcn = false

[output]
dir = "run"
checkpoint_every = 1
{extra}
"#,
        data.display()
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

pub fn setup(images: usize, epochs: usize) -> (TempDir, PathBuf, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let data = toy_corpus(tmp.path(), images);
    let cfg = write_config(tmp.path(), &data, epochs, "");
    (tmp, data, cfg)
}

