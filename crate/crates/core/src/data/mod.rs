//! Corpus loading, preprocessing and sample ordering.

mod pgm;
mod preprocess;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::conv::Plane;
use crate::error::{domain_err, Error, Result};
use crate::model::{random_sparse_code, reconstruct, MlcscModel};

pub use pgm::{encode_pgm, load_pgm, parse_pgm, save_pgm};
pub use preprocess::{
    gaussian_window, local_contrast_normalize, local_weighted_mean, preprocess, resize_bilinear,
    PreprocessConfig,
};

/// Preprocessed training images with their subject labels and source files.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub images: Vec<Plane>,
    pub labels: Vec<String>,
    pub provenance: Vec<PathBuf>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn batches(&self, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        make_batches(self.len(), batch_size, seed)
    }
}

/// Shuffles `0..len` with `seed` and cuts it into contiguous chunks of
/// `batch_size`; the last chunk may be short.
pub fn make_batches(len: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return domain_err("cannot batch an empty corpus");
    }
    if batch_size == 0 {
        return domain_err("batch size must be at least 1");
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Sort key that orders `s2` before `s10` and `2.pgm` before `10.pgm`.
fn natural_key(path: &Path) -> (String, u64, String) {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let prefix: String = name.chars().take_while(|c| !c.is_ascii_digit()).collect();
    let digits: String = name[prefix.len()..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    (prefix, digits.parse().unwrap_or(u64::MAX), name)
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn collect_pgms(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|p| natural_key(p));
    for path in entries {
        if path.is_dir() {
            collect_pgms(&path, out)?;
        } else if is_pgm(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Lists the image files of a source: either a directory tree of PGMs
/// (`s<N>/<M>.pgm` for the face corpus) or a manifest file with one path per
/// line. Manifest paths are relative to the manifest's directory; blank lines
/// and lines starting with `#` are ignored.
pub fn list_sources(source: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    if source.is_dir() {
        collect_pgms(source, &mut paths)?;
    } else {
        let text = fs::read_to_string(source)?;
        let base = source.parent().unwrap_or(Path::new("."));
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let p = Path::new(line);
            paths.push(if p.is_absolute() { p.to_path_buf() } else { base.join(p) });
        }
    }
    if paths.is_empty() {
        return domain_err(format!("no PGM images found under {}", source.display()));
    }
    Ok(paths)
}

/// Loads and preprocesses every image of `source`. The label of an image is
/// the name of its parent directory.
pub fn load_corpus(source: &Path, cfg: &PreprocessConfig) -> Result<Corpus> {
    let paths = list_sources(source)?;
    let images = paths
        .par_iter()
        .map(|p| {
            let raw = load_pgm(p).map_err(|e| match e {
                Error::Parse { offset, message } => Error::Parse {
                    offset,
                    message: format!("{}: {message}", p.display()),
                },
                other => other,
            })?;
            preprocess(&raw, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = paths
        .iter()
        .map(|p| {
            p.parent()
                .and_then(Path::file_name)
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    Ok(Corpus {
        images,
        labels,
        provenance: paths,
    })
}

/// Images synthesized from `model` with random codes of the given density.
pub fn synthetic_corpus(model: &MlcscModel, count: usize, density: f64, seed: u64) -> Result<Vec<Plane>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let code = random_sparse_code(&mut rng, model.code_shape(), density, model.num_layers());
            reconstruct(model, &code)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_batching() {
        let batches = make_batches(400, 20, 7).unwrap();
        assert_eq!(batches.len(), 20);
        assert!(batches.iter().all(|b| b.len() == 20));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..400).collect::<Vec<_>>());
        assert_eq!(batches, make_batches(400, 20, 7).unwrap());
        assert_ne!(batches, make_batches(400, 20, 8).unwrap());
    }

    #[test]
    fn single_batch_and_short_tail() {
        let one = make_batches(10, 10, 0).unwrap();
        assert_eq!(one.len(), 1);
        let mut b = one[0].clone();
        b.sort_unstable();
        assert_eq!(b, (0..10).collect::<Vec<_>>());
        let tail = make_batches(10, 4, 0).unwrap();
        assert_eq!(tail.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert!(make_batches(0, 4, 0).is_err());
    }

    #[test]
    fn natural_order() {
        let mut v = vec![PathBuf::from("s10"), PathBuf::from("s2"), PathBuf::from("s1")];
        v.sort_by_key(|p| natural_key(p));
        assert_eq!(v, vec![PathBuf::from("s1"), PathBuf::from("s2"), PathBuf::from("s10")]);
    }
}
