//! Summaries of trained models and training curves.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{Atoms, LayerDictionary};
use crate::trainer::EpochMetrics;

const SPECTRUM_SIZE: usize = 32;
const ORIENTATION_BINS: usize = 8;

/// Power spectrum of `atom` zero-padded to `SPECTRUM_SIZE`, by direct DFT.
fn power_spectrum(atom: ArrayView2<f64>) -> Array2<f64> {
    let n = SPECTRUM_SIZE;
    let (h, w) = atom.dim();
    let tau = std::f64::consts::TAU;
    Array2::from_shape_fn((n, n), |(ky, kx)| {
        let (mut re, mut im) = (0.0, 0.0);
        for y in 0..h.min(n) {
            for x in 0..w.min(n) {
                let phase = -tau * ((ky * y) as f64 + (kx * x) as f64) / n as f64;
                re += atom[[y, x]] * phase.cos();
                im += atom[[y, x]] * phase.sin();
            }
        }
        re * re + im * im
    })
}

/// Fraction of non-DC spectral energy in the strongest of eight orientation
/// bins. An isotropic filter scores about 1/8; an oriented one scores higher.
pub fn dominant_orientation_fraction(atom: ArrayView2<f64>) -> f64 {
    let n = SPECTRUM_SIZE as isize;
    let spec = power_spectrum(atom);
    let mut bins = [0.0; ORIENTATION_BINS];
    for ((ky, kx), &e) in spec.indexed_iter() {
        // Signed frequencies in [-n/2, n/2).
        let fy = if (ky as isize) < n / 2 { ky as isize } else { ky as isize - n };
        let fx = if (kx as isize) < n / 2 { kx as isize } else { kx as isize - n };
        if fy == 0 && fx == 0 {
            continue;
        }
        let theta = (fy as f64).atan2(fx as f64).rem_euclid(std::f64::consts::PI);
        let bin = ((theta / std::f64::consts::PI) * ORIENTATION_BINS as f64) as usize;
        bins[bin.min(ORIENTATION_BINS - 1)] += e;
    }
    let total: f64 = bins.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    bins.iter().cloned().fold(0.0, f64::max) / total
}

/// Mean dominant-orientation fraction over the single-channel atoms of a
/// first-layer dictionary.
pub fn layer_orientation_score(layer: &LayerDictionary) -> f64 {
    let atoms = layer.atoms();
    let mut total = 0.0;
    let mut count = 0;
    for atom in atoms.outer_iter() {
        for ch in atom.outer_iter() {
            total += dominant_orientation_fraction(ch);
            count += 1;
        }
    }
    total / count as f64
}

/// The same score for white Gaussian noise atoms of the given size, averaged
/// over `samples` draws.
pub fn isotropic_baseline(kernel: (usize, usize), samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = samples.max(1);
    (0..samples)
        .map(|_| {
            let atom = Array2::from_shape_simple_fn(kernel, || StandardNormal.sample(&mut rng));
            dominant_orientation_fraction(atom.view())
        })
        .sum::<f64>()
        / samples as f64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Whether the curve decreases at the scale of `window` epochs after
/// `burn_in`: every window mean is no larger than the one before it, and the
/// last window is strictly below the first.
pub fn decreasing_at_scale(curve: &[f64], burn_in: usize, window: usize) -> bool {
    let window = window.max(1);
    if curve.len() < burn_in + 2 * window {
        return false;
    }
    let means: Vec<f64> = curve[burn_in..].chunks_exact(window).map(mean).collect();
    means.windows(2).all(|w| w[1] <= w[0]) && means.last() < means.first()
}

/// Mean and largest absolute deviation from that mean over the last `window`
/// values.
pub fn tail_stability(series: &[f64], window: usize) -> (f64, f64) {
    let tail = &series[series.len().saturating_sub(window)..];
    if tail.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(tail);
    let dev = tail.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
    (m, dev)
}

/// Qualitative checks of a long training run on natural images.
#[derive(Debug, Clone)]
pub struct ReproductionReport {
    pub mse_decreasing: bool,
    pub final_deep_density: f64,
    pub deep_density_drift: f64,
    pub deep_density_ok: bool,
    pub orientation_score: f64,
    pub orientation_baseline: f64,
    pub oriented: bool,
}

impl ReproductionReport {
    pub fn passed(&self) -> bool {
        self.mse_decreasing && self.deep_density_ok && self.oriented
    }
}

/// Density bounds accepted for the second-layer dictionary.
pub const DEEP_DENSITY_RANGE: (f64, f64) = (0.05, 0.60);
/// Largest drift of the second-layer density over the final window.
pub const DEEP_DENSITY_DRIFT: f64 = 0.02;

pub fn assess_reproduction(
    history: &[EpochMetrics],
    first_layer: &LayerDictionary,
    burn_in: usize,
    window: usize,
) -> ReproductionReport {
    let mse: Vec<f64> = history.iter().map(|m| m.mse).collect();
    let deep: Vec<f64> = history
        .iter()
        .map(|m| m.dict_density.get(1).copied().unwrap_or(f64::NAN))
        .collect();
    let (density, drift) = tail_stability(&deep, window);
    let orientation_score = layer_orientation_score(first_layer);
    let orientation_baseline = isotropic_baseline(first_layer.kernel_size(), 2000, 0);
    ReproductionReport {
        mse_decreasing: decreasing_at_scale(&mse, burn_in, window),
        final_deep_density: density,
        deep_density_drift: drift,
        deep_density_ok: density > DEEP_DENSITY_RANGE.0
            && density < DEEP_DENSITY_RANGE.1
            && drift <= DEEP_DENSITY_DRIFT,
        orientation_score,
        orientation_baseline,
        oriented: orientation_score > orientation_baseline,
    }
}
