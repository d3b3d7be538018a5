//! Resizing and local contrast normalization.

use ndarray::Array2;

use crate::conv::Plane;
use crate::error::{domain_err, shape_err, Result};

/// Bilinear resampling with corner-aligned sample positions: output corners
/// land exactly on input corners.
pub fn resize_bilinear(img: &Plane, out_h: usize, out_w: usize) -> Result<Plane> {
    let (h, w) = img.dim();
    if h == 0 || w == 0 {
        return shape_err("cannot resize an empty image");
    }
    if out_h == 0 || out_w == 0 {
        return shape_err(format!("invalid output size {out_h}x{out_w}"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let position = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let src = if n_out == 1 {
            (n_in - 1) as f64 / 2.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        };
        let lo = (src.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, src - lo as f64)
    };
    let rows: Vec<_> = (0..out_h).map(|i| position(i, out_h, h)).collect();
    let cols: Vec<_> = (0..out_w).map(|j| position(j, out_w, w)).collect();
    Ok(Plane::from_shape_fn((out_h, out_w), |(i, j)| {
        let (y0, y1, fy) = rows[i];
        let (x0, x1, fx) = cols[j];
        let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
        let bottom = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

/// Normalized `window x window` Gaussian with standard deviation `window / 4`.
pub fn gaussian_window(window: usize) -> Array2<f64> {
    let sigma = window as f64 / 4.0;
    let c = (window / 2) as f64;
    let mut g = Array2::from_shape_fn((window, window), |(i, j)| {
        let (dy, dx) = (i as f64 - c, j as f64 - c);
        (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
    });
    let total = g.sum();
    g /= total;
    g
}

/// Gaussian-weighted average of `img` around every pixel. Out-of-bounds
/// neighbours are dropped and the remaining weights renormalized.
pub fn local_weighted_mean(img: &Plane, weights: &Array2<f64>) -> Plane {
    let (h, w) = img.dim();
    let r = weights.dim().0 / 2;
    Plane::from_shape_fn((h, w), |(i, j)| {
        let (mut acc, mut norm) = (0.0, 0.0);
        for (u, row) in weights.outer_iter().enumerate() {
            let Some(y) = (i + u).checked_sub(r).filter(|&y| y < h) else {
                continue;
            };
            for (v, &wt) in row.iter().enumerate() {
                let Some(x) = (j + v).checked_sub(r).filter(|&x| x < w) else {
                    continue;
                };
                acc += wt * img[[y, x]];
                norm += wt;
            }
        }
        acc / norm
    })
}

/// Subtractive then divisive local contrast normalization.
///
/// Each pixel has the Gaussian-weighted mean of its neighbourhood removed,
/// then is divided by `max(local deviation, mean local deviation, epsilon)`.
pub fn local_contrast_normalize(img: &Plane, window: usize, epsilon: f64) -> Result<Plane> {
    if window < 3 || window.is_multiple_of(2) {
        return domain_err(format!("LCN window must be odd and at least 3, got {window}"));
    }
    if !(epsilon > 0.0) {
        return domain_err(format!("LCN epsilon must be positive, got {epsilon}"));
    }
    let (h, w) = img.dim();
    if h == 0 || w == 0 {
        return shape_err("cannot normalize an empty image");
    }
    let weights = gaussian_window(window);
    let r = window / 2;

    // Differences are taken against the centre pixel so that flat regions
    // cancel exactly.
    let centered = Plane::from_shape_fn((h, w), |(i, j)| {
        let centre = img[[i, j]];
        let (mut acc, mut norm) = (0.0, 0.0);
        for (u, row) in weights.outer_iter().enumerate() {
            let Some(y) = (i + u).checked_sub(r).filter(|&y| y < h) else {
                continue;
            };
            for (v, &wt) in row.iter().enumerate() {
                let Some(x) = (j + v).checked_sub(r).filter(|&x| x < w) else {
                    continue;
                };
                acc += wt * (centre - img[[y, x]]);
                norm += wt;
            }
        }
        acc / norm
    });

    let squared = centered.mapv(|v| v * v);
    let deviation = local_weighted_mean(&squared, &weights).mapv(f64::sqrt);
    let mean_deviation = deviation.mean().unwrap_or(0.0);
    let mut out = centered;
    out.zip_mut_with(&deviation, |v, &d| {
        *v /= d.max(mean_deviation).max(epsilon);
    });
    Ok(out)
}

/// Settings shared by corpus loading and single-image encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub size: (usize, usize),
    /// Resize to `size`; when off, images of any other size are rejected.
    pub resize: bool,
    pub lcn: bool,
    pub lcn_window: usize,
    pub lcn_epsilon: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            size: (64, 64),
            resize: true,
            lcn: true,
            lcn_window: 9,
            lcn_epsilon: 1e-8,
        }
    }
}

/// Resizes to `cfg.size`, then applies LCN when enabled.
pub fn preprocess(img: &Plane, cfg: &PreprocessConfig) -> Result<Plane> {
    let resized = if cfg.resize {
        resize_bilinear(img, cfg.size.0, cfg.size.1)?
    } else if img.dim() == cfg.size {
        img.clone()
    } else {
        return shape_err(format!("image is {:?} but {:?} is required", img.dim(), cfg.size));
    };
    if cfg.lcn {
        local_contrast_normalize(&resized, cfg.lcn_window, cfg.lcn_epsilon)
    } else {
        Ok(resized)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn resize_identity_and_constant() {
        let img = array![[0.1, 0.5], [0.9, 0.3]];
        assert_eq!(resize_bilinear(&img, 2, 2).unwrap(), img);
        let flat = Plane::from_elem((5, 7), 0.25);
        let out = resize_bilinear(&flat, 3, 11).unwrap();
        assert_eq!(out.dim(), (3, 11));
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(resize_bilinear(&img, 0, 2).is_err());
    }

    #[test]
    fn resize_ramp_by_hand() {
        // ramp[i][j] = 4i + j; corner-aligned 2x2 samples land on the corners.
        let ramp = Plane::from_shape_fn((4, 4), |(i, j)| (4 * i + j) as f64);
        let out = resize_bilinear(&ramp, 2, 2).unwrap();
        assert_eq!(out, array![[0.0, 3.0], [12.0, 15.0]]);
        // 3x3 samples at 0, 1.5, 3: centre is the average of 5, 6, 9, 10.
        let out = resize_bilinear(&ramp, 3, 3).unwrap();
        assert!((out[[1, 1]] - 7.5).abs() < 1e-12);
        assert!((out[[0, 1]] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn resize_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Plane::from_shape_simple_fn((9, 13), || rng.random_range(-2.0..3.0));
        let (lo, hi) = img.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let out = resize_bilinear(&img, 20, 5).unwrap();
        assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn lcn_constant_and_zero_images() {
        for c in [0.0, 0.37, 1.0] {
            let out = local_contrast_normalize(&Plane::from_elem((12, 10), c), 9, 1e-8).unwrap();
            assert!(out.iter().all(|&v| v == 0.0));
        }
        assert!(local_contrast_normalize(&Plane::zeros((3, 3)), 4, 1e-8).is_err());
        assert!(local_contrast_normalize(&Plane::zeros((3, 3)), 1, 1e-8).is_err());
    }

    #[test]
    fn lcn_removes_linear_trends_away_from_borders() {
        let ramp = Plane::from_shape_fn((20, 20), |(i, j)| 0.1 * i as f64 - 0.05 * j as f64 + 2.0);
        let out = local_contrast_normalize(&ramp, 9, 1e-8).unwrap();
        for i in 4..16 {
            for j in 4..16 {
                assert!(out[[i, j]].abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lcn_single_bright_pixel_matches_loops() {
        let (h, w, window, eps) = (11, 11, 5, 1e-8);
        let mut img = Plane::zeros((h, w));
        img[[5, 4]] = 1.0;
        let out = local_contrast_normalize(&img, window, eps).unwrap();

        let sigma = window as f64 / 4.0;
        let r = (window / 2) as isize;
        let weight = |dy: isize, dx: isize| (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
        let local = |src: &dyn Fn(usize, usize) -> f64, i: usize, j: usize| {
            let (mut a, mut n) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (y, x) = (i as isize + dy, j as isize + dx);
                    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                        a += weight(dy, dx) * src(y as usize, x as usize);
                        n += weight(dy, dx);
                    }
                }
            }
            a / n
        };
        let mut centered = Plane::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                centered[[i, j]] = img[[i, j]] - local(&|y, x| img[[y, x]], i, j);
            }
        }
        let mut dev = Plane::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                dev[[i, j]] = local(&|y, x| centered[[y, x]] * centered[[y, x]], i, j).sqrt();
            }
        }
        let mean_dev = dev.sum() / (h * w) as f64;
        for i in 0..h {
            for j in 0..w {
                let expected = centered[[i, j]] / dev[[i, j]].max(mean_dev).max(eps);
                assert!((out[[i, j]] - expected).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn lcn_is_finite_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let img = Plane::from_shape_simple_fn((16, 16), || rng.random_range(0.0..1.0));
            let out = local_contrast_normalize(&img, 9, 1e-8).unwrap();
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn preprocess_resizes_then_normalizes() {
        let img = Plane::from_shape_fn((112, 92), |(i, j)| ((i * 7 + j * 3) % 17) as f64 / 16.0);
        let out = preprocess(&img, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.dim(), (64, 64));
        let raw = preprocess(&img, &PreprocessConfig { lcn: false, ..PreprocessConfig::default() }).unwrap();
        assert_eq!(raw, resize_bilinear(&img, 64, 64).unwrap());
    }
}
