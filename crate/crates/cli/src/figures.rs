//! Static figures: atom montages (PNG), reconstruction grids (PNG) and
//! training curves (SVG).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use mlcsc::model::Atoms;
use mlcsc::trainer::EpochMetrics;
use mlcsc::Plane;
use ndarray::{s, ArrayView2};

use crate::error::CliError;

const PAD: u32 = 1;
const BACKGROUND: u8 = 255;

/// A grid of equally sized grayscale tiles separated by one-pixel gutters.
#[derive(Debug, Clone)]
pub struct Montage {
    pub image: GrayImage,
    pub tiles: usize,
    pub tile_size: (usize, usize),
    pub cols: usize,
}

/// Columns for a roughly square grid of `n` tiles.
pub fn square_cols(n: usize) -> usize {
    (n as f64).sqrt().ceil().max(1.0) as usize
}

fn to_gray(v: f64, lo: f64, hi: f64) -> u8 {
    if hi > lo {
        ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
    } else {
        128
    }
}

fn range<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Lays `tiles` out `cols` wide. Each group of `group` consecutive tiles is
/// min-max scaled over the group, so `group = 1` scales every tile on its own.
pub fn montage_grouped(tiles: &[ArrayView2<f64>], cols: usize, group: usize) -> Montage {
    let (th, tw) = tiles.first().map(|t| t.dim()).unwrap_or((0, 0));
    assert!(tiles.iter().all(|t| t.dim() == (th, tw)), "tiles differ in size");
    let cols = cols.clamp(1, tiles.len().max(1));
    let rows = tiles.len().div_ceil(cols).max(1);
    let width = cols as u32 * (tw as u32 + PAD) + PAD;
    let height = rows as u32 * (th as u32 + PAD) + PAD;
    let mut image = GrayImage::from_pixel(width, height, Luma([BACKGROUND]));
    for (g, chunk) in tiles.chunks(group.max(1)).enumerate() {
        let (lo, hi) = range(chunk.iter().flat_map(|t| t.iter()));
        for (j, tile) in chunk.iter().enumerate() {
            let k = g * group.max(1) + j;
            let x0 = (k % cols) as u32 * (tw as u32 + PAD) + PAD;
            let y0 = (k / cols) as u32 * (th as u32 + PAD) + PAD;
            for ((y, x), &v) in tile.indexed_iter() {
                image.put_pixel(x0 + x as u32, y0 + y as u32, Luma([to_gray(v, lo, hi)]));
            }
        }
    }
    Montage {
        image,
        tiles: tiles.len(),
        tile_size: (th, tw),
        cols,
    }
}

pub fn montage(tiles: &[ArrayView2<f64>], cols: usize) -> Montage {
    montage_grouped(tiles, cols, 1)
}

/// One tile per (atom, input channel). Single-channel banks use a square
/// grid; deeper banks put each atom on its own row.
pub fn atom_montage<D: Atoms>(dict: &D) -> Montage {
    let atoms = dict.atoms();
    let (count, channels, _, _) = atoms.dim();
    let tiles: Vec<ArrayView2<f64>> = (0..count)
        .flat_map(|j| (0..channels).map(move |c| (j, c)))
        .map(|(j, c)| atoms.slice(s![j, c, .., ..]))
        .collect();
    let cols = if channels == 1 { square_cols(tiles.len()) } else { channels };
    montage(&tiles, cols)
}

/// Input and reconstruction side by side, one pair per row, each pair scaled
/// jointly so they are directly comparable.
pub fn reconstruction_grid(pairs: &[(Plane, Plane)]) -> Montage {
    let tiles: Vec<ArrayView2<f64>> = pairs.iter().flat_map(|(a, b)| [a.view(), b.view()]).collect();
    montage_grouped(&tiles, 2, 2)
}

pub fn save_png(m: &Montage, path: &Path) -> Result<(), CliError> {
    m.image.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// A plain SVG line chart. A single point is drawn as a marker.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;

    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (x0, x1) = range(finite.iter().map(|p| &p.0));
    let (y0, y1) = range(finite.iter().map(|p| &p.1));
    let widen = |lo: f64, hi: f64| {
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            let d = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
            (lo - d, hi + d)
        }
    };
    let (x0, x1) = widen(x0, x1);
    let (y0, y1) = widen(y0, y1);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT
    );
    for (v, y) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick(v));
    }
    for (v, x) in [(x0, px(x0)), (x1, px(x1))] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, tick(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    match finite.len() {
        0 => {}
        1 => {
            let _ = writeln!(
                s,
                r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
                px(finite[0].0),
                py(finite[0].1)
            );
        }
        _ => {
            let coords: Vec<String> = finite.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline class="series" points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
                coords.join(" ")
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `mse.svg` and, for models with a second layer, `dict_density_2.svg`.
pub fn write_curves(history: &[EpochMetrics], out_dir: &Path) -> Result<Vec<String>, CliError> {
    let mut written = Vec::new();
    let mse: Vec<(f64, f64)> = history.iter().map(|m| (m.epoch as f64, m.mse)).collect();
    fs::write(
        out_dir.join("mse.svg"),
        line_chart_svg("Reconstruction MSE", "epoch", "mse", &mse),
    )?;
    written.push("mse.svg".to_string());
    if history.iter().all(|m| m.dict_density.len() >= 2) {
        let density: Vec<(f64, f64)> = history.iter().map(|m| (m.epoch as f64, m.dict_density[1])).collect();
        fs::write(
            out_dir.join("dict_density_2.svg"),
            line_chart_svg("Second-layer dictionary density", "epoch", "nonzero fraction", &density),
        )?;
        written.push("dict_density_2.svg".to_string());
    }
    Ok(written)
}
