use std::path::Path;

use image::{Rgb, RgbImage};

use crate::data::N_SURFACES;
use crate::error::{Error, Result};

use super::train::EpochLog;

const COLORS: [[u8; 3]; N_SURFACES] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
];

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

/// Draws `rows[u]` as a polyline; `keep(u)` decides which columns are inked
/// (all of them for a solid line).
fn trace(img: &mut RgbImage, rows: &[f64], c: [u8; 3], keep: impl Fn(usize) -> bool) {
    for u in 0..rows.len() {
        if !keep(u) || !rows[u].is_finite() {
            continue;
        }
        let y = rows[u].round() as i64;
        // Close vertical gaps to the previous column.
        let prev = if u > 0 && rows[u - 1].is_finite() {
            rows[u - 1].round() as i64
        } else {
            y
        };
        for yy in y.min(prev)..=y.max(prev) {
            put(img, u as i64, yy, c);
        }
    }
}

/// Grayscale B-scan with predicted surfaces as solid colored lines and the
/// reference as dashed lines in a lighter shade. All rows are `[surface][col]`
/// in the image's own coordinates.
pub fn overlay(
    pixels: &[f32],
    height: usize,
    width: usize,
    pred: &[f64],
    truth: Option<(&[f64], &[bool])>,
) -> Result<RgbImage> {
    if pixels.len() != height * width || pred.len() != N_SURFACES * width {
        return Err(Error::Shape("overlay inputs do not match the image size".into()));
    }
    let mut img = RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let v = (pixels[y as usize * width + x as usize] * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    if let Some((rows, valid)) = truth {
        for k in 0..N_SURFACES {
            let c = COLORS[k].map(|v| v / 2 + 128);
            let r = &rows[k * width..(k + 1) * width];
            let ok = &valid[k * width..(k + 1) * width];
            trace(&mut img, r, c, |u| ok[u] && (u / 3) % 2 == 0);
        }
    }
    for k in 0..N_SURFACES {
        trace(&mut img, &pred[k * width..(k + 1) * width], COLORS[k], |_| true);
    }
    Ok(img)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Two stacked panels: training loss (top, blue) and validation MAD (bottom,
/// red), each scaled to its own range, epochs along x.
pub fn plot_loss_curves(log: &[EpochLog]) -> Result<RgbImage> {
    if log.is_empty() {
        return Err(Error::Data("empty loss log".into()));
    }
    let (w, h, pad) = (640u32, 480u32, 20i64);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let panel_h = (h as i64 - 3 * pad) / 2;
    let series: [(Vec<f64>, [u8; 3]); 2] = [
        (log.iter().map(|r| r.train_loss).collect(), [31, 119, 180]),
        (log.iter().map(|r| r.val_mad.unwrap_or(f64::NAN)).collect(), [214, 39, 40]),
    ];
    for (p, (ys, color)) in series.iter().enumerate() {
        let top = pad + p as i64 * (panel_h + pad);
        let (x0, x1) = (pad, w as i64 - pad);
        for x in x0..=x1 {
            put(&mut img, x, top + panel_h, [0, 0, 0]);
        }
        for y in top..=top + panel_h {
            put(&mut img, x0, y, [0, 0, 0]);
        }
        let finite: Vec<f64> = ys.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let n = ys.len().max(2) - 1;
        let mut prev: Option<(i64, i64)> = None;
        for (i, &v) in ys.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let x = x0 + (i as i64 * (x1 - x0)) / n as i64;
            let y = top + ((hi - v) / span * (panel_h - 4) as f64).round() as i64 + 2;
            if let Some((px, py)) = prev {
                let steps = (x - px).abs().max((y - py).abs()).max(1);
                for s in 0..=steps {
                    put(&mut img, px + (x - px) * s / steps, py + (y - py) * s / steps, *color);
                }
            }
            for dx in -1..=1 {
                for dy in -1..=1 {
                    put(&mut img, x + dx, y + dy, *color);
                }
            }
            prev = Some((x, y));
        }
    }
    Ok(img)
}
