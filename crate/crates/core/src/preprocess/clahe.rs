use super::BScan;
use crate::error::{Error, Result};

const BINS: usize = 256;

fn bin(v: f32) -> usize {
    ((v as f64 * BINS as f64) as usize).min(BINS - 1)
}

/// Tile `i` of `n` over `len` pixels covers `[⌊i·len/n⌋, ⌊(i+1)·len/n⌋)`.
fn tile_bounds(i: usize, n: usize, len: usize) -> (usize, usize) {
    (i * len / n, (i + 1) * len / n)
}

/// Clipped-histogram lookup table of one tile, values in `[0, 1]`.
fn tile_lut(b: &BScan, rows: (usize, usize), cols: (usize, usize), clip_limit: f64) -> Vec<f64> {
    let mut hist = vec![0.0f64; BINS];
    for v in rows.0..rows.1 {
        for u in cols.0..cols.1 {
            hist[bin(b.get(v, u))] += 1.0;
        }
    }
    let total = ((rows.1 - rows.0) * (cols.1 - cols.0)) as f64;
    let clip = (clip_limit * total).max(1.0);
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > clip {
            excess += *h - clip;
            *h = clip;
        }
    }
    let spread = excess / BINS as f64;
    let mut acc = 0.0;
    hist.iter()
        .map(|h| {
            acc += h + spread;
            (acc / total).min(1.0)
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization.
///
/// The image is split into `tiles.0 × tiles.1` tiles with floor-based
/// bounds. Each tile's 256-bin histogram is clipped at
/// `max(1, clip_limit · tile_pixels)`, the excess is spread evenly over all
/// bins, and the cumulative histogram becomes the tile's mapping. Pixels blend
/// the mappings of the four nearest tile centers bilinearly.
pub fn clahe(b: &BScan, tiles: (usize, usize), clip_limit: f64) -> Result<BScan> {
    let (h, w) = (b.height(), b.width());
    let (tr, tc) = tiles;
    if tr == 0 || tc == 0 || tr > h || tc > w {
        return Err(Error::InvalidArgument(format!("{tr}x{tc} CLAHE tiles on a {h}x{w} image")));
    }
    if !(clip_limit > 0.0) || !clip_limit.is_finite() {
        return Err(Error::InvalidArgument(format!("CLAHE clip limit must be > 0, got {clip_limit}")));
    }
    let luts: Vec<Vec<f64>> = (0..tr * tc)
        .map(|t| {
            let (i, j) = (t / tc, t % tc);
            tile_lut(b, tile_bounds(i, tr, h), tile_bounds(j, tc, w), clip_limit)
        })
        .collect();

    // Neighbouring tile centers along one axis and the blend weight of the second.
    let axis = |p: usize, n: usize, len: usize| -> (usize, usize, f64) {
        let f = ((p as f64 + 0.5) * n as f64 / len as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = f.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, f - i0 as f64)
    };
    let col_taps: Vec<_> = (0..w).map(|u| axis(u, tc, w)).collect();
    let mut out = Vec::with_capacity(h * w);
    for v in 0..h {
        let (i0, i1, ty) = axis(v, tr, h);
        for (u, &(j0, j1, tx)) in col_taps.iter().enumerate() {
            let k = bin(b.get(v, u));
            let m = |i: usize, j: usize| luts[i * tc + j][k];
            let top = m(i0, j0) * (1.0 - tx) + m(i0, j1) * tx;
            let bot = m(i1, j0) * (1.0 - tx) + m(i1, j1) * tx;
            out.push((top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0) as f32);
        }
    }
    Ok(b.with_pixels(h, w, out))
}
