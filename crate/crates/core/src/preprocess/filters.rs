use super::BScan;
use crate::error::{shape_err, Error, Result};

/// Rows `[top, bottom)` of `b`.
pub fn crop_rows(b: &BScan, top: usize, bottom: usize) -> Result<BScan> {
    if top >= bottom || bottom > b.height() {
        return Err(shape_err!("row range {top}..{bottom} outside a {}-row scan", b.height()));
    }
    let w = b.width();
    let px = b.pixels()[top * w..bottom * w].to_vec();
    Ok(b.with_pixels(bottom - top, w, px))
}

/// Keeps rows `[⌊H/8⌋, ⌊5H/8⌋)`. Returns the band and its first row.
pub fn crop_band(b: &BScan) -> Result<(BScan, usize)> {
    let h = b.height();
    let (top, bottom) = (h / 8, 5 * h / 8);
    Ok((crop_rows(b, top, bottom)?, top))
}

/// Half-sample symmetric reflection (`… c b a | a b c …`) of any index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with reflected borders; `sigma == 0` is the identity.
pub fn gaussian_smooth(b: &BScan, sigma: f64) -> Result<BScan> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("gaussian sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(b.clone());
    }
    let (h, w) = (b.height(), b.width());
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src = b.pixels();
    let mut tmp = vec![0.0f64; h * w];
    for v in 0..h {
        for u in 0..w {
            tmp[v * w + u] = k
                .iter()
                .enumerate()
                .map(|(j, &kj)| kj * src[v * w + reflect(u as isize + j as isize - r, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for v in 0..h {
        for u in 0..w {
            let s: f64 = k
                .iter()
                .enumerate()
                .map(|(j, &kj)| kj * tmp[reflect(v as isize + j as isize - r, h) * w + u])
                .sum();
            out[v * w + u] = s.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(b.with_pixels(h, w, out))
}

/// Source taps for output index `o` when resampling `n_in` samples to `n_out`
/// with half-pixel centers.
pub(crate) fn resample_taps(o: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, if i1 == i0 { 0.0 } else { src - i0 as f64 })
}

/// Bilinear resize with half-pixel alignment and clamped borders.
pub fn resize_bilinear(b: &BScan, height: usize, width: usize) -> Result<BScan> {
    if height == 0 || width == 0 {
        return Err(shape_err!("resize target {height}x{width} is empty"));
    }
    let (h, w) = (b.height(), b.width());
    if (h, w) == (height, width) {
        return Ok(b.clone());
    }
    let src = b.pixels();
    let cols: Vec<_> = (0..width).map(|x| resample_taps(x, w, width)).collect();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (r0, r1, ty) = resample_taps(y, h, height);
        for &(c0, c1, tx) in &cols {
            let at = |r: usize, c: usize| src[r * w + c] as f64;
            let top = at(r0, c0) * (1.0 - tx) + at(r0, c1) * tx;
            let bot = at(r1, c0) * (1.0 - tx) + at(r1, c1) * tx;
            out.push((top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0) as f32);
        }
    }
    Ok(b.with_pixels(height, width, out))
}
