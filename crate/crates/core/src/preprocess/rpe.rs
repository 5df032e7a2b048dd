use nalgebra::{DMatrix, DVector};

use super::BScan;
use crate::error::{Error, Result};

/// Per column, the row of the strongest dark-above → bright-below transition.
///
/// The response is the central difference `I(v+1) − I(v−1)`; ties go to the
/// upper row. Columns without any positive response (e.g. constant ones) are
/// `None`.
pub fn detect_rpe_candidates(b: &BScan) -> Vec<Option<usize>> {
    let (h, w) = (b.height(), b.width());
    let px = b.pixels();
    (0..w)
        .map(|u| {
            let mut best: Option<(usize, f32)> = None;
            for v in 1..h - 1 {
                let d = px[(v + 1) * w + u] - px[(v - 1) * w + u];
                if d > 0.0 && best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((v, d));
                }
            }
            best.map(|(v, _)| v)
        })
        .collect()
}

/// Drops candidates that sit more than `threshold_px` away from the nearest
/// valid candidate on both sides (one-sided at the image edges).
pub fn reject_outliers(candidates: &[Option<usize>], threshold_px: usize) -> Result<Vec<Option<usize>>> {
    let valid: Vec<(usize, usize)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(u, r)| r.map(|r| (u, r)))
        .collect();
    if valid.len() < 3 {
        return Err(Error::UnusableScan {
            stage: "reject_outliers",
            reason: format!("{} valid RPE candidates, need at least 3", valid.len()),
        });
    }
    let far = |a: usize, b: usize| a.abs_diff(b) > threshold_px;
    let mut out = vec![None; candidates.len()];
    for (i, &(u, r)) in valid.iter().enumerate() {
        let left = i.checked_sub(1).map(|j| valid[j].1);
        let right = valid.get(i + 1).map(|p| p.1);
        let outlier = match (left, right) {
            (Some(l), Some(rr)) => far(r, l) && far(r, rr),
            (Some(n), None) | (None, Some(n)) => far(r, n),
            (None, None) => false,
        };
        if !outlier {
            out[u] = Some(r);
        }
    }
    if out.iter().all(Option::is_none) {
        return Err(Error::UnusableScan {
            stage: "reject_outliers",
            reason: "every RPE candidate was rejected".into(),
        });
    }
    Ok(out)
}

/// `row(u) = a·u² + b·u + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadraticCurve {
    pub fn eval(&self, u: f64) -> f64 {
        (self.a * u + self.b) * u + self.c
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticFit {
    pub curve: QuadraticCurve,
    /// Root-mean-square residual of the fitted points, in rows.
    pub residual_rms: f64,
}

/// Least-squares quadratic through `(col, row)` points.
pub fn fit_quadratic(points: &[(f64, f64)]) -> Result<QuadraticFit> {
    if points.iter().any(|(u, r)| !u.is_finite() || !r.is_finite()) {
        return Err(Error::InvalidArgument("non-finite point in quadratic fit".into()));
    }
    let mut cols: Vec<f64> = points.iter().map(|p| p.0).collect();
    cols.sort_by(f64::total_cmp);
    cols.dedup();
    if cols.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "quadratic fit needs 3 distinct columns, got {}",
            cols.len()
        )));
    }
    // Column-scaled design keeps the normal matrix well conditioned.
    let scale = points.iter().map(|p| p.0.abs()).fold(1.0, f64::max);
    let n = points.len();
    let design = DMatrix::from_fn(n, 3, |i, j| {
        let x = points[i].0 / scale;
        match j {
            0 => x * x,
            1 => x,
            _ => 1.0,
        }
    });
    let rhs = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let qr = design.clone().qr();
    let qtb = qr.q().transpose() * &rhs;
    let coef = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::InvalidArgument("rank-deficient quadratic design".into()))?;
    let curve = QuadraticCurve {
        a: coef[0] / (scale * scale),
        b: coef[1] / scale,
        c: coef[2],
    };
    let sq: f64 = points.iter().map(|&(u, r)| (curve.eval(u) - r).powi(2)).sum();
    Ok(QuadraticFit {
        curve,
        residual_rms: (sq / n as f64).sqrt(),
    })
}

/// Shifts every column by an integer so `curve(u)` lands on row `H/2`;
/// vacated pixels become zero. Returns the image and the per-column shifts
/// (`flat(v) = orig(v + shift)`).
pub fn flatten(b: &BScan, curve: &QuadraticCurve) -> Result<(BScan, Vec<i64>)> {
    let (h, w) = (b.height(), b.width());
    let center = (h / 2) as f64;
    let mut shifts = Vec::with_capacity(w);
    for u in 0..w {
        let s = (curve.eval(u as f64) - center).round();
        if !s.is_finite() || s.abs() >= h as f64 {
            return Err(Error::UnusableScan {
                stage: "flatten",
                reason: format!("column {u} would shift by {s} rows in a {h}-row scan"),
            });
        }
        shifts.push(s as i64);
    }
    let src = b.pixels();
    let mut out = vec![0.0f32; h * w];
    for (u, &s) in shifts.iter().enumerate() {
        for v in 0..h {
            let o = v as i64 + s;
            if (0..h as i64).contains(&o) {
                out[v * w + u] = src[o as usize * w + u];
            }
        }
    }
    Ok((b.with_pixels(h, w, out), shifts))
}
