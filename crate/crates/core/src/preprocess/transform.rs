use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// Coordinate changes applied by [`preprocess_bscan`](super::preprocess_bscan).
///
/// Original row `r` of column `u` lands at network row
/// `((r − shift_u − crop_top) + ½)·scale_rows − ½`; columns map by
/// `(u + ½)·scale_cols − ½`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub original_height: usize,
    pub original_width: usize,
    /// Per original column: `flat(v) = orig(v + shift)`.
    pub column_shifts: Vec<i64>,
    pub crop_top: usize,
    pub cropped_height: usize,
    pub output_height: usize,
    pub output_width: usize,
    /// Output size over cropped size.
    pub resize_scale_rows: f64,
    pub resize_scale_cols: f64,
}

/// Linear interpolation of `values` at fractional index `x` (clamped).
fn sample(values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let x = x.clamp(0.0, (n - 1) as f64);
    let i0 = x.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    let t = x - i0 as f64;
    values[i0] * (1.0 - t) + values[i1] * t
}

impl TransformRecord {
    /// The identity record of an `h×w` scan.
    pub fn identity(h: usize, w: usize) -> Self {
        Self {
            original_height: h,
            original_width: w,
            column_shifts: vec![0; w],
            crop_top: 0,
            cropped_height: h,
            output_height: h,
            output_width: w,
            resize_scale_rows: 1.0,
            resize_scale_cols: 1.0,
        }
    }

    /// Original row of original column `u` → output-space row.
    pub fn row_to_output(&self, u: usize, row: f64) -> f64 {
        let flat = row - self.column_shifts[u] as f64 - self.crop_top as f64;
        (flat + 0.5) * self.resize_scale_rows - 0.5
    }

    /// Output-space row at original column `u` → original row, clamped to the image.
    pub fn row_to_original(&self, u: usize, y: f64) -> f64 {
        let flat = (y + 0.5) / self.resize_scale_rows - 0.5;
        let r = flat + self.crop_top as f64 + self.column_shifts[u] as f64;
        r.clamp(0.0, (self.original_height - 1) as f64)
    }

    /// Fractional output column of original column `u`.
    pub fn col_to_output(&self, u: f64) -> f64 {
        (u + 0.5) * self.resize_scale_cols - 0.5
    }

    /// Fractional original column of output column `x`.
    pub fn col_to_original(&self, x: f64) -> f64 {
        (x + 0.5) / self.resize_scale_cols - 0.5
    }

    /// One surface in original coordinates (`rows[u]`, `valid[u]`) → output
    /// columns. An output column is valid when the original columns it blends
    /// are valid and the row lands inside the output image.
    pub fn surface_to_output(&self, rows: &[f64], valid: &[bool]) -> Result<(Vec<f64>, Vec<bool>)> {
        let w = self.original_width;
        if rows.len() != w || valid.len() != w {
            return Err(shape_err!("surface has {} columns, scan has {w}", rows.len()));
        }
        let mapped: Vec<f64> = (0..w).map(|u| self.row_to_output(u, rows[u])).collect();
        let limit = (self.output_height - 1) as f64;
        let mut out = Vec::with_capacity(self.output_width);
        let mut ok = Vec::with_capacity(self.output_width);
        for x in 0..self.output_width {
            let src = self.col_to_original(x as f64).clamp(0.0, (w - 1) as f64);
            let (u0, u1) = (src.floor() as usize, (src.ceil() as usize).min(w - 1));
            let y = sample(&mapped, src);
            out.push(y);
            ok.push(valid[u0] && valid[u1] && (0.0..=limit).contains(&y));
        }
        Ok((out, ok))
    }

    /// One surface predicted on output columns → original columns and rows.
    pub fn surface_to_original(&self, rows: &[f64]) -> Result<Vec<f64>> {
        if rows.len() != self.output_width {
            return Err(shape_err!("surface has {} columns, output has {}", rows.len(), self.output_width));
        }
        Ok((0..self.original_width)
            .map(|u| {
                let y = sample(rows, self.col_to_output(u as f64));
                self.row_to_original(u, y)
            })
            .collect())
    }
}
