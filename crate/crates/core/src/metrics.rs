//! Boundary-position error metrics and their aggregation over scans.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{N_SURFACES, SURFACE_NAMES};
use crate::error::{shape_err, Error, Result};

fn check(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<usize> {
    if pred.len() != gt.len() || pred.len() != valid.len() {
        return Err(shape_err!(
            "pred/gt/valid lengths {}/{}/{}",
            pred.len(),
            gt.len(),
            valid.len()
        ));
    }
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(Error::InvalidArgument("no valid columns to score".into()));
    }
    Ok(n)
}

/// Mean absolute distance over valid columns.
pub fn mad(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<f64> {
    let n = check(pred, gt, valid)?;
    let s: f64 = (0..pred.len()).filter(|&i| valid[i]).map(|i| (pred[i] - gt[i]).abs()).sum();
    Ok(s / n as f64)
}

/// Root mean squared distance over valid columns.
pub fn rmse(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<f64> {
    let n = check(pred, gt, valid)?;
    let s: f64 = (0..pred.len())
        .filter(|&i| valid[i])
        .map(|i| (pred[i] - gt[i]).powi(2))
        .sum();
    Ok((s / n as f64).sqrt())
}

/// Predicted surfaces of one B-scan, `[surface][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPrediction {
    pub width: usize,
    pub rows: Vec<f64>,
    pub valid: Vec<bool>,
}

impl BoundaryPrediction {
    pub fn new(width: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != N_SURFACES * width {
            return Err(shape_err!("{} rows for {N_SURFACES} surfaces × {width} columns", rows.len()));
        }
        if rows.iter().any(|r| !r.is_finite()) {
            return Err(Error::Numeric("non-finite predicted boundary".into()));
        }
        let valid = vec![true; rows.len()];
        Ok(Self { width, rows, valid })
    }
}

/// Per-surface errors of one scan (volume), pooled over its scored B-scans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub id: String,
    pub mad: Vec<f64>,
    pub rmse: Vec<f64>,
}

/// Scores B-scans of one scan. Each item is `(pred, truth, truth_valid)`,
/// all `[surface][col]`; a column counts when both sides are valid.
pub fn score_scan<'a>(
    id: &str,
    width: usize,
    bscans: impl IntoIterator<Item = (&'a BoundaryPrediction, &'a [f64], &'a [bool])>,
) -> Result<ScanMetrics> {
    let mut p = vec![Vec::new(); N_SURFACES];
    let mut g = vec![Vec::new(); N_SURFACES];
    let mut v = vec![Vec::new(); N_SURFACES];
    for (pred, gt, ok) in bscans {
        if pred.width != width || gt.len() != N_SURFACES * width || ok.len() != gt.len() {
            return Err(shape_err!("B-scan boundaries do not match width {width}"));
        }
        for k in 0..N_SURFACES {
            let r = k * width..(k + 1) * width;
            p[k].extend_from_slice(&pred.rows[r.clone()]);
            g[k].extend_from_slice(&gt[r.clone()]);
            v[k].extend(pred.valid[r.clone()].iter().zip(&ok[r]).map(|(a, b)| *a && *b));
        }
    }
    let mut out = ScanMetrics {
        id: id.to_string(),
        mad: Vec::with_capacity(N_SURFACES),
        rmse: Vec::with_capacity(N_SURFACES),
    };
    for k in 0..N_SURFACES {
        let ctx = |e: Error| Error::Data(format!("{id}, {}: {e}", SURFACE_NAMES[k]));
        out.mad.push(mad(&p[k], &g[k], &v[k]).map_err(ctx)?);
        out.rmse.push(rmse(&p[k], &g[k], &v[k]).map_err(ctx)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSummary {
    pub surface: String,
    pub mad_mean: f64,
    pub mad_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scans: Vec<ScanMetrics>,
    /// One row per surface, then `Average`.
    pub summary: Vec<SurfaceSummary>,
}

/// Mean and population standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn aggregate(scans: Vec<ScanMetrics>) -> Result<MetricsReport> {
    if scans.is_empty() {
        return Err(Error::InvalidArgument("no scans to aggregate".into()));
    }
    if scans.iter().any(|s| s.mad.len() != N_SURFACES || s.rmse.len() != N_SURFACES) {
        return Err(shape_err!("scan metrics must have {N_SURFACES} surfaces"));
    }
    let row = |name: &str, mads: Vec<f64>, rmses: Vec<f64>| {
        let (mad_mean, mad_std) = mean_std(&mads);
        let (rmse_mean, rmse_std) = mean_std(&rmses);
        SurfaceSummary {
            surface: name.to_string(),
            mad_mean,
            mad_std,
            rmse_mean,
            rmse_std,
        }
    };
    let mut summary: Vec<SurfaceSummary> = SURFACE_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            row(
                name,
                scans.iter().map(|s| s.mad[k]).collect(),
                scans.iter().map(|s| s.rmse[k]).collect(),
            )
        })
        .collect();
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    summary.push(row(
        "Average",
        scans.iter().map(|s| avg(&s.mad)).collect(),
        scans.iter().map(|s| avg(&s.rmse)).collect(),
    ));
    Ok(MetricsReport { scans, summary })
}

impl MetricsReport {
    pub fn average(&self) -> &SurfaceSummary {
        self.summary.last().expect("report has an Average row")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for row in &self.summary {
            w.serialize(row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<SurfaceSummary>> {
        let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        csv::Reader::from_path(path)
            .map_err(err)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(err)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Writes `metrics.csv` and `metrics.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.write_csv(&dir.join("metrics.csv"))?;
        self.write_json(&dir.join("metrics.json"))
    }
}

/// Mean |s_k(u, j) − s_k(u, j+1)| over surfaces, columns and adjacent slice
/// pairs. `slices[j]` holds `[surface][col]` rows.
pub fn consistency_score(slices: &[Vec<f64>]) -> Result<f64> {
    if slices.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "consistency needs at least 2 slices, got {}",
            slices.len()
        )));
    }
    let n = slices[0].len();
    if n == 0 || slices.iter().any(|s| s.len() != n) {
        return Err(shape_err!("slices have mismatched boundary counts"));
    }
    let total: f64 = slices
        .windows(2)
        .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum();
    Ok(total / ((slices.len() - 1) * n) as f64)
}
