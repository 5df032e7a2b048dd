use crate::data::N_SURFACES;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, consistency_score, score_scan, BoundaryPrediction, MetricsReport, ScanMetrics};
use crate::network::{forward_graph, Mode, ModelParams};
use crate::tensor::Tensor;

use super::dataset::PreparedVolume;

/// Windows pushed through the network at once during inference.
const INFER_BATCH: usize = 8;

/// Network-space surfaces `[surface][col]` of every usable slice.
pub fn predict_volume(params: &ModelParams, vol: &PreparedVolume) -> Result<Vec<Option<Vec<f64>>>> {
    let cfg = &params.config;
    let (h, w) = (vol.processed.height, vol.processed.width);
    if (h, w) != (cfg.input_height, cfg.input_width) {
        return Err(Error::Config(format!(
            "{}: preprocessed slices are {h}x{w}, the model expects {}x{}",
            vol.id, cfg.input_height, cfg.input_width
        )));
    }
    let window = cfg.window();
    let centers: Vec<usize> = (0..vol.processed.slices).filter(|&j| vol.transforms[j].is_some()).collect();
    let mut out = vec![None; vol.processed.slices];
    for chunk in centers.chunks(INFER_BATCH) {
        let mut buf = Vec::with_capacity(chunk.len() * window * h * w);
        for &c in chunk {
            vol.window_input(c, window, &mut buf)?;
        }
        let input = Tensor::from_vec(&[chunk.len() * window, h, w, 1], buf)?;
        let pred = forward_graph::<f32>(params, input, Mode::Eval, false)?.output();
        for (b, &c) in chunk.iter().enumerate() {
            let rows = pred.surface_rows(b);
            if rows.iter().any(|r| !r.is_finite()) {
                return Err(Error::Numeric(format!("{} slice {c}: non-finite surface prediction", vol.id)));
            }
            out[c] = Some(rows);
        }
    }
    Ok(out)
}

/// Predictions mapped back to original coordinates, `[surface][col]` per slice.
pub fn predict_original(params: &ModelParams, vol: &PreparedVolume) -> Result<Vec<Option<Vec<f64>>>> {
    let pred = predict_volume(params, vol)?;
    pred.into_iter()
        .zip(&vol.transforms)
        .map(|(p, t)| match (p, t) {
            (Some(rows), Some(t)) => {
                let wo = t.output_width;
                let mut orig = Vec::with_capacity(N_SURFACES * t.original_width);
                for k in 0..N_SURFACES {
                    orig.extend(t.surface_to_original(&rows[k * wo..(k + 1) * wo])?);
                }
                Ok(Some(orig))
            }
            _ => Ok(None),
        })
        .collect()
}

/// Scores original-space predictions of one volume against its annotations.
pub fn score_volume(vol: &PreparedVolume, pred: &[Option<Vec<f64>>]) -> Result<Option<ScanMetrics>> {
    let Some(truth) = &vol.truth else {
        log::warn!("{}: no annotations, skipped", vol.id);
        return Ok(None);
    };
    let w = vol.original.width;
    let mut items = Vec::new();
    for j in 0..vol.original.slices {
        if !truth.is_annotated(j) {
            continue;
        }
        match &pred[j] {
            Some(rows) => {
                let (gt, ok) = truth.slice(j);
                items.push((BoundaryPrediction::new(w, rows.clone())?, gt, ok));
            }
            None => log::warn!("{} slice {j}: unusable, not scored", vol.id),
        }
    }
    if items.is_empty() {
        log::warn!("{}: nothing to score", vol.id);
        return Ok(None);
    }
    score_scan(&vol.id, w, items.iter().map(|(p, g, v)| (p, *g, *v))).map(Some)
}

/// Per-volume MAD/RMSE in original coordinates, plus the predictions.
pub fn evaluate(
    params: &ModelParams,
    vols: &[PreparedVolume],
) -> Result<(MetricsReport, Vec<Vec<Option<Vec<f64>>>>)> {
    let mut scans = Vec::new();
    let mut preds = Vec::with_capacity(vols.len());
    for v in vols {
        let p = predict_original(params, v)?;
        if let Some(m) = score_volume(v, &p)? {
            scans.push(m);
        }
        preds.push(p);
    }
    if scans.is_empty() {
        return Err(Error::Data("no annotated slices to evaluate".into()));
    }
    Ok((aggregate(scans)?, preds))
}

/// Mean absolute change of each predicted surface between adjacent slices, in
/// original pixels.
pub fn consistency(params: &ModelParams, vol: &PreparedVolume) -> Result<f64> {
    if vol.original.slices < 2 {
        return Err(Error::InvalidArgument(format!("{}: consistency needs at least 2 slices", vol.id)));
    }
    let pred = predict_original(params, vol)?;
    let rows: Vec<Vec<f64>> = pred
        .into_iter()
        .enumerate()
        .map(|(j, p)| p.ok_or_else(|| Error::Data(format!("{} slice {j}: unusable", vol.id))))
        .collect::<Result<_>>()?;
    consistency_score(&rows)
}
