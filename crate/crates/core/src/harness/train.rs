use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{line_ce_graph, line_l1_graph, mask_ce_graph, total_loss_graph, GroundTruth};
use crate::network::{forward_graph, Mode, ModelParams};
use crate::tensor::{write_checkpoint, Adam, Tensor};

use super::config::RunConfig;
use super::dataset::PreparedVolume;
use super::eval::evaluate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub mask_ce: f64,
    pub line_ce: f64,
    pub line_l1: f64,
    /// Mean MAD over validation volumes, original pixels.
    pub val_mad: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose weights are in `best`.
    pub best_epoch: usize,
    pub best: ModelParams,
    pub last: ModelParams,
}

pub const LOSS_LOG: &str = "loss_log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

pub fn write_loss_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in log {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<EpochLog>> {
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    csv::Reader::from_path(path)
        .map_err(err)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(err)
}

/// Trains on every annotated, usable center slice of `train`.
///
/// Each epoch visits the samples in a seeded random order in batches of
/// `batch_size` windows. After each epoch the model is scored on `val` and the
/// weights with the lowest mean MAD are kept (the last epoch when `val` is
/// empty). With `out_dir` set, the loss log and checkpoints are written there
/// as training progresses.
pub fn train(
    cfg: &RunConfig,
    train: &[PreparedVolume],
    val: &[PreparedVolume],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = cfg.model_config();
    let weights = cfg.loss_weights()?;
    let mut params = ModelParams::build(&model_cfg, cfg.seed)?;
    let mut adam = Adam::<f32>::new(cfg.adam_config())?;
    let (h, w) = (model_cfg.input_height, model_cfg.input_width);
    let window = model_cfg.window();

    let mut samples: Vec<(usize, usize)> = Vec::new();
    for (i, v) in train.iter().enumerate() {
        if (v.processed.height, v.processed.width) != (h, w) {
            return Err(Error::Config(format!(
                "{}: preprocessed slices are {}x{}, the model expects {h}x{w}",
                v.id, v.processed.height, v.processed.width
            )));
        }
        samples.extend((0..v.targets.len()).filter(|&j| v.targets[j].is_some()).map(|j| (i, j)));
    }
    if samples.is_empty() {
        return Err(Error::Data("no annotated training slices".into()));
    }
    log::info!(
        "training {} parameters on {} samples for {} epochs",
        params.parameter_count(),
        samples.len(),
        cfg.epochs
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log_rows: Vec<EpochLog> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        samples.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        for (step, batch) in samples.chunks(cfg.batch_size).enumerate() {
            let mut buf = Vec::with_capacity(batch.len() * window * h * w);
            let mut gts: Vec<&GroundTruth> = Vec::with_capacity(batch.len());
            for &(i, j) in batch {
                train[i].window_input(j, window, &mut buf)?;
                gts.push(train[i].targets[j].as_ref().expect("sampled slices have targets"));
            }
            let (classes, surfaces) = GroundTruth::batch(&gts)?;
            let input = Tensor::from_vec(&[batch.len() * window, h, w, 1], buf)?;
            let mut fp = forward_graph(&params, input, Mode::Train, true)?;
            let o = fp.outputs;
            let g = &mut fp.graph;
            let terms = [
                mask_ce_graph(g, o.mask_probs, &classes)?,
                line_ce_graph(g, o.surface_probs, &surfaces)?,
                line_l1_graph(g, o.surfaces, &surfaces)?,
            ];
            let loss = total_loss_graph(g, terms, &weights)?;
            let values = [loss, terms[0], terms[1], terms[2]].map(|v| g.value(v).data()[0] as f64);
            if !values[0].is_finite() {
                return Err(Error::Numeric(format!(
                    "loss diverged at epoch {epoch}, step {} (mask {}, line-ce {}, line-l1 {})",
                    step + 1,
                    values[1],
                    values[2],
                    values[3]
                )));
            }
            g.backward(loss)?;
            let grads = fp.param_grads();
            adam.step(&mut params.tensors, &grads)?;
            params.update_running_stats(&fp.bn_stats);
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
            steps += 1;
        }
        let mean = sums.map(|s| s / steps as f64);
        let val_mad = if val.is_empty() {
            None
        } else {
            Some(evaluate(&params, val)?.0.average().mad_mean)
        };
        let row = EpochLog {
            epoch,
            train_loss: mean[0],
            mask_ce: mean[1],
            line_ce: mean[2],
            line_l1: mean[3],
            val_mad,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val MAD {} ({:.1}s)",
            row.train_loss,
            val_mad.map_or("-".into(), |m| format!("{m:.3}")),
            started.elapsed().as_secs_f64()
        );
        let score = val_mad.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b || val_mad.is_none()) {
            if let Some(dir) = out_dir {
                write_checkpoint(dir.join(BEST_CHECKPOINT), &params.tensors)?;
            }
            best = Some((score, epoch, params.clone()));
        }
        log_rows.push(row);
        if let Some(dir) = out_dir {
            write_loss_log(&log_rows, &dir.join(LOSS_LOG))?;
            write_checkpoint(dir.join(LAST_CHECKPOINT), &params.tensors)?;
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        log: log_rows,
        best_epoch,
        best,
        last: params,
    })
}
