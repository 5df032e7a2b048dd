//! Orchestration behind the `olseg` CLI: phantom datasets, preprocessing,
//! training, evaluation and plots.

mod config;
mod dataset;
mod eval;
mod render;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::RunConfig;
pub use dataset::{load_manifest, load_volumes, preprocess_volume, slice_targets, PreparedVolume};
pub use eval::{consistency, evaluate, predict_original, predict_volume, score_volume};
pub use render::{overlay, plot_loss_curves, save_png};
pub use train::{
    read_loss_log, train, write_loss_log, EpochLog, TrainOutcome, BEST_CHECKPOINT, LAST_CHECKPOINT, LOSS_LOG,
};

use crate::data::{
    annotation_path, read_volume, split_path, volume_path, write_annotations, write_volume, SplitManifest, Volume,
};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::network::ModelParams;
use crate::phantom::{corrupt_slice, generate_phantom, PhantomConfig};
use crate::preprocess::TransformRecord;
use crate::tensor::read_checkpoint;

/// Process exit status for an error: 2 configuration, 3 data, 4 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) | Error::Graph(_) => 4,
        _ => 3,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Seed of the `index`-th generated volume.
fn volume_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}

/// The phantom volume a run config describes, with corruption applied when
/// its split is listed in `corrupt_splits`.
pub fn make_phantom(cfg: &RunConfig, split: &str, index: usize) -> Result<(Volume, crate::data::BoundarySet)> {
    let mut pc = PhantomConfig::for_size(
        cfg.phantom_slices,
        cfg.phantom_height,
        cfg.phantom_width,
        volume_seed(cfg.seed, index),
    );
    pc.speckle_contrast = cfg.phantom_speckle;
    let p = generate_phantom(&pc)?;
    let mut vol = p.volume;
    if cfg.corrupt_every > 0 && cfg.corrupted_splits().any(|s| s == split) {
        for j in (1..vol.slices).step_by(cfg.corrupt_every) {
            vol = corrupt_slice(&vol, j, cfg.corrupt_severity, pc.seed)?;
        }
    }
    Ok((vol, p.truth))
}

/// Writes a phantom dataset (volumes, annotations, split manifest) to `out`.
pub fn cmd_phantom_gen(cfg: &RunConfig, out: &Path) -> Result<SplitManifest> {
    create_dir(out)?;
    let mut manifest = SplitManifest::default();
    let mut index = 0;
    for (split, count) in [("train", cfg.phantom_train), ("val", cfg.phantom_val), ("test", cfg.phantom_test)] {
        for i in 0..count {
            let id = format!("{split}_{i:03}");
            let (vol, truth) = make_phantom(cfg, split, index)?;
            write_volume(&vol, &volume_path(out, &id))?;
            write_annotations(&truth, &annotation_path(out, &id))?;
            match split {
                "train" => manifest.train.push(id),
                "val" => manifest.val.push(id),
                _ => manifest.test.push(id),
            }
            index += 1;
        }
    }
    manifest.save(&split_path(out))?;
    Ok(manifest)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub volume: PathBuf,
    pub transforms: PathBuf,
    /// `(slice, reason)` for each rejected slice.
    pub failures: Vec<(usize, String)>,
}

pub fn transforms_path(out: &Path, stem: &str) -> PathBuf {
    out.join(format!("{stem}.transforms.json"))
}

/// Preprocesses one volume file into `out`: `{stem}.octvol` holds the
/// network-space slices and `{stem}.transforms.json` one record per slice
/// (`null` for rejected slices).
pub fn cmd_preprocess(cfg: &RunConfig, input: &Path, out: &Path) -> Result<PreprocessSummary> {
    let vol = read_volume(input)?;
    let (processed, transforms, failures) = preprocess_volume(&vol, &cfg.preprocess_config())?;
    create_dir(out)?;
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("{}: no file name", input.display())))?;
    let vol_out = volume_path(out, stem);
    if vol_out == input {
        return Err(Error::InvalidArgument("output would overwrite the input volume".into()));
    }
    write_volume(&processed, &vol_out)?;
    let tr_out = transforms_path(out, stem);
    let json = serde_json::to_string_pretty(&transforms).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(&tr_out, json).map_err(|e| Error::io(&tr_out, e))?;
    Ok(PreprocessSummary {
        volume: vol_out,
        transforms: tr_out,
        failures: failures.into_iter().map(|(j, e)| (j, e.to_string())).collect(),
    })
}

pub fn read_transforms(path: &Path) -> Result<Vec<Option<TransformRecord>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Trains on the `train` split of `cfg.data_dir`, selecting on `val`, and
/// writes the config, loss log and checkpoints to `cfg.out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = load_manifest(&cfg.data_dir)?;
    let pc = cfg.preprocess_config();
    let train_set = load_volumes(&cfg.data_dir, &manifest.train, &pc)?;
    let val_set = load_volumes(&cfg.data_dir, &manifest.val, &pc)?;
    create_dir(&cfg.out_dir)?;
    let cfg_path = cfg.out_dir.join("config.txt");
    std::fs::write(&cfg_path, cfg.to_string()).map_err(|e| Error::io(&cfg_path, e))?;
    train(cfg, &train_set, &val_set, Some(&cfg.out_dir))
}

pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<ModelParams> {
    ModelParams::from_tensors(&cfg.model_config(), read_checkpoint(checkpoint)?)
        .map_err(|e| Error::Config(format!("{} does not fit the configured model: {e}", checkpoint.display())))
}

/// Scores `checkpoint` on `cfg.eval_split`, writing `metrics.csv`,
/// `metrics.json` and (optionally) per-slice overlays at original size.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let params = load_model(cfg, checkpoint)?;
    let manifest = load_manifest(&cfg.data_dir)?;
    let ids = match cfg.eval_split.as_str() {
        "train" => &manifest.train,
        "val" => &manifest.val,
        "test" => &manifest.test,
        s => return Err(Error::Config(format!("eval_split: unknown split {s:?}"))),
    };
    let vols = load_volumes(&cfg.data_dir, ids, &cfg.preprocess_config())?;
    let (report, preds) = evaluate(&params, &vols)?;
    create_dir(&cfg.out_dir)?;
    report.save(&cfg.out_dir)?;
    if cfg.overlays {
        let dir = cfg.out_dir.join("overlays");
        create_dir(&dir)?;
        for (v, pred) in vols.iter().zip(&preds) {
            let (h, w) = (v.original.height, v.original.width);
            for (j, p) in pred.iter().enumerate() {
                let Some(p) = p else { continue };
                let truth = v.truth.as_ref().filter(|t| t.is_annotated(j)).map(|t| t.slice(j));
                let img = overlay(v.original.slice(j), h, w, p, truth)?;
                save_png(&img, &dir.join(format!("{}_s{j:03}.png", v.id)))?;
            }
        }
    }
    Ok(report)
}

/// Cross-slice consistency of `checkpoint`'s predictions on one volume file.
pub fn cmd_consistency(cfg: &RunConfig, checkpoint: &Path, volume: &Path) -> Result<f64> {
    let params = load_model(cfg, checkpoint)?;
    let vol = read_volume(volume)?;
    let id = volume.file_stem().and_then(|s| s.to_str()).unwrap_or("volume");
    let pv = PreparedVolume::new(id, vol, None, &cfg.preprocess_config())?;
    consistency(&params, &pv)
}

/// Renders `loss_log.csv` to a PNG.
pub fn cmd_plot(log: &Path, out: &Path) -> Result<()> {
    let img = plot_loss_curves(&read_loss_log(log)?)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_png(&img, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig {
            phantom_train: 2,
            phantom_val: 1,
            phantom_test: 1,
            phantom_slices: 4,
            phantom_height: 64,
            phantom_width: 32,
            output_height: 32,
            output_width: 32,
            clahe_tile_rows: 4,
            clahe_tile_cols: 4,
            levels: 2,
            base_channels: 2,
            epochs: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 4);
    }

    #[test]
    fn corruption_follows_the_split_list() {
        let cfg = RunConfig {
            corrupt_every: 3,
            corrupt_splits: "test".into(),
            ..tiny()
        };
        let (clean, _) = make_phantom(&cfg, "train", 0).unwrap();
        let (dirty, _) = make_phantom(&cfg, "test", 0).unwrap();
        for j in 0..4 {
            assert_eq!(clean.slice(j) == dirty.slice(j), j != 1, "slice {j}");
        }
    }

    #[test]
    fn train_eval_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.data_dir = dir.path().join("data");
        cfg.out_dir = dir.path().join("run");
        let manifest = cmd_phantom_gen(&cfg, &cfg.data_dir).unwrap();
        assert_eq!((manifest.train.len(), manifest.val.len(), manifest.test.len()), (2, 1, 1));

        let outcome = cmd_train(&cfg).unwrap();
        let log = read_loss_log(&cfg.out_dir.join(LOSS_LOG)).unwrap();
        assert_eq!(log, outcome.log);
        assert_eq!(log.iter().map(|r| r.epoch).collect::<Vec<_>>(), [1, 2]);
        assert!(log.iter().all(|r| r.val_mad.is_some()));

        let report = cmd_eval(&cfg, &cfg.out_dir.join(BEST_CHECKPOINT)).unwrap();
        assert_eq!(report.scans.len(), 1);
        assert!(cfg.out_dir.join("metrics.csv").exists());
        let png = image::open(cfg.out_dir.join("overlays/test_000_s000.png")).unwrap();
        assert_eq!((png.width(), png.height()), (32, 64));
        assert_eq!(cmd_eval(&cfg, &cfg.out_dir.join(BEST_CHECKPOINT)).unwrap(), report);

        let score = cmd_consistency(&cfg, &cfg.out_dir.join(LAST_CHECKPOINT), &volume_path(&cfg.data_dir, "test_000"))
            .unwrap();
        assert!(score.is_finite() && score >= 0.0);

        cmd_plot(&cfg.out_dir.join(LOSS_LOG), &cfg.out_dir.join("loss.png")).unwrap();
        assert!(cfg.out_dir.join("loss.png").exists());
    }

    #[test]
    fn preprocess_writes_volume_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let (vol, _) = make_phantom(&cfg, "train", 0).unwrap();
        let input = dir.path().join("v.octvol");
        write_volume(&vol, &input).unwrap();
        let s = cmd_preprocess(&cfg, &input, &dir.path().join("pp")).unwrap();
        assert!(s.failures.is_empty());
        let out = read_volume(&s.volume).unwrap();
        assert_eq!((out.slices, out.height, out.width), (4, 32, 32));
        let t = read_transforms(&s.transforms).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(Option::is_some));
    }
}
