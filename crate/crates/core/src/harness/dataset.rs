use std::path::Path;

use rayon::prelude::*;

use crate::data::{
    annotation_path, mask_from_boundaries, read_annotations, read_volume, split_path, volume_path, window_indices,
    BoundarySet, SplitManifest, Volume, N_SURFACES,
};
use crate::error::{Error, Result};
use crate::loss::GroundTruth;
use crate::preprocess::{preprocess_bscan, PreprocessConfig, TransformRecord};

/// A volume conditioned for the network, with everything needed to map
/// results back to its original coordinates.
#[derive(Clone, Debug)]
pub struct PreparedVolume {
    pub id: String,
    pub original: Volume,
    /// Network-space slices; unusable slices are left black.
    pub processed: Volume,
    /// `None` where preprocessing rejected the slice.
    pub transforms: Vec<Option<TransformRecord>>,
    /// Original-space annotations, if any.
    pub truth: Option<BoundarySet>,
    /// Network-space supervision for annotated, usable slices.
    pub targets: Vec<Option<GroundTruth>>,
}

/// Preprocesses every slice, in parallel. Failures are returned per slice
/// rather than aborting the volume.
pub fn preprocess_volume(
    vol: &Volume,
    cfg: &PreprocessConfig,
) -> Result<(Volume, Vec<Option<TransformRecord>>, Vec<(usize, Error)>)> {
    let results: Vec<Result<(Vec<f32>, TransformRecord)>> = (0..vol.slices)
        .into_par_iter()
        .map(|j| {
            let (b, t) = preprocess_bscan(&vol.bscan(j)?, cfg)?;
            Ok((b.into_pixels(), t))
        })
        .collect();
    let n = cfg.output_height * cfg.output_width;
    let mut data = Vec::with_capacity(vol.slices * n);
    let mut transforms = Vec::with_capacity(vol.slices);
    let mut failures = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok((px, t)) => {
                data.extend(px);
                transforms.push(Some(t));
            }
            Err(e) => {
                log::warn!("slice {j}: {e}");
                data.extend(std::iter::repeat_n(0.0, n));
                transforms.push(None);
                failures.push((j, e));
            }
        }
    }
    let mut out = Volume::new(vol.slices, cfg.output_height, cfg.output_width, data)?;
    out.spacing_um = vol.spacing_um;
    Ok((out, transforms, failures))
}

/// Maps one slice's original-space boundaries into network space.
pub fn slice_targets(truth: &BoundarySet, slice: usize, t: &TransformRecord) -> Result<GroundTruth> {
    let w = t.output_width;
    let mut rows = Vec::with_capacity(N_SURFACES * w);
    let mut valid = Vec::with_capacity(N_SURFACES * w);
    for k in 0..N_SURFACES {
        let (r, v) = truth.surface(slice, k);
        let (ro, vo) = t.surface_to_output(r, v)?;
        rows.extend(ro);
        valid.extend(vo);
    }
    let class_map = mask_from_boundaries(&rows, &valid, t.output_height, w)?;
    Ok(GroundTruth {
        height: t.output_height,
        width: w,
        n_classes: N_SURFACES + 1,
        class_map,
        n_surfaces: N_SURFACES,
        rows,
        valid,
    })
}

impl PreparedVolume {
    pub fn new(id: &str, original: Volume, truth: Option<BoundarySet>, cfg: &PreprocessConfig) -> Result<Self> {
        if let Some(t) = &truth {
            if (t.slices, t.width) != (original.slices, original.width) {
                return Err(Error::Data(format!("{id}: annotations do not match the volume size")));
            }
        }
        let (processed, transforms, _) = preprocess_volume(&original, cfg)?;
        let targets = (0..original.slices)
            .map(|j| match (&truth, &transforms[j]) {
                (Some(b), Some(t)) if b.is_annotated(j) => slice_targets(b, j, t)
                    .map(Some)
                    .map_err(|e| Error::Data(format!("{id} slice {j}: {e}"))),
                _ => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            id: id.to_string(),
            original,
            processed,
            transforms,
            truth,
            targets,
        })
    }

    /// Reads `{id}.octvol` and, when present, `{id}.csv` from `dir`.
    pub fn load(dir: &Path, id: &str, cfg: &PreprocessConfig) -> Result<Self> {
        let vol = read_volume(&volume_path(dir, id))?;
        let ann = annotation_path(dir, id);
        let truth = if ann.exists() {
            Some(read_annotations(&ann, vol.slices, vol.height, vol.width)?)
        } else {
            log::warn!("{id}: no annotations");
            None
        };
        Self::new(id, vol, truth, cfg)
    }

    /// Network input for the window centered on `center`: `window` images
    /// stacked in slice order.
    pub fn window_input(&self, center: usize, window: usize, buf: &mut Vec<f32>) -> Result<()> {
        for j in window_indices(self.processed.slices, center, window)? {
            buf.extend_from_slice(self.processed.slice(j));
        }
        Ok(())
    }
}

pub fn load_manifest(data_dir: &Path) -> Result<SplitManifest> {
    SplitManifest::load(&split_path(data_dir))
}

pub fn load_volumes(data_dir: &Path, ids: &[String], cfg: &PreprocessConfig) -> Result<Vec<PreparedVolume>> {
    ids.iter().map(|id| PreparedVolume::load(data_dir, id, cfg)).collect()
}
