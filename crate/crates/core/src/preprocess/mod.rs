//! B-scan conditioning: RPE-based flattening, band crop, denoising, contrast
//! enhancement and resizing, with the bookkeeping needed to map boundary
//! positions between original and network coordinates.

mod clahe;
mod filters;
mod rpe;
mod transform;

use std::path::PathBuf;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub use clahe::clahe;
pub use filters::{crop_band, crop_rows, gaussian_smooth, resize_bilinear};
pub use rpe::{detect_rpe_candidates, fit_quadratic, flatten, reject_outliers, QuadraticCurve, QuadraticFit};
pub use transform::TransformRecord;

/// Smallest accepted B-scan side.
pub const MIN_SIDE: usize = 16;

/// One grayscale B-scan, row-major, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BScan {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    pub row_spacing_um: Option<f64>,
    pub col_spacing_um: Option<f64>,
}

impl BScan {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(shape_err!("B-scan must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"));
        }
        Self::new_unchecked_size(height, width, pixels)
    }

    /// Like [`BScan::new`] without the minimum-size rule (intermediate images).
    pub(crate) fn new_unchecked_size(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(shape_err!("{height}x{width} B-scan given {} pixels", pixels.len()));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("B-scan intensity {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
            row_spacing_um: None,
            col_spacing_um: None,
        })
    }

    pub fn from_u8(height: usize, width: usize, raw: &[u8]) -> Result<Self> {
        Self::new(height, width, raw.iter().map(|&v| v as f32 / 255.0).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f32> + '_ {
        self.pixels.iter().skip(col).step_by(self.width).copied()
    }

    fn with_pixels(&self, height: usize, width: usize, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), height * width);
        Self {
            height,
            width,
            pixels,
            row_spacing_um: self.row_spacing_um,
            col_spacing_um: self.col_spacing_um,
        }
    }

    /// `[H, W, 1]` network input.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[self.height, self.width, 1], self.pixels.clone()).expect("consistent size")
    }

    /// 8-bit grayscale PNG.
    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        let raw: Vec<u8> = self.pixels.iter().map(|&v| (v * 255.0).round() as u8).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer matches dimensions")
            .save(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub outlier_threshold_px: usize,
    pub gaussian_sigma: f64,
    pub clahe_tiles: (usize, usize),
    pub clahe_clip: f64,
    pub output_height: usize,
    pub output_width: usize,
    /// Where per-stage PNGs go, if anywhere.
    pub debug_dir: Option<PathBuf>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            outlier_threshold_px: 60,
            gaussian_sigma: 1.0,
            clahe_tiles: (8, 8),
            clahe_clip: 0.01,
            output_height: 512,
            output_width: 512,
            debug_dir: None,
        }
    }
}

fn unusable(stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::UnusableScan { .. } => e,
        other => Error::UnusableScan {
            stage,
            reason: other.to_string(),
        },
    }
}

/// Full pipeline: detect → reject → fit → flatten → crop → smooth → CLAHE → resize.
pub fn preprocess_bscan(b: &BScan, cfg: &PreprocessConfig) -> Result<(BScan, TransformRecord)> {
    if b.height < MIN_SIDE || b.width < MIN_SIDE {
        return Err(shape_err!("B-scan must be at least {MIN_SIDE}x{MIN_SIDE}"));
    }
    let debug = |name: &str, img: &BScan| -> Result<()> {
        match &cfg.debug_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                img.save_png(&dir.join(format!("{name}.png")))
            }
            None => Ok(()),
        }
    };
    debug("0_input", b)?;
    let candidates = detect_rpe_candidates(b);
    let kept = reject_outliers(&candidates, cfg.outlier_threshold_px)?;
    let points: Vec<(f64, f64)> = kept
        .iter()
        .enumerate()
        .filter_map(|(u, r)| r.map(|r| (u as f64, r as f64)))
        .collect();
    let fit = fit_quadratic(&points).map_err(unusable("fit_quadratic"))?;
    let (flat, shifts) = flatten(b, &fit.curve).map_err(unusable("flatten"))?;
    debug("1_flattened", &flat)?;
    let (cropped, crop_top) = crop_band(&flat).map_err(unusable("crop_band"))?;
    debug("2_cropped", &cropped)?;
    let smooth = gaussian_smooth(&cropped, cfg.gaussian_sigma)?;
    debug("3_smoothed", &smooth)?;
    let enhanced = clahe(&smooth, cfg.clahe_tiles, cfg.clahe_clip)?;
    debug("4_clahe", &enhanced)?;
    let out = resize_bilinear(&enhanced, cfg.output_height, cfg.output_width)?;
    debug("5_output", &out)?;
    let record = TransformRecord {
        original_height: b.height,
        original_width: b.width,
        column_shifts: shifts,
        crop_top,
        cropped_height: cropped.height,
        output_height: out.height,
        output_width: out.width,
        resize_scale_rows: out.height as f64 / cropped.height as f64,
        resize_scale_cols: out.width as f64 / cropped.width as f64,
    };
    Ok((out, record))
}
