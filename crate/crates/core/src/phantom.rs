//! Synthetic OCT volumes with known layer boundaries.
//!
//! Surfaces are built upward from the RPE: the RPE follows a global quadratic
//! plus a smooth random undulation, and each layer above it has a mean
//! thickness modulated by its own smooth random field. Fields are white noise
//! blurred over the (slice, column) grid, so neighbouring slices differ only a
//! little. Intensities are piecewise constant per region with multiplicative
//! gamma speckle and vertical vessel shadows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::data::{BoundarySet, Volume, N_SURFACES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub seed: u64,
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    /// Vitreous, RNFL, GCL+IPL, INL+OPL, ONL, and the band between ONL-IS and the RPE.
    pub layer_intensity: [f64; 6],
    pub rpe_intensity: f64,
    pub choroid_intensity: f64,
    /// Mean thickness (px) of the five layers above the RPE, top to bottom.
    pub thickness: [f64; 5],
    pub rpe_thickness: f64,
    /// RPE row at the center column.
    pub rpe_depth: f64,
    /// Extra RPE depth at the lateral edges (quadratic profile).
    pub curvature: f64,
    /// Amplitude (px) of the smooth RPE undulation.
    pub undulation: f64,
    /// Relative amplitude of the layer-thickness fields.
    pub thickness_variation: f64,
    /// Gaussian smoothing lengths of the random fields.
    pub smoothness_cols: f64,
    pub smoothness_slices: f64,
    /// Upper bound on any surface's change between adjacent slices (px).
    pub max_slice_step: f64,
    /// Speckle standard deviation relative to the mean (0 disables speckle).
    pub speckle_contrast: f64,
    pub vessel_count: usize,
    pub vessel_width: f64,
    /// Intensity factor below a vessel, in `(0, 1]`.
    pub shadow_attenuation: f64,
}

impl PhantomConfig {
    /// Defaults scaled to a `slices × height × width` volume.
    pub fn for_size(slices: usize, height: usize, width: usize, seed: u64) -> Self {
        let h = height as f64;
        Self {
            seed,
            slices,
            height,
            width,
            layer_intensity: [0.03, 0.45, 0.36, 0.24, 0.08, 0.3],
            rpe_intensity: 0.95,
            choroid_intensity: 0.4,
            thickness: [0.05 * h, 0.08 * h, 0.065 * h, 0.08 * h, 0.03 * h],
            rpe_thickness: (0.04 * h).max(2.0),
            rpe_depth: 0.55 * h,
            curvature: 0.1 * h,
            undulation: 0.03 * h,
            thickness_variation: 0.15,
            smoothness_cols: width as f64 / 10.0,
            smoothness_slices: 2.0,
            max_slice_step: 1.5,
            speckle_contrast: 0.2,
            vessel_count: 3,
            vessel_width: (width as f64 / 64.0).max(1.0),
            shadow_attenuation: 0.8,
        }
    }

    /// Noise-free, shadow-free, undulation-free variant.
    pub fn noiseless(mut self) -> Self {
        self.speckle_contrast = 0.0;
        self.vessel_count = 0;
        self.undulation = 0.0;
        self.thickness_variation = 0.0;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("phantom: {m}")));
        if self.slices < 1 || self.height < 16 || self.width < 16 {
            return bad(format!("dims {}x{}x{} too small", self.slices, self.height, self.width));
        }
        let intensities = self
            .layer_intensity
            .iter()
            .chain([&self.rpe_intensity, &self.choroid_intensity]);
        if intensities.clone().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("intensities must lie in [0,1]".into());
        }
        if !(self.shadow_attenuation > 0.0 && self.shadow_attenuation <= 1.0) {
            return bad(format!("shadow attenuation {} outside (0,1]", self.shadow_attenuation));
        }
        if self.speckle_contrast < 0.0 || self.max_slice_step <= 0.0 {
            return bad("speckle contrast and slice step must be nonnegative/positive".into());
        }
        if self.thickness.iter().any(|&t| t <= 0.0) || self.rpe_thickness <= 0.0 {
            return bad("layer thicknesses must be positive".into());
        }
        if !(0.0..1.0).contains(&self.thickness_variation) {
            return bad(format!(
                "thickness variation {} would let layers overlap",
                self.thickness_variation
            ));
        }
        Ok(())
    }
}

/// A generated volume with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub volume: Volume,
    pub truth: BoundarySet,
    /// Top of the RPE band, `[slice][col]`.
    pub rpe: Vec<f64>,
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur_axis(field: &[f64], rows: usize, cols: usize, sigma: f64, along_rows: bool) -> Vec<f64> {
    let k = gaussian_taps(sigma);
    let r = (k.len() / 2) as isize;
    let n = if along_rows { rows } else { cols } as isize;
    let mut out = vec![0.0; field.len()];
    for i in 0..rows {
        for j in 0..cols {
            let pos = if along_rows { i } else { j } as isize;
            out[i * cols + j] = k
                .iter()
                .enumerate()
                .map(|(t, &kt)| {
                    let p = (pos + t as isize - r).clamp(0, n - 1) as usize;
                    let idx = if along_rows { p * cols + j } else { i * cols + p };
                    kt * field[idx]
                })
                .sum();
        }
    }
    out
}

/// Smooth random field over `[slice][col]`, scaled to max |value| = 1.
fn smooth_field(cfg: &PhantomConfig, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let (s, w) = (cfg.slices, cfg.width);
    let white: Vec<f64> = (0..s * w).map(|_| rng.sample(StandardNormal)).collect();
    let f = blur_axis(&white, s, w, cfg.smoothness_cols, false);
    let f = blur_axis(&f, s, w, cfg.smoothness_slices, true);
    let peak = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        f.into_iter().map(|v| v / peak).collect()
    } else {
        f
    }
}

/// Surfaces `[slice][surface][col]` and RPE `[slice][col]` for perturbation scale `a`.
fn surfaces(cfg: &PhantomConfig, fields: &[Vec<f64>], a: f64) -> (Vec<f64>, Vec<f64>) {
    let (s, w) = (cfg.slices, cfg.width);
    let half = (w - 1) as f64 / 2.0;
    let mut rows = vec![0.0; s * N_SURFACES * w];
    let mut rpe = vec![0.0; s * w];
    for j in 0..s {
        for u in 0..w {
            let x = (u as f64 - half) / half;
            let i = j * w + u;
            let base = cfg.rpe_depth + cfg.curvature * x * x + a * cfg.undulation * fields[0][i];
            rpe[i] = base;
            let mut depth = base;
            for k in (0..N_SURFACES).rev() {
                depth -= cfg.thickness[k] * (1.0 + a * cfg.thickness_variation * fields[k + 1][i]);
                rows[(j * N_SURFACES + k) * w + u] = depth;
            }
        }
    }
    (rows, rpe)
}

fn max_slice_step(cfg: &PhantomConfig, rows: &[f64], rpe: &[f64]) -> f64 {
    let w = cfg.width;
    let n = N_SURFACES * w;
    let mut m: f64 = 0.0;
    for j in 1..cfg.slices {
        for i in 0..n {
            m = m.max((rows[j * n + i] - rows[(j - 1) * n + i]).abs());
        }
        for u in 0..w {
            m = m.max((rpe[j * w + u] - rpe[(j - 1) * w + u]).abs());
        }
    }
    m
}

pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let (s, h, w) = (cfg.slices, cfg.height, cfg.width);
    let fields: Vec<Vec<f64>> = (0..=N_SURFACES as u64).map(|k| smooth_field(cfg, 1000 + k)).collect();

    // Perturbations enter linearly, so one rescale enforces the slice-step bound.
    let (mut rows, mut rpe) = surfaces(cfg, &fields, 1.0);
    let step = max_slice_step(cfg, &rows, &rpe);
    if step >= cfg.max_slice_step {
        let a = 0.99 * cfg.max_slice_step / step;
        (rows, rpe) = surfaces(cfg, &fields, a);
    }

    let n = N_SURFACES * w;
    for j in 0..s {
        for u in 0..w {
            let top = rows[j * n + u];
            let bottom = rpe[j * w + u] + cfg.rpe_thickness;
            if top < 1.0 || bottom > (h - 1) as f64 {
                return Err(Error::Config(format!(
                    "phantom: layers span rows {top:.1}..{bottom:.1}, outside a {h}-row image"
                )));
            }
            for k in 1..N_SURFACES {
                if rows[j * n + k * w + u] <= rows[j * n + (k - 1) * w + u] {
                    return Err(Error::Config("phantom: layer thickness collapsed".into()));
                }
            }
        }
    }

    let mut vessel_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    vessel_rng.set_stream(2000);
    let vessels: Vec<(f64, f64)> = (0..cfg.vessel_count)
        .map(|_| {
            let c0 = vessel_rng.random_range(0.1..0.9) * w as f64;
            let drift = vessel_rng.random_range(-0.3..0.3);
            (c0, drift)
        })
        .collect();

    let speckle = if cfg.speckle_contrast > 0.0 {
        let c2 = cfg.speckle_contrast * cfg.speckle_contrast;
        Some(Gamma::new(1.0 / c2, c2).map_err(|e| Error::Config(format!("speckle: {e}")))?)
    } else {
        None
    };

    let mut data = vec![0.0f32; s * h * w];
    data.par_chunks_mut(h * w).enumerate().for_each(|(j, img)| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(j as u64);
        let surf = &rows[j * n..(j + 1) * n];
        for v in 0..h {
            for u in 0..w {
                let y = v as f64;
                let top_rpe = rpe[j * w + u];
                let base = if y >= top_rpe + cfg.rpe_thickness {
                    cfg.choroid_intensity
                } else if y >= top_rpe {
                    cfg.rpe_intensity
                } else {
                    let class = (0..N_SURFACES).filter(|&k| surf[k * w + u] <= y).count();
                    cfg.layer_intensity[class]
                };
                let shadowed = y >= surf[w + u]
                    && vessels
                        .iter()
                        .any(|&(c0, drift)| (u as f64 - (c0 + drift * j as f64)).abs() <= cfg.vessel_width / 2.0);
                let mut val = if shadowed { base * cfg.shadow_attenuation } else { base };
                if let Some(g) = &speckle {
                    val *= g.sample(&mut rng);
                }
                img[v * w + u] = val.clamp(0.0, 1.0) as f32;
            }
        }
    });

    let mut volume = Volume::new(s, h, w, data)?;
    volume.spacing_um = [6000.0 / h as f64, 6000.0 / w as f64, 6000.0 / s as f64];
    let truth = BoundarySet {
        slices: s,
        width: w,
        rows,
        valid: vec![true; s * n],
    };
    Ok(Phantom { volume, truth, rpe })
}

/// Overwrites random patches of one slice with blackout or noise. Patches are
/// a third of the image in each direction; their number grows with
/// `severity ∈ [0, 1]`, which also sets how strongly each patch replaces the
/// original content. Other slices are untouched.
pub fn corrupt_slice(vol: &Volume, slice: usize, severity: f64, seed: u64) -> Result<Volume> {
    if slice >= vol.slices {
        return Err(Error::InvalidArgument(format!("slice {slice} of a {}-slice volume", vol.slices)));
    }
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::InvalidArgument(format!("severity {severity} outside [0,1]")));
    }
    let mut out = vol.clone();
    if severity == 0.0 {
        return Ok(out);
    }
    let (h, w) = (vol.height, vol.width);
    let (ph, pw) = ((h / 3).max(1), (w / 3).max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slice as u64);
    let img = out.slice_mut(slice);
    for _ in 0..(16.0 * severity).ceil() as usize {
        let top = rng.random_range(0..=h - ph);
        let left = rng.random_range(0..=w - pw);
        let blackout = rng.random_bool(0.5);
        for v in top..top + ph {
            for u in left..left + pw {
                let p = &mut img[v * w + u];
                let x = *p as f64;
                let y = if blackout {
                    x * (1.0 - severity)
                } else {
                    (1.0 - severity) * x + severity * rng.random::<f64>()
                };
                *p = y.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(out)
}
