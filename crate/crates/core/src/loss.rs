//! Training losses: pixel-wise mask cross-entropy, column-wise surface
//! cross-entropy and smooth-L1 surface regression, and their weighted sum.
//!
//! Batched layouts follow the network outputs: mask probabilities
//! `[B,H,W,C]`, surface probabilities `[B,H,W,S]` (normalized over H) and
//! surface positions `[B,W,S]`.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Function, Graph, Real, Tensor, Var};

/// Probabilities are clamped here before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Class label marking a pixel that does not contribute to the mask loss.
pub const IGNORE: i32 = -1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub mask_ce: f64,
    pub line_ce: f64,
    pub line_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mask_ce: 1.0,
            line_ce: 1.0,
            line_l1: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(mask_ce: f64, line_ce: f64, line_l1: f64) -> Result<Self> {
        let w = Self {
            mask_ce,
            line_ce,
            line_l1,
        };
        let all = [mask_ce, line_ce, line_l1];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || all.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative with at least one positive, got {all:?}"
            )));
        }
        Ok(w)
    }
}

/// Per-pixel class labels `[B,H,W]`; [`IGNORE`] marks excluded pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTargets {
    pub shape: [usize; 3],
    pub labels: Vec<i32>,
}

/// Reference surface rows `[B,W,S]` with a validity flag per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceTargets {
    pub batch: usize,
    pub width: usize,
    pub surfaces: usize,
    pub rows: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Supervision for one B-scan.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    /// `[H][W]` labels in `0..n_classes` or [`IGNORE`].
    pub class_map: Vec<i32>,
    pub n_surfaces: usize,
    /// `[S][W]` surface rows.
    pub rows: Vec<f64>,
    /// `[S][W]`.
    pub valid: Vec<bool>,
}

impl GroundTruth {
    /// Stacks samples into batched targets.
    pub fn batch(samples: &[&GroundTruth]) -> Result<(ClassTargets, SurfaceTargets)> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (h, w, s) = (first.height, first.width, first.n_surfaces);
        let mut labels = Vec::with_capacity(samples.len() * h * w);
        let mut rows = Vec::with_capacity(samples.len() * w * s);
        let mut valid = Vec::with_capacity(samples.len() * w * s);
        for gt in samples {
            if (gt.height, gt.width, gt.n_surfaces) != (h, w, s)
                || gt.class_map.len() != h * w
                || gt.rows.len() != s * w
                || gt.valid.len() != s * w
            {
                return Err(shape_err!(
                    "ground truth samples in a batch differ in shape"
                ));
            }
            labels.extend_from_slice(&gt.class_map);
            for u in 0..w {
                for k in 0..s {
                    rows.push(gt.rows[k * w + u]);
                    valid.push(gt.valid[k * w + u]);
                }
            }
        }
        let b = samples.len();
        Ok((
            ClassTargets {
                shape: [b, h, w],
                labels,
            },
            SurfaceTargets {
                batch: b,
                width: w,
                surfaces: s,
                rows,
                valid,
            },
        ))
    }
}

/// Smooth L1 (Huber with unit threshold): `0.5·d²` for `|d| < 1`, else `|d| − 0.5`.
pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

pub fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

fn clamped_log(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

fn clamped_log_grad(p: f64) -> f64 {
    if p > LOG_CLAMP {
        1.0 / p
    } else {
        0.0
    }
}

fn mask_layout<T: Real>(probs: &Tensor<T>, targets: &ClassTargets) -> Result<usize> {
    let [b, h, w, c] = probs.nhwc()?;
    if [b, h, w] != targets.shape || targets.labels.len() != b * h * w {
        return Err(shape_err!(
            "mask probabilities {:?} vs labels {:?}",
            probs.shape(),
            targets.shape
        ));
    }
    if let Some(&l) = targets
        .labels
        .iter()
        .find(|&&l| l != IGNORE && (l < 0 || l as usize >= c))
    {
        return Err(Error::InvalidArgument(format!(
            "class label {l} outside 0..{c}"
        )));
    }
    let counted = targets.labels.iter().filter(|&&l| l != IGNORE).count();
    if counted == 0 {
        return Err(Error::InvalidArgument(
            "mask loss with no labeled pixels".into(),
        ));
    }
    Ok(counted)
}

/// Mean over labeled pixels of `−log p[label]`.
pub fn mask_ce<T: Real>(probs: &Tensor<T>, targets: &ClassTargets) -> Result<f64> {
    let counted = mask_layout(probs, targets)?;
    let c = *probs.shape().last().expect("rank checked");
    let total: f64 = probs
        .data()
        .chunks(c)
        .zip(&targets.labels)
        .filter(|(_, &l)| l != IGNORE)
        .map(|(px, &l)| -clamped_log(px[l as usize].f64()))
        .sum();
    Ok(total / counted as f64)
}

/// Visits every counted `(entry index, per-entry weight)` of a surface loss,
/// where the weight folds in the per-surface and per-batch averaging.
fn surface_terms(targets: &SurfaceTargets, mut visit: impl FnMut(usize, f64)) -> Result<()> {
    let (b, w, s) = (targets.batch, targets.width, targets.surfaces);
    let mut groups = Vec::new();
    for bi in 0..b {
        for k in 0..s {
            let n = (0..w)
                .filter(|&u| targets.valid[(bi * w + u) * s + k])
                .count();
            if n > 0 {
                groups.push((bi, k, n));
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument(
            "surface loss with no valid columns".into(),
        ));
    }
    let g = groups.len() as f64;
    for (bi, k, n) in groups {
        for u in 0..w {
            let idx = (bi * w + u) * s + k;
            if targets.valid[idx] {
                visit(idx, 1.0 / (g * n as f64));
            }
        }
    }
    Ok(())
}

fn check_targets(targets: &SurfaceTargets) -> Result<()> {
    let n = targets.batch * targets.width * targets.surfaces;
    if targets.rows.len() != n || targets.valid.len() != n {
        return Err(shape_err!(
            "surface targets hold {} rows for {n} entries",
            targets.rows.len()
        ));
    }
    Ok(())
}

fn line_ce_layout<T: Real>(probs: &Tensor<T>, targets: &SurfaceTargets) -> Result<usize> {
    check_targets(targets)?;
    let [b, h, w, s] = probs.nhwc()?;
    if (b, w, s) != (targets.batch, targets.width, targets.surfaces) {
        return Err(shape_err!(
            "surface probabilities {:?} vs targets [{}, {}, {}]",
            probs.shape(),
            targets.batch,
            targets.width,
            targets.surfaces
        ));
    }
    Ok(h)
}

/// Flat index into `[B,H,W,S]` of the rasterized target row for entry `idx` of `[B,W,S]`.
fn target_cell(targets: &SurfaceTargets, h: usize, idx: usize) -> usize {
    let (w, s) = (targets.width, targets.surfaces);
    let (bi, rest) = (idx / (w * s), idx % (w * s));
    let (u, k) = (rest / s, rest % s);
    let row = targets.rows[idx].round().clamp(0.0, (h - 1) as f64) as usize;
    ((bi * h + row) * w + u) * s + k
}

/// Column-wise cross-entropy against rasterized (nearest-row) targets,
/// averaged over valid columns, then over surfaces and samples.
pub fn line_ce<T: Real>(probs: &Tensor<T>, targets: &SurfaceTargets) -> Result<f64> {
    let h = line_ce_layout(probs, targets)?;
    let p = probs.data();
    let mut total = 0.0;
    surface_terms(targets, |idx, wt| {
        total -= wt * clamped_log(p[target_cell(targets, h, idx)].f64());
    })?;
    Ok(total)
}

fn l1_layout<T: Real>(surfaces: &Tensor<T>, targets: &SurfaceTargets) -> Result<()> {
    check_targets(targets)?;
    if surfaces.shape() != [targets.batch, targets.width, targets.surfaces] {
        return Err(shape_err!(
            "surfaces {:?} vs targets [{}, {}, {}]",
            surfaces.shape(),
            targets.batch,
            targets.width,
            targets.surfaces
        ));
    }
    Ok(())
}

/// Smooth-L1 distance between predicted and reference rows over valid columns.
pub fn line_l1<T: Real>(surfaces: &Tensor<T>, targets: &SurfaceTargets) -> Result<f64> {
    l1_layout(surfaces, targets)?;
    let d = surfaces.data();
    let mut total = 0.0;
    surface_terms(targets, |idx, wt| {
        total += wt * smooth_l1(d[idx].f64() - targets.rows[idx]);
    })?;
    Ok(total)
}

/// `λ1·mask_ce + λ2·line_ce + λ3·line_l1`.
pub fn total_loss(terms: [f64; 3], weights: &LossWeights) -> Result<f64> {
    if let Some(t) = terms.iter().find(|t| !t.is_finite()) {
        return Err(Error::Numeric(format!("loss term is {t}")));
    }
    Ok(weights.mask_ce * terms[0] + weights.line_ce * terms[1] + weights.line_l1 * terms[2])
}

struct MaskCeFn {
    targets: ClassTargets,
    counted: usize,
}

impl<T: Real> Function<T> for MaskCeFn {
    fn name(&self) -> &'static str {
        "mask_ce"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let probs = inputs[0];
        let c = *probs.shape().last().expect("rank checked");
        let scale = grad.item()?.f64() / self.counted as f64;
        let mut gp = vec![T::zero(); probs.len()];
        for (i, &l) in self.targets.labels.iter().enumerate() {
            if l != IGNORE {
                let j = i * c + l as usize;
                gp[j] = T::of(-scale * clamped_log_grad(probs.data()[j].f64()));
            }
        }
        Ok(vec![Some(Tensor::from_vec(probs.shape(), gp)?)])
    }
}

struct LineCeFn {
    targets: SurfaceTargets,
    height: usize,
}

impl<T: Real> Function<T> for LineCeFn {
    fn name(&self) -> &'static str {
        "line_ce"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let probs = inputs[0];
        let h = self.height;
        let go = grad.item()?.f64();
        let p = probs.data();
        let mut gp = vec![T::zero(); p.len()];
        surface_terms(&self.targets, |idx, wt| {
            let j = target_cell(&self.targets, h, idx);
            gp[j] += T::of(-go * wt * clamped_log_grad(p[j].f64()));
        })?;
        Ok(vec![Some(Tensor::from_vec(probs.shape(), gp)?)])
    }
}

struct LineL1Fn {
    targets: SurfaceTargets,
}

impl<T: Real> Function<T> for LineL1Fn {
    fn name(&self) -> &'static str {
        "line_l1"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let surfaces = inputs[0];
        let go = grad.item()?.f64();
        let d = surfaces.data();
        let mut gs = vec![T::zero(); d.len()];
        surface_terms(&self.targets, |idx, wt| {
            gs[idx] = T::of(go * wt * smooth_l1_grad(d[idx].f64() - self.targets.rows[idx]));
        })?;
        Ok(vec![Some(Tensor::from_vec(surfaces.shape(), gs)?)])
    }
}

pub fn mask_ce_graph<T: Real>(g: &mut Graph<T>, probs: Var, targets: &ClassTargets) -> Result<Var> {
    let counted = mask_layout(g.value(probs), targets)?;
    let v = mask_ce(g.value(probs), targets)?;
    g.apply(
        &[probs],
        Tensor::scalar(T::of(v)),
        MaskCeFn {
            targets: targets.clone(),
            counted,
        },
    )
}

pub fn line_ce_graph<T: Real>(
    g: &mut Graph<T>,
    probs: Var,
    targets: &SurfaceTargets,
) -> Result<Var> {
    let height = line_ce_layout(g.value(probs), targets)?;
    let v = line_ce(g.value(probs), targets)?;
    g.apply(
        &[probs],
        Tensor::scalar(T::of(v)),
        LineCeFn {
            targets: targets.clone(),
            height,
        },
    )
}

pub fn line_l1_graph<T: Real>(
    g: &mut Graph<T>,
    surfaces: Var,
    targets: &SurfaceTargets,
) -> Result<Var> {
    let v = line_l1(g.value(surfaces), targets)?;
    g.apply(
        &[surfaces],
        Tensor::scalar(T::of(v)),
        LineL1Fn {
            targets: targets.clone(),
        },
    )
}

/// Recorded weighted sum of the three loss terms; zero-weight terms are left out.
pub fn total_loss_graph<T: Real>(
    g: &mut Graph<T>,
    terms: [Var; 3],
    weights: &LossWeights,
) -> Result<Var> {
    let values = [
        g.value(terms[0]).item()?.f64(),
        g.value(terms[1]).item()?.f64(),
        g.value(terms[2]).item()?.f64(),
    ];
    total_loss(values, weights)?;
    let mut acc: Option<Var> = None;
    for (t, w) in terms
        .into_iter()
        .zip([weights.mask_ce, weights.line_ce, weights.line_l1])
    {
        if w == 0.0 {
            continue;
        }
        let scaled = g.scale(t, w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, scaled)?,
            None => scaled,
        });
    }
    acc.ok_or_else(|| Error::Config("all loss weights are zero".into()))
}
