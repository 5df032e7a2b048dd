use crate::error::{shape_err, Error, Result};
use crate::tensor::{Function, Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with previously accumulated running statistics.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
    },
}

/// Per-channel statistics of one training batch (variance is the biased estimate).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of values each channel statistic was computed from.
    pub count: usize,
}

fn channels<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<usize> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| shape_err!("batch_norm on a scalar"))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err!(
            "batch_norm gamma/beta must be [{c}], got {:?}/{:?}",
            gamma.shape(),
            beta.shape()
        ));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument(
            "batch_norm on an empty batch".into(),
        ));
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "batch_norm eps must be >= 0, got {eps}"
        )));
    }
    Ok(c)
}

/// Batch statistics over every axis but the last.
pub fn batch_stats<T: Real>(x: &Tensor<T>) -> Result<BatchStats> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| shape_err!("batch_stats on a scalar"))?;
    if x.is_empty() {
        return Err(Error::InvalidArgument(
            "batch statistics of an empty batch".into(),
        ));
    }
    let count = x.len() / c;
    let mut mean = vec![0.0; c];
    for px in x.data().chunks(c) {
        for (m, v) in mean.iter_mut().zip(px) {
            *m += v.f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; c];
    for px in x.data().chunks(c) {
        for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
            let d = v.f64() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= count as f64);
    Ok(BatchStats { mean, var, count })
}

fn inv_std(var: &[f64], eps: f64) -> Result<Vec<f64>> {
    var.iter()
        .map(|&v| {
            let d = v + eps;
            if d > 0.0 {
                Ok(1.0 / d.sqrt())
            } else {
                Err(Error::Numeric(
                    "batch_norm: zero variance with eps = 0".into(),
                ))
            }
        })
        .collect()
}

fn normalize<T: Real>(
    x: &Tensor<T>,
    mean: &[f64],
    istd: &[f64],
    gamma: &[T],
    beta: &[T],
) -> Tensor<T> {
    let c = mean.len();
    let mut out = x.data().to_vec();
    for px in out.chunks_mut(c) {
        for ch in 0..c {
            let xh = (px[ch].f64() - mean[ch]) * istd[ch];
            px[ch] = T::of(xh * gamma[ch].f64() + beta[ch].f64());
        }
    }
    Tensor::from_vec(x.shape(), out).expect("same shape")
}

/// Batch normalization over the channel (last) axis.
///
/// Returns the normalized tensor and, in training mode, the batch statistics.
pub fn batch_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
    mode: BatchNormMode<'_, T>,
) -> Result<(Tensor<T>, Option<BatchStats>)> {
    let c = channels(x, gamma, beta, eps)?;
    match mode {
        BatchNormMode::Train => {
            let stats = batch_stats(x)?;
            let istd = inv_std(&stats.var, eps)?;
            Ok((
                normalize(x, &stats.mean, &istd, gamma.data(), beta.data()),
                Some(stats),
            ))
        }
        BatchNormMode::Eval {
            running_mean,
            running_var,
        } => {
            if running_mean.len() != c || running_var.len() != c {
                return Err(shape_err!(
                    "batch_norm running statistics must have {c} entries"
                ));
            }
            let mean: Vec<f64> = running_mean.iter().map(|v| v.f64()).collect();
            let var: Vec<f64> = running_var.iter().map(|v| v.f64()).collect();
            let istd = inv_std(&var, eps)?;
            Ok((normalize(x, &mean, &istd, gamma.data(), beta.data()), None))
        }
    }
}

struct BatchNormFn {
    mean: Vec<f64>,
    istd: Vec<f64>,
    batch_statistics: bool,
}

impl<T: Real> Function<T> for BatchNormFn {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, gamma) = (inputs[0], inputs[1].data());
        let c = self.mean.len();
        let count = (x.len() / c) as f64;

        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (px, gp) in x.data().chunks(c).zip(grad.data().chunks(c)) {
            for ch in 0..c {
                let xh = (px[ch].f64() - self.mean[ch]) * self.istd[ch];
                let g = gp[ch].f64();
                sum_g[ch] += g;
                sum_gx[ch] += g * xh;
            }
        }

        let gx = if needs[0] {
            let mut gx = vec![T::zero(); x.len()];
            for ((out, px), gp) in gx
                .chunks_mut(c)
                .zip(x.data().chunks(c))
                .zip(grad.data().chunks(c))
            {
                for ch in 0..c {
                    let scale = gamma[ch].f64() * self.istd[ch];
                    let g = gp[ch].f64();
                    out[ch] = T::of(if self.batch_statistics {
                        let xh = (px[ch].f64() - self.mean[ch]) * self.istd[ch];
                        scale * (g - sum_g[ch] / count - xh * sum_gx[ch] / count)
                    } else {
                        scale * g
                    });
                }
            }
            Some(Tensor::from_vec(x.shape(), gx)?)
        } else {
            None
        };
        let to_t = |v: Vec<f64>| Tensor::from_vec(&[c], v.into_iter().map(T::of).collect());
        Ok(vec![gx, Some(to_t(sum_gx)?), Some(to_t(sum_g)?)])
    }
}

impl<T: Real> Graph<T> {
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (out, stats) = batch_norm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            eps,
            mode,
        )?;
        let (mean, var) = match (&stats, mode) {
            (Some(s), _) => (s.mean.clone(), s.var.clone()),
            (
                None,
                BatchNormMode::Eval {
                    running_mean,
                    running_var,
                },
            ) => (
                running_mean.iter().map(|v| v.f64()).collect(),
                running_var.iter().map(|v| v.f64()).collect(),
            ),
            (None, BatchNormMode::Train) => unreachable!("train mode always yields statistics"),
        };
        let f = BatchNormFn {
            istd: inv_std(&var, eps)?,
            mean,
            batch_statistics: stats.is_some(),
        };
        Ok((self.apply(&[x, gamma, beta], out, f)?, stats))
    }
}
