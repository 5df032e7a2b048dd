//! Ordering constraint on predicted surfaces.
//!
//! Surfaces are made non-decreasing from top to bottom in every column by a
//! running maximum: `s'_1 = s_1`, `s'_k = max(s'_{k−1}, s_k)`. The map is the
//! identity on already ordered input, idempotent, and differentiable except
//! where two candidates tie.

use crate::error::{shape_err, Result};
use crate::tensor::{Function, Graph, Real, Tensor, Var};

/// Running maximum along the last axis. Returns the output and, per element,
/// the flat index of the input it was copied from.
fn cummax_last<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = *x
        .shape()
        .last()
        .ok_or_else(|| shape_err!("topology on a scalar"))?;
    let mut out = x.data().to_vec();
    let mut src: Vec<usize> = (0..out.len()).collect();
    if s > 0 {
        for (col, chunk) in out.chunks_mut(s).enumerate() {
            for k in 1..s {
                if chunk[k - 1] > chunk[k] {
                    chunk[k] = chunk[k - 1];
                    src[col * s + k] = src[col * s + k - 1];
                }
            }
        }
    }
    Ok((Tensor::from_vec(x.shape(), out)?, src))
}

/// Orders surfaces held as `[…, S]` (surface index on the last axis).
pub fn topology_guarantee<T: Real>(raw: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(cummax_last(raw)?.0)
}

/// Orders surfaces held as `S×W` rows (`rows[k*width + u]`) in place.
pub fn topology_guarantee_rows(rows: &mut [f64], n_surfaces: usize, width: usize) -> Result<()> {
    if rows.len() != n_surfaces * width {
        return Err(shape_err!(
            "{} rows for {n_surfaces}×{width} surfaces",
            rows.len()
        ));
    }
    for k in 1..n_surfaces {
        for u in 0..width {
            let above = rows[(k - 1) * width + u];
            if above > rows[k * width + u] {
                rows[k * width + u] = above;
            }
        }
    }
    Ok(())
}

/// Number of columns where some surface lies above its predecessor.
pub fn ordering_violations(rows: &[f64], n_surfaces: usize, width: usize) -> usize {
    (0..width)
        .filter(|&u| (1..n_surfaces).any(|k| rows[k * width + u] < rows[(k - 1) * width + u]))
        .count()
}

struct CummaxFn {
    src: Vec<usize>,
}

impl<T: Real> Function<T> for CummaxFn {
    fn name(&self) -> &'static str {
        "topology_guarantee"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let mut gx = Tensor::zeros(inputs[0].shape());
        let d = gx.data_mut();
        for (&s, &g) in self.src.iter().zip(grad.data()) {
            d[s] += g;
        }
        Ok(vec![Some(gx)])
    }
}

pub fn topology_graph<T: Real>(g: &mut Graph<T>, raw: Var) -> Result<Var> {
    let (out, src) = cummax_last(g.value(raw))?;
    g.apply(&[raw], out, CummaxFn { src })
}
