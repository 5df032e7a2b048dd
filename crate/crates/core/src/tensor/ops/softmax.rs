use crate::error::{shape_err, Error, Result};
use crate::tensor::{Function, Graph, Real, Tensor, Var};

/// `(outer, len, inner)` strides of `axis` in `shape`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(shape_err!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numerically stable softmax along `axis` (max-subtracted).
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * len + i) * inner + j;
            let max = (0..len)
                .map(|i| d[at(i)].f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..len {
                let e = (d[at(i)].f64() - max).exp();
                sum += e;
                out[at(i)] = T::of(e);
            }
            for i in 0..len {
                out[at(i)] = T::of(out[at(i)].f64() / sum);
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

struct SoftmaxFn {
    axis: usize,
}

impl<T: Real> Function<T> for SoftmaxFn {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (outer, len, inner) = axis_split(output.shape(), self.axis)?;
        let (y, g) = (output.data(), grad.data());
        let mut gx = vec![T::zero(); y.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * len + i) * inner + j;
                let dot: f64 = (0..len).map(|i| y[at(i)].f64() * g[at(i)].f64()).sum();
                for i in 0..len {
                    gx[at(i)] = T::of(y[at(i)].f64() * (g[at(i)].f64() - dot));
                }
            }
        }
        Ok(vec![Some(Tensor::from_vec(output.shape(), gx)?)])
    }
}

fn check_normalized<T: Real>(p: impl Iterator<Item = T>) -> Result<()> {
    let mut sum = 0.0;
    for v in p {
        let v = v.f64();
        if !(v >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "soft_argmax needs nonnegative probabilities, found {v}"
            )));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > T::NORM_TOL {
        return Err(Error::InvalidArgument(format!(
            "soft_argmax needs a normalized distribution, sum is {sum}"
        )));
    }
    Ok(())
}

/// Expected index `Σ v·p_v` of a normalized probability vector.
pub fn soft_argmax<T: Real>(p: &[T]) -> Result<T> {
    check_normalized(p.iter().copied())?;
    Ok(T::of(
        p.iter()
            .enumerate()
            .map(|(v, &pv)| v as f64 * pv.f64())
            .sum(),
    ))
}

/// [`soft_argmax`] along `axis`; the axis is removed from the output shape.
pub fn soft_argmax_axis<T: Real>(p: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_split(p.shape(), axis)?;
    let d = p.data();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for j in 0..inner {
            let column = (0..len).map(|i| d[(o * len + i) * inner + j]);
            check_normalized(column.clone())?;
            out.push(T::of(
                column.enumerate().map(|(v, pv)| v as f64 * pv.f64()).sum(),
            ));
        }
    }
    let mut shape = p.shape().to_vec();
    shape.remove(axis);
    Tensor::from_vec(&shape, out)
}

struct SoftArgmaxFn {
    axis: usize,
}

impl<T: Real> Function<T> for SoftArgmaxFn {
    fn name(&self) -> &'static str {
        "soft_argmax"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let p = inputs[0];
        let (outer, len, inner) = axis_split(p.shape(), self.axis)?;
        let g = grad.data();
        let mut gp = vec![T::zero(); p.len()];
        for o in 0..outer {
            for j in 0..inner {
                let go = g[o * inner + j];
                for i in 0..len {
                    gp[(o * len + i) * inner + j] = go * T::of(i as f64);
                }
            }
        }
        Ok(vec![Some(Tensor::from_vec(p.shape(), gp)?)])
    }
}

impl<T: Real> Graph<T> {
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = softmax(self.value(x), axis)?;
        self.apply(&[x], out, SoftmaxFn { axis })
    }

    pub fn soft_argmax(&mut self, p: Var, axis: usize) -> Result<Var> {
        let out = soft_argmax_axis(self.value(p), axis)?;
        self.apply(&[p], out, SoftArgmaxFn { axis })
    }
}
