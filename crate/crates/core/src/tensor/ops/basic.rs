use crate::error::{shape_err, Result};
use crate::tensor::{Function, Graph, Real, Tensor, Var};

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data).expect("shapes checked")
}

struct AddFn {
    sign: f64,
}

impl<T: Real> Function<T> for AddFn {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(
        &self,
        _: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let s = T::of(self.sign);
        Ok(vec![Some(grad.clone()), Some(grad.map(|g| g * s))])
    }
}

struct MulFn;

impl<T: Real> Function<T> for MulFn {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![
            Some(zip_map(grad, inputs[1], |g, b| g * b)),
            Some(zip_map(grad, inputs[0], |g, a| g * a)),
        ])
    }
}

struct ScaleFn {
    factor: f64,
}

impl<T: Real> Function<T> for ScaleFn {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(
        &self,
        _: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let f = T::of(self.factor);
        Ok(vec![Some(grad.map(|g| g * f))])
    }
}

struct SumFn {
    scale: f64,
}

impl<T: Real> Function<T> for SumFn {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let g = grad.item()? * T::of(self.scale);
        Ok(vec![Some(Tensor::full(inputs[0].shape(), g))])
    }
}

struct SquareFn;

impl<T: Real> Function<T> for SquareFn {
    fn name(&self) -> &'static str {
        "square"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let two = T::of(2.0);
        Ok(vec![Some(zip_map(grad, inputs[0], |g, x| two * g * x))])
    }
}

struct ConcatFn {
    widths: Vec<usize>,
}

impl<T: Real> Function<T> for ConcatFn {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let total: usize = self.widths.iter().sum();
        let mut parts: Vec<Vec<T>> = inputs.iter().map(|t| Vec::with_capacity(t.len())).collect();
        for px in grad.data().chunks(total) {
            let mut off = 0;
            for (p, &w) in parts.iter_mut().zip(&self.widths) {
                p.extend_from_slice(&px[off..off + w]);
                off += w;
            }
        }
        parts
            .into_iter()
            .zip(inputs)
            .map(|(p, t)| Tensor::from_vec(t.shape(), p).map(Some))
            .collect()
    }
}

struct TakeBatchFn {
    indices: Vec<usize>,
}

impl<T: Real> Function<T> for TakeBatchFn {
    fn name(&self) -> &'static str {
        "take_batch"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let item = x.len() / x.shape()[0];
        let mut gx = Tensor::zeros(x.shape());
        let gd = gx.data_mut();
        for (k, &i) in self.indices.iter().enumerate() {
            for (d, &g) in gd[i * item..(i + 1) * item]
                .iter_mut()
                .zip(&grad.data()[k * item..(k + 1) * item])
            {
                *d += g;
            }
        }
        Ok(vec![Some(gx)])
    }
}

struct StackSlicesFn {
    n: usize,
}

impl<T: Real> Function<T> for StackSlicesFn {
    fn name(&self) -> &'static str {
        "stack_slices"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        grad: &Tensor<T>,
        _: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        Ok(vec![Some(unstack_slices(grad, x.shape(), self.n)?)])
    }
}

/// `[B·n, h, w, c]` (slices of a sample adjacent) → `[B, h, w, n·c]` with
/// channel block `i` holding slice `i`.
pub fn stack_slices<T: Real>(x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let [bn, h, w, c] = x.nhwc()?;
    if n == 0 || bn % n != 0 {
        return Err(shape_err!(
            "stack_slices: batch {bn} is not a multiple of {n}"
        ));
    }
    let b = bn / n;
    let d = x.data();
    let mut out = vec![T::zero(); x.len()];
    for s in 0..b {
        for i in 0..n {
            let src = &d[(s * n + i) * h * w * c..][..h * w * c];
            for p in 0..h * w {
                out[(s * h * w + p) * n * c + i * c..][..c]
                    .copy_from_slice(&src[p * c..(p + 1) * c]);
            }
        }
    }
    Tensor::from_vec(&[b, h, w, n * c], out)
}

fn unstack_slices<T: Real>(y: &Tensor<T>, shape: &[usize], n: usize) -> Result<Tensor<T>> {
    let [b, h, w, nc] = y.nhwc()?;
    let c = nc / n;
    let d = y.data();
    let mut out = vec![T::zero(); y.len()];
    for s in 0..b {
        for i in 0..n {
            let dst = &mut out[(s * n + i) * h * w * c..][..h * w * c];
            for p in 0..h * w {
                dst[p * c..(p + 1) * c].copy_from_slice(&d[(s * h * w + p) * nc + i * c..][..c]);
            }
        }
    }
    Tensor::from_vec(shape, out)
}

impl<T: Real> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.apply(&[a, b], out, AddFn { sign: 1.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.apply(&[a, b], out, AddFn { sign: -1.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.apply(&[a, b], out, MulFn)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::of(factor);
        let out = self.value(x).map(|v| v * f);
        self.apply(&[x], out, ScaleFn { factor })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * v);
        self.apply(&[x], out, SquareFn)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.apply(&[x], out, SumFn { scale: 1.0 })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1) as f64;
        let out = Tensor::scalar(T::of(self.value(x).sum().f64() / n));
        self.apply(&[x], out, SumFn { scale: 1.0 / n })
    }

    /// Concatenation along the last (channel) axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(shape_err!(
                    "concat: shapes {first:?} and {s:?} are incompatible"
                ));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let pixels: usize = lead.iter().product();
        let mut out = Vec::with_capacity(pixels * total);
        for p in 0..pixels {
            for (&v, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[p * w..(p + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let out = Tensor::from_vec(&shape, out)?;
        self.apply(parts, out, ConcatFn { widths })
    }

    /// Selects entries of the leading (batch) axis.
    pub fn take_batch(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let Some(&b) = t.shape().first() else {
            return Err(shape_err!("take_batch on a scalar"));
        };
        let item = if b == 0 { 0 } else { t.len() / b };
        let mut out = Vec::with_capacity(indices.len() * item);
        for &i in indices {
            if i >= b {
                return Err(shape_err!(
                    "take_batch index {i} out of range for batch {b}"
                ));
            }
            out.extend_from_slice(&t.data()[i * item..(i + 1) * item]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        let out = Tensor::from_vec(&shape, out)?;
        self.apply(
            &[x],
            out,
            TakeBatchFn {
                indices: indices.to_vec(),
            },
        )
    }

    /// See [`stack_slices`].
    pub fn stack_slices(&mut self, x: Var, n: usize) -> Result<Var> {
        let out = stack_slices(self.value(x), n)?;
        self.apply(&[x], out, StackSlicesFn { n })
    }
}
