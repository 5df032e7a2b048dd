use crate::error::{shape_err, Result};
use crate::tensor::{Function, Graph, Real, Tensor, Var};

/// Parametric ReLU with one slope per channel (last axis).
pub fn prelu<T: Real>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| shape_err!("prelu on a scalar"))?;
    if slope.shape() != [c] {
        return Err(shape_err!(
            "prelu slope must be [{c}], got {:?}",
            slope.shape()
        ));
    }
    let a = slope.data();
    let mut out = x.data().to_vec();
    for px in out.chunks_mut(c) {
        for (v, &s) in px.iter_mut().zip(a) {
            if *v < T::zero() {
                *v *= s;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

struct PreluFn;

impl<T: Real> Function<T> for PreluFn {
    fn name(&self) -> &'static str {
        "prelu"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, a) = (inputs[0], inputs[1].data());
        let c = a.len();
        let mut gx = grad.data().to_vec();
        let mut ga = vec![T::zero(); c];
        for ((g, px), gp) in gx
            .chunks_mut(c)
            .zip(x.data().chunks(c))
            .zip(grad.data().chunks(c))
        {
            for ch in 0..c {
                if px[ch] < T::zero() {
                    g[ch] *= a[ch];
                    ga[ch] += gp[ch] * px[ch];
                }
            }
        }
        Ok(vec![
            Some(Tensor::from_vec(x.shape(), gx)?),
            Some(Tensor::from_vec(&[c], ga)?),
        ])
    }
}

impl<T: Real> Graph<T> {
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let out = prelu(self.value(x), self.value(slope))?;
        self.apply(&[x, slope], out, PreluFn)
    }
}
