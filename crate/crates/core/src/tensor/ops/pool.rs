use crate::error::{shape_err, Result};
use crate::tensor::{Function, Graph, Real, Tensor, Var};

fn rank_like(shape: &[usize], n: usize, h: usize, w: usize, c: usize) -> Vec<usize> {
    if shape.len() == 3 {
        vec![h, w, c]
    } else {
        vec![n, h, w, c]
    }
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and the flat
/// source index of every output element.
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, h, w, c] = x.nhwc()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("maxpool2 needs even spatial dims, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let d = x.data();
    let mut out = Vec::with_capacity(n * ho * wo * c);
    let mut arg = Vec::with_capacity(n * ho * wo * c);
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if best == usize::MAX || d[i] > d[best] {
                            best = i;
                        }
                    }
                    out.push(d[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&rank_like(x.shape(), n, ho, wo, c), out)?,
        arg,
    ))
}

struct MaxPoolFn {
    argmax: Vec<usize>,
}

impl<T: Real> Function<T> for MaxPoolFn {
    fn name(&self) -> &'static str {
        "maxpool2"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let mut gx = Tensor::zeros(inputs[0].shape());
        let gd = gx.data_mut();
        for (&src, &g) in self.argmax.iter().zip(grad.data()) {
            gd[src] += g;
        }
        Ok(vec![Some(gx)])
    }
}

/// Source taps of one output coordinate of a 2× half-pixel-aligned upsample.
fn taps(o: usize, n: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, src - i0 as f64)
}

/// 2× bilinear upsampling with half-pixel-center alignment and edge clamping.
pub fn upsample_bilinear2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, c] = x.nhwc()?;
    if h == 0 || w == 0 {
        return Err(shape_err!("upsample of an empty image"));
    }
    let (ho, wo) = (2 * h, 2 * w);
    let d = x.data();
    let xt: Vec<_> = (0..wo).map(|o| taps(o, w)).collect();
    let mut out = vec![T::zero(); n * ho * wo * c];
    for b in 0..n {
        for oy in 0..ho {
            let (y0, y1, fy) = taps(oy, h);
            for (ox, &(x0, x1, fx)) in xt.iter().enumerate() {
                let o = ((b * ho + oy) * wo + ox) * c;
                let at = |y: usize, xx: usize| ((b * h + y) * w + xx) * c;
                let (i00, i01, i10, i11) = (at(y0, x0), at(y0, x1), at(y1, x0), at(y1, x1));
                let w00 = T::of((1.0 - fy) * (1.0 - fx));
                let w01 = T::of((1.0 - fy) * fx);
                let w10 = T::of(fy * (1.0 - fx));
                let w11 = T::of(fy * fx);
                for ch in 0..c {
                    out[o + ch] = w00 * d[i00 + ch]
                        + w01 * d[i01 + ch]
                        + w10 * d[i10 + ch]
                        + w11 * d[i11 + ch];
                }
            }
        }
    }
    Tensor::from_vec(&rank_like(x.shape(), n, ho, wo, c), out)
}

struct UpsampleFn;

impl<T: Real> Function<T> for UpsampleFn {
    fn name(&self) -> &'static str {
        "upsample_bilinear2"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let [n, h, w, c] = x.nhwc()?;
        let (ho, wo) = (2 * h, 2 * w);
        let g = grad.data();
        let xt: Vec<_> = (0..wo).map(|o| taps(o, w)).collect();
        let mut gx = vec![T::zero(); x.len()];
        for b in 0..n {
            for oy in 0..ho {
                let (y0, y1, fy) = taps(oy, h);
                for (ox, &(x0, x1, fx)) in xt.iter().enumerate() {
                    let o = ((b * ho + oy) * wo + ox) * c;
                    let at = |y: usize, xx: usize| ((b * h + y) * w + xx) * c;
                    let taps4 = [
                        (at(y0, x0), T::of((1.0 - fy) * (1.0 - fx))),
                        (at(y0, x1), T::of((1.0 - fy) * fx)),
                        (at(y1, x0), T::of(fy * (1.0 - fx))),
                        (at(y1, x1), T::of(fy * fx)),
                    ];
                    for (i, wt) in taps4 {
                        for ch in 0..c {
                            gx[i + ch] += wt * g[o + ch];
                        }
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::from_vec(x.shape(), gx)?)])
    }
}

impl<T: Real> Graph<T> {
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = maxpool2(self.value(x))?;
        self.apply(&[x], out, MaxPoolFn { argmax })
    }

    pub fn upsample_bilinear2(&mut self, x: Var) -> Result<Var> {
        let out = upsample_bilinear2(self.value(x))?;
        self.apply(&[x], out, UpsampleFn)
    }
}
