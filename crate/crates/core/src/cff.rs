//! Cross-slice feature fusion.
//!
//! Each of the `n` slices of a window is encoded separately. At every pixel a
//! 1×1 convolution over the channel-concatenated features yields one logit per
//! slice; a softmax across slices turns those into weights, and the fused map
//! is the weighted sum of the slice features plus their unweighted mean:
//!
//! ```text
//! W        = softmax_slices(conv1x1([F_1 | … | F_n]))
//! F_fused  = Σ_i W_i ⊙ F_i + (1/n) Σ_i F_i
//! ```
//!
//! `W_i` is a single map per slice, broadcast over the channels of `F_i`.
//!
//! In graph form the slice features of a batch are laid out as one
//! `[B·n, h, w, c]` tensor with the `n` slices of each sample adjacent.

use crate::error::{shape_err, Error, Result};
use crate::tensor::ops::Padding;
use crate::tensor::{Function, Graph, Real, Tensor, Var};

/// The `n` per-slice feature maps of one window, each `[h, w, c]`.
#[derive(Clone, Debug)]
pub struct SliceFeatureStack<T> {
    features: Vec<Tensor<T>>,
}

impl<T: Real> SliceFeatureStack<T> {
    pub fn new(features: Vec<Tensor<T>>) -> Result<Self> {
        let n = features.len();
        if n < 3 || n % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "cross-slice fusion needs an odd number of slices >= 3, got {n}"
            )));
        }
        let shape = features[0].shape().to_vec();
        if shape.len() != 3 {
            return Err(shape_err!("slice features must be [h,w,c], got {shape:?}"));
        }
        if let Some(f) = features.iter().find(|f| f.shape() != shape.as_slice()) {
            return Err(shape_err!(
                "slice features {:?} and {shape:?} differ",
                f.shape()
            ));
        }
        Ok(Self { features })
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Tensor<T>] {
        &self.features
    }

    /// `[n, h, w, c]`, the batched layout used by the graph ops.
    fn batched(&self) -> Tensor<T> {
        let mut shape = vec![self.n()];
        shape.extend_from_slice(self.features[0].shape());
        let data = self
            .features
            .iter()
            .flat_map(|f| f.data().iter().copied())
            .collect();
        Tensor::from_vec(&shape, data).expect("shapes validated")
    }
}

/// Learnable 1×1 convolution mapping `n·c` stacked channels to `n` slice logits.
#[derive(Clone, Debug, PartialEq)]
pub struct CffParams<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> CffParams<T> {
    /// Zero kernel and bias: every pixel starts from uniform slice weights.
    pub fn zeros(n: usize, channels: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(&[1, 1, n * channels, n]),
            bias: bias.then(|| Tensor::zeros(&[n])),
        }
    }

    fn check(&self, n: usize, channels: usize) -> Result<()> {
        if self.weight.shape() != [1, 1, n * channels, n] {
            return Err(shape_err!(
                "CFF kernel must be [1,1,{},{n}], got {:?}",
                n * channels,
                self.weight.shape()
            ));
        }
        Ok(())
    }
}

/// Per-pixel slice weights `[h, w, n]`, normalized across the slice axis.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVolume<T>(pub Tensor<T>);

fn check_weights<T: Real>(w: &Tensor<T>, n: usize) -> Result<()> {
    for px in w.data().chunks(n) {
        let sum: f64 = px.iter().map(|v| v.f64()).sum();
        if (sum - 1.0).abs() > T::NORM_TOL || px.iter().any(|v| v.f64() < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "fusion weights must be normalized per pixel (found sum {sum})"
            )));
        }
    }
    Ok(())
}

/// `Σ_i W_i ⊙ F_i + mean_i F_i` for features `[B·n,h,w,c]` and weights `[B,h,w,n]`.
fn fuse_kernel<T: Real>(features: &Tensor<T>, weights: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let [bn, h, w, c] = features.nhwc()?;
    if bn % n != 0 || weights.shape() != [bn / n, h, w, n] {
        return Err(shape_err!(
            "fusion weights {:?} do not match {n} slices of {:?}",
            weights.shape(),
            features.shape()
        ));
    }
    check_weights(weights, n)?;
    let b = bn / n;
    let (f, wt) = (features.data(), weights.data());
    let inv_n = T::of(1.0 / n as f64);
    let hw = h * w;
    let mut out = vec![T::zero(); b * hw * c];
    for s in 0..b {
        for p in 0..hw {
            let dst = &mut out[(s * hw + p) * c..][..c];
            for i in 0..n {
                let wi = wt[(s * hw + p) * n + i] + inv_n;
                let src = &f[((s * n + i) * hw + p) * c..][..c];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += wi * v;
                }
            }
        }
    }
    Tensor::from_vec(&[b, h, w, c], out)
}

struct FuseFn {
    n: usize,
}

impl<T: Real> Function<T> for FuseFn {
    fn name(&self) -> &'static str {
        "cff_fuse"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (features, weights) = (inputs[0], inputs[1]);
        let [bn, h, w, c] = features.nhwc()?;
        let (n, hw, b) = (self.n, h * w, bn / self.n);
        let (f, wt, g) = (features.data(), weights.data(), grad.data());
        let inv_n = T::of(1.0 / n as f64);
        let mut gf = vec![T::zero(); f.len()];
        let mut gw = vec![T::zero(); wt.len()];
        for s in 0..b {
            for p in 0..hw {
                let go = &g[(s * hw + p) * c..][..c];
                for i in 0..n {
                    let wi = wt[(s * hw + p) * n + i] + inv_n;
                    let base = ((s * n + i) * hw + p) * c;
                    let mut dot = T::zero();
                    for ch in 0..c {
                        gf[base + ch] = wi * go[ch];
                        dot += f[base + ch] * go[ch];
                    }
                    gw[(s * hw + p) * n + i] = dot;
                }
            }
        }
        Ok(vec![
            Some(Tensor::from_vec(features.shape(), gf)?),
            Some(Tensor::from_vec(weights.shape(), gw)?),
        ])
    }
}

/// Slice weights for batched features `[B·n,h,w,c]` → `[B,h,w,n]`.
pub fn weights_graph<T: Real>(
    g: &mut Graph<T>,
    features: Var,
    n: usize,
    weight: Var,
    bias: Option<Var>,
) -> Result<Var> {
    let stacked = g.stack_slices(features, n)?;
    let logits = g.conv2d(stacked, weight, bias, Padding::Same)?;
    if g.shape(logits).last() != Some(&n) {
        return Err(shape_err!("CFF kernel must produce {n} slice logits"));
    }
    g.softmax(logits, 3)
}

/// Fusion of batched features `[B·n,h,w,c]` with weights `[B,h,w,n]`.
pub fn fuse_graph<T: Real>(g: &mut Graph<T>, features: Var, weights: Var, n: usize) -> Result<Var> {
    let out = fuse_kernel(g.value(features), g.value(weights), n)?;
    g.apply(&[features, weights], out, FuseFn { n })
}

/// Full CFF block on batched features.
pub fn cff_graph<T: Real>(
    g: &mut Graph<T>,
    features: Var,
    n: usize,
    weight: Var,
    bias: Option<Var>,
) -> Result<Var> {
    let w = weights_graph(g, features, n, weight, bias)?;
    fuse_graph(g, features, w, n)
}

pub fn compute_weights<T: Real>(
    stack: &SliceFeatureStack<T>,
    params: &CffParams<T>,
) -> Result<WeightVolume<T>> {
    let n = stack.n();
    params.check(n, stack.features[0].shape()[2])?;
    let mut g = Graph::new();
    let f = g.constant(stack.batched());
    let w = g.constant(params.weight.clone());
    let b = params.bias.clone().map(|b| g.constant(b));
    let out = weights_graph(&mut g, f, n, w, b)?;
    let t = g.value(out).clone();
    let shape = t.shape()[1..].to_vec();
    Ok(WeightVolume(t.reshape(&shape)?))
}

pub fn fuse<T: Real>(stack: &SliceFeatureStack<T>, weights: &WeightVolume<T>) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(weights.0.shape());
    let w = weights.0.clone().reshape(&shape)?;
    let out = fuse_kernel(&stack.batched(), &w, stack.n())?;
    let shape = out.shape()[1..].to_vec();
    out.reshape(&shape)
}

pub fn cff_forward<T: Real>(
    stack: &SliceFeatureStack<T>,
    params: &CffParams<T>,
) -> Result<Tensor<T>> {
    let w = compute_weights(stack, params)?;
    fuse(stack, &w)
}
