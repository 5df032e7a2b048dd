use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::tensor::{Function, Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves the spatial size.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    h: usize,
    w: usize,
    ci: usize,
    k: usize,
    co: usize,
    ho: usize,
    wo: usize,
    pad: usize,
}

impl Geom {
    fn new<T: Real>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        padding: Padding,
    ) -> Result<Self> {
        let [n, h, w, ci] = input.nhwc()?;
        let &[k, k2, kci, co] = kernel.shape() else {
            return Err(shape_err!(
                "conv kernel must be [k,k,c_in,c_out], got {:?}",
                kernel.shape()
            ));
        };
        if k != k2 || k % 2 == 0 {
            return Err(shape_err!(
                "conv kernel must be square with odd size, got {k}x{k2}"
            ));
        }
        if kci != ci {
            return Err(shape_err!(
                "conv kernel expects {kci} input channels, image has {ci}"
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [co] {
                return Err(shape_err!("conv bias must be [{co}], got {:?}", b.shape()));
            }
        }
        let (ho, wo, pad) = match padding {
            Padding::Same => (h, w, k / 2),
            Padding::Valid => {
                if k > h || k > w {
                    return Err(shape_err!(
                        "valid conv with {k}x{k} kernel on {h}x{w} image"
                    ));
                }
                (h - k + 1, w - k + 1, 0)
            }
        };
        Ok(Self {
            n,
            h,
            w,
            ci,
            k,
            co,
            ho,
            wo,
            pad,
        })
    }

    fn pointwise(&self) -> bool {
        self.k == 1
    }

    fn in_len(&self) -> usize {
        self.h * self.w * self.ci
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo * self.co
    }

    fn patch(&self) -> usize {
        self.k * self.k * self.ci
    }

    fn cols_len(&self) -> usize {
        self.ho * self.wo * self.patch()
    }

    fn out_shape(&self, rank: usize) -> Vec<usize> {
        if rank == 3 {
            vec![self.ho, self.wo, self.co]
        } else {
            vec![self.n, self.ho, self.wo, self.co]
        }
    }
}

/// Output columns `ox` whose tap `kx` lands inside the image.
fn tap_range(g: &Geom, kx: usize) -> std::ops::Range<usize> {
    let lo = g.pad.saturating_sub(kx);
    let hi = (g.w + g.pad).saturating_sub(kx).min(g.wo);
    lo..hi.max(lo)
}

/// Only in-image taps are written: `cols` must start zeroed, and a buffer
/// used for nothing but `im2col` of one geometry stays valid between images.
fn im2col<T: Real>(img: &[T], g: &Geom, cols: &mut [T]) {
    let (ci, k, patch) = (g.ci, g.k, g.patch());
    for oy in 0..g.ho {
        for ky in 0..k {
            let iy = (oy + ky) as isize - g.pad as isize;
            if iy < 0 || iy >= g.h as isize {
                continue;
            }
            let src_row = &img[iy as usize * g.w * ci..][..g.w * ci];
            for kx in 0..k {
                let off = (ky * k + kx) * ci;
                for ox in tap_range(g, kx) {
                    let ix = ox + kx - g.pad;
                    let src = &src_row[ix * ci..][..ci];
                    let dst = &mut cols[(oy * g.wo + ox) * patch + off..][..ci];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v;
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &Geom, img: &mut [T]) {
    let (ci, k, patch) = (g.ci, g.k, g.patch());
    for oy in 0..g.ho {
        for ky in 0..k {
            let iy = (oy + ky) as isize - g.pad as isize;
            if iy < 0 || iy >= g.h as isize {
                continue;
            }
            let dst_row = &mut img[iy as usize * g.w * ci..][..g.w * ci];
            for kx in 0..k {
                let off = (ky * k + kx) * ci;
                for ox in tap_range(g, kx) {
                    let ix = ox + kx - g.pad;
                    let src = &cols[(oy * g.wo + ox) * patch + off..][..ci];
                    for (d, &v) in dst_row[ix * ci..][..ci].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// `c[m×n] (+)= a[m×k] · b[k×n]`, all row-major and contiguous.
fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: sizes checked above, strides describe contiguous row-major blocks.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Images handled by one parallel task; scratch buffers are allocated once per task.
fn images_per_task(n: usize) -> usize {
    n.div_ceil(rayon::current_num_threads()).max(1)
}

fn scratch<T: Real>(g: &Geom) -> Vec<T> {
    vec![T::zero(); if g.pointwise() { 0 } else { g.cols_len() }]
}

/// 2D convolution (cross-correlation) of an NHWC image with a `[k,k,c_in,c_out]` kernel.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = Geom::new(input, kernel, bias, padding)?;
    let mut out = vec![T::zero(); g.n * g.out_len()];
    let kdata = kernel.data();
    let per = images_per_task(g.n);
    out.par_chunks_mut((per * g.out_len()).max(1))
        .zip(input.data().par_chunks((per * g.in_len()).max(1)))
        .for_each(|(outs, imgs)| {
            let mut cols = scratch(&g);
            for (o, img) in outs.chunks_mut(g.out_len()).zip(imgs.chunks(g.in_len())) {
                if g.pointwise() {
                    matmul(g.ho * g.wo, g.ci, g.co, img, kdata, o, false);
                } else {
                    im2col(img, &g, &mut cols);
                    matmul(g.ho * g.wo, g.patch(), g.co, &cols, kdata, o, false);
                }
            }
        });
    if let Some(b) = bias {
        let b = b.data();
        for px in out.chunks_mut(g.co) {
            for (v, &bb) in px.iter_mut().zip(b) {
                *v += bb;
            }
        }
    }
    Tensor::from_vec(&g.out_shape(input.rank()), out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
///
/// Kernel gradients are formed per image and summed in image order, so the
/// result does not depend on the number of worker threads.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: Padding,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let g = Geom::new(input, kernel, None, padding)?;
    if grad_out.len() != g.n * g.out_len() {
        return Err(shape_err!("conv grad has shape {:?}", grad_out.shape()));
    }
    let kdata = kernel.data();
    let (patch, pixels) = (g.patch(), g.ho * g.wo);
    let per = images_per_task(g.n);
    let mut gin = vec![T::zero(); if want_input { g.n * g.in_len() } else { 0 }];
    let mut gin_chunks: Vec<&mut [T]> = if want_input {
        gin.chunks_mut((per * g.in_len()).max(1)).collect()
    } else {
        Vec::new()
    };
    let tasks: Vec<(usize, Option<&mut [T]>)> = (0..g.n.div_ceil(per))
        .map(|t| (t, if want_input { Some(std::mem::take(&mut gin_chunks[t])) } else { None }))
        .collect();

    let partials: Vec<Vec<T>> = tasks
        .into_par_iter()
        .flat_map_iter(|(t, mut gi_task)| {
            let mut cols = scratch(&g);
            let mut gcols = scratch(&g);
            let first = t * per;
            let last = (first + per).min(g.n);
            let mut gks = Vec::with_capacity(last - first);
            for i in first..last {
                let img = &input.data()[i * g.in_len()..][..g.in_len()];
                let go = &grad_out.data()[i * g.out_len()..][..g.out_len()];
                if let Some(gi_all) = gi_task.as_deref_mut() {
                    let gi = &mut gi_all[(i - first) * g.in_len()..][..g.in_len()];
                    // gcols = grad_out · kernelᵀ
                    let target: &mut [T] = if g.pointwise() { gi } else { &mut gcols };
                    // SAFETY: kernel viewed as its transpose through strides.
                    unsafe {
                        T::gemm(
                            pixels,
                            g.co,
                            patch,
                            T::one(),
                            go.as_ptr(),
                            g.co as isize,
                            1,
                            kdata.as_ptr(),
                            1,
                            g.co as isize,
                            T::zero(),
                            target.as_mut_ptr(),
                            patch as isize,
                            1,
                        )
                    }
                    if !g.pointwise() {
                        col2im(&gcols, &g, gi);
                    }
                }
                let cols: &[T] = if g.pointwise() {
                    img
                } else {
                    im2col(img, &g, &mut cols);
                    &cols
                };
                let mut gk = vec![T::zero(); patch * g.co];
                // gk = colsᵀ · grad_out
                // SAFETY: cols viewed as its transpose through strides.
                unsafe {
                    T::gemm(
                        patch,
                        pixels,
                        g.co,
                        T::one(),
                        cols.as_ptr(),
                        1,
                        patch as isize,
                        go.as_ptr(),
                        g.co as isize,
                        1,
                        T::zero(),
                        gk.as_mut_ptr(),
                        g.co as isize,
                        1,
                    )
                }
                gks.push(gk);
            }
            gks
        })
        .collect();
    let mut gk = vec![T::zero(); patch * g.co];
    for p in partials {
        for (a, b) in gk.iter_mut().zip(p) {
            *a += b;
        }
    }

    let mut gb = vec![T::zero(); g.co];
    for px in grad_out.data().chunks(g.co) {
        for (a, &b) in gb.iter_mut().zip(px) {
            *a += b;
        }
    }
    let grad_input = if want_input {
        Some(Tensor::from_vec(input.shape(), gin)?)
    } else {
        None
    };
    Ok((
        grad_input,
        Tensor::from_vec(kernel.shape(), gk)?,
        Tensor::from_vec(&[g.co], gb)?,
    ))
}

struct Conv2dFn {
    padding: Padding,
}

impl<T: Real> Function<T> for Conv2dFn {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (gi, gk, gb) = conv2d_backward(inputs[0], inputs[1], grad, self.padding, needs[0])?;
        let mut out = vec![gi, Some(gk)];
        if inputs.len() == 3 {
            out.push(Some(gb));
        }
        Ok(out)
    }
}

impl<T: Real> Graph<T> {
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: Padding,
    ) -> Result<Var> {
        let out = conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            padding,
        )?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.apply(&inputs, out, Conv2dFn { padding })
    }
}
