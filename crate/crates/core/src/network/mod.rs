//! Residual encoder–decoder with cross-slice fusion in place of skip connections.
//!
//! Every slice of an `n`-slice window runs through the same encoder. At each
//! skip level the `n` feature maps are fused by a CFF block and handed to the
//! decoder; the bottleneck uses the center slice only unless
//! [`ModelConfig::cff_bottleneck`] is set. The final decoder map feeds two
//! 1×1 heads:
//!
//! * `head.mask`: per-pixel class logits, softmax over classes.
//! * `head.surf`: one channel per surface, softmax over rows in every column,
//!   soft-argmax to a row position, then the ordering constraint.
//!
//! The plain-skip baseline is the same trunk fed with the center slice only,
//! with encoder features passed straight to the decoder.

mod topology;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use topology::{
    ordering_violations, topology_graph, topology_guarantee, topology_guarantee_rows,
};

use crate::cff;
use crate::error::{shape_err, Error, Result};
use crate::tensor::ops::{BatchNormMode, BatchStats, Padding};
use crate::tensor::{Graph, Real, Tensor, Var};

/// How encoder features reach the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Cross-slice feature fusion of an `n`-slice window.
    Cff,
    /// Ordinary skip connections on the center slice.
    PlainSkip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub n_slices: usize,
    pub n_surfaces: usize,
    pub n_classes: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub fusion: Fusion,
    pub cff_bias: bool,
    pub cff_bottleneck: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            base_channels: 32,
            n_slices: 3,
            n_surfaces: 5,
            n_classes: 6,
            input_height: 512,
            input_width: 512,
            fusion: Fusion::Cff,
            cff_bias: true,
            cff_bottleneck: false,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.levels < 2 {
            return fail(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.base_channels == 0 {
            return fail("base_channels must be positive".into());
        }
        if self.n_slices % 2 == 0 || (self.fusion == Fusion::Cff && self.n_slices < 3) {
            return fail(format!(
                "n_slices must be odd (and >= 3 with fusion), got {}",
                self.n_slices
            ));
        }
        if self.n_surfaces == 0 || self.n_classes != self.n_surfaces + 1 {
            return fail(format!(
                "n_classes ({}) must equal n_surfaces ({}) + 1",
                self.n_classes, self.n_surfaces
            ));
        }
        let div = 1usize << self.levels;
        if self.input_height == 0
            || self.input_width == 0
            || self.input_height % div != 0
            || self.input_width % div != 0
        {
            return fail(format!(
                "input {}x{} is not divisible by 2^{} = {div}",
                self.input_height, self.input_width, self.levels
            ));
        }
        Ok(())
    }

    /// Feature channels at encoder level `k` (`k == levels` is the bottleneck).
    pub fn channels(&self, k: usize) -> usize {
        self.base_channels << k
    }

    /// Number of slices the encoder sees per sample.
    pub fn window(&self) -> usize {
        match self.fusion {
            Fusion::Cff => self.n_slices,
            Fusion::PlainSkip => 1,
        }
    }
}

/// Training (batch statistics) or inference (running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

const RUNNING_MEAN: &str = "running_mean";
const RUNNING_VAR: &str = "running_var";

/// All learnable weights plus batch-norm running statistics, keyed by
/// checkpoint name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

#[derive(Clone, Copy)]
enum Init {
    He(usize),
    Const(f32),
}

fn block_specs(prefix: &str, cin: usize, cout: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    let mut add =
        |name: &str, shape: Vec<usize>, init| out.push((format!("{prefix}.{name}"), shape, init));
    add("conv1.weight", vec![3, 3, cin, cout], Init::He(9 * cin));
    add("conv2.weight", vec![3, 3, cout, cout], Init::He(9 * cout));
    for bn in ["bn1", "bn2"] {
        add(&format!("{bn}.gamma"), vec![cout], Init::Const(1.0));
        add(&format!("{bn}.beta"), vec![cout], Init::Const(0.0));
        add(
            &format!("{bn}.{RUNNING_MEAN}"),
            vec![cout],
            Init::Const(0.0),
        );
        add(&format!("{bn}.{RUNNING_VAR}"), vec![cout], Init::Const(1.0));
    }
    add("prelu1.slope", vec![cout], Init::Const(0.25));
    add("prelu2.slope", vec![cout], Init::Const(0.25));
    if cin != cout {
        add("skip.weight", vec![1, 1, cin, cout], Init::He(cin));
        add("skip.bias", vec![cout], Init::Const(0.0));
    }
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut specs = Vec::new();
    let l = cfg.levels;
    for k in 0..=l {
        let cin = if k == 0 { 1 } else { cfg.channels(k - 1) };
        block_specs(&format!("enc.level{k}"), cin, cfg.channels(k), &mut specs);
    }
    for k in 0..l {
        block_specs(
            &format!("dec.level{k}"),
            cfg.channels(k + 1) + cfg.channels(k),
            cfg.channels(k),
            &mut specs,
        );
    }
    if cfg.fusion == Fusion::Cff {
        let n = cfg.n_slices;
        let fused_levels = if cfg.cff_bottleneck { l + 1 } else { l };
        for k in 0..fused_levels {
            specs.push((
                format!("cff.level{k}.weight"),
                vec![1, 1, n * cfg.channels(k), n],
                Init::Const(0.0),
            ));
            if cfg.cff_bias {
                specs.push((format!("cff.level{k}.bias"), vec![n], Init::Const(0.0)));
            }
        }
    }
    let c0 = cfg.base_channels;
    specs.push((
        "head.mask.weight".into(),
        vec![1, 1, c0, cfg.n_classes],
        Init::He(c0),
    ));
    specs.push((
        "head.mask.bias".into(),
        vec![cfg.n_classes],
        Init::Const(0.0),
    ));
    specs.push((
        "head.surf.weight".into(),
        vec![1, 1, c0, cfg.n_surfaces],
        Init::He(c0),
    ));
    specs.push((
        "head.surf.bias".into(),
        vec![cfg.n_surfaces],
        Init::Const(0.0),
    ));
    specs
}

fn is_trainable(name: &str) -> bool {
    !(name.ends_with(RUNNING_MEAN) || name.ends_with(RUNNING_VAR))
}

impl ModelParams {
    /// Deterministic initialization: He-normal convolutions, identity batch
    /// norm, PReLU slope 0.25, zero CFF kernels.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in param_specs(cfg) {
            let t = match init {
                Init::Const(v) => Tensor::full(&shape, v),
                Init::He(fan_in) => {
                    let normal =
                        Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    Tensor::from_fn(&shape, |_| normal.sample(&mut rng) as f32)
                }
            };
            tensors.insert(name, t);
        }
        Ok(Self {
            config: cfg.clone(),
            tensors,
        })
    }

    /// Validates a loaded tensor map against the layout `cfg` implies.
    pub fn from_tensors(cfg: &ModelConfig, tensors: BTreeMap<String, Tensor<f32>>) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(cfg);
        if specs.len() != tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, the configured model has {}",
                tensors.len(),
                specs.len()
            )));
        }
        for (name, shape, _) in &specs {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Config(format!(
                        "{name}: checkpoint shape {:?}, configured {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Config(format!("checkpoint is missing {name}"))),
            }
        }
        if let Some((name, _)) = tensors.iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::Numeric(format!(
                "checkpoint tensor {name} is not finite"
            )));
        }
        Ok(Self {
            config: cfg.clone(),
            tensors,
        })
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys().filter(|n| is_trainable(n))
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| is_trainable(n))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cff_parameter_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with("cff."))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Folds training-batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats)]) {
        let m = self.config.bn_momentum;
        for (prefix, s) in stats {
            let unbias = if s.count > 1 {
                s.count as f64 / (s.count - 1) as f64
            } else {
                1.0
            };
            if let Some(rm) = self.tensors.get_mut(&format!("{prefix}.{RUNNING_MEAN}")) {
                for (r, &v) in rm.data_mut().iter_mut().zip(&s.mean) {
                    *r = ((1.0 - m) * *r as f64 + m * v) as f32;
                }
            }
            if let Some(rv) = self.tensors.get_mut(&format!("{prefix}.{RUNNING_VAR}")) {
                for (r, &v) in rv.data_mut().iter_mut().zip(&s.var) {
                    *r = ((1.0 - m) * *r as f64 + m * v * unbias) as f32;
                }
            }
        }
    }
}

/// How the decoder receives encoder features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SkipMode {
    Cff,
    Plain,
    /// Plain skip scaled by two: what CFF reduces to on identical slices.
    #[cfg(test)]
    Doubled,
}

/// Graph handles of the network outputs.
#[derive(Clone, Copy, Debug)]
pub struct OutputVars {
    /// `[B,H,W,C]`, softmax over classes.
    pub mask_probs: Var,
    /// `[B,H,W,S]`, softmax over rows.
    pub surface_probs: Var,
    /// `[B,W,S]`, ordered row positions.
    pub surfaces: Var,
}

/// A recorded forward pass.
pub struct ForwardPass<T: Real> {
    pub graph: Graph<T>,
    pub outputs: OutputVars,
    /// Parameter leaves created for this pass, by name.
    pub params: BTreeMap<String, Var>,
    /// Batch statistics of every batch-norm layer (training mode only).
    pub bn_stats: Vec<(String, BatchStats)>,
}

impl<T: Real> ForwardPass<T> {
    /// Gradients of the learnable parameters after `graph.backward`.
    pub fn param_grads(&mut self) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        for (name, &v) in &self.params {
            if let Some(g) = self.graph.take_grad(v) {
                out.insert(name.clone(), g);
            }
        }
        out
    }

    pub fn output(&self) -> NetworkOutput<T> {
        NetworkOutput {
            mask_probs: self.graph.value(self.outputs.mask_probs).clone(),
            surface_probs: self.graph.value(self.outputs.surface_probs).clone(),
            surfaces: self.graph.value(self.outputs.surfaces).clone(),
        }
    }
}

/// Materialized network outputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput<T> {
    pub mask_probs: Tensor<T>,
    pub surface_probs: Tensor<T>,
    pub surfaces: Tensor<T>,
}

impl<T: Real> NetworkOutput<T> {
    /// Surfaces of sample `b` as `S×W` rows (`rows[k*W + u]`).
    pub fn surface_rows(&self, b: usize) -> Vec<f64> {
        let &[_, w, s] = self.surfaces.shape() else {
            return Vec::new();
        };
        let d = &self.surfaces.data()[b * w * s..(b + 1) * w * s];
        let mut rows = vec![0.0; w * s];
        for u in 0..w {
            for k in 0..s {
                rows[k * w + u] = d[u * s + k].f64();
            }
        }
        rows
    }
}

struct Builder<'a, T: Real> {
    params: &'a ModelParams,
    graph: Graph<T>,
    vars: BTreeMap<String, Var>,
    mode: Mode,
    track: bool,
    bn_stats: Vec<(String, BatchStats)>,
}

impl<'a, T: Real> Builder<'a, T> {
    fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("model has no parameter {name}")))?;
        let v = self.graph.leaf(t.cast(), self.track);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn bn(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        let eps = self.params.config.bn_eps;
        match self.mode {
            Mode::Train => {
                let (y, stats) =
                    self.graph
                        .batch_norm(x, gamma, beta, eps, BatchNormMode::Train)?;
                self.bn_stats
                    .push((prefix.to_string(), stats.expect("train mode")));
                Ok(y)
            }
            Mode::Eval => {
                let cast = |name: String| -> Result<Vec<T>> {
                    let t =
                        self.params.tensors.get(&name).ok_or_else(|| {
                            Error::Config(format!("model has no parameter {name}"))
                        })?;
                    Ok(t.data().iter().map(|&v| T::of(v as f64)).collect())
                };
                let mean = cast(format!("{prefix}.{RUNNING_MEAN}"))?;
                let var = cast(format!("{prefix}.{RUNNING_VAR}"))?;
                let mode = BatchNormMode::Eval {
                    running_mean: &mean,
                    running_var: &var,
                };
                Ok(self.graph.batch_norm(x, gamma, beta, eps, mode)?.0)
            }
        }
    }

    /// conv–BN–PReLU twice, plus the (projected) input.
    fn res_block(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let mut h = x;
        for i in 1..=2 {
            let w = self.p(&format!("{prefix}.conv{i}.weight"))?;
            h = self.graph.conv2d(h, w, None, Padding::Same)?;
            h = self.bn(h, &format!("{prefix}.bn{i}"))?;
            let slope = self.p(&format!("{prefix}.prelu{i}.slope"))?;
            h = self.graph.prelu(h, slope)?;
        }
        let skip_name = format!("{prefix}.skip.weight");
        let shortcut = if self.params.tensors.contains_key(&skip_name) {
            let w = self.p(&skip_name)?;
            let b = self.p(&format!("{prefix}.skip.bias"))?;
            self.graph.conv2d(x, w, Some(b), Padding::Same)?
        } else {
            x
        };
        self.graph.add(h, shortcut)
    }

    fn fuse(&mut self, features: Var, level: usize) -> Result<Var> {
        let n = self.params.config.n_slices;
        let w = self.p(&format!("cff.level{level}.weight"))?;
        let bias_name = format!("cff.level{level}.bias");
        let b = if self.params.tensors.contains_key(&bias_name) {
            Some(self.p(&bias_name)?)
        } else {
            None
        };
        cff::cff_graph(&mut self.graph, features, n, w, b)
    }

    fn run(mut self, input: Tensor<T>, skip: SkipMode) -> Result<ForwardPass<T>> {
        let cfg = self.params.config.clone();
        let [b_total, h, w, c] = input.nhwc()?;
        if c != 1 || h != cfg.input_height || w != cfg.input_width {
            return Err(shape_err!(
                "network expects [B,{},{},1] input, got {:?}",
                cfg.input_height,
                cfg.input_width,
                input.shape()
            ));
        }
        let n = if skip == SkipMode::Cff {
            cfg.n_slices
        } else {
            1
        };
        if b_total == 0 || b_total % n != 0 {
            return Err(shape_err!(
                "input batch {b_total} is not a whole number of {n}-slice windows"
            ));
        }
        let batch = b_total / n;
        let centers: Vec<usize> = (0..batch).map(|s| s * n + n / 2).collect();

        let mut x = self.graph.constant(input.reshape(&[b_total, h, w, 1])?);
        let mut skips = Vec::with_capacity(cfg.levels);
        for k in 0..cfg.levels {
            let f = self.res_block(x, &format!("enc.level{k}"))?;
            let s = match skip {
                SkipMode::Cff => self.fuse(f, k)?,
                SkipMode::Plain => f,
                #[cfg(test)]
                SkipMode::Doubled => self.graph.scale(f, 2.0)?,
            };
            skips.push(s);
            x = self.graph.maxpool2(f)?;
        }
        let bottom = if skip == SkipMode::Cff && cfg.cff_bottleneck {
            let f = self.res_block(x, &format!("enc.level{}", cfg.levels))?;
            self.fuse(f, cfg.levels)?
        } else {
            if n > 1 {
                x = self.graph.take_batch(x, &centers)?;
            }
            self.res_block(x, &format!("enc.level{}", cfg.levels))?
        };

        let mut x = bottom;
        for k in (0..cfg.levels).rev() {
            let up = self.graph.upsample_bilinear2(x)?;
            let cat = self.graph.concat_channels(&[up, skips[k]])?;
            x = self.res_block(cat, &format!("dec.level{k}"))?;
        }

        let (mw, mb) = (self.p("head.mask.weight")?, self.p("head.mask.bias")?);
        let mask_logits = self.graph.conv2d(x, mw, Some(mb), Padding::Same)?;
        let mask_probs = self.graph.softmax(mask_logits, 3)?;
        let (sw, sb) = (self.p("head.surf.weight")?, self.p("head.surf.bias")?);
        let surf_logits = self.graph.conv2d(x, sw, Some(sb), Padding::Same)?;
        let surface_probs = self.graph.softmax(surf_logits, 1)?;
        let raw = self.graph.soft_argmax(surface_probs, 1)?;
        let surfaces = topology_graph(&mut self.graph, raw)?;

        Ok(ForwardPass {
            graph: self.graph,
            outputs: OutputVars {
                mask_probs,
                surface_probs,
                surfaces,
            },
            params: self.vars,
            bn_stats: self.bn_stats,
        })
    }
}

fn run<T: Real>(
    params: &ModelParams,
    input: Tensor<T>,
    mode: Mode,
    track: bool,
    skip: SkipMode,
) -> Result<ForwardPass<T>> {
    let builder = Builder {
        params,
        graph: Graph::new(),
        vars: BTreeMap::new(),
        mode,
        track,
        bn_stats: Vec::new(),
    };
    builder.run(input, skip)
}

/// Records a forward pass over a batch of windows.
///
/// `input` is `[B·window, H, W, 1]` with the slices of each window adjacent
/// (`window` is `n_slices` for the fused model and 1 for the baseline). With
/// `track` set, parameters are gradient-tracked leaves.
pub fn forward_graph<T: Real>(
    params: &ModelParams,
    input: Tensor<T>,
    mode: Mode,
    track: bool,
) -> Result<ForwardPass<T>> {
    let skip = match params.config.fusion {
        Fusion::Cff => SkipMode::Cff,
        Fusion::PlainSkip => SkipMode::Plain,
    };
    run(params, input, mode, track, skip)
}

fn stack_images<T: Real>(slices: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = slices
        .first()
        .ok_or_else(|| shape_err!("no input slices"))?;
    let (h, w) = match *first.shape() {
        [h, w] | [h, w, 1] | [1, h, w, 1] => (h, w),
        _ => {
            return Err(shape_err!(
                "expected [H,W] or [H,W,1] slices, got {:?}",
                first.shape()
            ))
        }
    };
    let mut data = Vec::with_capacity(slices.len() * h * w);
    for s in slices {
        if s.len() != h * w {
            return Err(shape_err!("input slices differ in size"));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::from_vec(&[slices.len(), h, w, 1], data)
}

/// Inference on one window of `n_slices` preprocessed B-scans (`[H,W]` or
/// `[H,W,1]` each), predicting the center slice.
pub fn forward<T: Real>(params: &ModelParams, slices: &[&Tensor<T>]) -> Result<NetworkOutput<T>> {
    let cfg = &params.config;
    if slices.len() != cfg.n_slices {
        return Err(shape_err!(
            "expected {} slices, got {}",
            cfg.n_slices,
            slices.len()
        ));
    }
    match cfg.fusion {
        Fusion::Cff => {
            Ok(forward_graph(params, stack_images(slices)?, Mode::Eval, false)?.output())
        }
        Fusion::PlainSkip => baseline_forward(params, slices[slices.len() / 2]),
    }
}

/// Plain-skip inference on a single slice using only the trunk weights.
pub fn baseline_forward<T: Real>(
    params: &ModelParams,
    center: &Tensor<T>,
) -> Result<NetworkOutput<T>> {
    Ok(run(
        params,
        stack_images(&[center])?,
        Mode::Eval,
        false,
        SkipMode::Plain,
    )?
    .output())
}
