//! Central-difference gradient oracle shared by the gradient and acceptance
//! test targets.
#![allow(dead_code)]

use olseg::cff::cff_graph;
use olseg::loss::{
    line_ce_graph, line_l1_graph, mask_ce_graph, total_loss_graph, ClassTargets, LossWeights, SurfaceTargets,
};
use olseg::network::topology_graph;
use olseg::tensor::ops::{BatchNormMode, Padding};
use olseg::tensor::{Graph, Tensor, Var};
use olseg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

const STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Scalar objective: the output itself if scalar, else a fixed random
/// projection of it (so every output element matters differently).
fn objective(g: &mut Graph<f64>, build: &Build, vars: &[Var]) -> Result<Var> {
    let out = build(g, vars)?;
    if g.value(out).len() == 1 {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let mut r = rng(0xC0FFEE);
    let proj = g.constant(random(&mut r, &shape, -1.0, 1.0));
    let prod = g.mul(out, proj)?;
    g.sum(prod)
}

fn evaluate(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = objective(&mut g, build, &vars).expect("forward");
    g.value(l).data()[0]
}

/// Largest elementwise relative error between the recorded gradient and a
/// central difference, over all inputs. Entries where both are below `1e-8`
/// in magnitude count as agreeing.
pub fn max_rel_error(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = objective(&mut g, build, &vars).expect("forward");
    g.backward(l).expect("backward");
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for e in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= STEP;
            let numeric = (evaluate(&plus, build) - evaluate(&minus, build)) / (2.0 * STEP);
            let a = analytic.data()[e];
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-8 {
                worst = worst.max((a - numeric).abs() / scale);
            }
        }
    }
    worst
}

/// One gradient case: name and a generator of (inputs, graph) per seed.
pub struct Case {
    pub name: &'static str,
    pub make: fn(u64) -> (Vec<Tensor<f64>>, Box<Build>),
}

fn conv_same(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    let inputs = vec![
        random(&mut r, &[2, 5, 4, 2], -1.0, 1.0),
        random(&mut r, &[3, 3, 2, 3], -1.0, 1.0),
        random(&mut r, &[3], -1.0, 1.0),
    ];
    (inputs, Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), Padding::Same)))
}

fn conv_valid(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    let inputs = vec![random(&mut r, &[1, 5, 6, 2], -1.0, 1.0), random(&mut r, &[3, 3, 2, 2], -1.0, 1.0)];
    (inputs, Box::new(|g, v| g.conv2d(v[0], v[1], None, Padding::Valid)))
}

fn batch_norm_train(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    let inputs = vec![
        random(&mut r, &[2, 3, 3, 2], -2.0, 2.0),
        random(&mut r, &[2], 0.5, 1.5),
        random(&mut r, &[2], -0.5, 0.5),
    ];
    (
        inputs,
        Box::new(|g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1e-5, BatchNormMode::Train)?.0)),
    )
}

fn batch_norm_eval(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    let inputs = vec![
        random(&mut r, &[2, 3, 3, 2], -2.0, 2.0),
        random(&mut r, &[2], 0.5, 1.5),
        random(&mut r, &[2], -0.5, 0.5),
    ];
    let mean = [0.3, -0.2];
    let var = [1.7, 0.4];
    (
        inputs,
        Box::new(move |g, v| {
            let mode = BatchNormMode::Eval {
                running_mean: &mean,
                running_var: &var,
            };
            Ok(g.batch_norm(v[0], v[1], v[2], 1e-5, mode)?.0)
        }),
    )
}

/// Values kept at least `gap` away from zero so the step never crosses the kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..2.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn prelu(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    let inputs = vec![away_from_zero(&mut r, &[2, 3, 3, 2], 1e-3), random(&mut r, &[2], 0.05, 0.5)];
    (inputs, Box::new(|g, v| g.prelu(v[0], v[1])))
}

/// Distinct values on a coarse grid plus small jitter: no two entries of a
/// pooling window come within the difference step of each other.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    let mut k = 0;
    Tensor::from_fn(shape, |_| {
        k += 1;
        levels[k - 1] + rng.random_range(0.0..0.01)
    })
}

fn maxpool(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    (vec![distinct(&mut r, &[2, 4, 6, 2])], Box::new(|g, v| g.maxpool2(v[0])))
}

fn upsample(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    (
        vec![random(&mut r, &[2, 3, 4, 2], -1.0, 1.0)],
        Box::new(|g, v| g.upsample_bilinear2(v[0])),
    )
}

fn softmax_channels(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    (vec![random(&mut r, &[2, 3, 2, 4], -3.0, 3.0)], Box::new(|g, v| g.softmax(v[0], 3)))
}

fn softmax_rows(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    (vec![random(&mut r, &[2, 5, 3, 2], -3.0, 3.0)], Box::new(|g, v| g.softmax(v[0], 1)))
}

fn soft_argmax(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    (
        vec![random(&mut r, &[2, 6, 3, 2], -2.0, 2.0)],
        Box::new(|g, v| {
            let p = g.softmax(v[0], 1)?;
            g.soft_argmax(p, 1)
        }),
    )
}

fn cff(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    let (n, c) = (3, 2);
    let inputs = vec![
        random(&mut r, &[2 * n, 3, 4, c], -1.0, 1.0),
        random(&mut r, &[1, 1, n * c, n], -1.0, 1.0),
        random(&mut r, &[n], -0.5, 0.5),
    ];
    (inputs, Box::new(move |g, v| cff_graph(g, v[0], n, v[1], Some(v[2]))))
}

fn class_targets(seed: u64, b: usize, h: usize, w: usize, classes: usize) -> ClassTargets {
    let mut r = rng(seed ^ 0xA5A5);
    ClassTargets {
        shape: [b, h, w],
        labels: (0..b * h * w)
            .map(|_| {
                if r.random_bool(0.15) {
                    -1
                } else {
                    r.random_range(0..classes as i32)
                }
            })
            .collect(),
    }
}

fn surface_targets(seed: u64, b: usize, w: usize, s: usize, h: usize) -> SurfaceTargets {
    let mut r = rng(seed ^ 0x5A5A);
    SurfaceTargets {
        batch: b,
        width: w,
        surfaces: s,
        rows: (0..b * w * s).map(|_| r.random_range(0.0..(h - 1) as f64)).collect(),
        valid: (0..b * w * s).map(|_| r.random_bool(0.8)).collect(),
    }
}

fn mask_ce(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    let t = class_targets(seed, 2, 3, 4, 6);
    (
        vec![random(&mut r, &[2, 3, 4, 6], -2.0, 2.0)],
        Box::new(move |g, v| {
            let p = g.softmax(v[0], 3)?;
            mask_ce_graph(g, p, &t)
        }),
    )
}

fn line_ce(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    let t = surface_targets(seed, 2, 3, 2, 6);
    (
        vec![random(&mut r, &[2, 6, 3, 2], -2.0, 2.0)],
        Box::new(move |g, v| {
            let p = g.softmax(v[0], 1)?;
            line_ce_graph(g, p, &t)
        }),
    )
}

fn line_l1(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    let t = surface_targets(seed, 2, 4, 3, 20);
    // Offsets from the target kept clear of the |d| = 1 seam.
    let mut k = 0;
    let surf = Tensor::from_fn(&[2, 4, 3], |_| {
        let d = if r.random_bool(0.5) {
            r.random_range(-0.9..0.9)
        } else {
            r.random_range(1.1..4.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 }
        };
        k += 1;
        t.rows[k - 1] + d
    });
    (vec![surf], Box::new(move |g, v| line_l1_graph(g, v[0], &t)))
}

fn total_loss(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    let ct = class_targets(seed, 1, 4, 3, 6);
    let st = surface_targets(seed, 1, 3, 5, 4);
    let weights = LossWeights::new(0.7, 1.3, 0.4).unwrap();
    let inputs = vec![random(&mut r, &[1, 4, 3, 6], -2.0, 2.0), random(&mut r, &[1, 4, 3, 5], -2.0, 2.0)];
    (
        inputs,
        Box::new(move |g, v| {
            let m = g.softmax(v[0], 3)?;
            let p = g.softmax(v[1], 1)?;
            let s = g.soft_argmax(p, 1)?;
            let terms = [mask_ce_graph(g, m, &ct)?, line_ce_graph(g, p, &st)?, line_l1_graph(g, s, &st)?];
            total_loss_graph(g, terms, &weights)
        }),
    )
}

fn topology(seed: u64) -> (Vec<Tensor<f64>>, Box<Build>) {
    let mut r = rng(seed);
    (vec![distinct(&mut r, &[2, 3, 5])], Box::new(|g, v| topology_graph(g, v[0])))
}

pub const CASES: &[Case] = &[
    Case { name: "conv2d_same", make: conv_same },
    Case { name: "conv2d_valid", make: conv_valid },
    Case { name: "batch_norm_train", make: batch_norm_train },
    Case { name: "batch_norm_eval", make: batch_norm_eval },
    Case { name: "prelu", make: prelu },
    Case { name: "maxpool2", make: maxpool },
    Case { name: "upsample_bilinear2", make: upsample },
    Case { name: "softmax_channels", make: softmax_channels },
    Case { name: "softmax_rows", make: softmax_rows },
    Case { name: "soft_argmax", make: soft_argmax },
    Case { name: "cff", make: cff },
    Case { name: "mask_ce", make: mask_ce },
    Case { name: "line_ce", make: line_ce },
    Case { name: "line_l1", make: line_l1 },
    Case { name: "total_loss", make: total_loss },
    Case { name: "topology_guarantee", make: topology },
];

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const TOLERANCE: f64 = 1e-4;

/// Worst relative error of a case over all seeds.
pub fn run_case(case: &Case) -> f64 {
    SEEDS
        .iter()
        .map(|&s| {
            let (inputs, build) = (case.make)(s);
            max_rel_error(&inputs, build.as_ref())
        })
        .fold(0.0, f64::max)
}
