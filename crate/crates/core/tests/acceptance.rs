//! End-to-end acceptance checks. Runs as a plain binary (no libtest) so each
//! criterion prints exactly one `PASS`/`FAIL` line; the process exits nonzero
//! if any criterion fails.
//!
//! Arguments select criteria by id, e.g. `cargo test --test acceptance -- AC-3 AC-9`.

mod common;

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use olseg::cff::{compute_weights, cff_forward, CffParams, SliceFeatureStack};
use olseg::harness::{consistency, evaluate, make_phantom, train, PreparedVolume, RunConfig};
use olseg::loss::{mask_ce, smooth_l1, ClassTargets};
use olseg::metrics::{mad, rmse};
use olseg::network::{ordering_violations, topology_guarantee, topology_guarantee_rows};
use olseg::network::{forward, Fusion, ModelParams};
use olseg::phantom::{generate_phantom, PhantomConfig};
use olseg::preprocess::{detect_rpe_candidates, fit_quadratic, reject_outliers};
use olseg::preprocess::{preprocess_bscan, BScan};
use olseg::tensor::Tensor;

/// Outcome of one criterion: pass flag and a one-line summary.
type Verdict = (bool, String);

fn ac1_gradients() -> Verdict {
    let t0 = Instant::now();
    let mut worst = (0.0f64, "");
    for case in common::CASES {
        let e = common::run_case(case);
        if !(e <= worst.0) {
            worst = (e, case.name);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst.0 < common::TOLERANCE && secs < 60.0;
    (
        ok,
        format!(
            "{} ops x {} seeds, worst relative error {:.2e} ({}), {secs:.1}s",
            common::CASES.len(),
            common::SEEDS.len(),
            worst.0,
            worst.1
        ),
    )
}

fn random_tensor<T: olseg::tensor::Real>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-scale..scale))).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn random_params<T: olseg::tensor::Real>(rng: &mut ChaCha8Rng, n: usize, c: usize) -> CffParams<T> {
    CffParams {
        weight: random_tensor(rng, &[1, 1, n * c, n], 2.0),
        bias: rng.random_bool(0.5).then(|| random_tensor(rng, &[n], 2.0)),
    }
}

fn ac2_cff() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_sum = 0.0f64;
    let mut negative = 0;
    for _ in 0..100 {
        let n = [3usize, 5, 7][rng.random_range(0..3)];
        let (h, w, c) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..6));
        let feats = (0..n).map(|_| random_tensor::<f32>(&mut rng, &[h, w, c], 3.0)).collect();
        let stack = SliceFeatureStack::new(feats).unwrap();
        let wv = compute_weights(&stack, &random_params(&mut rng, n, c)).unwrap();
        for px in wv.0.data().chunks(n) {
            let s: f64 = px.iter().map(|&v| v as f64).sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
            negative += px.iter().filter(|&&v| v < 0.0).count();
        }
    }

    let mut worst_double = 0.0f64;
    for _ in 0..20 {
        let n = [3usize, 5][rng.random_range(0..2)];
        let (h, w, c) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..6));
        let f = random_tensor::<f64>(&mut rng, &[h, w, c], 3.0);
        let stack = SliceFeatureStack::new(vec![f.clone(); n]).unwrap();
        let out = cff_forward(&stack, &random_params(&mut rng, n, c)).unwrap();
        for (o, x) in out.data().iter().zip(f.data()) {
            worst_double = worst_double.max((o - 2.0 * x).abs());
        }
    }

    // Zero kernel: weights are exactly 1/n and fusion is twice the slice mean.
    let mut uniform_exact = true;
    let mut worst_mean = 0.0f64;
    for _ in 0..20 {
        let n = [3usize, 5][rng.random_range(0..2)];
        let (h, w, c) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..6));
        let feats: Vec<Tensor<f64>> = (0..n).map(|_| random_tensor(&mut rng, &[h, w, c], 3.0)).collect();
        let stack = SliceFeatureStack::new(feats.clone()).unwrap();
        let params = CffParams::zeros(n, c, rng.random_bool(0.5));
        let wv = compute_weights(&stack, &params).unwrap();
        uniform_exact &= wv.0.data().iter().all(|&v| v == 1.0 / n as f64);
        let out = cff_forward(&stack, &params).unwrap();
        for (i, o) in out.data().iter().enumerate() {
            let mean = feats.iter().map(|f| f.data()[i]).sum::<f64>() / n as f64;
            worst_mean = worst_mean.max((o - 2.0 * mean).abs());
        }
    }

    let ok = worst_sum <= 1e-6 && negative == 0 && worst_double <= 1e-6 && uniform_exact && worst_mean <= 1e-12;
    (
        ok,
        format!(
            "weight sums off by <= {worst_sum:.1e} over 100 cases ({negative} negative); identical slices give 2F \
             within {worst_double:.1e}; zero kernel: uniform weights {}, 2*mean within {worst_mean:.1e}",
            if uniform_exact { "exact" } else { "NOT exact" }
        ),
    )
}

fn ac3_topology() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    const S: usize = 5;
    let mut violations = 0;
    let mut not_identity = 0;
    for _ in 0..10_000 {
        let w = rng.random_range(1..33);
        let raw: Vec<f64> = (0..S * w).map(|_| rng.random_range(0.0..512.0)).collect();
        let mut rows = raw.clone();
        topology_guarantee_rows(&mut rows, S, w).unwrap();
        violations += ordering_violations(&rows, S, w);

        // Same guarantee through the tensor op the network uses ([W, S] layout).
        let t: Vec<f64> = (0..w).flat_map(|u| (0..S).map(move |k| (u, k))).map(|(u, k)| raw[k * w + u]).collect();
        let ordered = topology_guarantee(&Tensor::from_vec(&[1, w, S], t).unwrap()).unwrap();
        let back: Vec<f64> = (0..S * w).map(|i| ordered.data()[(i % w) * S + i / w]).collect();
        violations += ordering_violations(&back, S, w);
        not_identity += (back != rows) as usize;

        let mut sorted = raw.clone();
        for u in 0..w {
            let mut col: Vec<f64> = (0..S).map(|k| raw[k * w + u]).collect();
            col.sort_by(f64::total_cmp);
            for k in 0..S {
                sorted[k * w + u] = col[k];
            }
        }
        let mut again = sorted.clone();
        topology_guarantee_rows(&mut again, S, w).unwrap();
        not_identity += (again != sorted) as usize;
    }

    // Untrained networks of both kinds on random input still emit ordered surfaces.
    let mut cfg = RunConfig::desk();
    cfg.output_height = 32;
    cfg.output_width = 32;
    cfg.levels = 2;
    cfg.base_channels = 4;
    let mut net_violations = 0;
    for (seed, fusion) in [(1, Fusion::Cff), (2, Fusion::PlainSkip), (3, Fusion::Cff)] {
        let mut mc = cfg.model_config();
        mc.fusion = fusion;
        let params = ModelParams::build(&mc, seed).unwrap();
        let slices: Vec<Tensor<f32>> = (0..mc.n_slices).map(|_| random_tensor(&mut rng, &[32, 32], 1.0)).collect();
        let refs: Vec<&Tensor<f32>> = slices.iter().collect();
        let out = forward(&params, &refs).unwrap();
        net_violations += ordering_violations(&out.surface_rows(0), S, 32);
    }

    (
        violations == 0 && not_identity == 0 && net_violations == 0,
        format!(
            "10000 random surface sets: {violations} ordering violations, {not_identity} mismatches on \
             already-ordered input; untrained networks: {net_violations} violations"
        ),
    )
}

fn ac4_metrics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_mad, mut worst_rmse) = (0.0f64, 0.0f64);
    let mut rmse_below_mad = 0;
    for _ in 0..1000 {
        let w = rng.random_range(1..300);
        let pred: Vec<f64> = (0..w).map(|_| rng.random_range(0.0..512.0)).collect();
        let gt: Vec<f64> = (0..w).map(|_| rng.random_range(0.0..512.0)).collect();
        let mut valid: Vec<bool> = (0..w).map(|_| rng.random_bool(0.8)).collect();
        let keep = rng.random_range(0..w);
        valid[keep] = true;

        let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
        for u in 0..w {
            if valid[u] {
                let d = pred[u] - gt[u];
                abs += d.abs();
                sq += d * d;
                n += 1;
            }
        }
        let (m, r) = (mad(&pred, &gt, &valid).unwrap(), rmse(&pred, &gt, &valid).unwrap());
        worst_mad = worst_mad.max((m - abs / n as f64).abs());
        worst_rmse = worst_rmse.max((r - (sq / n as f64).sqrt()).abs());
        rmse_below_mad += (r < m) as usize;
    }
    (
        worst_mad <= 1e-9 && worst_rmse <= 1e-9 && rmse_below_mad == 0,
        format!(
            "1000 random triples: MAD within {worst_mad:.1e}, RMSE within {worst_rmse:.1e} of a direct loop; \
             RMSE < MAD in {rmse_below_mad}"
        ),
    )
}

fn prepared(cfg: &RunConfig, split: &str, count: usize, offset: usize) -> Vec<PreparedVolume> {
    let pc = cfg.preprocess_config();
    (0..count)
        .map(|i| {
            let (v, t) = make_phantom(cfg, split, offset + i).unwrap();
            PreparedVolume::new(&format!("{split}_{i:03}"), v, Some(t), &pc).unwrap()
        })
        .collect()
}

struct Splits {
    train: Vec<PreparedVolume>,
    val: Vec<PreparedVolume>,
    test: Vec<PreparedVolume>,
}

fn splits(cfg: &RunConfig) -> Splits {
    let (a, b) = (cfg.phantom_train, cfg.phantom_val);
    Splits {
        train: prepared(cfg, "train", a, 0),
        val: prepared(cfg, "val", b, a),
        test: prepared(cfg, "test", cfg.phantom_test, a + b),
    }
}

fn ac5_training() -> Verdict {
    let t0 = Instant::now();
    let cfg = RunConfig::desk();
    let data = splits(&cfg);
    let out = train(&cfg, &data.train, &data.val, None).unwrap();
    let (report, _) = evaluate(&out.best, &data.test).unwrap();
    let avg = report.average().mad_mean;
    let elapsed = t0.elapsed();
    let ok = avg <= 2.0 && elapsed <= Duration::from_secs(30 * 60);
    (
        ok,
        format!(
            "{} epochs on {}+{}+{} phantoms of {}x{}x{}: test MAD {avg:.3} px (best epoch {}), {:.1} min",
            cfg.epochs,
            cfg.phantom_train,
            cfg.phantom_val,
            cfg.phantom_test,
            cfg.phantom_slices,
            cfg.phantom_height,
            cfg.phantom_width,
            out.best_epoch,
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

/// Reduced-scale ablation on phantoms where every third slice is corrupted.
const ABLATION_SEEDS: [u64; 3] = [11, 12, 13];

fn ablation_config(seed: u64, fusion: Fusion) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.seed = seed;
    cfg.fusion = fusion;
    cfg.phantom_train = 8;
    cfg.phantom_val = 2;
    cfg.phantom_test = 4;
    cfg.epochs = 20;
    cfg.corrupt_every = 3;
    cfg.corrupt_severity = 0.7;
    cfg.corrupt_splits = "train,val,test".into();
    cfg
}

struct AblationRun {
    seed: u64,
    mad: [f64; 2],
    consistency: [f64; 2],
}

fn run_ablation() -> Vec<AblationRun> {
    ABLATION_SEEDS
        .iter()
        .map(|&seed| {
            // Fusion does not affect the phantoms, so both arms see the same data.
            let data = splits(&ablation_config(seed, Fusion::Cff));
            let mut run = AblationRun {
                seed,
                mad: [0.0; 2],
                consistency: [0.0; 2],
            };
            for (i, fusion) in [Fusion::Cff, Fusion::PlainSkip].into_iter().enumerate() {
                let cfg = ablation_config(seed, fusion);
                let out = train(&cfg, &data.train, &data.val, None).unwrap();
                run.mad[i] = evaluate(&out.best, &data.test).unwrap().0.average().mad_mean;
                run.consistency[i] = data.test.iter().map(|v| consistency(&out.best, v).unwrap()).sum::<f64>()
                    / data.test.len() as f64;
            }
            run
        })
        .collect()
}

fn ac6_ablation(runs: &[AblationRun]) -> Verdict {
    let wins = runs.iter().filter(|r| r.mad[0] < r.mad[1]).count();
    let gain = runs.iter().map(|r| r.mad[1] - r.mad[0]).sum::<f64>() / runs.len() as f64;
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: {:.3} vs {:.3}", r.seed, r.mad[0], r.mad[1]))
        .collect();
    (
        wins * 3 >= runs.len() * 2 && gain > 0.0,
        format!(
            "test MAD cff vs plain [{}]; cff better in {wins}/{}, mean gain {gain:.3} px",
            detail.join(", "),
            runs.len()
        ),
    )
}

fn ac7_consistency(runs: &[AblationRun]) -> Verdict {
    let wins = runs.iter().filter(|r| r.consistency[0] <= r.consistency[1]).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: {:.3} vs {:.3}", r.seed, r.consistency[0], r.consistency[1]))
        .collect();
    (
        wins * 3 >= runs.len() * 2,
        format!(
            "adjacent-slice change cff vs plain [{}]; cff lower or equal in {wins}/{}",
            detail.join(", "),
            runs.len()
        ),
    )
}

fn ac8_flattening() -> Verdict {
    let (h, w, slices) = (256, 256, 4);
    let (mut worst_fit, mut worst_flat) = (0.0f64, 0.0f64);
    let (mut injected, mut caught) = (0, 0);
    let mut deterministic = true;
    for seed in 0..3u64 {
        let mut pc = PhantomConfig::for_size(slices, h, w, 800 + seed);
        // Pure quadratic RPE under 30 dB speckle, no vessel shadows: the
        // injected columns are the only systematic outliers.
        pc.undulation = 0.0;
        pc.vessel_count = 0;
        pc.speckle_contrast = 10f64.powf(-30.0 / 20.0);
        let ph = generate_phantom(&pc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in 0..slices {
            let truth = &ph.rpe[j * w..(j + 1) * w];
            let mut px = ph.volume.slice(j).to_vec();
            let mut cols: Vec<usize> = (0..w / 2).map(|i| 2 * i).collect();
            for i in (1..cols.len()).rev() {
                cols.swap(i, rng.random_range(0..=i));
            }
            cols.truncate(w / 20);
            for &u in &cols {
                let r = (truth[u] - rng.random_range(85.0..100.0)).round() as usize;
                for v in r..r + 3 {
                    px[v * w + u] = 1.0;
                }
            }
            let b = BScan::new(h, w, px).unwrap();

            let kept = reject_outliers(&detect_rpe_candidates(&b), 60).unwrap();
            injected += cols.len();
            caught += cols.iter().filter(|&&u| kept[u].is_none()).count();
            let pts: Vec<(f64, f64)> = kept
                .iter()
                .enumerate()
                .filter_map(|(u, r)| r.map(|r| (u as f64, r as f64)))
                .collect();
            let fit = fit_quadratic(&pts).unwrap();
            for (u, &t) in truth.iter().enumerate() {
                worst_fit = worst_fit.max((fit.curve.eval(u as f64) - t).abs());
            }

            let cfg = olseg::preprocess::PreprocessConfig {
                output_height: 128,
                output_width: 128,
                ..Default::default()
            };
            let (out, rec) = preprocess_bscan(&b, &cfg).unwrap();
            for (u, &t) in truth.iter().enumerate() {
                let flat = t - rec.column_shifts[u] as f64;
                worst_flat = worst_flat.max((flat - (h / 2) as f64).abs());
            }
            let (out2, rec2) = preprocess_bscan(&b, &cfg).unwrap();
            deterministic &= rec == rec2
                && out.pixels().iter().zip(out2.pixels()).all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }
    (
        worst_fit <= 2.0 && worst_flat <= 2.0 && deterministic,
        format!(
            "12 scans (30 dB speckle) with 5% outlier columns ({caught}/{injected} rejected): fit within {worst_fit:.2} px, \
             flattened RPE within {worst_flat:.2} px of centre, {}",
            if deterministic { "bit-identical reruns" } else { "reruns DIFFER" }
        ),
    )
}

fn ac9_losses() -> Verdict {
    let (h, w, c) = (4, 5, 6);
    let probs = Tensor::from_vec(&[1, h, w, c], vec![1.0f64 / 6.0; h * w * c]).unwrap();
    let labels = (0..h * w).map(|i| (i % c) as i32).collect();
    let ce = mask_ce(&probs, &ClassTargets { shape: [1, h, w], labels }).unwrap();
    let ce_err = (ce - 6f64.ln()).abs();
    let (a, b) = (smooth_l1(0.5), smooth_l1(2.0));
    (
        ce_err <= 1e-9 && a == 0.125 && b == 1.5,
        format!("uniform 6-class CE - ln 6 = {ce_err:.1e}; smooth L1(0.5) = {a}, smooth L1(2) = {b}"),
    )
}

fn report(id: &str, f: impl FnOnce() -> Verdict) -> bool {
    let t0 = Instant::now();
    let (ok, msg) = match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let why = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {why}"))
        }
    };
    let line = format!(
        "{id} {} {msg} [{:.1}s]\n",
        if ok { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    ok
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_ascii_uppercase())
        .collect();
    let wanted = |id: &str| filters.is_empty() || filters.iter().any(|f| f == id);

    let mut ok = true;
    let quick: [(&str, fn() -> Verdict); 5] = [
        ("AC-1", ac1_gradients),
        ("AC-2", ac2_cff),
        ("AC-3", ac3_topology),
        ("AC-4", ac4_metrics),
        ("AC-9", ac9_losses),
    ];
    for (id, f) in quick {
        if wanted(id) {
            ok &= report(id, f);
        }
    }
    if wanted("AC-8") {
        ok &= report("AC-8", ac8_flattening);
    }
    if wanted("AC-5") {
        ok &= report("AC-5", ac5_training);
    }
    if wanted("AC-6") || wanted("AC-7") {
        let runs = panic::catch_unwind(run_ablation);
        for (id, judge) in [("AC-6", ac6_ablation as fn(&[AblationRun]) -> Verdict), ("AC-7", ac7_consistency)] {
            if wanted(id) {
                ok &= report(id, || match &runs {
                    Ok(r) => judge(r),
                    Err(_) => (false, "ablation training panicked".into()),
                });
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
