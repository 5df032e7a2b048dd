//! Preprocessing checked against phantom truth.

use olseg::phantom::{generate_phantom, Phantom, PhantomConfig};
use olseg::preprocess::{detect_rpe_candidates, preprocess_bscan, BScan, PreprocessConfig};

fn phantom(seed: u64, h: usize, w: usize, speckle_db: f64) -> Phantom {
    let mut pc = PhantomConfig::for_size(3, h, w, seed);
    pc.speckle_contrast = 10f64.powf(-speckle_db / 20.0);
    pc.vessel_count = 0;
    generate_phantom(&pc).unwrap()
}

fn slice(p: &Phantom, j: usize) -> (BScan, &[f64]) {
    let (h, w) = (p.volume.height, p.volume.width);
    (BScan::new(h, w, p.volume.slice(j).to_vec()).unwrap(), &p.rpe[j * w..(j + 1) * w])
}

#[test]
fn candidates_track_rpe_under_30db_speckle() {
    for seed in 0..3 {
        let p = phantom(seed, 256, 256, 30.0);
        for j in 0..3 {
            let (b, truth) = slice(&p, j);
            let close = detect_rpe_candidates(&b)
                .iter()
                .zip(truth)
                .filter(|(c, t)| c.is_some_and(|c| (c as f64 - *t).abs() <= 3.0))
                .count();
            assert!(close * 10 >= 9 * truth.len(), "seed {seed} slice {j}: {close}/{}", truth.len());
        }
    }
}

#[test]
fn parabolic_rpe_flattens_to_center_row() {
    let mut pc = PhantomConfig::for_size(2, 128, 128, 5);
    pc.undulation = 0.0;
    pc.vessel_count = 0;
    pc.speckle_contrast = 10f64.powf(-1.5);
    let p = generate_phantom(&pc).unwrap();
    let cfg = PreprocessConfig {
        output_height: 64,
        output_width: 128,
        ..Default::default()
    };
    for j in 0..2 {
        let (b, truth) = slice(&p, j);
        let (_, rec) = preprocess_bscan(&b, &cfg).unwrap();
        for (u, &t) in truth.iter().enumerate() {
            let flat = t - rec.column_shifts[u] as f64;
            assert!((flat - 64.0).abs() <= 2.0, "column {u}: flattened RPE at {flat}");
        }
    }
}

#[test]
fn truth_survives_transform_round_trip() {
    let p = phantom(9, 128, 128, 20.0);
    let cfg = PreprocessConfig::default();
    let (b, _) = slice(&p, 1);
    let (out, rec) = preprocess_bscan(&b, &cfg).unwrap();
    assert_eq!((out.height(), out.width()), (512, 512));
    for k in 0..5 {
        let (rows, valid) = p.truth.surface(1, k);
        let (net, net_valid) = rec.surface_to_output(rows, valid).unwrap();
        let back = rec.surface_to_original(&net).unwrap();
        for u in (0..128).filter(|&u| net_valid[u]) {
            assert!((back[u] - rows[u]).abs() <= 1.0, "surface {k} column {u}");
        }
    }
}
