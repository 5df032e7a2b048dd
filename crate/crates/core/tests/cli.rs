use std::path::Path;
use std::process::{Command, Output};

fn olseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_olseg"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

const TINY: &[&str] = &[
    "--set", "phantom_train=2",
    "--set", "phantom_val=1",
    "--set", "phantom_test=1",
    "--set", "phantom_slices=4",
    "--set", "phantom_height=64",
    "--set", "phantom_width=32",
    "--set", "output_height=32",
    "--set", "output_width=32",
    "--set", "clahe_tile_rows=4",
    "--set", "clahe_tile_cols=4",
    "--set", "levels=2",
    "--set", "base_channels=2",
    "--set", "epochs=1",
    "--set", "data_dir=data",
];

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(TINY);
    v
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = olseg(dir.path(), &["show-config", "--set", "nonsense=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    std::fs::write(dir.path().join("bad.cfg"), "epochs = 3\nepochs = 4\n").unwrap();
    let out = olseg(dir.path(), &["show-config", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn show_config_applies_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = olseg(dir.path(), &["show-config", "--seed", "7", "--set", "fusion=plain"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("seed = 7"));
    assert!(text.contains("fusion = plain"));
}

#[test]
fn corrupt_volume_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.octvol"), b"not a volume").unwrap();
    let out = olseg(dir.path(), &["preprocess", "--input", "junk.octvol", "--out", "pre"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("preprocess junk.octvol"));

    let out = olseg(dir.path(), &["preprocess", "--input", "missing.octvol", "--out", "pre"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn generate_train_evaluate_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: Vec<&str>| {
        let out = olseg(d, &args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };

    ok(with_tiny(&["phantom-gen"]));
    assert!(d.join("data/split.txt").exists());
    ok(with_tiny(&["train", "--out", "run"]));
    for f in ["loss_log.csv", "best.ckpt", "last.ckpt", "config.txt"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let table = ok(with_tiny(&["eval", "--checkpoint", "run/best.ckpt", "--out", "eval"]));
    assert!(table.contains("Average"));
    assert!(d.join("eval/metrics.csv").exists() && d.join("eval/metrics.json").exists());
    assert!(d.join("eval/overlays").read_dir().unwrap().count() > 0);

    let vol = d.join("data").read_dir().unwrap().map(|e| e.unwrap().path()).find(|p| {
        p.extension().is_some_and(|e| e == "octvol")
    });
    let vol = vol.expect("phantom-gen writes volumes");
    let score = ok(with_tiny(&[
        "consistency",
        "--checkpoint",
        "run/best.ckpt",
        "--volume",
        vol.to_str().unwrap(),
    ]));
    assert!(score.trim().parse::<f64>().unwrap() >= 0.0);

    let pre = ok(with_tiny(&["preprocess", "--input", vol.to_str().unwrap(), "--out", "pre"]));
    assert_eq!(pre.lines().count(), 2);
    ok(with_tiny(&["plot", "--log", "run/loss_log.csv", "--out", "run"]));
    assert!(d.join("run/loss_curves.png").exists());

    // A checkpoint from a different architecture is a configuration error.
    let mut args = with_tiny(&["eval", "--checkpoint", "run/best.ckpt", "--out", "eval2"]);
    args.extend(["--set", "base_channels=4"]);
    assert_eq!(olseg(d, &args).status.code(), Some(2));
}
