use std::ffi::{CStr, CString};
use std::ptr;

use olseg::harness::{make_phantom, RunConfig};
use olseg::network::ModelParams;
use olseg::tensor::write_checkpoint;
use olseg_ffi::*;

fn last_error() -> String {
    let p = olseg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn small_config() -> *mut OlsegConfig {
    let mut cfg = ptr::null_mut();
    assert_eq!(olseg_config_new(&mut cfg), OlsegStatus::Ok);
    for (k, v) in [
        ("output_height", "32"),
        ("output_width", "32"),
        ("clahe_tile_rows", "4"),
        ("clahe_tile_cols", "4"),
        ("levels", "2"),
        ("base_channels", "2"),
    ] {
        assert_eq!(olseg_config_set(cfg, cstr(k).as_ptr(), cstr(v).as_ptr()), OlsegStatus::Ok);
    }
    cfg
}

#[test]
fn metrics_match_worked_example() {
    let (p, g, v) = ([1.0, 2.0, 3.0], [2.0, 2.0, 2.0], [1u8, 1, 1]);
    let mut out = 0.0;
    unsafe {
        assert_eq!(olseg_mad(p.as_ptr(), g.as_ptr(), v.as_ptr(), 3, &mut out), OlsegStatus::Ok);
        assert!((out - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(olseg_rmse(p.as_ptr(), g.as_ptr(), v.as_ptr(), 3, &mut out), OlsegStatus::Ok);
        assert!((out - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let none = [0u8; 3];
        let s = olseg_mad(p.as_ptr(), g.as_ptr(), none.as_ptr(), 3, &mut out);
        assert_eq!(s, OlsegStatus::InvalidArgument);
        assert!(last_error().contains("no valid columns"));
        let s = olseg_mad(ptr::null(), g.as_ptr(), v.as_ptr(), 3, &mut out);
        assert_eq!(s, OlsegStatus::NullArgument);
    }
}

#[test]
fn config_errors_leave_config_untouched() {
    unsafe {
        let cfg = small_config();
        let s = olseg_config_set(cfg, cstr("no_such_key").as_ptr(), cstr("1").as_ptr());
        assert_eq!(s, OlsegStatus::Config);
        assert!(last_error().contains("unknown key"));
        let s = olseg_config_set(cfg, cstr("n_slices").as_ptr(), cstr("4").as_ptr());
        assert_eq!(s, OlsegStatus::Config);
        let mut cfg2 = ptr::null_mut();
        let s = olseg_config_load(cstr("/nonexistent/run.cfg").as_ptr(), &mut cfg2);
        assert_eq!(s, OlsegStatus::Config);
        assert!(cfg2.is_null());
        olseg_config_free(cfg);
        olseg_config_free(ptr::null_mut());
    }
}

#[test]
fn volume_round_trip_and_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(dir.path().join("v.octvol").to_str().unwrap());
    let data: Vec<f32> = (0..2 * 16 * 16).map(|i| (i % 17) as f32 / 16.0).collect();
    unsafe {
        let mut v = ptr::null_mut();
        assert_eq!(olseg_volume_new(2, 16, 16, data.as_ptr(), &mut v), OlsegStatus::Ok);
        assert_eq!(olseg_volume_write(v, path.as_ptr()), OlsegStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(olseg_volume_read(path.as_ptr(), &mut back), OlsegStatus::Ok);
        let (mut s, mut h, mut w) = (0, 0, 0);
        assert_eq!(olseg_volume_dims(back, &mut s, &mut h, &mut w), OlsegStatus::Ok);
        assert_eq!((s, h, w), (2, 16, 16));
        let mut buf = vec![0.0f32; data.len()];
        assert_eq!(olseg_volume_copy_data(back, buf.as_mut_ptr(), buf.len()), OlsegStatus::Ok);
        assert_eq!(buf, data);
        assert_eq!(olseg_volume_copy_data(back, buf.as_mut_ptr(), 3), OlsegStatus::Shape);
        olseg_volume_free(v);
        olseg_volume_free(back);

        std::fs::write(dir.path().join("bad.octvol"), b"OCTVOL01\x01").unwrap();
        let bad = cstr(dir.path().join("bad.octvol").to_str().unwrap());
        let mut v = ptr::null_mut();
        assert_eq!(olseg_volume_read(bad.as_ptr(), &mut v), OlsegStatus::Data);
        assert!(last_error().contains("truncated"));
        let out_of_range = [2.0f32; 256];
        assert_eq!(olseg_volume_new(1, 16, 16, out_of_range.as_ptr(), &mut v), OlsegStatus::Data);
    }
}

#[test]
fn preprocess_predict_and_consistency() {
    let run = RunConfig {
        phantom_slices: 4,
        phantom_height: 64,
        phantom_width: 32,
        output_height: 32,
        output_width: 32,
        clahe_tile_rows: 4,
        clahe_tile_cols: 4,
        levels: 2,
        base_channels: 2,
        ..RunConfig::default()
    };
    let (vol, truth) = make_phantom(&run, "test", 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    write_checkpoint(&ckpt, &ModelParams::build(&run.model_config(), 3).unwrap().tensors).unwrap();
    let ckpt = cstr(ckpt.to_str().unwrap());
    unsafe {
        let cfg = small_config();
        let mut v = ptr::null_mut();
        assert_eq!(olseg_volume_new(4, 64, 32, vol.data.as_ptr(), &mut v), OlsegStatus::Ok);

        let (mut pv, mut tr) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(olseg_preprocess(cfg, v, &mut pv, &mut tr), OlsegStatus::Ok);
        let (mut s, mut h, mut w) = (0, 0, 0);
        olseg_volume_dims(pv, &mut s, &mut h, &mut w);
        assert_eq!((s, h, w), (4, 32, 32));
        let mut usable = 0u8;
        assert_eq!(olseg_transforms_usable(tr, 2, &mut usable), OlsegStatus::Ok);
        assert_eq!(usable, 1);
        let row = truth.surface(2, 3).0[5];
        let (mut y, mut r) = (0.0, 0.0);
        assert_eq!(olseg_transform_row_to_output(tr, 2, 5, row, &mut y), OlsegStatus::Ok);
        assert_eq!(olseg_transform_row_to_original(tr, 2, 5, y, &mut r), OlsegStatus::Ok);
        assert!((r - row).abs() < 1e-9);
        assert_eq!(olseg_transform_row_to_output(tr, 9, 5, row, &mut y), OlsegStatus::InvalidArgument);

        let mut model = ptr::null_mut();
        assert_eq!(olseg_model_load(cfg, ckpt.as_ptr(), &mut model), OlsegStatus::Ok);
        let n = 4 * olseg_surface_count() * 32;
        let mut rows = vec![0.0; n];
        assert_eq!(olseg_model_predict(model, v, rows.as_mut_ptr(), n), OlsegStatus::Ok);
        assert!(rows.iter().all(|r| r.is_finite() && (0.0..64.0).contains(r)));
        assert_eq!(olseg_model_predict(model, v, rows.as_mut_ptr(), n - 1), OlsegStatus::Shape);
        let mut score = -1.0;
        assert_eq!(olseg_model_consistency(model, v, &mut score), OlsegStatus::Ok);
        assert!(score >= 0.0);

        // A checkpoint for a different architecture is a configuration error.
        assert_eq!(
            olseg_config_set(cfg, cstr("base_channels").as_ptr(), cstr("4").as_ptr()),
            OlsegStatus::Ok
        );
        let mut other = ptr::null_mut();
        assert_eq!(olseg_model_load(cfg, ckpt.as_ptr(), &mut other), OlsegStatus::Config);
        assert!(other.is_null());

        olseg_model_free(model);
        olseg_transforms_free(tr);
        olseg_volume_free(pv);
        olseg_volume_free(v);
        olseg_config_free(cfg);
    }
}

#[test]
fn errors_are_thread_local() {
    unsafe {
        let mut out = 0.0;
        olseg_mad(ptr::null(), ptr::null(), ptr::null(), 1, &mut out);
    }
    let here = last_error();
    let there = std::thread::spawn(|| olseg_last_error().is_null()).join().unwrap();
    assert!(there);
    assert!(here.contains("null"));
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(olseg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
