use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use scralign::dataio::{save_checkpoint, synth_shape, write_xyz, ShapeKind};
use scralign::decoder::{init_params, DecoderConfig};
use scralign_ffi::*;

fn cloud(points: &[[f64; 3]]) -> *mut ScraCloud {
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { scra_cloud_new(flat.as_ptr(), points.len(), &mut out) }, ScraStatus::Ok);
    out
}

fn last_error() -> String {
    let p = scra_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn blob(n: usize, seed: u64) -> Vec<[f64; 3]> {
    synth_shape(ShapeKind::Blob, n, seed).unwrap().into_points()
}

#[test]
fn cloud_round_trip_and_chamfer() {
    let a = cloud(&[[0.0, 0.0, 0.0], [0.5, 0.25, -1.0]]);
    assert_eq!(unsafe { scra_cloud_len(a) }, 2);
    let mut buf = [0.0; 6];
    assert_eq!(unsafe { scra_cloud_points(a, buf.as_mut_ptr(), 2) }, ScraStatus::Ok);
    assert_eq!(buf, [0.0, 0.0, 0.0, 0.5, 0.25, -1.0]);
    assert_eq!(unsafe { scra_cloud_points(a, buf.as_mut_ptr(), 1) }, ScraStatus::InvalidArgument);

    let p = cloud(&[[0.0; 3]]);
    let q = cloud(&[[1.0, 0.0, 0.0]]);
    let mut d = 0.0;
    assert_eq!(unsafe { scra_chamfer(p, q, 0.0, &mut d) }, ScraStatus::Ok);
    assert_eq!(d, 2.0);
    assert_eq!(unsafe { scra_chamfer(p, q, 0.1, &mut d) }, ScraStatus::Ok);
    assert!((d - 0.2).abs() < 1e-15);
    unsafe {
        scra_cloud_free(a);
        scra_cloud_free(p);
        scra_cloud_free(q);
        scra_cloud_free(ptr::null_mut());
    }
}

#[test]
fn null_and_invalid_inputs_are_reported() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { scra_cloud_new(ptr::null(), 3, &mut out) }, ScraStatus::NullPointer);
    assert!(last_error().contains("null"));
    let empty: [f64; 0] = [];
    assert_eq!(unsafe { scra_cloud_new(empty.as_ptr(), 0, &mut out) }, ScraStatus::InvalidArgument);
    assert!(out.is_null());
    let mut d = 0.0;
    assert_eq!(unsafe { scra_chamfer(ptr::null(), ptr::null(), 0.0, &mut d) }, ScraStatus::NullPointer);
    assert_eq!(unsafe { scra_cloud_len(ptr::null()) }, 0);
    let bad = ScraTransform {
        angles_deg: [f64::NAN, 0.0, 0.0],
        translation: [0.0; 3],
    };
    let c = cloud(&[[1.0, 2.0, 3.0]]);
    assert_eq!(unsafe { scra_apply_transform(&bad, c, &mut out) }, ScraStatus::InvalidArgument);
    unsafe { scra_cloud_free(c) };
}

#[test]
fn icp_and_apply_transform_agree() {
    let src = cloud(&blob(300, 4));
    let t = ScraTransform {
        angles_deg: [5.0, -4.0, 3.0],
        translation: [0.05, -0.02, 0.01],
    };
    let mut tgt = ptr::null_mut();
    assert_eq!(unsafe { scra_apply_transform(&t, src, &mut tgt) }, ScraStatus::Ok);
    let mut r = std::mem::MaybeUninit::<ScraRegistration>::uninit();
    assert_eq!(unsafe { scra_icp(src, tgt, 50, 1e-9, r.as_mut_ptr()) }, ScraStatus::Ok);
    let r = unsafe { r.assume_init() };
    for k in 0..3 {
        assert!((r.transform.angles_deg[k] - t.angles_deg[k]).abs() < 1e-6, "{r:?}");
        assert!((r.transform.translation[k] - t.translation[k]).abs() < 1e-8);
    }
    assert!(r.chamfer_final < 1e-12 && r.chamfer_initial > 0.0 && r.iterations >= 1);

    let mut opts = scra_test_time_defaults();
    opts.steps = 100;
    opts.lr = 0.01;
    let mut d = std::mem::MaybeUninit::<ScraRegistration>::uninit();
    assert_eq!(unsafe { scra_direct_optimize(src, tgt, &opts, d.as_mut_ptr()) }, ScraStatus::Ok);
    let d = unsafe { d.assume_init() };
    assert!(d.chamfer_final < d.chamfer_initial);
    unsafe {
        scra_cloud_free(src);
        scra_cloud_free(tgt);
    }
}

#[test]
fn model_load_and_register() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DecoderConfig {
        latent_dim: 8,
        stage1_widths: vec![16],
        rotation_head: vec![8, 3],
        translation_head: vec![8, 3],
        ..DecoderConfig::default()
    };
    let params = init_params(&cfg, 1).unwrap();
    let path = dir.path().join("m.scra");
    save_checkpoint(&path, &params, None).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { scra_model_load(c_path.as_ptr(), &mut model) }, ScraStatus::Ok);
    assert_eq!(unsafe { scra_model_latent_dim(model) }, 8);

    let xyz = dir.path().join("s.xyz");
    write_xyz(&xyz, &synth_shape(ShapeKind::Blob, 64, 2).unwrap()).unwrap();
    let c_xyz = CString::new(xyz.to_str().unwrap()).unwrap();
    let mut src = ptr::null_mut();
    assert_eq!(unsafe { scra_cloud_read_xyz(c_xyz.as_ptr(), &mut src) }, ScraStatus::Ok);
    let mut opts = scra_test_time_defaults();
    opts.steps = 20;
    opts.lr = 0.01;
    let mut r = std::mem::MaybeUninit::<ScraRegistration>::uninit();
    assert_eq!(unsafe { scra_register(model, src, src, &opts, r.as_mut_ptr()) }, ScraStatus::Ok);
    let r = unsafe { r.assume_init() };
    assert!(r.iterations <= 20);
    assert!(r.chamfer_initial == 0.0 && r.chamfer_final.is_finite());

    opts.restarts = 0;
    let mut r2 = std::mem::MaybeUninit::<ScraRegistration>::uninit();
    assert_eq!(unsafe { scra_register(model, src, src, &opts, r2.as_mut_ptr()) }, ScraStatus::InvalidArgument);

    let junk = dir.path().join("junk.scra");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let c_junk = CString::new(junk.to_str().unwrap()).unwrap();
    let mut m2 = ptr::null_mut();
    assert_eq!(unsafe { scra_model_load(c_junk.as_ptr(), &mut m2) }, ScraStatus::Parse);
    let missing = CString::new("/nonexistent/m.scra").unwrap();
    assert_eq!(unsafe { scra_model_load(missing.as_ptr(), &mut m2) }, ScraStatus::Io);
    unsafe {
        scra_model_free(model);
        scra_cloud_free(src);
    }
}

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps/
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libscralign_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{:?}", out);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("chamfer 2;"));
}
