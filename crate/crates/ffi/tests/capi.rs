use std::ffi::{CStr, CString};
use std::ptr;

use monohom_ffi::*;

fn last_error() -> String {
    let p = monohom_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn constant_operator_has_zero_corrector() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(monohom_grid_new(2, 1.0, 16, &mut g), MonohomStatus::Ok);
        assert_eq!(monohom_grid_len(g), 256);
        let m = [0.5, 0.0, 0.0, 0.5];
        let mut op = ptr::null_mut();
        assert_eq!(monohom_operator_constant(g, 3.0, 0.25, m.as_ptr(), &mut op), MonohomStatus::Ok);
        let xi = [1.0, 0.0];
        let mut c = ptr::null_mut();
        assert_eq!(monohom_corrector_solve(op, xi.as_ptr(), 1e-10, &mut c), MonohomStatus::Ok);

        let mut abar = [0.0; 2];
        assert_eq!(monohom_corrector_abar(c, abar.as_mut_ptr(), 2), MonohomStatus::Ok);
        // A (1 + |xi|) xi at |xi| = 1
        assert!((abar[0] - 1.0).abs() < 1e-10, "{abar:?}");
        assert!(abar[1].abs() < 1e-12);

        let mut grad = vec![1.0; 256];
        assert_eq!(monohom_corrector_gradient(c, 0, grad.as_mut_ptr(), grad.len()), MonohomStatus::Ok);
        assert!(grad.iter().all(|v| v.abs() < 1e-10));

        monohom_corrector_free(c);
        monohom_operator_free(op);
        monohom_grid_free(g);
    }
}

#[test]
fn random_operator_round_trip() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(monohom_grid_new(2, 16.0, 32, &mut g), MonohomStatus::Ok);
        let mut op = ptr::null_mut();
        assert_eq!(monohom_operator_random(g, 3.0, 0.25, 2.0, 7, 0, &mut op), MonohomStatus::Ok);
        let xi = [1.0, 0.5];
        let mut c = ptr::null_mut();
        assert_eq!(monohom_corrector_solve(op, xi.as_ptr(), 1e-10, &mut c), MonohomStatus::Ok);
        let (mut it, mut res, mut flux) = (0usize, 0.0, 0.0);
        assert_eq!(monohom_corrector_stats(c, &mut it, &mut res, &mut flux), MonohomStatus::Ok);
        assert!(it > 0 && res <= 1e-10 && flux.is_finite());

        let mut small = [0.0; 1];
        assert_eq!(monohom_corrector_abar(c, small.as_mut_ptr(), 1), MonohomStatus::BufferTooSmall);
        assert!(last_error().contains("buffer"));
        assert_eq!(monohom_corrector_gradient(c, 2, small.as_mut_ptr(), 1), MonohomStatus::InvalidArgument);

        monohom_corrector_free(c);
        monohom_operator_free(op);
        monohom_grid_free(g);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_ne!(monohom_grid_new(4, 1.0, 8, &mut g), MonohomStatus::Ok);
        assert!(g.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(monohom_grid_new(2, 1.0, 8, ptr::null_mut()), MonohomStatus::NullPointer);
        assert_eq!(monohom_corrector_abar(ptr::null(), ptr::null_mut(), 0), MonohomStatus::NullPointer);
        assert_eq!(monohom_grid_len(ptr::null()), 0);

        assert_eq!(monohom_grid_new(1, 1.0, 8, &mut g), MonohomStatus::Ok);
        let mut op = ptr::null_mut();
        let m = [1.0];
        assert_eq!(monohom_operator_constant(g, 3.0, 0.0, m.as_ptr(), &mut op), MonohomStatus::InvalidArgument);
        monohom_grid_free(g);

        monohom_grid_free(ptr::null_mut());
        monohom_operator_free(ptr::null_mut());
        monohom_corrector_free(ptr::null_mut());
    }
}

#[test]
fn run_config_reports_exit_code() {
    let dir = tempfile_dir();
    let cfg = CString::new(
        r#"{"study":"corrector","grid":{"d":1,"L":8.0,"N":32},
            "operator":{"p":3.0,"lambda":0.25},
            "recipe":{"ell_c":1.0},
            "params":{"sample_count":2,"xi":[[1.0]]},"seed":3}"#,
    )
    .unwrap();
    let out = CString::new(dir.to_str().unwrap()).unwrap();
    let mut code = -1;
    let s = unsafe { monohom_run_config(cfg.as_ptr(), out.as_ptr(), 1, &mut code) };
    assert_eq!(s, MonohomStatus::Ok);
    assert_eq!(code, 0);
    assert!(dir.join("report.json").exists());

    let bad = CString::new(r#"{"study":"nope"}"#).unwrap();
    let s = unsafe { monohom_run_config(bad.as_ptr(), out.as_ptr(), 1, &mut code) };
    assert_eq!(s, MonohomStatus::Config);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn header_is_generated() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/monohom.h")).unwrap();
    for name in ["monohom_grid_new", "monohom_corrector_solve", "monohom_run_config", "MONOHOM_STATUS_OK"] {
        assert!(h.contains(name), "{name}");
    }
    let v = unsafe { CStr::from_ptr(monohom_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("monohom-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
