use std::ffi::{CStr, CString};
use std::ptr;

use pvflow_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = pvf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config() -> *mut PvfConfig {
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(pvf_config_new(&mut cfg), PvfStatus::Ok);
        for (k, v) in [("K_usfe", "5"), ("k_sc", "6"), ("r", "8"), ("W", "4"), ("H", "2"), ("width1", "8"), ("width2", "8"), ("D", "8"), ("D_s", "4")] {
            assert_eq!(pvf_config_set(cfg, c(k).as_ptr(), c(v).as_ptr()), PvfStatus::Ok);
        }
    }
    cfg
}

fn grid_cloud(n: usize, shift: [f64; 3]) -> Vec<f64> {
    (0..n)
        .flat_map(|i| {
            let t = i as f64;
            [(t * 0.37).sin() + shift[0], (t * 0.91).cos() + shift[1], (t * 0.13).sin() * 0.5 + shift[2]]
        })
        .collect()
}

#[test]
fn estimate_and_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let cfg = small_config();
        let mut w = ptr::null_mut();
        assert_eq!(pvf_weights_init(cfg, 7, &mut w), PvfStatus::Ok);

        let n = 48;
        let (a, b) = (grid_cloud(n, [0.0; 3]), grid_cloud(n, [0.3, 0.0, 0.0]));
        let (mut s, mut t) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(pvf_cloud_from_xyz(a.as_ptr(), n, &mut s), PvfStatus::Ok);
        assert_eq!(pvf_cloud_from_xyz(b.as_ptr(), n, &mut t), PvfStatus::Ok);
        assert_eq!(pvf_cloud_len(s), n);

        let mut f = ptr::null_mut();
        assert_eq!(pvf_estimate(s, t, w, cfg, &mut f), PvfStatus::Ok);
        assert_eq!(pvf_flow_len(f), n);
        let mut buf = vec![0.0; 3 * n];
        assert_eq!(pvf_flow_copy(f, buf.as_mut_ptr(), buf.len()), PvfStatus::Ok);
        assert!(buf.iter().all(|v| v.is_finite()));
        assert_eq!(pvf_flow_copy(f, buf.as_mut_ptr(), 3), PvfStatus::InvalidArgument);

        let path = c(dir.path().join("f.sffl").to_str().unwrap());
        assert_eq!(pvf_flow_write(f, path.as_ptr()), PvfStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(pvf_flow_read(path.as_ptr(), &mut back), PvfStatus::Ok);

        let mut rep = PvfEvalReport::default();
        assert_eq!(pvf_evaluate(back, f, &mut rep), PvfStatus::Ok);
        assert_eq!(rep.n, n);
        assert!(rep.epe < 1e-6);
        assert_eq!(rep.as_pct, 100.0);

        let gt = vec![0.3, 0.0, 0.0].repeat(n);
        let mut g = ptr::null_mut();
        assert_eq!(pvf_flow_from_xyz(gt.as_ptr(), n, &mut g), PvfStatus::Ok);
        assert_eq!(pvf_evaluate(f, g, &mut rep), PvfStatus::Ok);
        assert!(rep.epe.is_finite());

        let wpath = c(dir.path().join("w.pvwt").to_str().unwrap());
        assert_eq!(pvf_weights_save(w, wpath.as_ptr()), PvfStatus::Ok);
        let mut w2 = ptr::null_mut();
        assert_eq!(pvf_weights_load(wpath.as_ptr(), cfg, &mut w2), PvfStatus::Ok);

        for h in [f, back, g] {
            pvf_flow_free(h);
        }
        pvf_cloud_free(s);
        pvf_cloud_free(t);
        pvf_weights_free(w);
        pvf_weights_free(w2);
        pvf_config_free(cfg);
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    unsafe {
        let cfg = small_config();
        let mut w = ptr::null_mut();
        assert_eq!(pvf_weights_init(cfg, 1, &mut w), PvfStatus::Ok);
        let (a, b) = (grid_cloud(20, [0.0; 3]), grid_cloud(21, [0.0; 3]));
        let (mut s, mut t) = (ptr::null_mut(), ptr::null_mut());
        pvf_cloud_from_xyz(a.as_ptr(), 20, &mut s);
        pvf_cloud_from_xyz(b.as_ptr(), 21, &mut t);
        let mut f = ptr::null_mut();
        assert_eq!(pvf_estimate(s, t, w, cfg, &mut f), PvfStatus::UnequalSizes);
        assert!(f.is_null());
        assert!(last_error().contains("UnequalSizes"));

        assert_eq!(pvf_estimate(ptr::null(), t, w, cfg, &mut f), PvfStatus::NullPointer);
        assert!(last_error().contains("source"));

        assert_eq!(pvf_config_set(cfg, c("W").as_ptr(), c("64").as_ptr()), PvfStatus::Config);
        assert_eq!(pvf_config_set(cfg, c("nope").as_ptr(), c("1").as_ptr()), PvfStatus::Config);

        let nan = [f64::NAN, 0.0, 0.0];
        let mut bad = ptr::null_mut();
        assert_eq!(pvf_cloud_from_xyz(nan.as_ptr(), 1, &mut bad), PvfStatus::InvalidCloud);

        let missing = c("/nonexistent/cloud.sfpc");
        assert_eq!(pvf_cloud_read(missing.as_ptr(), &mut bad), PvfStatus::Io);

        // a successful call clears the message
        assert_eq!(pvf_cloud_len(s), 20);
        let mut other = ptr::null_mut();
        assert_eq!(pvf_config_new(&mut other), PvfStatus::Ok);
        assert!(pvf_last_error_message().is_null());

        pvf_config_free(other);
        pvf_cloud_free(s);
        pvf_cloud_free(t);
        pvf_weights_free(w);
        pvf_config_free(cfg);
        pvf_cloud_free(ptr::null_mut());
    }
}

#[test]
fn weights_for_another_config_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let small = small_config();
        let mut w = ptr::null_mut();
        pvf_weights_init(small, 2, &mut w);
        let path = c(dir.path().join("w.pvwt").to_str().unwrap());
        assert_eq!(pvf_weights_save(w, path.as_ptr()), PvfStatus::Ok);
        let mut def = ptr::null_mut();
        pvf_config_new(&mut def);
        let mut w2 = ptr::null_mut();
        assert_eq!(pvf_weights_load(path.as_ptr(), def, &mut w2), PvfStatus::Weights);
        pvf_weights_free(w);
        pvf_config_free(small);
        pvf_config_free(def);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(pvf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pvflow.h")).unwrap();
    for f in [
        "pvf_last_error_message", "pvf_version", "pvf_config_new", "pvf_config_load", "pvf_config_set",
        "pvf_config_free", "pvf_cloud_from_xyz", "pvf_cloud_read", "pvf_cloud_write", "pvf_cloud_len",
        "pvf_cloud_free", "pvf_weights_init", "pvf_weights_load", "pvf_weights_save", "pvf_weights_free",
        "pvf_estimate", "pvf_flow_from_xyz", "pvf_flow_read", "pvf_flow_write", "pvf_flow_len",
        "pvf_flow_copy", "pvf_flow_free", "pvf_evaluate",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct PvfCloud PvfCloud;"));
}
