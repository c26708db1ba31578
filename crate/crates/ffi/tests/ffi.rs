use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use ddprior_ffi::*;

const NET: &str = r#"{"nodes": [
    {"name": "A", "domain": ["0", "1"]},
    {"name": "B", "domain": ["0", "1"]},
    {"name": "X", "domain": ["0", "1"], "parents": ["A", "B"]}]}"#;

const DATA: &str = "A,B,X\n0,0,1\n0,0,0\n0,1,1\n1,0,1\n1,1,0\n1,1,1\n0,0,1\n";

fn last_error() -> String {
    let p = ddp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(ddp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn scalar_functions() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(ddp_rho(2.0, 0.5, DdpMode::Quadratic, &mut out), DdpStatus::Ok);
        assert!((0.5 - out - 0.0714285714285714).abs() < 1e-12);
        assert_eq!(ddp_zeta_exact(1.0, 1.0, 1.0, 1e-10, &mut out), DdpStatus::Ok);
        assert!((out - 0.2898681336965).abs() < 1e-9);
        assert_eq!(ddp_zeta_approx(1.0, 1.0, 1.0, &mut out), DdpStatus::Ok);
        assert!(out > 0.0 && out < 1.0);
        assert!(ddp_last_error().is_null());

        assert_eq!(ddp_rho(-1.0, 0.5, DdpMode::Exact, &mut out), DdpStatus::Validation);
        assert!(last_error().contains("alpha"));
        assert_eq!(ddp_rho(2.0, 0.5, DdpMode::Exact, ptr::null_mut()), DdpStatus::NullPointer);
    }
}

#[test]
fn mse_ratio_closed_form_point() {
    let select = DdpPi { pi0: 0.0, pi1: 0.0, pi2: 1.0 };
    let truth = DdpPi { pi0: 1.0, pi1: 0.0, pi2: 0.0 };
    let radices = [2usize; 4];
    let totals = [3u64; 16];
    let mu = [0.5, 0.5];
    let mut out = 0.0;
    let status = unsafe {
        ddp_mse_ratio(
            &select,
            &truth,
            radices.as_ptr(),
            4,
            totals.as_ptr(),
            2.0,
            mu.as_ptr(),
            2,
            0,
            DdpMode::Quadratic,
            &mut out,
        )
    };
    assert_eq!(status, DdpStatus::Ok);
    assert!((out - 10.0).abs() < 1e-9);

    let bad = DdpPi { pi0: 0.5, pi1: 0.5, pi2: 0.5 };
    let status = unsafe {
        ddp_mse_ratio(
            &bad,
            &truth,
            radices.as_ptr(),
            4,
            totals.as_ptr(),
            2.0,
            mu.as_ptr(),
            2,
            0,
            DdpMode::Quadratic,
            &mut out,
        )
    };
    assert_eq!(status, DdpStatus::Validation);
}

#[test]
fn handle_lifecycle() {
    let json = CString::new(NET).unwrap();
    let csv = CString::new(DATA).unwrap();
    let x = CString::new("X").unwrap();
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(ddp_network_from_json(json.as_ptr(), &mut net), DdpStatus::Ok);
        assert_eq!(ddp_network_node_count(net), 3);

        let mut counts = ptr::null_mut();
        assert_eq!(ddp_counts_from_csv(net, csv.as_ptr(), &mut counts), DdpStatus::Ok);
        let mut n = 0;
        assert_eq!(ddp_counts_row_total(counts, x.as_ptr(), 0, &mut n), DdpStatus::Ok);
        assert_eq!(n, 3);
        assert_eq!(ddp_counts_row_total(counts, x.as_ptr(), 4, &mut n), DdpStatus::OutOfRange);

        let mut fit = std::mem::zeroed::<DdpPiFit>();
        assert_eq!(ddp_fit_pi(counts, &mut fit), DdpStatus::Ok);
        let sum = fit.pi.pi0 + fit.pi.pi1 + fit.pi.pi2;
        assert!((sum - 1.0).abs() < 1e-12);

        let prior = CString::new(r#"{"default": {"pi": {"pi0": 0, "pi1": 0, "pi2": 1}}}"#).unwrap();
        let mut est = ptr::null_mut();
        assert_eq!(ddp_estimate(net, counts, prior.as_ptr(), &mut est), DdpStatus::Ok);
        let (mut rows, mut values) = (0, 0);
        assert_eq!(ddp_estimate_shape(est, x.as_ptr(), &mut rows, &mut values), DdpStatus::Ok);
        assert_eq!((rows, values), (4, 2));
        // Independent rows with a flat prior: (m + 1) / (n + 2).
        let mut theta = 0.0;
        let mut clamped = true;
        assert_eq!(ddp_estimate_theta(est, x.as_ptr(), 0, 1, &mut theta, &mut clamped), DdpStatus::Ok);
        assert!((theta - 3.0 / 5.0).abs() < 1e-12);
        assert!(!clamped);
        let q = CString::new("Q").unwrap();
        assert_eq!(ddp_estimate_theta(est, q.as_ptr(), 0, 0, &mut theta, ptr::null_mut()), DdpStatus::Validation);
        assert!(last_error().contains("unknown node"));

        ddp_estimate_free(est);
        ddp_counts_free(counts);
        ddp_network_free(net);
        ddp_network_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let bad_json = CString::new("{\"nodes\": [").unwrap();
    let mut net = ptr::null_mut();
    unsafe {
        assert_eq!(ddp_network_from_json(bad_json.as_ptr(), &mut net), DdpStatus::Parse);
        assert!(net.is_null());
        assert_eq!(ddp_network_from_json(ptr::null(), &mut net), DdpStatus::NullPointer);

        let json = CString::new(NET).unwrap();
        assert_eq!(ddp_network_from_json(json.as_ptr(), &mut net), DdpStatus::Ok);
        let csv = CString::new("A,B,X\n0,0,7\n").unwrap();
        let mut counts = ptr::null_mut();
        assert_eq!(ddp_counts_from_csv(net, csv.as_ptr(), &mut counts), DdpStatus::Validation);
        assert!(last_error().contains("record 1"));
        let invalid = [0xffu8, 0];
        assert_eq!(
            ddp_counts_from_csv(net, invalid.as_ptr().cast(), &mut counts),
            DdpStatus::InvalidUtf8
        );
        ddp_network_free(net);
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/ddprior.h");
    for name in [
        "ddp_version",
        "ddp_last_error",
        "ddp_zeta_exact",
        "ddp_zeta_approx",
        "ddp_rho",
        "ddp_mse_ratio",
        "ddp_network_from_json",
        "ddp_network_free",
        "ddp_network_node_count",
        "ddp_counts_from_csv",
        "ddp_counts_free",
        "ddp_counts_row_total",
        "ddp_fit_pi",
        "ddp_estimate",
        "ddp_estimate_free",
        "ddp_estimate_shape",
        "ddp_estimate_theta",
        "typedef struct DdpNetwork DdpNetwork;",
        "DDP_STATUS_OK = 0",
        "DDP_STATUS_PANIC = 7",
    ] {
        assert!(header.contains(name), "header is missing `{name}`");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ddprior.h"))
        .output()
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
