use std::ffi::{CStr, CString};
use std::ptr;

use qdisc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(qdisc_last_error()) }.to_string_lossy().into_owned()
}

unsafe fn diag(p: &[f64]) -> *mut QdiscState {
    let mut s = ptr::null_mut();
    assert_eq!(qdisc_state_from_diag(p.as_ptr(), p.len(), &mut s), QdiscStatus::Ok);
    s
}

#[test]
fn classical_divergences() {
    unsafe {
        let (rho, sigma) = (diag(&[0.5, 0.5]), diag(&[0.25, 0.75]));
        let mut v = f64::NAN;
        assert_eq!(qdisc_divergence(QdiscDivergence::Umegaki, 0.0, rho, sigma, &mut v), QdiscStatus::Ok);
        // KL((.5,.5)‖(.25,.75)) = 1 − ½ log₂3
        assert!((v - (1.0 - 0.5 * 3f64.log2())).abs() < 1e-12);
        assert_eq!(qdisc_divergence(QdiscDivergence::Dmax, 0.0, rho, sigma, &mut v), QdiscStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(qdisc_divergence(QdiscDivergence::Petz, 2.0, rho, sigma, &mut v), QdiscStatus::Ok);
        // log₂(.25/.25 + .25/.75) = log₂(4/3)
        assert!((v - (4.0f64 / 3.0).log2()).abs() < 1e-12);
        assert_eq!(qdisc_trace_distance(rho, sigma, &mut v), QdiscStatus::Ok);
        assert!((v - 0.25).abs() < 1e-12);
        qdisc_state_free(rho);
        qdisc_state_free(sigma);
    }
}

#[test]
fn infinite_values_are_not_errors() {
    unsafe {
        let (rho, sigma) = (diag(&[1.0, 0.0]), diag(&[0.0, 1.0]));
        let mut v = 0.0;
        assert_eq!(qdisc_divergence(QdiscDivergence::Dmax, 0.0, rho, sigma, &mut v), QdiscStatus::Ok);
        assert_eq!(v, f64::INFINITY);
        qdisc_state_free(rho);
        qdisc_state_free(sigma);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(qdisc_state_from_diag(ptr::null(), 2, &mut s), QdiscStatus::NullPointer);
        assert!(last_error().contains("null"));
        let re = [1.0, 0.0, 0.0, -1.0];
        assert_eq!(qdisc_state_new(re.as_ptr(), ptr::null(), 2, &mut s), QdiscStatus::NotPositive);
        assert!(!last_error().is_empty());
        let (a, b) = (diag(&[0.5, 0.5]), diag(&[0.2, 0.3, 0.5]));
        let mut v = 0.0;
        assert_eq!(qdisc_divergence(QdiscDivergence::Umegaki, 0.0, a, b, &mut v), QdiscStatus::DimensionMismatch);
        assert_eq!(qdisc_divergence(QdiscDivergence::Umegaki, 0.0, a, a, ptr::null_mut()), QdiscStatus::NullPointer);
        assert_eq!(qdisc_divergence(QdiscDivergence::Umegaki, 0.0, a, a, &mut v), QdiscStatus::Ok);
        assert_eq!(last_error(), "");
        let name = CString::new("nope").unwrap();
        let mut r = ptr::null_mut();
        assert_eq!(qdisc_suite_run(name.as_ptr(), 1, 1, &mut r), QdiscStatus::UnknownSuite);
        assert!(r.is_null());
        qdisc_state_free(a);
        qdisc_state_free(b);
        qdisc_state_free(ptr::null_mut());
    }
}

#[test]
fn state_round_trip() {
    unsafe {
        let re = [0.6, 0.1, 0.1, 0.4];
        let im = [0.0, -0.2, 0.2, 0.0];
        let mut s = ptr::null_mut();
        assert_eq!(qdisc_state_new(re.as_ptr(), im.as_ptr(), 2, &mut s), QdiscStatus::Ok);
        assert_eq!(qdisc_state_dim(s), 2);
        let (mut r2, mut i2) = ([0.0; 4], [0.0; 4]);
        assert_eq!(qdisc_state_matrix(s, r2.as_mut_ptr(), i2.as_mut_ptr()), QdiscStatus::Ok);
        for k in 0..4 {
            assert!((r2[k] - re[k]).abs() < 1e-15 && (i2[k] - im[k]).abs() < 1e-15);
        }
        qdisc_state_free(s);
    }
}

#[test]
fn channels() {
    unsafe {
        let (s0, s1) = (diag(&[0.5, 0.5]), diag(&[0.25, 0.75]));
        let (mut e, mut f) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(qdisc_channel_replacer(s0, 2, &mut e), QdiscStatus::Ok);
        assert_eq!(qdisc_channel_replacer(s1, 2, &mut f), QdiscStatus::Ok);
        let (mut din, mut dout) = (0, 0);
        assert_eq!(qdisc_channel_dims(e, &mut din, &mut dout), QdiscStatus::Ok);
        assert_eq!((din, dout), (2, 2));
        // replacer channels: the channel divergence equals the state divergence
        let mut v = 0.0;
        assert_eq!(qdisc_geometric_channel_exact(2.0, e, f, &mut v), QdiscStatus::Ok);
        assert!((v - (4.0f64 / 3.0).log2()).abs() < 1e-10);
        assert_eq!(qdisc_channel_divergence(QdiscDivergence::Umegaki, 0.0, e, f, 3, &mut v), QdiscStatus::Ok);
        assert!((v - (1.0 - 0.5 * 3f64.log2())).abs() < 1e-9);
        let mut out = ptr::null_mut();
        assert_eq!(qdisc_channel_apply(f, s0, &mut out), QdiscStatus::Ok);
        let mut d = 1.0;
        assert_eq!(qdisc_trace_distance(out, s1, &mut d), QdiscStatus::Ok);
        assert!(d < 1e-12);
        let mut id = ptr::null_mut();
        assert_eq!(qdisc_channel_identity(2, &mut id), QdiscStatus::Ok);
        let mut dep = ptr::null_mut();
        assert_eq!(qdisc_channel_depolarizing(s1, 0.5, &mut dep), QdiscStatus::Ok);
        // identity has a rank-one Choi operator
        assert_eq!(qdisc_geometric_channel_exact(2.0, dep, id, &mut v), QdiscStatus::Unavailable);
        for c in [e, f, id, dep] {
            qdisc_channel_free(c);
        }
        for s in [s0, s1, out] {
            qdisc_state_free(s);
        }
    }
}

#[test]
fn suite_report() {
    unsafe {
        let name = CString::new("fvg").unwrap();
        let mut r = ptr::null_mut();
        assert_eq!(qdisc_suite_run(name.as_ptr(), 42, 20, &mut r), QdiscStatus::Ok);
        assert_eq!(qdisc_report_cases(r), 20);
        assert_eq!(qdisc_report_failures(r), 0);
        let mut js = ptr::null_mut();
        assert_eq!(qdisc_report_json(r, &mut js), QdiscStatus::Ok);
        let text = CStr::from_ptr(js).to_str().unwrap().to_owned();
        qdisc_string_free(js);
        qdisc_report_free(r);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["suite"], "fvg");
        assert_eq!(v["cases"], 20);
    }
}

#[test]
fn version_is_cargo_version() {
    let v = unsafe { CStr::from_ptr(qdisc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
