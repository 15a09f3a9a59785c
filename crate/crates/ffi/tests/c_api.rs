use std::ffi::{CStr, CString};
use std::ptr;

use agesim_ffi::*;

const MNIST_TOML: &str = r#"
inferences = 2
seed = 3
policy = "inversion"
[network]
source = "layers"
layers = "FC(10,256)"
[accelerator]
kind = "baseline"
memory_bytes = 2048
weights_per_filter = 1
"#;

fn last_error() -> String {
    let p = agesim_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn probability_matches_exact_value() {
    let mut p = 0.0;
    assert_eq!(unsafe { agesim_p_duty_deviation(20, 0.5, 6, &mut p) }, AgesimStatus::Ok);
    assert!((p - 120920.0 / 1048576.0).abs() < 1e-12);
    assert_eq!(unsafe { agesim_p_duty_deviation(20, 0.5, 10, &mut p) }, AgesimStatus::Ok);
    assert_eq!(p, 1.0);
}

#[test]
fn invalid_arguments_set_status_and_message() {
    let mut p = 0.0;
    assert_eq!(unsafe { agesim_p_duty_deviation(20, 1.5, 6, &mut p) }, AgesimStatus::InvalidArgument);
    assert!(last_error().contains("rho"));
    assert_eq!(unsafe { agesim_p_duty_deviation(20, 0.5, 6, ptr::null_mut()) }, AgesimStatus::NullPointer);
}

#[test]
fn config_run_and_read_back() {
    let text = CString::new(MNIST_TOML).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { agesim_config_from_toml(text.as_ptr(), &mut cfg) }, AgesimStatus::Ok);
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { agesim_run(cfg, &mut res) }, AgesimStatus::Ok);

    let mut s = AgesimSummary::default();
    assert_eq!(unsafe { agesim_result_summary(res, &mut s) }, AgesimStatus::Ok);
    assert_eq!(s.k_inf, 2);
    assert_eq!(s.total_k, 4);
    assert_eq!(s.cells, 2048 * 8);

    let mut len = 0usize;
    assert_eq!(
        unsafe { agesim_result_histogram(res, ptr::null_mut(), 0, &mut len) },
        AgesimStatus::BufferTooSmall
    );
    let mut bins = vec![AgesimBin::default(); len];
    assert_eq!(unsafe { agesim_result_histogram(res, bins.as_mut_ptr(), len, &mut len) }, AgesimStatus::Ok);
    assert!((bins.iter().map(|b| b.pct).sum::<f64>() - 100.0).abs() < 1e-9);

    unsafe { agesim_result_duty_map(res, ptr::null_mut(), 0, &mut len) };
    let mut pairs = vec![0u32; len];
    assert_eq!(unsafe { agesim_result_duty_map(res, pairs.as_mut_ptr(), len, &mut len) }, AgesimStatus::Ok);
    assert!(pairs.chunks(2).all(|p| p[1] == 4 && p[0] <= 4));

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { agesim_result_to_json(res, &mut json) }, AgesimStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { agesim_string_free(json) };
    assert!(text.contains("\"config_hash\""));

    unsafe {
        agesim_result_free(res);
        agesim_config_free(cfg);
        agesim_result_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_reports_config_error() {
    let text = CString::new("policy = \"sideways\"").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { agesim_config_from_toml(text.as_ptr(), &mut cfg) }, AgesimStatus::Config);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn zero_inferences_rejected_at_run() {
    let text = CString::new(MNIST_TOML).unwrap();
    let mut cfg = ptr::null_mut();
    unsafe { agesim_config_from_toml(text.as_ptr(), &mut cfg) };
    unsafe { agesim_config_set_inferences(cfg, 0) };
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { agesim_run(cfg, &mut res) }, AgesimStatus::InvalidArgument);
    unsafe { agesim_config_free(cfg) };
}

#[test]
fn encoder_round_trip_every_policy() {
    for kind in [AGESIM_POLICY_NONE, AGESIM_POLICY_INVERSION, AGESIM_POLICY_BARREL, AGESIM_POLICY_TRBG] {
        let policy = AgesimPolicy {
            kind,
            max_shift: 7,
            bias: 0.7,
            m: 4,
            balancing: true,
            per_word_balance: false,
            seed: 11,
        };
        let mut enc = ptr::null_mut();
        assert_eq!(unsafe { agesim_encoder_new(&policy, 72, 4, &mut enc) }, AgesimStatus::Ok);
        for i in 0..64u64 {
            let input = [i.wrapping_mul(0x9E37_79B9_7F4A_7C15), i & 0xFF];
            let mut out = [0u64; 2];
            let mut ctl = AgesimControl::default();
            let st = unsafe { agesim_encoder_encode(enc, input.as_ptr(), 2, (i % 4) as usize, out.as_mut_ptr(), &mut ctl) };
            assert_eq!(st, AgesimStatus::Ok);
            let mut back = [0u64; 2];
            assert_eq!(unsafe { agesim_decode(out.as_ptr(), 2, 72, ctl, back.as_mut_ptr()) }, AgesimStatus::Ok);
            assert_eq!(back, input);
            if i % 4 == 3 {
                unsafe { agesim_encoder_end_block(enc) };
            }
        }
        unsafe { agesim_encoder_free(enc) };
    }
}

#[test]
fn encoder_rejects_bad_shapes() {
    let policy = AgesimPolicy { kind: 9, max_shift: 0, bias: 0.5, m: 4, balancing: true, per_word_balance: false, seed: 0 };
    let mut enc = ptr::null_mut();
    assert_eq!(unsafe { agesim_encoder_new(&policy, 8, 1, &mut enc) }, AgesimStatus::InvalidArgument);
    let policy = AgesimPolicy { kind: AGESIM_POLICY_NONE, ..policy };
    assert_eq!(unsafe { agesim_encoder_new(&policy, 8, 1, &mut enc) }, AgesimStatus::Ok);
    let mut out = [0u64; 2];
    let mut ctl = AgesimControl::default();
    let input = [0u64; 2];
    assert_eq!(
        unsafe { agesim_encoder_encode(enc, input.as_ptr(), 2, 0, out.as_mut_ptr(), &mut ctl) },
        AgesimStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { agesim_encoder_encode(enc, input.as_ptr(), 1, 5, out.as_mut_ptr(), &mut ctl) },
        AgesimStatus::InvalidArgument
    );
    unsafe { agesim_encoder_free(enc) };
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(agesim_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
