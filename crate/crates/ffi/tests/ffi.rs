use affclt_ffi::*;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

const HT: &str = r#"
schema_version = 1
seed = 3

[estimate.ht]
n = 4
graph = { type = "path" }
treat_prob = 0.5
contrast = [1, 4]
positivity = "strict"

[estimate.ht.potential_outcomes]
1 = [3.0, 5.0, 4.0, 6.0]
2 = [3.5, 5.5, 4.5, 6.5]
3 = [1.5, 2.5, 2.0, 3.0]
4 = [1.0, 2.0, 1.5, 2.5]
"#;

fn parse(text: &str) -> (AffcltStatus, *mut AffcltConfig) {
    let c = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let s = unsafe { affclt_config_parse(c.as_ptr(), &mut cfg) };
    (s, cfg)
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let s = unsafe { affclt_last_error(buf.as_mut_ptr(), buf.len(), ptr::null_mut()) };
    assert_eq!(s, AffcltStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(affclt_version()) };
    assert_eq!(v.to_str().unwrap(), affclt::VERSION);
}

#[test]
fn ht_run_round_trip() {
    let (s, cfg) = parse(HT);
    assert_eq!(s, AffcltStatus::Ok);
    let mut needed = 0usize;
    let mut small = [0 as c_char; 8];
    let s = unsafe { affclt_config_hash(cfg, small.as_mut_ptr(), small.len(), &mut needed) };
    assert_eq!(s, AffcltStatus::BufferTooSmall);
    assert_eq!(needed, 65);

    let mut run = ptr::null_mut();
    assert_eq!(
        unsafe { affclt_run(cfg, AffcltCommand::EstimateHt, &mut run) },
        AffcltStatus::Ok
    );
    let mut count = 0usize;
    assert_eq!(unsafe { affclt_run_file_count(run, &mut count) }, AffcltStatus::Ok);
    assert_eq!(count, 1);
    let mut data: *const u8 = ptr::null();
    let mut len = 0usize;
    assert_eq!(
        unsafe { affclt_run_file_data(run, 0, &mut data, &mut len) },
        AffcltStatus::Ok
    );
    let json: serde_json::Value = serde_json::from_slice(unsafe { std::slice::from_raw_parts(data, len) }).unwrap();
    assert_eq!(json["design_expectation"], json["true_effect"]);

    let mut code = -1;
    assert_eq!(unsafe { affclt_run_exit_code(run, &mut code) }, AffcltStatus::Ok);
    assert_eq!(code, 0);
    assert_eq!(
        unsafe { affclt_run_file_data(run, 5, &mut data, &mut len) },
        AffcltStatus::OutOfRange
    );

    let dir = tempfile::tempdir().unwrap();
    let d = CString::new(dir.path().join("o").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { affclt_run_write(run, d.as_ptr()) }, AffcltStatus::Ok);
    assert!(dir.path().join("o/estimate_ht.json").exists());
    unsafe {
        affclt_run_free(run);
        affclt_config_free(cfg);
    }
}

#[test]
fn errors_map_to_codes() {
    let (s, cfg) = parse("schema_version = 1\nbogus = 2\n");
    assert_eq!(s, AffcltStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("bogus"));

    let s = unsafe { affclt_config_parse(ptr::null(), &mut ptr::null_mut()) };
    assert_eq!(s, AffcltStatus::NullPointer);

    let (s, cfg) = parse("schema_version = 1\n");
    assert_eq!(s, AffcltStatus::Ok);
    let mut run = ptr::null_mut();
    assert_eq!(
        unsafe { affclt_run(cfg, AffcltCommand::Diagnose, &mut run) },
        AffcltStatus::Config
    );
    assert!(run.is_null());
    unsafe { affclt_config_free(cfg) };
}

#[test]
fn numeric_entry_points() {
    let mut out = 0.0;
    assert_eq!(
        unsafe { affclt_matern_cov(1.0, std::f64::consts::FRAC_1_SQRT_2, 0.5, 1.0, &mut out) },
        AffcltStatus::Ok
    );
    assert!((out - (-1.0f64).exp()).abs() < 1e-10);
    assert_eq!(
        unsafe { affclt_matern_cov(-1.0, 1.0, 0.5, 1.0, &mut out) },
        AffcltStatus::InvalidArgument
    );
    let x: Vec<f64> = vec![0.0; 20];
    assert_eq!(
        unsafe { affclt_ks_distance(x.as_ptr(), x.len(), &mut out) },
        AffcltStatus::Ok
    );
    assert!((out - 0.5).abs() < 1e-15);
    assert_eq!(
        unsafe { affclt_w1_distance(x.as_ptr(), 3, &mut out) },
        AffcltStatus::InvalidArgument
    );
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/affclt.h");
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 14);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
