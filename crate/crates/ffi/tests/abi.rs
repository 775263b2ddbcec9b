use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;
use std::ptr;

use serde_json::Value;
use vspan_ffi::*;

fn last_error() -> String {
    let p = vspan_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { vspan_string_free(p) };
    s
}

fn simulate(dir: &Path, scenario: &str, seed: u64) {
    let name = CString::new(scenario).unwrap();
    let d = CString::new(dir.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { vspan_simulate(name.as_ptr(), seed, d.as_ptr()) }, VspanStatus::Ok);
}

fn open(dir: &Path) -> *mut VspanAnalysis {
    let side: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("sidecar.json")).unwrap()).unwrap();
    let mut paths = Vec::new();
    let mut offsets = Vec::new();
    for o in side["offsets"].as_array().unwrap() {
        paths.push(CString::new(dir.join(o["source"].as_str().unwrap()).to_str().unwrap()).unwrap());
        offsets.push(o["offset"].as_i64().unwrap());
    }
    let ptrs: Vec<*const c_char> = paths.iter().map(|p| p.as_ptr()).collect();
    let mut a = ptr::null_mut();
    let st = unsafe { vspan_analyze_files(ptrs.as_ptr(), offsets.as_ptr(), ptrs.len(), true, &mut a) };
    assert_eq!(st, VspanStatus::Ok);
    assert!(!a.is_null());
    a
}

#[test]
fn simulate_analyze_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "readfile_chain", 4);
    let a = open(tmp.path());
    unsafe {
        assert_eq!(vspan_analysis_unmatched_count(a), 0);
        let n = vspan_analysis_span_count(a);
        assert!(n > 0);
        let mut info = VspanSpanInfo::default();
        for i in 0..n {
            assert_eq!(vspan_analysis_span(a, i, &mut info), VspanStatus::Ok);
            assert!(info.t_ns <= info.l_ns && info.entry_ts <= info.exit_ts && info.op_count > 0);
        }
        assert_eq!(vspan_analysis_span(a, n, &mut info), VspanStatus::OutOfRange);
        assert!(last_error().contains("out of range"));

        let mut s = ptr::null_mut();
        assert_eq!(vspan_analysis_json(a, &mut s), VspanStatus::Ok);
        let doc: Value = serde_json::from_str(&take(s)).unwrap();
        assert_eq!(doc["spans"].as_array().unwrap().len(), n);

        let chrome = CString::new("chrome").unwrap();
        assert_eq!(vspan_analysis_export(a, chrome.as_ptr(), &mut s), VspanStatus::Ok);
        let trace: Value = serde_json::from_str(&take(s)).unwrap();
        vspan_core::export::check_nesting(&trace).unwrap();

        let svg = CString::new("svg").unwrap();
        assert_eq!(vspan_analysis_export(a, svg.as_ptr(), &mut s), VspanStatus::InvalidInput);
        assert!(last_error().contains("svg"));
        vspan_analysis_free(a);
    }
}

#[test]
fn detect_uses_config_and_validates_it() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "redos_stall", 3);
    let a = open(tmp.path());
    unsafe {
        let mut cfg = std::mem::zeroed();
        assert_eq!(vspan_detector_config_default(&mut cfg), VspanStatus::Ok);
        assert_eq!(cfg.min_stall_ns, 100_000_000);
        let (mut s, mut n) = (ptr::null_mut(), 0usize);
        assert_eq!(vspan_analysis_detect(a, &cfg, &mut s, &mut n), VspanStatus::Ok);
        let reports: Value = serde_json::from_str(&take(s)).unwrap();
        assert_eq!(reports.as_array().unwrap().len(), n);
        assert!(reports.as_array().unwrap().iter().any(|r| r["kind"] == "ElStall"));

        assert_eq!(vspan_analysis_detect(a, ptr::null(), &mut s, ptr::null_mut()), VspanStatus::Ok);
        vspan_string_free(s);

        cfg.interference_factor = 0.0;
        assert_eq!(vspan_analysis_detect(a, &cfg, &mut s, &mut n), VspanStatus::InvalidInput);
        vspan_analysis_free(a);
    }
}

#[test]
fn bad_arguments_report_errors() {
    unsafe {
        let mut a = ptr::null_mut();
        assert_eq!(vspan_analyze_files(ptr::null(), ptr::null(), 1, false, &mut a), VspanStatus::NullArgument);
        assert!(a.is_null());
        assert_eq!(vspan_analyze_files(ptr::null(), ptr::null(), 0, false, &mut a), VspanStatus::InvalidInput);

        let missing = CString::new("/nonexistent/trace.jsonl").unwrap();
        let p = missing.as_ptr();
        assert_eq!(vspan_analyze_files(&p, ptr::null(), 1, false, &mut a), VspanStatus::InvalidInput);
        assert!(last_error().contains("nonexistent"));

        let bad = [0xffu8, 0];
        let p = bad.as_ptr().cast::<c_char>();
        assert_eq!(vspan_analyze_files(&p, ptr::null(), 1, false, &mut a), VspanStatus::InvalidUtf8);

        let kind = CString::new("nope").unwrap();
        let dir = CString::new("/tmp").unwrap();
        assert_eq!(vspan_simulate(kind.as_ptr(), 1, dir.as_ptr()), VspanStatus::InvalidInput);

        assert_eq!(vspan_analysis_span_count(ptr::null()), 0);
        vspan_analysis_free(ptr::null_mut());
        vspan_string_free(ptr::null_mut());

        let mut s = ptr::null_mut();
        assert_eq!(vspan_analysis_json(ptr::null(), &mut s), VspanStatus::NullArgument);
        let kind = CString::new("healthy").unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
        assert_eq!(vspan_simulate(kind.as_ptr(), 1, dir.as_ptr()), VspanStatus::Ok);
        assert!(vspan_last_error().is_null());
    }
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(vspan_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
