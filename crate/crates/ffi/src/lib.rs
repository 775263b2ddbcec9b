//! C ABI over `vspan-core`.
//!
//! Every entry point returns a [`VspanStatus`]. On failure the message is
//! kept per thread and read back with [`vspan_last_error`]. Strings handed
//! out by the library must be released with [`vspan_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use vspan_core::cli::write_atomic;
use vspan_core::export::{export, ExportFormat};
use vspan_core::metrics::DetectorConfig;
use vspan_core::pipeline::{analyze, Analysis};
use vspan_core::simgen::{simulate, Scenario, ScenarioKind};
use vspan_core::trace::{open_experiment, ParseMode};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VspanStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    OutOfRange = 5,
    Panic = 6,
}

/// Opaque result of analysing one experiment.
pub struct VspanAnalysis {
    inner: Analysis,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VspanSpanInfo {
    pub root_ctx: i64,
    pub pid: u32,
    pub tid: u32,
    pub entry_ts: u64,
    pub exit_ts: u64,
    /// Sum of op lifetimes.
    pub t_ns: u64,
    /// `t_ns` plus the gaps between consecutive ops.
    pub l_ns: u64,
    pub op_count: usize,
    pub open_ended: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VspanDetectorConfig {
    pub overhead_threshold: f64,
    pub leak_alpha: f64,
    pub leak_window: usize,
    pub min_stall_ns: u64,
    pub interference_factor: f64,
    pub ipc_timeout_ns: u64,
}

impl From<DetectorConfig> for VspanDetectorConfig {
    fn from(c: DetectorConfig) -> Self {
        Self {
            overhead_threshold: c.overhead_threshold,
            leak_alpha: c.leak_alpha,
            leak_window: c.leak_window,
            min_stall_ns: c.min_stall,
            interference_factor: c.interference_factor,
            ipc_timeout_ns: c.ipc_timeout,
        }
    }
}

impl From<VspanDetectorConfig> for DetectorConfig {
    fn from(c: VspanDetectorConfig) -> Self {
        Self {
            overhead_threshold: c.overhead_threshold,
            leak_alpha: c.leak_alpha,
            leak_window: c.leak_window,
            min_stall: c.min_stall_ns,
            interference_factor: c.interference_factor,
            ipc_timeout: c.ipc_timeout_ns,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(VspanStatus, String);

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure(VspanStatus::InvalidInput, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VspanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VspanStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            VspanStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(VspanStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| Failure(VspanStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a>(a: *const VspanAnalysis) -> Result<&'a Analysis, Failure> {
    non_null(a, "analysis")?;
    Ok(&(*a).inner)
}

unsafe fn hand_out(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure::input("output contains a nul byte"))?;
    *out = c.into_raw();
    Ok(())
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn vspan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn vspan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads and analyses `count` trace files. `offsets` may be null (all zero)
/// or point to `count` nanosecond offsets. On success `*out` owns a handle
/// to free with [`vspan_analysis_free`].
///
/// # Safety
/// `paths` must point to `count` NUL-terminated strings and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vspan_analyze_files(
    paths: *const *const c_char,
    offsets: *const i64,
    count: usize,
    strict: bool,
    out: *mut *mut VspanAnalysis,
) -> VspanStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        if count == 0 {
            return Err(Failure::input("no input files"));
        }
        non_null(paths, "paths")?;
        let mut files = Vec::with_capacity(count);
        for i in 0..count {
            files.push(PathBuf::from(str_arg(*paths.add(i), "path")?));
        }
        let offs = if offsets.is_null() { Vec::new() } else { std::slice::from_raw_parts(offsets, count).to_vec() };
        let mode = if strict { ParseMode::Strict } else { ParseMode::Lenient };
        let x = open_experiment(&files, &offs, mode).map_err(Failure::input)?;
        *out = Box::into_raw(Box::new(VspanAnalysis { inner: analyze(x) }));
        Ok(())
    })
}

/// # Safety
/// `analysis` must come from [`vspan_analyze_files`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn vspan_analysis_free(analysis: *mut VspanAnalysis) {
    if !analysis.is_null() {
        drop(Box::from_raw(analysis));
    }
}

/// Number of reconstructed spans, or 0 for a null handle.
///
/// # Safety
/// `analysis` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vspan_analysis_span_count(analysis: *const VspanAnalysis) -> usize {
    analysis.as_ref().map_or(0, |a| a.inner.spans().len())
}

/// Unmatched events plus context diagnostics, or 0 for a null handle.
///
/// # Safety
/// `analysis` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vspan_analysis_unmatched_count(analysis: *const VspanAnalysis) -> usize {
    analysis.as_ref().map_or(0, |a| a.inner.unmatched_count())
}

/// # Safety
/// `analysis` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vspan_analysis_span(
    analysis: *const VspanAnalysis,
    index: usize,
    out: *mut VspanSpanInfo,
) -> VspanStatus {
    guard(|| {
        let a = handle(analysis)?;
        non_null(out, "out")?;
        let spans = a.spans();
        let s = spans.get(index).ok_or_else(|| {
            Failure(VspanStatus::OutOfRange, format!("span {index} out of range ({} spans)", spans.len()))
        })?;
        *out = VspanSpanInfo {
            root_ctx: s.bec.root_ctx,
            pid: s.bec.pid,
            tid: s.bec.tid,
            entry_ts: s.bec.entry_ts,
            exit_ts: s.bec.exit_ts,
            t_ns: s.t,
            l_ns: s.l,
            op_count: s.ops.len(),
            open_ended: s.bec.open_ended,
        };
        Ok(())
    })
}

/// Full analysis document as JSON.
///
/// # Safety
/// `analysis` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vspan_analysis_json(analysis: *const VspanAnalysis, out: *mut *mut c_char) -> VspanStatus {
    guard(|| {
        let a = handle(analysis)?;
        non_null(out, "out")?;
        hand_out(a.to_json().to_string(), out)
    })
}

/// Exports spans as `"chrome"` (trace-event JSON) or `"folded"` stacks.
///
/// # Safety
/// `analysis` must be a live handle, `format` a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vspan_analysis_export(
    analysis: *const VspanAnalysis,
    format: *const c_char,
    out: *mut *mut c_char,
) -> VspanStatus {
    guard(|| {
        let a = handle(analysis)?;
        non_null(out, "out")?;
        let fmt: ExportFormat = str_arg(format, "format")?.parse().map_err(Failure::input)?;
        hand_out(export(a.spans(), fmt), out)
    })
}

/// Fills `out` with the default detector thresholds.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vspan_detector_config_default(out: *mut VspanDetectorConfig) -> VspanStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = DetectorConfig::default().into();
        Ok(())
    })
}

/// Runs every detector and writes the reports as a JSON array. `config` may
/// be null for defaults. `report_count` may be null.
///
/// # Safety
/// `analysis` must be a live handle, `out` writable, and `config`/`report_count` valid or null.
#[no_mangle]
pub unsafe extern "C" fn vspan_analysis_detect(
    analysis: *const VspanAnalysis,
    config: *const VspanDetectorConfig,
    out: *mut *mut c_char,
    report_count: *mut usize,
) -> VspanStatus {
    guard(|| {
        let a = handle(analysis)?;
        non_null(out, "out")?;
        let cfg: DetectorConfig = config.as_ref().map_or_else(DetectorConfig::default, |c| (*c).into());
        let positive = [cfg.overhead_threshold, cfg.leak_alpha, cfg.interference_factor]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive || cfg.leak_window == 0 || cfg.min_stall == 0 || cfg.ipc_timeout == 0 {
            return Err(Failure::input("detector thresholds must be positive"));
        }
        let reports = a.detect(&cfg).map_err(Failure::input)?;
        if !report_count.is_null() {
            *report_count = reports.len();
        }
        hand_out(serde_json::to_string(&reports).map_err(Failure::input)?, out)
    })
}

/// Simulates `scenario` with `seed` and writes userspace.jsonl, kernel.jsonl
/// and sidecar.json into `out_dir`, creating it when missing.
///
/// # Safety
/// `scenario` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn vspan_simulate(scenario: *const c_char, seed: u64, out_dir: *const c_char) -> VspanStatus {
    guard(|| {
        let kind: ScenarioKind = str_arg(scenario, "scenario")?.parse().map_err(Failure::input)?;
        let dir = Path::new(str_arg(out_dir, "out_dir")?);
        let out = simulate(&Scenario::new(kind, seed)).map_err(Failure::input)?;
        for (name, text) in out.files() {
            write_atomic(&dir.join(name), &text).map_err(|e| Failure(VspanStatus::Io, format!("{e:#}")))?;
        }
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn vspan_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
