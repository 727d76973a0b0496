//! C interface to the sliced pipeline.
//!
//! Models are opaque handles created by [`sliced_model_parse`] and released
//! with [`sliced_model_free`]. Strings returned through `out` parameters are
//! owned by the caller and must be released with [`sliced_string_free`].
//! When a call fails, [`sliced_last_error`] describes why.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sliced::checker::CheckOptions;
use sliced::config::Config;
use sliced::ops::{self, OpError, PlanRequest};
use sliced::pipeline::{load_str, Model};
use sliced::smv::{emit, EmitOptions};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlicedStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// The model, config, goal or failure list could not be read.
    InvalidInput = 3,
    /// The analysis could not run on this model.
    AnalysisFailed = 4,
    /// The state cap was reached before a verdict.
    CapExceeded = 5,
    /// A bug: the library panicked.
    Internal = 6,
}

/// A loaded model together with the config it was built with.
pub struct SlicedModel {
    model: Model,
    config: Config,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: SlicedStatus, msg: impl Into<String>) -> SlicedStatus {
    set_error(msg);
    status
}

fn op_status(e: &OpError) -> SlicedStatus {
    match e {
        _ if e.is_cap_exceeded() => SlicedStatus::CapExceeded,
        OpError::Pipeline(_) | OpError::Parse { .. } | OpError::BadAssignment(_) => SlicedStatus::InvalidInput,
        _ => SlicedStatus::AnalysisFailed,
    }
}

fn guarded(f: impl FnOnce() -> SlicedStatus) -> SlicedStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SlicedStatus::Internal, "internal error (panic)"),
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, SlicedStatus> {
    if p.is_null() {
        return Err(fail(SlicedStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(SlicedStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> SlicedStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            SlicedStatus::Ok
        }
        Err(_) => fail(SlicedStatus::Internal, "output contains a NUL byte"),
    }
}

/// Parses a model document (JSON). `config_json` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn sliced_model_parse(
    model_json: *const c_char,
    config_json: *const c_char,
    out: *mut *mut SlicedModel,
) -> SlicedStatus {
    guarded(|| {
        if out.is_null() {
            return fail(SlicedStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let doc = match text(model_json, "model_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let config = if config_json.is_null() {
            Config::default()
        } else {
            let raw = match text(config_json, "config_json") {
                Ok(t) => t,
                Err(s) => return s,
            };
            match Config::parse(raw, "<config>") {
                Ok(c) => c,
                Err(e) => return fail(SlicedStatus::InvalidInput, e.to_string()),
            }
        };
        match load_str(doc, &config) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(SlicedModel { model, config }));
                SlicedStatus::Ok
            }
            Err(e) => fail(SlicedStatus::InvalidInput, e.to_string()),
        }
    })
}

/// Releases a model. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sliced_model_free(model: *mut SlicedModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn model_ref<'a>(model: *const SlicedModel) -> Result<&'a SlicedModel, SlicedStatus> {
    model.as_ref().ok_or_else(|| fail(SlicedStatus::NullArgument, "model is null"))
}

/// Block counts as a JSON object.
#[no_mangle]
pub unsafe extern "C" fn sliced_model_stats(model: *const SlicedModel, out_json: *mut *mut c_char) -> SlicedStatus {
    guarded(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if out_json.is_null() {
            return fail(SlicedStatus::NullArgument, "out_json is null");
        }
        match m.model.stats(&m.config) {
            Ok(stats) => put_string(out_json, serde_json::to_string(&stats).expect("stats serialize")),
            Err(e) => fail(SlicedStatus::InvalidInput, e.to_string()),
        }
    })
}

/// The NuSMV text with the auto-generated assertion suite.
#[no_mangle]
pub unsafe extern "C" fn sliced_model_translate(
    model: *const SlicedModel,
    faithful_listing: bool,
    out_smv: *mut *mut c_char,
) -> SlicedStatus {
    guarded(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if out_smv.is_null() {
            return fail(SlicedStatus::NullArgument, "out_smv is null");
        }
        let machine = &m.model.machine;
        let result = ops::auto_assertions(machine)
            .and_then(|a| emit(machine, &a, EmitOptions { faithful_listing }).map_err(OpError::from));
        match result {
            Ok(smv) => put_string(out_smv, smv),
            Err(e) => fail(op_status(&e), e.to_string()),
        }
    })
}

/// Checks the auto-generated suite. `out_verdict` receives 0 when all hold,
/// 1 when any is falsified and 2 otherwise; `out_report` (nullable) receives
/// the verdicts and counterexamples as text.
#[no_mangle]
pub unsafe extern "C" fn sliced_model_check_auto(
    model: *const SlicedModel,
    out_verdict: *mut i32,
    out_report: *mut *mut c_char,
) -> SlicedStatus {
    guarded(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if out_verdict.is_null() {
            return fail(SlicedStatus::NullArgument, "out_verdict is null");
        }
        let machine = &m.model.machine;
        let asserts = match ops::auto_assertions(machine) {
            Ok(a) => a,
            Err(e) => return fail(op_status(&e), e.to_string()),
        };
        let opts = CheckOptions { cap: m.config.state_cap(), bound: m.config.bound(), parallel: true };
        let entries = ops::check_all(machine, &asserts, opts);
        *out_verdict = ops::check_status(&entries);
        if out_report.is_null() {
            return SlicedStatus::Ok;
        }
        put_string(out_report, entries.iter().map(|e| e.render()).collect())
    })
}

/// Searches for a repair plan. `failures` is a comma-separated list of
/// `NAME=STATE`; `goal` is a predicate. `out_found` receives whether a plan
/// exists and `out_trace` (nullable) the plan or a short explanation.
#[no_mangle]
pub unsafe extern "C" fn sliced_model_plan(
    model: *const SlicedModel,
    failures: *const c_char,
    goal: *const c_char,
    out_found: *mut bool,
    out_trace: *mut *mut c_char,
) -> SlicedStatus {
    guarded(|| {
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let (failures, goal) = match (text(failures, "failures"), text(goal, "goal")) {
            (Ok(f), Ok(g)) => (f, g),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        if out_found.is_null() {
            return fail(SlicedStatus::NullArgument, "out_found is null");
        }
        let items: Vec<String> =
            failures.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        let failures = match ops::parse_assignments(&items) {
            Ok(f) => f,
            Err(e) => return fail(op_status(&e), e.to_string()),
        };
        let req = PlanRequest {
            failures,
            goal: goal.to_string(),
            keep: m.config.plan.keep.clone(),
            toggle_guard: m.config.plan.toggle_guard,
            allow_faults: m.config.plan.allow_faults,
        };
        let opts = CheckOptions { cap: m.config.state_cap(), bound: m.config.bound(), parallel: true };
        match ops::plan(&m.model.machine, &req, opts) {
            Ok(result) => {
                *out_found = result.plan().is_some();
                if out_trace.is_null() {
                    SlicedStatus::Ok
                } else {
                    put_string(out_trace, result.render())
                }
            }
            Err(e) => fail(op_status(&e), e.to_string()),
        }
    })
}

/// Releases a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sliced_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn sliced_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sliced_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL: &str = r#"{"name": "m", "blocks": [
        {"name": "Battery1", "params": {"capacity": 4}, "ports": [{"dir": "out", "index": 1}]},
        {"name": "CircuitBreakerEY162", "params": {"limit": 10}, "ports": [{"dir": "in", "index": 1}, {"dir": "out", "index": 1}]},
        {"name": "BankOne", "archetype": "MergedLoadBank", "params": {"drawlimit": 12}, "ports": [{"dir": "in", "index": 1}]}],
      "lines": [{"src": "Battery1:1", "dst": ["CircuitBreakerEY162:1"]}, {"src": "CircuitBreakerEY162:1", "dst": ["BankOne:1"]}]}"#;

    fn parse(doc: &str) -> (SlicedStatus, *mut SlicedModel) {
        let doc = CString::new(doc).unwrap();
        let mut m = ptr::null_mut();
        let s = unsafe { sliced_model_parse(doc.as_ptr(), ptr::null(), &mut m) };
        (s, m)
    }

    fn take(p: *mut c_char) -> String {
        let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
        unsafe { sliced_string_free(p) };
        s
    }

    #[test]
    fn check_and_translate() {
        let (s, m) = parse(MODEL);
        assert_eq!(s, SlicedStatus::Ok);
        let mut verdict = -1;
        let mut report = ptr::null_mut();
        assert_eq!(unsafe { sliced_model_check_auto(m, &mut verdict, &mut report) }, SlicedStatus::Ok);
        assert_eq!(verdict, 1);
        assert!(take(report).contains("CircuitBreakerEY162.draw = 11"));
        let mut smv = ptr::null_mut();
        assert_eq!(unsafe { sliced_model_translate(m, false, &mut smv) }, SlicedStatus::Ok);
        assert!(take(smv).contains("MODULE main"));
        let mut stats = ptr::null_mut();
        assert_eq!(unsafe { sliced_model_stats(m, &mut stats) }, SlicedStatus::Ok);
        assert!(take(stats).contains("\"classified\":3"));
        unsafe { sliced_model_free(m) };
    }

    #[test]
    fn plan_from_dead_battery() {
        let (_, m) = parse(MODEL);
        let fails = CString::new("Battery1=dead").unwrap();
        let goal = CString::new("Battery1.state = nominal").unwrap();
        let mut found = false;
        let mut trace = ptr::null_mut();
        let s = unsafe { sliced_model_plan(m, fails.as_ptr(), goal.as_ptr(), &mut found, &mut trace) };
        assert_eq!(s, SlicedStatus::Ok);
        assert!(found);
        assert!(take(trace).contains("Battery1.state = underRepair"));
        unsafe { sliced_model_free(m) };
    }

    #[test]
    fn errors_are_reported() {
        let (s, m) = parse("{not json");
        assert_eq!(s, SlicedStatus::InvalidInput);
        assert!(m.is_null());
        let msg = unsafe { CStr::from_ptr(sliced_last_error()) }.to_str().unwrap();
        assert!(msg.contains("syntax error"), "{msg}");
        let mut v = 0;
        assert_eq!(
            unsafe { sliced_model_check_auto(ptr::null(), &mut v, ptr::null_mut()) },
            SlicedStatus::NullArgument
        );
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { sliced_model_parse(ptr::null(), ptr::null(), &mut out) }, SlicedStatus::NullArgument);
        let (_, m) = parse(MODEL);
        let fails = CString::new("Battery1").unwrap();
        let goal = CString::new("Battery1.state = nominal").unwrap();
        let mut found = false;
        let s = unsafe { sliced_model_plan(m, fails.as_ptr(), goal.as_ptr(), &mut found, ptr::null_mut()) };
        assert_eq!(s, SlicedStatus::InvalidInput);
        unsafe { sliced_model_free(m) };
    }

    #[test]
    fn version_is_static() {
        let v = unsafe { CStr::from_ptr(sliced_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
