//! C ABI over the condid prompt, parsing and scoring primitives.
//!
//! Strings cross the boundary as NUL-terminated UTF-8. Every string handed
//! out through an `out` pointer is owned by the caller and must be released
//! with [`condid_string_free`]. Structured values (instruction records,
//! affective profiles, labels, metric reports) travel as JSON.
//!
//! On failure a function returns a non-zero [`CondidStatus`] and stores a
//! message retrievable with [`condid_last_error`] on the same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use condid::affect::{format_affective_block, AffectiveProfile};
use condid::inference::wrap_completion_prompt;
use condid::instructions::{render_prompt, InstructionRecord, TaskId};
use condid::scoring::{class_names, compute_multilabel_metrics, compute_single_label_metrics, parse_response, Label};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidTask = 3,
    InvalidJson = 4,
    /// A gold label handed to a scorer did not parse.
    InvalidGold = 5,
    /// Metrics could not be computed, e.g. nothing was pushed.
    Metrics = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(message).ok());
}

struct Failure(CondidStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> CondidStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CondidStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CondidStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(CondidStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(CondidStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_str(out: *mut *mut c_char, value: String) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure(CondidStatus::NullPointer, "output pointer is NULL".into()));
    }
    let c = CString::new(value).map_err(|e| Failure(CondidStatus::InvalidUtf8, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn task(n: u8) -> FfiResult<TaskId> {
    TaskId::try_from(n).map_err(|e| Failure(CondidStatus::InvalidTask, e))
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> FfiResult<T> {
    serde_json::from_str(s).map_err(|e| Failure(CondidStatus::InvalidJson, format!("{what}: {e}")))
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next condid call on the same thread.
#[no_mangle]
pub extern "C" fn condid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn condid_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn condid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a free-text model reply for `task` (1-5). Writes the label as
/// JSON to `out_label` and whether the reply was usable to `out_compliant`.
#[no_mangle]
pub unsafe extern "C" fn condid_parse_response(
    task_number: u8,
    response: *const c_char,
    out_label: *mut *mut c_char,
    out_compliant: *mut bool,
) -> CondidStatus {
    guard(|| {
        let task = task(task_number)?;
        let raw = read_str(response, "response")?;
        if out_compliant.is_null() {
            return Err(Failure(CondidStatus::NullPointer, "out_compliant is NULL".into()));
        }
        let parsed = parse_response(task, raw);
        let json = serde_json::to_string(&parsed.label).expect("labels serialize");
        write_str(out_label, json)?;
        *out_compliant = parsed.compliant;
        Ok(())
    })
}

/// Renders the model-facing prompt for an instruction record given as JSON.
#[no_mangle]
pub unsafe extern "C" fn condid_render_prompt(
    record_json: *const c_char,
    out_prompt: *mut *mut c_char,
) -> CondidStatus {
    guard(|| {
        let record: InstructionRecord = from_json(read_str(record_json, "record_json")?, "record")?;
        write_str(out_prompt, render_prompt(&record))
    })
}

/// Wraps a rendered prompt for plain completion endpoints.
#[no_mangle]
pub unsafe extern "C" fn condid_wrap_completion_prompt(prompt: *const c_char, out: *mut *mut c_char) -> CondidStatus {
    guard(|| write_str(out, wrap_completion_prompt(read_str(prompt, "prompt")?)))
}

/// Formats the affective block appended to task prompts from a profile
/// given as JSON.
#[no_mangle]
pub unsafe extern "C" fn condid_format_affective_block(
    profile_json: *const c_char,
    out_block: *mut *mut c_char,
) -> CondidStatus {
    guard(|| {
        let profile: AffectiveProfile = from_json(read_str(profile_json, "profile_json")?, "profile")?;
        if !profile.is_valid() {
            return Err(Failure(
                CondidStatus::InvalidJson,
                "profile scores must lie in [0, 1]".into(),
            ));
        }
        write_str(out_block, format_affective_block(&profile))
    })
}

/// Accumulates (gold, reply) pairs for one task and reports metrics.
pub struct CondidScorer {
    task: TaskId,
    golds: Vec<Label>,
    preds: Vec<Label>,
    non_compliant: usize,
}

/// Creates a scorer for `task` (1-5).
#[no_mangle]
pub unsafe extern "C" fn condid_scorer_new(task_number: u8, out: *mut *mut CondidScorer) -> CondidStatus {
    guard(|| {
        let task = task(task_number)?;
        if out.is_null() {
            return Err(Failure(CondidStatus::NullPointer, "output pointer is NULL".into()));
        }
        *out = Box::into_raw(Box::new(CondidScorer {
            task,
            golds: Vec::new(),
            preds: Vec::new(),
            non_compliant: 0,
        }));
        Ok(())
    })
}

/// Adds one example. `gold` is the reference answer string, `response` the
/// raw model reply. A gold that does not parse is rejected and nothing is
/// added.
#[no_mangle]
pub unsafe extern "C" fn condid_scorer_push(
    scorer: *mut CondidScorer,
    gold: *const c_char,
    response: *const c_char,
) -> CondidStatus {
    guard(|| {
        let s = scorer
            .as_mut()
            .ok_or_else(|| Failure(CondidStatus::NullPointer, "scorer is NULL".into()))?;
        let gold_text = read_str(gold, "gold")?;
        let reply = read_str(response, "response")?;
        let g = parse_response(s.task, gold_text);
        if !g.compliant {
            return Err(Failure(
                CondidStatus::InvalidGold,
                format!("`{gold_text}` is not a task {} label", s.task),
            ));
        }
        let p = parse_response(s.task, reply);
        s.non_compliant += usize::from(!p.compliant);
        s.golds.push(g.label);
        s.preds.push(p.label);
        Ok(())
    })
}

/// Number of examples pushed so far; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn condid_scorer_len(scorer: *const CondidScorer) -> usize {
    scorer.as_ref().map_or(0, |s| s.golds.len())
}

/// Writes a JSON report with `task`, `n`, `non_compliant`,
/// `non_compliance_rate` and `metrics`. The scorer stays usable.
#[no_mangle]
pub unsafe extern "C" fn condid_scorer_finish(scorer: *const CondidScorer, out_json: *mut *mut c_char) -> CondidStatus {
    guard(|| {
        let s = scorer
            .as_ref()
            .ok_or_else(|| Failure(CondidStatus::NullPointer, "scorer is NULL".into()))?;
        let names = class_names(s.task);
        let metrics = if s.task == TaskId::Topics {
            let sets = |ls: &[Label]| ls.iter().map(|l| l.topic_indices().unwrap()).collect::<Vec<_>>();
            compute_multilabel_metrics(&sets(&s.golds), &sets(&s.preds), &names)
        } else {
            let idx = |ls: &[Label]| ls.iter().map(|l| l.class_index().unwrap()).collect::<Vec<_>>();
            compute_single_label_metrics(&idx(&s.golds), &idx(&s.preds), &names)
        }
        .map_err(|e| Failure(CondidStatus::Metrics, e.to_string()))?;
        let n = s.golds.len();
        let report = serde_json::json!({
            "task": s.task,
            "n": n,
            "non_compliant": s.non_compliant,
            "non_compliance_rate": s.non_compliant as f64 / n as f64,
            "metrics": metrics,
        });
        write_str(out_json, report.to_string())
    })
}

/// Destroys a scorer. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn condid_scorer_free(scorer: *mut CondidScorer) {
    if !scorer.is_null() {
        drop(Box::from_raw(scorer));
    }
}
