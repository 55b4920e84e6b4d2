//! C ABI over the seqlens engine.
//!
//! Handles are opaque pointers created by `*_new`/`*_load` and released with
//! the matching `*_free`. Functions return a [`SeqlensStatus`]; on failure
//! [`seqlens_last_error`] describes the error for the calling thread. Strings
//! handed out through `out` parameters are UTF-8 JSON and must be released
//! with [`seqlens_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use seqlens::model::attribute_summary;
use seqlens::query::TemporalQuery;
use seqlens::session::{Engine, Session};
use seqlens::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqlensStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad input: unreadable or malformed files, invalid query or budget.
    InputError = 3,
    /// Unknown node id.
    NotFound = 4,
    /// Drill-down or roll-up precondition failed.
    Conflict = 5,
    /// The session has no statistics: empty or single-outcome cohort.
    Unavailable = 6,
    Internal = 7,
}

/// A loaded dataset with its type hierarchy.
pub struct SeqlensEngine {
    engine: Arc<Engine>,
}

/// One query over an engine and the cut on display.
pub struct SeqlensSession {
    engine: Arc<Engine>,
    session: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SeqlensStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NoSuchNode(_) => SeqlensStatus::NotFound,
            Error::NotInCut(_) | Error::CannotExpandLeaf(_) | Error::CannotRollUp { .. } => SeqlensStatus::Conflict,
            Error::EmptyAlignedCohort | Error::DegenerateOutcome => SeqlensStatus::Unavailable,
            e if e.is_input_error() => SeqlensStatus::InputError,
            _ => SeqlensStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(SeqlensStatus::Internal, e.to_string())
    }
}

/// Runs `f`, turning errors and panics into a status and the thread's last
/// error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SeqlensStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SeqlensStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SeqlensStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or a valid nul-terminated string.
unsafe fn opt_str<'a>(p: *const c_char) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure(SeqlensStatus::InvalidUtf8, "argument is not valid UTF-8".into()))
}

/// # Safety
/// `p` must be null or a valid nul-terminated string.
unsafe fn req_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    opt_str(p)?.ok_or_else(|| Failure(SeqlensStatus::NullArgument, format!("{name} is null")))
}

fn null(name: &str) -> Failure {
    Failure(SeqlensStatus::NullArgument, format!("{name} is null"))
}

/// # Safety
/// `out` must be null or valid for writes.
unsafe fn write_json(out: *mut *mut c_char, value: serde_json::Value) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    let text = serde_json::to_string(&value)?;
    *out = CString::new(text).expect("JSON has no nul bytes").into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null after a
/// successful one. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn seqlens_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Engine version as a static string.
#[no_mangle]
pub extern "C" fn seqlens_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version has no nul bytes"),
    };
    VERSION.as_ptr()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seqlens_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset directory. `vocab` and `manual` are edge-file paths and
/// may be null.
///
/// # Safety
/// String arguments must be null or valid nul-terminated strings; `out` must
/// be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn seqlens_engine_load(
    dataset_dir: *const c_char,
    vocab: *const c_char,
    manual: *const c_char,
    out: *mut *mut SeqlensEngine,
) -> SeqlensStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = req_str(dataset_dir, "dataset_dir")?;
        let vocab = opt_str(vocab)?.map(Path::new);
        let manual = opt_str(manual)?.map(Path::new);
        let engine = Engine::load(Path::new(dir), vocab, manual)?;
        *out = Box::into_raw(Box::new(SeqlensEngine {
            engine: Arc::new(engine),
        }));
        Ok(())
    })
}

/// Releases an engine. Sessions created from it stay valid. Null is ignored.
///
/// # Safety
/// `engine` must be null or a handle from [`seqlens_engine_load`], not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn seqlens_engine_free(engine: *mut SeqlensEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Cohort attribute summary as JSON.
///
/// # Safety
/// `engine` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn seqlens_engine_summary_json(
    engine: *const SeqlensEngine,
    out: *mut *mut c_char,
) -> SeqlensStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        let summary = attribute_summary(&engine.engine.dataset)?;
        write_json(out, serde_json::to_value(summary)?)
    })
}

/// Runs a temporal query (JSON) and selects the initial cut within `budget`.
///
/// # Safety
/// `engine` must be a live handle, `query_json` a valid nul-terminated
/// string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn seqlens_session_new(
    engine: *const SeqlensEngine,
    query_json: *const c_char,
    budget: usize,
    out: *mut *mut SeqlensSession,
) -> SeqlensStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let query = TemporalQuery::from_json(req_str(query_json, "query_json")?)?;
        let session = Session::new(&engine.engine, "ffi".into(), query, budget)?;
        *out = Box::into_raw(Box::new(SeqlensSession {
            engine: engine.engine.clone(),
            session,
        }));
        Ok(())
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `session` must be null or a handle from [`seqlens_session_new`], not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn seqlens_session_free(session: *mut SeqlensSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Matched and unmatched patient counts.
///
/// # Safety
/// `session` must be a live handle; the out pointers must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn seqlens_session_counts(
    session: *const SeqlensSession,
    matched: *mut usize,
    unmatched: *mut usize,
) -> SeqlensStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        if matched.is_null() || unmatched.is_null() {
            return Err(null("matched/unmatched"));
        }
        *matched = s.session.matched();
        *unmatched = s.session.unmatched();
        Ok(())
    })
}

/// Scatter points of the current cut as a JSON array. A nonzero `budget`
/// different from the current one reselects the cut first.
///
/// # Safety
/// `session` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn seqlens_session_scatter_json(
    session: *mut SeqlensSession,
    budget: usize,
    out: *mut *mut c_char,
) -> SeqlensStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let points = s.session.scatter(&s.engine, (budget > 0).then_some(budget))?;
        write_json(out, serde_json::to_value(points)?)
    })
}

/// Replaces `node_id` in the cut by its children; writes the new points.
///
/// # Safety
/// `session` must be a live handle, `node_id` a valid nul-terminated string
/// and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn seqlens_session_drill_down_json(
    session: *mut SeqlensSession,
    node_id: *const c_char,
    out: *mut *mut c_char,
) -> SeqlensStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let points = s.session.drill_down(&s.engine, req_str(node_id, "node_id")?)?;
        write_json(out, serde_json::to_value(points)?)
    })
}

/// Collapses the cut nodes below `node_id` into it; writes the new points.
///
/// # Safety
/// As for [`seqlens_session_drill_down_json`].
#[no_mangle]
pub unsafe extern "C" fn seqlens_session_roll_up_json(
    session: *mut SeqlensSession,
    node_id: *const c_char,
    out: *mut *mut c_char,
) -> SeqlensStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let points = s.session.roll_up(&s.engine, req_str(node_id, "node_id")?)?;
        write_json(out, serde_json::to_value(points)?)
    })
}

/// Hierarchy nodes whose label contains `query`, with their statistics.
///
/// # Safety
/// `session` must be a live handle, `query` a valid nul-terminated string
/// and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn seqlens_session_search_json(
    session: *const SeqlensSession,
    query: *const c_char,
    out: *mut *mut c_char,
) -> SeqlensStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let hits = s.session.search(&s.engine, req_str(query, "query")?);
        write_json(out, serde_json::to_value(hits)?)
    })
}
