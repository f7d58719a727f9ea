//! C ABI over the proada engine.
//!
//! Every fallible call returns a [`ProadaStatus`]; on failure the message is
//! available from [`proada_last_error`] on the same thread. Strings handed
//! out by this library must be released with [`proada_string_free`], and
//! each handle with its own `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde_json::json;

use proada::bench::{micro_f1, turn_weighted_f1};
use proada::corpus::Corpus;
use proada::dialog::{EngineError, Session};
use proada::llm::{Gateway, HttpProvider, MockProvider};
use proada::rules::{evaluate, parse_program, pretty_print, EvalOutcome, RuleProgram};
use proada::service::ApiSession;
use proada::usersim::HouseholdProfile;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProadaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    ParseError = 4,
    EvalError = 5,
    CorpusError = 6,
    ProviderError = 7,
    SessionError = 8,
    SessionConcluded = 9,
    Panic = 10,
}

/// A parsed rule program.
pub struct ProadaProgram(RuleProgram);

/// A directory of checkers.
pub struct ProadaCorpus(Corpus);

/// A live dialog session.
pub struct ProadaSession(Session);

/// Micro-averaged scores on the 0-100 scale.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ProadaF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ProadaStatus, String);

impl Failure {
    fn new(status: ProadaStatus, message: impl ToString) -> Self {
        Self(status, message.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match e {
            EngineError::Concluded => ProadaStatus::SessionConcluded,
            EngineError::Gateway(_) => ProadaStatus::ProviderError,
            _ => ProadaStatus::SessionError,
        };
        Self::new(status, e)
    }
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ProadaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ProadaStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ProadaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            ProadaStatus::NullArgument,
            format!("`{name}` is null"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(ProadaStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(ProadaStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(ProadaStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(ProadaStatus::NullArgument, "`out` is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(ProadaStatus::NullArgument, "`out` is null"));
    }
    *out = CString::new(s.replace('\0', " "))
        .expect("nul bytes removed")
        .into_raw();
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// The message for the last failed call on this thread, or null. Valid
/// until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn proada_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn proada_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse rule source for `opportunity_id` into a program handle.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proada_program_parse(
    source: *const c_char,
    opportunity_id: *const c_char,
    out: *mut *mut ProadaProgram,
) -> ProadaStatus {
    guard(|| {
        let source = str_arg(source, "source")?;
        let id = str_arg(opportunity_id, "opportunity_id")?;
        let program =
            parse_program(source, id).map_err(|e| Failure::new(ProadaStatus::ParseError, e))?;
        put(out, ProadaProgram(program))
    })
}

/// # Safety
/// `program` must be null or a handle from [`proada_program_parse`].
#[no_mangle]
pub unsafe extern "C" fn proada_program_free(program: *mut ProadaProgram) {
    free(program)
}

/// Canonical source text of a program.
///
/// # Safety
/// `program` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proada_program_pretty(
    program: *const ProadaProgram,
    out: *mut *mut c_char,
) -> ProadaStatus {
    guard(|| put_string(out, pretty_print(&ref_arg(program, "program")?.0)))
}

/// Evaluate a program against a household profile given as JSON
/// (`{"members":[{...}],"household":{...}}`). Writes
/// `{"outcome":"decision","eligible":b,"trace":[ids]}` or
/// `{"outcome":"missing","key":"...","node":n}`.
///
/// # Safety
/// `program` must be a live handle; `household_json` NUL-terminated; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn proada_program_evaluate(
    program: *const ProadaProgram,
    household_json: *const c_char,
    out: *mut *mut c_char,
) -> ProadaStatus {
    guard(|| {
        let program = &ref_arg(program, "program")?.0;
        let household: HouseholdProfile =
            serde_json::from_str(str_arg(household_json, "household_json")?)
                .map_err(|e| Failure::new(ProadaStatus::InvalidJson, e))?;
        let value = match evaluate(program, &household)
            .map_err(|e| Failure::new(ProadaStatus::EvalError, e))?
        {
            EvalOutcome::Decision { eligible, trace } => {
                json!({"outcome": "decision", "eligible": eligible, "trace": trace})
            }
            EvalOutcome::Missing { key, node } => {
                json!({"outcome": "missing", "key": key.to_string(), "node": node})
            }
        };
        put_string(out, value.to_string())
    })
}

/// F1 discounted by mean turns, both on the 0-100 scale.
#[no_mangle]
pub extern "C" fn proada_turn_weighted_f1(f1: f64, turns: f64) -> f64 {
    turn_weighted_f1(f1, turns)
}

/// Micro-averaged precision, recall and F1 over `n` prediction/gold pairs.
///
/// # Safety
/// `predictions` and `gold` must each point to `n` readable bools.
#[no_mangle]
pub unsafe extern "C" fn proada_micro_f1(
    predictions: *const bool,
    gold: *const bool,
    n: usize,
    out: *mut ProadaF1,
) -> ProadaStatus {
    guard(|| {
        if predictions.is_null() || gold.is_null() {
            return Err(Failure::new(
                ProadaStatus::NullArgument,
                "`predictions` or `gold` is null",
            ));
        }
        let out = mut_arg(out, "out")?;
        let p = std::slice::from_raw_parts(predictions, n);
        let g = std::slice::from_raw_parts(gold, n);
        let pairs: Vec<(bool, bool)> = p.iter().copied().zip(g.iter().copied()).collect();
        let s = micro_f1(&pairs)
            .ok_or_else(|| Failure::new(ProadaStatus::EvalError, "no pairs to score"))?;
        *out = ProadaF1 {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            degenerate: s.degenerate,
        };
        Ok(())
    })
}

/// Load every `*.rule` with its schema from a directory.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn proada_corpus_load(
    dir: *const c_char,
    out: *mut *mut ProadaCorpus,
) -> ProadaStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let corpus = Corpus::load_dir(Path::new(dir))
            .map_err(|e| Failure::new(ProadaStatus::CorpusError, e))?;
        put(out, ProadaCorpus(corpus))
    })
}

/// # Safety
/// `corpus` must be null or a handle from [`proada_corpus_load`]. Sessions
/// opened from it stay valid after it is freed.
#[no_mangle]
pub unsafe extern "C" fn proada_corpus_free(corpus: *mut ProadaCorpus) {
    free(corpus)
}

static SESSION_COUNTER: AtomicU64 = AtomicU64::new(0);

unsafe fn open_session(
    corpus: *const ProadaCorpus,
    opportunity_ids_json: *const c_char,
    gateway: impl FnOnce() -> Result<Gateway, Failure>,
    out: *mut *mut ProadaSession,
) -> Result<(), Failure> {
    let corpus = &ref_arg(corpus, "corpus")?.0;
    let ids: Vec<String> =
        serde_json::from_str(str_arg(opportunity_ids_json, "opportunity_ids_json")?)
            .map_err(|e| Failure::new(ProadaStatus::InvalidJson, e))?;
    let checkers = corpus
        .select(&ids)
        .map_err(|e| Failure::new(ProadaStatus::CorpusError, e))?;
    let id = format!("ffi-{}", SESSION_COUNTER.fetch_add(1, Ordering::Relaxed));
    let session = Session::open(id, checkers, Arc::new(gateway()?))?;
    put(out, ProadaSession(session))
}

/// Open a session over the opportunities named in a JSON array, answered
/// by the built-in deterministic mock provider.
///
/// # Safety
/// `corpus` must be a live handle; `opportunity_ids_json` NUL-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn proada_session_open_mock(
    corpus: *const ProadaCorpus,
    opportunity_ids_json: *const c_char,
    seed: u64,
    out: *mut *mut ProadaSession,
) -> ProadaStatus {
    guard(|| {
        open_session(
            corpus,
            opportunity_ids_json,
            || Ok(Gateway::mock(MockProvider::builtin(seed))),
            out,
        )
    })
}

/// Like [`proada_session_open_mock`] but talks to the chat endpoint named by
/// `PROVIDER_BASE_URL`, authenticating with `PROVIDER_API_KEY`.
///
/// # Safety
/// As for [`proada_session_open_mock`].
#[no_mangle]
pub unsafe extern "C" fn proada_session_open_http(
    corpus: *const ProadaCorpus,
    opportunity_ids_json: *const c_char,
    out: *mut *mut ProadaSession,
) -> ProadaStatus {
    guard(|| {
        open_session(
            corpus,
            opportunity_ids_json,
            || {
                let provider = HttpProvider::from_env()
                    .map_err(|e| Failure::new(ProadaStatus::ProviderError, e))?;
                Ok(Gateway::new(Arc::new(provider)))
            },
            out,
        )
    })
}

/// # Safety
/// `session` must be null or a handle from a `proada_session_open_*` call.
#[no_mangle]
pub unsafe extern "C" fn proada_session_free(session: *mut ProadaSession) {
    free(session)
}

fn view(session: &Session) -> String {
    serde_json::to_string(&ApiSession::from_session(session)).expect("session view serializes")
}

/// Advance to the first question or to the decisions, then write the
/// session state as JSON (the same shape the HTTP API returns).
///
/// # Safety
/// `session` must be a live handle not used concurrently; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn proada_session_step(
    session: *mut ProadaSession,
    out: *mut *mut c_char,
) -> ProadaStatus {
    guard(|| {
        let session = &mut mut_arg(session, "session")?.0;
        session.step()?;
        put_string(out, view(session))
    })
}

/// Answer the pending question and advance; writes the new state as JSON.
///
/// # Safety
/// `session` must be a live handle not used concurrently; `text`
/// NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn proada_session_answer(
    session: *mut ProadaSession,
    text: *const c_char,
    out: *mut *mut c_char,
) -> ProadaStatus {
    guard(|| {
        let session = &mut mut_arg(session, "session")?.0;
        let text = str_arg(text, "text")?;
        session.answer(text)?;
        put_string(out, view(session))
    })
}

/// Current session state as JSON without advancing.
///
/// # Safety
/// `session` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn proada_session_state(
    session: *const ProadaSession,
    out: *mut *mut c_char,
) -> ProadaStatus {
    guard(|| put_string(out, view(&ref_arg(session, "session")?.0)))
}
