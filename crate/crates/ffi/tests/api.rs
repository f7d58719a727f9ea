use std::ffi::{c_char, CStr, CString};
use std::ptr;

use proada_ffi::*;
use serde_json::Value;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Take ownership of a library string and parse it as JSON.
unsafe fn take_json(p: *mut c_char) -> Value {
    assert!(!p.is_null());
    let v = serde_json::from_str(CStr::from_ptr(p).to_str().unwrap()).unwrap();
    proada_string_free(p);
    v
}

unsafe fn last_error() -> String {
    let p = proada_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

fn corpus_dir() -> CString {
    c(concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus/rules"))
}

#[test]
fn parse_pretty_evaluate() {
    unsafe {
        let mut prog = ptr::null_mut();
        let src = c("if hh[0][\"age\"] >= 65 { return true }\nreturn false");
        assert_eq!(
            proada_program_parse(src.as_ptr(), c("Senior").as_ptr(), &mut prog),
            ProadaStatus::Ok
        );
        assert!(proada_last_error().is_null());

        let mut text = ptr::null_mut();
        assert_eq!(proada_program_pretty(prog, &mut text), ProadaStatus::Ok);
        let pretty = CStr::from_ptr(text).to_str().unwrap().to_string();
        proada_string_free(text);
        assert!(pretty.contains("age"), "{pretty}");
        assert!(pretty.contains(">= 65"), "{pretty}");

        let mut out = ptr::null_mut();
        let hh = c(r#"{"members":[{"age":70}],"household":{}}"#);
        assert_eq!(
            proada_program_evaluate(prog, hh.as_ptr(), &mut out),
            ProadaStatus::Ok
        );
        let v = take_json(out);
        assert_eq!(v["outcome"], "decision");
        assert_eq!(v["eligible"], true);
        assert!(v["trace"].as_array().unwrap().contains(&Value::from(0)));

        let empty = c(r#"{"members":[{}],"household":{}}"#);
        assert_eq!(
            proada_program_evaluate(prog, empty.as_ptr(), &mut out),
            ProadaStatus::Ok
        );
        let v = take_json(out);
        assert_eq!(v["outcome"], "missing");
        assert!(v["key"].as_str().unwrap().contains("age"));

        assert_eq!(
            proada_program_evaluate(prog, c("{").as_ptr(), &mut out),
            ProadaStatus::InvalidJson
        );
        assert!(!last_error().is_empty());
        proada_program_free(prog);
    }
}

#[test]
fn errors_and_null_arguments() {
    unsafe {
        let mut prog = ptr::null_mut();
        assert_eq!(
            proada_program_parse(c("return").as_ptr(), c("X").as_ptr(), &mut prog),
            ProadaStatus::ParseError
        );
        assert!(prog.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(
            proada_program_parse(ptr::null(), c("X").as_ptr(), &mut prog),
            ProadaStatus::NullArgument
        );
        assert!(last_error().contains("source"));
        let bad_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(
            proada_program_parse(bad_utf8.as_ptr().cast(), c("X").as_ptr(), &mut prog),
            ProadaStatus::InvalidUtf8
        );
        let mut out = ptr::null_mut();
        assert_eq!(
            proada_program_pretty(ptr::null(), &mut out),
            ProadaStatus::NullArgument
        );
        let mut corpus = ptr::null_mut();
        assert_eq!(
            proada_corpus_load(c("/nonexistent").as_ptr(), &mut corpus),
            ProadaStatus::CorpusError
        );
        // freeing null is a no-op
        proada_program_free(ptr::null_mut());
        proada_corpus_free(ptr::null_mut());
        proada_session_free(ptr::null_mut());
        proada_string_free(ptr::null_mut());
    }
}

#[test]
fn metrics() {
    unsafe {
        let pred = [true, true, false, false];
        let gold = [true, false, true, false];
        let mut s = ProadaF1::default();
        assert_eq!(
            proada_micro_f1(pred.as_ptr(), gold.as_ptr(), 4, &mut s),
            ProadaStatus::Ok
        );
        assert_eq!(
            (s.precision, s.recall, s.f1, s.degenerate),
            (50.0, 50.0, 50.0, false)
        );
        assert_eq!(
            proada_micro_f1(pred.as_ptr(), gold.as_ptr(), 0, &mut s),
            ProadaStatus::EvalError
        );
        assert!((proada_turn_weighted_f1(56.2, 20.4) - 46.68).abs() < 0.01);
    }
}

#[test]
fn mock_session_runs_to_a_decision() {
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(
            proada_corpus_load(corpus_dir().as_ptr(), &mut corpus),
            ProadaStatus::Ok
        );

        let mut session = ptr::null_mut();
        assert_eq!(
            proada_session_open_mock(corpus, c(r#"["Nope"]"#).as_ptr(), 0, &mut session),
            ProadaStatus::CorpusError
        );
        assert_eq!(
            proada_session_open_mock(corpus, c("[]").as_ptr(), 0, &mut session),
            ProadaStatus::SessionError
        );
        assert_eq!(
            proada_session_open_mock(corpus, c(r#"["FairFares"]"#).as_ptr(), 0, &mut session),
            ProadaStatus::Ok
        );
        // sessions outlive the corpus handle
        proada_corpus_free(corpus);

        let mut out = ptr::null_mut();
        assert_eq!(proada_session_step(session, &mut out), ProadaStatus::Ok);
        let mut state = take_json(out);
        let answers = ["30", "yes", "1", "20000"];
        let mut i = 0;
        while state["state"] == "awaiting_answer" {
            assert!(state["current_question"].is_string());
            let answer = c(answers[i.min(answers.len() - 1)]);
            assert_eq!(
                proada_session_answer(session, answer.as_ptr(), &mut out),
                ProadaStatus::Ok
            );
            state = take_json(out);
            i += 1;
            assert!(i < 20, "dialog did not conclude");
        }
        assert!(state["decisions"]["FairFares"].is_boolean());
        assert!(state["current_question"].is_null());

        assert_eq!(
            proada_session_answer(session, c("again").as_ptr(), &mut out),
            ProadaStatus::SessionConcluded
        );
        assert_eq!(proada_session_state(session, &mut out), ProadaStatus::Ok);
        assert_eq!(take_json(out)["state"], "concluded");
        proada_session_free(session);
    }
}
