use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use proada::corpus::{Checker, Corpus, RequirementDoc};
use proada::dialog::{
    formulate_question, read_log, recorded_answers, AgentAction, DecisionSource, EngineError,
    IngestOutcome, Session, TurnOutcome,
};
use proada::features::{FeatureSchema, FeatureStore, KeyPath, ScopePattern, SlotConstraint, Value};
use proada::llm::{Gateway, Matcher, MockProvider, MockReply, MockRule, RetryPolicy};
use proada::rules::{evaluate, parse_program, EvalOutcome};
use proada::usersim::{HouseholdProfile, OracleUser, ScriptedUser};

fn corpus() -> Corpus {
    Corpus::load_dir(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus/rules")).unwrap()
}

fn pick(ids: &[&str]) -> Vec<Checker> {
    corpus()
        .select(&ids.iter().map(|s| s.to_string()).collect::<Vec<_>>())
        .unwrap()
}

fn mock() -> Arc<Gateway> {
    Arc::new(Gateway::mock(MockProvider::builtin(0)))
}

fn gateway(rules: Vec<MockRule>) -> Arc<Gateway> {
    Arc::new(Gateway::mock(MockProvider::new(rules)))
}

fn checker(id: &str, src: &str, slots: &[(ScopePattern, &str, SlotConstraint)]) -> Checker {
    let mut schema = FeatureSchema::new();
    for (scope, key, c) in slots {
        schema.insert(*scope, key, c.clone()).unwrap();
    }
    Checker {
        program: Arc::new(parse_program(src, id).unwrap()),
        schema: Arc::new(schema),
        requirements: Some(RequirementDoc::new(
            id,
            id,
            format!("Requirements for {id}."),
        )),
    }
}

fn member(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn s(v: &str) -> Value {
    Value::Str(v.into())
}

fn foster_youth() -> HouseholdProfile {
    HouseholdProfile {
        members: vec![member(&[
            ("age", Value::Int(17)),
            ("in_foster_care", s("yes")),
            ("homeless_or_runaway", s("no")),
            ("registered_selective_service", s("no")),
            ("employed", s("no")),
        ])],
        household: BTreeMap::from([("lives_in_nyc".to_string(), s("yes"))]),
    }
}

/// Evaluate every checker against the answers stored before each turn and
/// require that one of them was missing exactly the key asked about.
fn assert_questions_necessary(session: &Session, checkers: &[Checker]) {
    let schema = Arc::new(session.store().schema().clone());
    let mut store = FeatureStore::new(schema);
    for turn in session.transcript() {
        let wanted = checkers.iter().any(|c| {
            matches!(evaluate(&c.program, &store), Ok(EvalOutcome::Missing { ref key, .. }) if *key == turn.key)
        });
        assert!(wanted, "nothing was missing {} when it was asked", turn.key);
        if let Some(v) = &turn.extracted {
            store.put(&turn.key, &v.to_string()).unwrap();
        }
    }
}

#[test]
fn foster_care_answer_skips_the_homeless_question() {
    let checkers = pick(&["TrainEarn"]);
    let mut session = Session::open("s", checkers.clone(), mock()).unwrap();
    let decisions = session
        .run_with(&mut OracleUser::new(&foster_youth()))
        .unwrap();
    assert!(decisions["TrainEarn"]);
    let asked: Vec<&str> = session
        .transcript()
        .iter()
        .map(|t| t.key.key.as_str())
        .collect();
    assert_eq!(asked, ["lives_in_nyc", "size", "age", "in_foster_care"]);
    assert!(!asked.contains(&"homeless_or_runaway"));
    // a 17-year-old is never asked about selective service either
    assert!(!asked.contains(&"registered_selective_service"));
    assert_eq!(session.budget().used, session.transcript().len());
    assert_questions_necessary(&session, &checkers);
}

#[test]
fn constant_checkers_conclude_without_questions() {
    let mut session = Session::open("s", pick(&["ResourceGuide"]), mock()).unwrap();
    assert_eq!(
        session.step().unwrap(),
        AgentAction::Conclude(BTreeMap::from([("ResourceGuide".to_string(), true)]))
    );
    assert_eq!(session.budget().used, 0);
    let all_false = checker("F", "return false", &[]);
    let mut session = Session::open("s", vec![all_false], mock()).unwrap();
    assert!(matches!(session.step().unwrap(), AgentAction::Conclude(d) if !d["F"]));
}

#[test]
fn first_miss_becomes_a_question() {
    let c = checker(
        "Rent",
        "return hh[\"monthly_rent\"] > 1000",
        &[(
            ScopePattern::Household,
            "monthly_rent",
            SlotConstraint::real(),
        )],
    );
    let mut session = Session::open("s", vec![c], mock()).unwrap();
    let AgentAction::Ask(q) = session.step().unwrap() else {
        panic!("expected a question");
    };
    assert!(q.contains("monthly rent"), "{q}");
    assert_eq!(
        session.pending().unwrap().key,
        KeyPath::household("monthly_rent")
    );
    assert!(matches!(session.step(), Err(EngineError::QuestionPending)));
}

#[test]
fn member_questions_name_the_person_and_never_show_raw_keys() {
    let g = mock();
    let q = formulate_question(
        &g,
        &KeyPath::member(1, "age"),
        "if hh[1][\"age\"] > 3 {",
        "R",
    )
    .unwrap();
    assert!(q.contains("person 1"), "{q}");
    let q =
        formulate_question(&g, &KeyPath::household_size(), "for m in household {", "R").unwrap();
    assert!(q.to_lowercase().contains("how many people"), "{q}");

    // a model that leaves out the member gets the template question instead
    let g = gateway(vec![MockRule::contains(
        "Ask a question to the user",
        &["What is the in_foster_care value?"],
    )]);
    let q = formulate_question(&g, &KeyPath::member(2, "in_foster_care"), "", "R").unwrap();
    assert_eq!(q, "What is the in foster care of person 2?");

    // lint over full mock transcripts
    let corpus = corpus();
    let all: Vec<Checker> = corpus.checkers().cloned().collect();
    let hh = HouseholdProfile {
        members: vec![
            member(&[
                ("age", Value::Int(30)),
                ("employed", s("yes")),
                ("work_hours_per_week", Value::Int(35)),
                ("in_foster_care", s("no")),
                ("homeless_or_runaway", s("no")),
                ("registered_selective_service", s("yes")),
                ("pregnant", s("no")),
                ("disabled", s("no")),
                ("student", s("no")),
                ("veteran", s("no")),
                ("us_citizen", s("yes")),
                ("relation", s("other")),
            ]),
            member(&[
                ("age", Value::Int(4)),
                ("employed", s("no")),
                ("work_hours_per_week", Value::Int(0)),
                ("in_foster_care", s("no")),
                ("homeless_or_runaway", s("no")),
                ("registered_selective_service", s("no")),
                ("pregnant", s("no")),
                ("disabled", s("no")),
                ("student", s("yes")),
                ("veteran", s("no")),
                ("us_citizen", s("yes")),
                ("relation", s("child")),
            ]),
        ],
        household: BTreeMap::from([
            ("annual_income".to_string(), Value::Real(42000.0)),
            ("monthly_rent".to_string(), Value::Real(1500.0)),
            ("lives_in_nyc".to_string(), s("yes")),
            ("receives_snap".to_string(), s("no")),
            ("public_housing".to_string(), s("no")),
            ("pays_heating_bill".to_string(), s("yes")),
        ]),
    };
    let ids: Vec<String> = all.iter().take(5).map(|c| c.id().to_string()).collect();
    let mut session = Session::open("lint", corpus.select(&ids).unwrap(), mock()).unwrap();
    session.run_with(&mut OracleUser::new(&hh)).unwrap();
    assert!(!session.transcript().is_empty());
    for t in session.transcript() {
        assert!(
            !t.question.contains(&t.key.key) || !t.key.key.contains('_'),
            "{}",
            t.question
        );
        if let Some(i) = t.key.member_index() {
            assert!(
                t.question.contains(&format!("person {i}")),
                "{}",
                t.question
            );
        }
    }
}

fn pending_session(key: KeyPath, slot: SlotConstraint) -> Session {
    let (scope, src) = match key.member_index() {
        Some(_) => (
            ScopePattern::Member,
            format!("return hh[0][\"{}\"] == \"yes\"", key.key),
        ),
        None => (
            ScopePattern::Household,
            format!("return hh[\"{}\"] > 1", key.key),
        ),
    };
    let c = checker("T", &src, &[(scope, &key.key, slot)]);
    let mut session = Session::open("s", vec![c], mock()).unwrap();
    assert!(matches!(session.step().unwrap(), AgentAction::Ask(_)));
    session
}

#[test]
fn verbose_answer_maps_onto_a_choice() {
    let mut session = pending_session(
        KeyPath::member(0, "homeless_or_runaway"),
        SlotConstraint::yes_no(),
    );
    assert_eq!(
        session.ingest_answer("I am a homeless youth").unwrap(),
        IngestOutcome::Stored(s("yes"))
    );
    assert_eq!(session.budget().used, 1);
    assert!(session.pending().is_none());
}

#[test]
fn multi_hop_answer_maps_onto_household_size() {
    let mut session = pending_session(
        KeyPath::household_size(),
        SlotConstraint::integer_between(1, 20),
    );
    assert_eq!(
        session
            .ingest_answer("I don't live with anyone else")
            .unwrap(),
        IngestOutcome::Stored(Value::Int(1))
    );
}

#[test]
fn misspelled_number_starts_the_clarity_loop() {
    let mut session = pending_session(
        KeyPath::household_size(),
        SlotConstraint::integer_between(1, 20),
    );
    let outcome = session.ingest_answer("onee").unwrap();
    let IngestOutcome::Clarify(q) = outcome else {
        panic!("expected a clarification, got {outcome:?}");
    };
    assert!(q.contains("How many people"), "{q}");
    let p = session.pending().unwrap();
    assert_eq!(p.clarity_attempts_used, 1);
    assert_eq!(p.question, q);
    assert_eq!(session.budget().used, 2);
    assert_eq!(session.transcript()[0].outcome, TurnOutcome::Clarified);
    // a good answer to the clarification goes through
    assert!(matches!(session.answer("two").unwrap(), AgentAction::Conclude(d) if d["T"]));
    assert_eq!(session.budget().used, 2);
}

#[test]
fn three_failed_clarifications_abandon_the_key() {
    let c = checker(
        "T",
        "return hh[\"size\"] > 1",
        &[(
            ScopePattern::Household,
            "size",
            SlotConstraint::integer_between(1, 20),
        )],
    );
    let g = gateway(vec![MockRule::contains(
        "Return only a boolean array",
        &["[true]"],
    )]);
    let mut session = Session::open("s", vec![c], g).unwrap();
    let mut user = ScriptedUser::new(["banana"]);
    let decisions = session.run_with(&mut user).unwrap();
    let outcomes: Vec<TurnOutcome> = session.transcript().iter().map(|t| t.outcome).collect();
    assert_eq!(
        outcomes,
        [
            TurnOutcome::Clarified,
            TurnOutcome::Clarified,
            TurnOutcome::Clarified,
            TurnOutcome::Abandoned
        ]
    );
    assert_eq!(session.budget().used, 4);
    assert!(session.unanswerable().contains(&KeyPath::household_size()));
    assert!(decisions["T"]);
    assert_eq!(session.sources()["T"], DecisionSource::Predicted);
}

fn never_answerable(id: &str) -> Checker {
    checker(
        id,
        "return hh[\"x\"] > 1",
        &[(ScopePattern::Household, "x", SlotConstraint::integer())],
    )
}

#[test]
fn fallback_makes_no_call_when_everything_is_decided() {
    let g = Arc::new(Gateway::mock(MockProvider::builtin(0)).with_memory_audit());
    let mut session = Session::open("s", pick(&["ResourceGuide", "FairFares"]), g.clone()).unwrap();
    let hh = HouseholdProfile {
        members: vec![member(&[("age", Value::Int(30))])],
        household: BTreeMap::from([
            ("lives_in_nyc".to_string(), s("no")),
            ("annual_income".to_string(), Value::Real(10000.0)),
        ]),
    };
    session.run_with(&mut OracleUser::new(&hh)).unwrap();
    assert!(!session.transcript().is_empty());
    assert!(session
        .sources()
        .values()
        .all(|s| *s == DecisionSource::Computed));
    assert!(!g.audit_entries().is_empty());
    assert!(!g.audit_entries().iter().any(|e| e
        .request
        .transcript_text()
        .contains("Return only a boolean array")));
}

#[test]
fn fallback_predicts_only_the_undecided() {
    let g = Arc::new(
        Gateway::mock(MockProvider::new(vec![MockRule::contains(
            "Return only a boolean array",
            &["[true]"],
        )]))
        .with_memory_audit(),
    );
    let checkers = vec![
        never_answerable("Blocked"),
        checker("Decided", "return false", &[]),
    ];
    let mut session = Session::open("s", checkers, g.clone()).unwrap();
    let d = session
        .run_with(&mut ScriptedUser::new(["no idea"]))
        .unwrap();
    assert_eq!(
        d,
        BTreeMap::from([("Blocked".into(), true), ("Decided".into(), false)])
    );
    let predicts: Vec<_> = g
        .audit_entries()
        .into_iter()
        .filter(|e| {
            e.request
                .transcript_text()
                .contains("Return only a boolean array")
        })
        .collect();
    assert_eq!(predicts.len(), 1);
    assert!(predicts[0].request.transcript_text().contains("length 1"));
}

#[test]
fn fallback_defaults_to_false_when_the_gateway_is_down() {
    let g = Arc::new(
        Gateway::mock(MockProvider::new(vec![MockRule::new(
            Matcher::Contains("Return only a boolean array".into()),
            vec![MockReply::Transport],
        )]))
        .with_retry(RetryPolicy::none()),
    );
    let checkers = vec![
        never_answerable("A"),
        never_answerable("B"),
        checker("C", "return true", &[]),
    ];
    let mut session = Session::open("s", checkers, g).unwrap();
    let d = session
        .run_with(&mut ScriptedUser::new(["no idea"]))
        .unwrap();
    assert_eq!(
        d,
        BTreeMap::from([("A".into(), false), ("B".into(), false), ("C".into(), true)])
    );
    assert_eq!(session.sources()["A"], DecisionSource::DefaultFalse);
    assert_eq!(session.sources()["C"], DecisionSource::Computed);
    assert!(!session.warnings().is_empty());
}

#[test]
fn conflicting_schemas_are_rejected() {
    let a = checker(
        "A",
        "return hh[0][\"age\"] > 3",
        &[(ScopePattern::Member, "age", SlotConstraint::integer())],
    );
    let b = checker(
        "B",
        "return hh[0][\"age\"] == \"old\"",
        &[(
            ScopePattern::Member,
            "age",
            SlotConstraint::choice(["old", "young"]),
        )],
    );
    let err = Session::open("s", vec![a, b], mock()).unwrap_err();
    assert!(matches!(err, EngineError::Schema(_)), "{err}");
}

#[test]
fn shared_keys_are_asked_once() {
    let checkers = pick(&["UniversalPreK", "ThreeK", "SummerYouthEmployment"]);
    let hh = HouseholdProfile {
        members: vec![
            member(&[("age", Value::Int(40))]),
            member(&[("age", Value::Int(4))]),
        ],
        household: BTreeMap::from([("lives_in_nyc".to_string(), s("yes"))]),
    };
    let mut session = Session::open("s", checkers.clone(), mock()).unwrap();
    let d = session.run_with(&mut OracleUser::new(&hh)).unwrap();
    assert_eq!(
        d,
        BTreeMap::from([
            ("SummerYouthEmployment".into(), false),
            ("ThreeK".into(), false),
            ("UniversalPreK".into(), true),
        ])
    );
    let mut keys: Vec<String> = session
        .transcript()
        .iter()
        .map(|t| t.key.to_string())
        .collect();
    let n = keys.len();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), n, "a key was asked twice");
    assert_eq!(n, 4); // nyc, size, two ages
    assert_questions_necessary(&session, &checkers);
}

#[test]
fn transcripts_are_deterministic_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let mut session = Session::open("fixed", pick(&["TrainEarn", "SNAP", "WIC"]), mock())
            .unwrap()
            .with_log(&path)
            .unwrap();
        session
            .run_with(&mut OracleUser::new(&foster_youth_with_income()))
            .unwrap();
        (
            std::fs::read_to_string(&path).unwrap(),
            session.transcript().to_vec(),
        )
    };
    let (a, ta) = run("a.jsonl");
    let (b, _) = run("b.jsonl");
    assert_eq!(a, b);
    let records = read_log(&dir.path().join("a.jsonl")).unwrap();
    let answers = recorded_answers(&records);
    let mut replay = Session::open("fixed", pick(&["TrainEarn", "SNAP", "WIC"]), mock()).unwrap();
    replay.run_with(&mut ScriptedUser::new(answers)).unwrap();
    assert_eq!(replay.transcript(), ta.as_slice());
}

fn foster_youth_with_income() -> HouseholdProfile {
    let mut hh = foster_youth();
    hh.members[0].insert("pregnant".into(), s("no"));
    hh.household
        .insert("annual_income".into(), Value::Real(12000.0));
    hh.household.insert("receives_snap".into(), s("no"));
    hh
}

#[test]
fn rationale_lists_the_executed_conditions() {
    let mut session = Session::open("s", pick(&["TrainEarn"]), mock()).unwrap();
    session
        .run_with(&mut OracleUser::new(&foster_youth()))
        .unwrap();
    let r = &session.rationale()["TrainEarn"];
    assert!(
        r.iter()
            .any(|l| l.contains("in_foster_care") && l.ends_with("true")),
        "{r:?}"
    );
    assert_eq!(r.last().unwrap(), "return true");
}

fn long_checker(id: &str, keys: usize) -> Checker {
    let names: Vec<String> = (0..keys)
        .map(|i| format!("{}_q{i}", id.to_lowercase()))
        .collect();
    let mut src = String::new();
    for n in &names {
        src.push_str(&format!("if hh[\"{n}\"] > 100 {{\n    return false\n}}\n"));
    }
    src.push_str("return true\n");
    let slots: Vec<(ScopePattern, &str, SlotConstraint)> = names
        .iter()
        .map(|n| {
            (
                ScopePattern::Household,
                n.as_str(),
                SlotConstraint::integer(),
            )
        })
        .collect();
    checker(id, &src, &slots)
}

#[test]
fn turn_budget_is_twenty_per_opportunity_capped_at_one_hundred() {
    for (k, expected) in [(1usize, 20usize), (5, 100), (10, 100)] {
        let checkers: Vec<Checker> = (0..k).map(|i| long_checker(&format!("L{i}"), 30)).collect();
        let mut session = Session::open("s", checkers, mock()).unwrap();
        assert_eq!(session.budget().max_turns, expected);
        session.run_with(&mut ScriptedUser::new(["3"])).unwrap();
        assert_eq!(session.budget().used, expected, "k = {k}");
        assert_eq!(session.transcript().len(), expected);
        assert!(session.is_concluded());
    }
}

mod common;

#[test]
fn fixture_households_are_screened_exactly_and_only_along_their_paths() {
    let corpus = common::corpus();
    let ids: Vec<String> = common::E2E_OPPORTUNITIES
        .iter()
        .map(|s| s.to_string())
        .collect();
    for (i, hh) in common::e2e_households().iter().enumerate() {
        let mut session =
            Session::open(format!("h{i}"), corpus.select(&ids).unwrap(), mock()).unwrap();
        let decisions = session.run_with(&mut OracleUser::new(hh)).unwrap();
        for c in corpus.select(&ids).unwrap() {
            let gold = matches!(
                evaluate(&c.program, hh).unwrap(),
                EvalOutcome::Decision { eligible: true, .. }
            );
            assert_eq!(decisions[c.id()], gold, "household {i} {}", c.id());
            assert_eq!(session.sources()[c.id()], DecisionSource::Computed);
        }
        let on_path = common::realized_keys(&corpus, &ids, hh);
        for t in session.transcript() {
            assert!(
                on_path.contains(&t.key),
                "household {i}: {} is off the path",
                t.key
            );
        }
    }
}

#[test]
fn never_ending_checkers_still_get_a_full_decision_vector() {
    let checkers: Vec<Checker> = (0..5).map(|i| long_checker(&format!("N{i}"), 40)).collect();
    let mut session = Session::open("s", checkers, mock()).unwrap();
    let d = session.run_with(&mut ScriptedUser::new(["7"])).unwrap();
    assert_eq!(session.budget().used, 100);
    assert_eq!(d.len(), 5);
    // 100 answers settle the first two 40-question checkers
    let computed = session
        .sources()
        .values()
        .filter(|s| **s == DecisionSource::Computed)
        .count();
    assert_eq!(computed, 2);
}
