use std::path::PathBuf;
use std::sync::Arc;

use proada::baseline::{
    BaselineError, BaselineMode, BaselineState, PromptAgent, RandomAgent, ASK_ATTEMPTS,
};
use proada::corpus::{Checker, Corpus};
use proada::llm::{Gateway, MockProvider, MockRule};
use proada::usersim::ScriptedUser;

fn checkers(ids: &[&str]) -> Vec<Checker> {
    Corpus::load_dir(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus/rules"))
        .unwrap()
        .select(&ids.iter().map(|s| s.to_string()).collect::<Vec<_>>())
        .unwrap()
}

fn gateway(rules: Vec<MockRule>) -> Arc<Gateway> {
    Arc::new(Gateway::mock(MockProvider::new(rules).with_seed(5)))
}

#[test]
fn direct_agent_asks_until_ready() {
    let g = gateway(vec![]);
    let agent = PromptAgent::new(g.clone(), BaselineMode::Direct);
    let out = agent
        .run(
            &checkers(&["SNAP", "WIC"]),
            &mut ScriptedUser::new(["yes", "3"]),
        )
        .unwrap();
    // the built-in model is ready after two answers
    assert_eq!(out.turns, 2);
    assert_eq!(out.transcript[1].1, "3");
    assert_eq!(out.predictions.keys().collect::<Vec<_>>(), ["SNAP", "WIC"]);
    // three readiness checks, two questions, one prediction
    assert_eq!(g.provider_calls(), 6);
}

#[test]
fn react_agent_reasons_before_each_constrained_call() {
    let g = gateway(vec![]);
    let agent = PromptAgent::new(g.clone(), BaselineMode::React);
    let out = agent
        .run(&checkers(&["SNAP", "WIC"]), &mut ScriptedUser::new(["no"]))
        .unwrap();
    assert_eq!(out.turns, 2);
    assert!(out.transcript.iter().all(|(q, _)| !q.contains("Question:")));
    // readiness and prediction take two calls each, questions one
    assert_eq!(g.provider_calls(), 3 * 2 + 2 + 2);
}

#[test]
fn react_question_without_marker_is_malformed() {
    let g = gateway(vec![MockRule::contains(
        "state your question after a colon",
        &["I would like to know more about the household."],
    )]);
    let state = BaselineState::new(&checkers(&["SNAP"]), BaselineMode::React);
    let err = PromptAgent::new(g.clone(), BaselineMode::React)
        .ask(&state)
        .unwrap_err();
    assert!(
        matches!(err, BaselineError::MalformedEmission { attempts, .. } if attempts == ASK_ATTEMPTS),
        "{err}"
    );
    assert_eq!(g.provider_calls(), ASK_ATTEMPTS as usize);
}

#[test]
fn short_prediction_arrays_are_regenerated() {
    let g = gateway(vec![MockRule::contains(
        "Return only a boolean array",
        &["[true]", "[true, false]"],
    )]);
    let state = BaselineState::new(&checkers(&["SNAP", "WIC"]), BaselineMode::Direct);
    let (bools, warning) = PromptAgent::new(g.clone(), BaselineMode::Direct)
        .predict(&state, 2)
        .unwrap();
    assert_eq!(bools, [true, false]);
    assert!(warning.is_none());
    assert_eq!(g.provider_calls(), 2);

    let g = gateway(vec![MockRule::contains(
        "Return only a boolean array",
        &["maybe"],
    )]);
    let (bools, warning) = PromptAgent::new(g, BaselineMode::Direct)
        .predict(&state, 2)
        .unwrap();
    assert_eq!(bools, [false, false]);
    assert!(warning.unwrap().contains("all false"));
}

#[test]
fn agent_that_is_never_ready_stops_at_the_budget() {
    let g = gateway(vec![MockRule::contains(
        "Answer only in one word True or False",
        &["False"],
    )]);
    let out = PromptAgent::new(g, BaselineMode::Direct)
        .run(&checkers(&["SNAP"]), &mut ScriptedUser::new(["no"]))
        .unwrap();
    assert_eq!(out.turns, 20);
    assert!(!out.warnings.is_empty());
    let err = PromptAgent::new(gateway(vec![]), BaselineMode::Direct)
        .run(&[], &mut ScriptedUser::new(["no"]))
        .unwrap_err();
    assert!(matches!(err, BaselineError::NoOpportunities));
}

#[test]
fn random_agent_is_a_fair_coin() {
    let ids: Vec<String> = (0..4000).map(|i| format!("p{i:04}")).collect();
    let a = RandomAgent::new(9).predict(&ids);
    assert_eq!(a, RandomAgent::new(9).predict(&ids));
    let share = a.values().filter(|&&b| b).count() as f64 / ids.len() as f64;
    assert!((share - 0.5).abs() < 0.03, "{share}");
}
