//! Fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod oracles;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use proada::bench::{CoveragePool, PoolEntry};
use proada::corpus::Corpus;
use proada::dialog::{AgentAction, IngestOutcome, Session};
use proada::features::{FeatureSchema, KeyPath, ScopePattern, SlotConstraint, StoreError, Value};
use proada::llm::{Gateway, MockProvider, MockRule};
use proada::rules::{evaluate, parse_program, FeatureLookup};
use proada::usersim::HouseholdProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corpus() -> Corpus {
    Corpus::load_dir(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus/rules")).unwrap()
}

pub fn s(v: &str) -> Value {
    Value::Str(v.into())
}

pub fn member(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

/// Wraps a profile and records every key a checker reads.
pub struct Recording<'a> {
    pub profile: &'a HouseholdProfile,
    pub read: Mutex<BTreeSet<KeyPath>>,
}

impl<'a> Recording<'a> {
    pub fn new(profile: &'a HouseholdProfile) -> Self {
        Self {
            profile,
            read: Mutex::new(BTreeSet::new()),
        }
    }
}

impl FeatureLookup for Recording<'_> {
    fn lookup(&self, key: &KeyPath) -> Result<Option<Value>, StoreError> {
        self.read.lock().unwrap().insert(key.clone());
        Ok(self.profile.value(key))
    }
}

/// Keys each checker reads when run on the complete profile.
pub fn realized_keys(corpus: &Corpus, ids: &[String], hh: &HouseholdProfile) -> BTreeSet<KeyPath> {
    let mut out = BTreeSet::new();
    for c in corpus.select(ids).unwrap() {
        let rec = Recording::new(hh);
        evaluate(&c.program, &rec).unwrap();
        out.extend(rec.read.into_inner().unwrap());
    }
    out
}

fn yes_no_member(age: i64, overrides: &[(&str, &str)]) -> BTreeMap<String, Value> {
    let mut m = member(&[("age", Value::Int(age))]);
    for k in [
        "in_foster_care",
        "homeless_or_runaway",
        "registered_selective_service",
        "employed",
        "pregnant",
    ] {
        m.insert(k.into(), s("no"));
    }
    for (k, v) in overrides {
        m.insert(k.to_string(), s(v));
    }
    m
}

fn household(
    members: Vec<BTreeMap<String, Value>>,
    nyc: &str,
    income: f64,
    snap: &str,
) -> HouseholdProfile {
    HouseholdProfile {
        members,
        household: BTreeMap::from([
            ("lives_in_nyc".to_string(), s(nyc)),
            ("annual_income".to_string(), Value::Real(income)),
            ("receives_snap".to_string(), s(snap)),
        ]),
    }
}

pub const E2E_OPPORTUNITIES: [&str; 3] = ["SNAP", "TrainEarn", "UniversalPreK"];

/// Five households for the end-to-end fixture. The first is a 17-year-old
/// in foster care, whose answer settles TrainEarn before the homeless
/// question comes up.
pub fn e2e_households() -> Vec<HouseholdProfile> {
    vec![
        household(
            vec![yes_no_member(17, &[("in_foster_care", "yes")])],
            "yes",
            9000.0,
            "no",
        ),
        household(
            vec![
                yes_no_member(35, &[("employed", "yes")]),
                yes_no_member(4, &[]),
            ],
            "yes",
            61000.0,
            "no",
        ),
        household(
            vec![yes_no_member(
                20,
                &[("registered_selective_service", "yes")],
            )],
            "yes",
            30000.0,
            "yes",
        ),
        household(
            vec![
                yes_no_member(44, &[]),
                yes_no_member(22, &[("homeless_or_runaway", "yes")]),
            ],
            "no",
            18000.0,
            "no",
        ),
        household(
            vec![
                yes_no_member(70, &[]),
                yes_no_member(40, &[("employed", "yes")]),
                yes_no_member(8, &[]),
            ],
            "yes",
            120000.0,
            "no",
        ),
    ]
}

/// `n` households with random traces over a few opportunities.
pub fn random_pool(rng: &mut ChaCha8Rng, households: usize) -> CoveragePool {
    let mut pool = CoveragePool::default();
    for h in 0..households {
        for o in 0..rng.random_range(1..=3usize) {
            let trace = (0..rng.random_range(1..=4usize))
                .map(|_| rng.random_range(0..10usize))
                .collect();
            pool.push(PoolEntry {
                household: h,
                opportunity: format!("o{o}"),
                trace,
                decision: rng.random_bool(0.5),
            });
        }
    }
    pool
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fewest households whose traces cover the pool, by enumeration.
pub fn brute_force_cover(pool: &CoveragePool) -> usize {
    let households: Vec<usize> = pool
        .entries
        .iter()
        .map(|e| e.household)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let full = pool.covered();
    (0u32..1 << households.len())
        .filter(|mask| {
            let chosen: BTreeSet<usize> = households
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, h)| *h)
                .collect();
            let units: BTreeSet<_> = pool
                .entries
                .iter()
                .filter(|e| chosen.contains(&e.household))
                .flat_map(|e| e.trace.iter().map(move |&n| (e.opportunity.clone(), n)))
                .collect();
            units == full
        })
        .map(u32::count_ones)
        .min()
        .unwrap() as usize
}

/// Pairs of the selection that could go without losing coverage.
pub fn removable_pairs(pool: &CoveragePool, pairs: &[(usize, String)]) -> usize {
    let units = |pairs: &[(usize, String)]| -> BTreeSet<(String, usize)> {
        pool.entries
            .iter()
            .filter(|e| pairs.contains(&(e.household, e.opportunity.clone())))
            .flat_map(|e| e.trace.iter().map(move |&n| (e.opportunity.clone(), n)))
            .collect()
    };
    let all = units(pairs);
    (0..pairs.len())
        .filter(|&i| {
            let mut rest = pairs.to_vec();
            rest.remove(i);
            units(&rest) == all
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    Numeric,
    Text,
    Verbose,
    MultiHop,
    Misspelled,
    Extraneous,
}

/// What the engine should do with the answer.
#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    Stored(Value),
    Clarify,
}

pub struct PerturbationCase {
    pub class: Perturbation,
    pub key: KeyPath,
    pub slot: SlotConstraint,
    pub answer: &'static str,
    /// What the scripted extraction call returns.
    pub extraction: &'static str,
    pub expect: Expect,
}

pub fn perturbation_cases() -> Vec<PerturbationCase> {
    use Perturbation::*;
    let size = || {
        (
            KeyPath::household_size(),
            SlotConstraint::integer_between(1, 20),
        )
    };
    let income = || (KeyPath::household("annual_income"), SlotConstraint::real());
    let age = || {
        (
            KeyPath::member(0, "age"),
            SlotConstraint::integer_between(0, 120),
        )
    };
    let homeless = || {
        (
            KeyPath::member(0, "homeless_or_runaway"),
            SlotConstraint::yes_no(),
        )
    };
    let case = |class, (key, slot): (KeyPath, SlotConstraint), answer, extraction, expect| {
        PerturbationCase {
            class,
            key,
            slot,
            answer,
            extraction,
            expect,
        }
    };
    vec![
        case(Numeric, size(), "3", "3", Expect::Stored(Value::Int(3))),
        case(Numeric, age(), "17", "17", Expect::Stored(Value::Int(17))),
        case(
            Numeric,
            income(),
            "42000",
            "42000",
            Expect::Stored(Value::Real(42000.0)),
        ),
        case(
            Numeric,
            income(),
            "42000.50",
            "42000.50",
            Expect::Stored(Value::Real(42000.5)),
        ),
        case(Numeric, homeless(), "yes", "yes", Expect::Stored(s("yes"))),
        case(Text, size(), "three", "3", Expect::Stored(Value::Int(3))),
        case(
            Text,
            age(),
            "seventeen",
            "17",
            Expect::Stored(Value::Int(17)),
        ),
        case(
            Verbose,
            homeless(),
            "I am a homeless youth",
            "yes",
            Expect::Stored(s("yes")),
        ),
        case(
            Verbose,
            income(),
            "Well, last year between my two jobs I made about forty-two thousand dollars",
            "42000",
            Expect::Stored(Value::Real(42000.0)),
        ),
        case(
            MultiHop,
            size(),
            "I don't live with anyone else",
            "1",
            Expect::Stored(Value::Int(1)),
        ),
        case(
            MultiHop,
            size(),
            "Just me and my two kids",
            "3",
            Expect::Stored(Value::Int(3)),
        ),
        case(Misspelled, size(), "onee", "onee", Expect::Clarify),
        case(Misspelled, homeless(), "yess", "yess", Expect::Clarify),
        case(
            Extraneous,
            age(),
            "I'm 34, and my cat is 3",
            "34",
            Expect::Stored(Value::Int(34)),
        ),
        case(
            Extraneous,
            homeless(),
            "No, I rent an apartment in Queens with a nice view",
            "no",
            Expect::Stored(s("no")),
        ),
    ]
}

/// Put the case's key up as the pending question, answer it, and report
/// what the engine did.
pub fn run_perturbation(case: &PerturbationCase) -> Result<IngestOutcome, String> {
    let (scope, src) = match case.key.member_index() {
        Some(_) => (
            ScopePattern::Member,
            format!("return hh[0][\"{}\"] == \"x\"", case.key.key),
        ),
        None => (
            ScopePattern::Household,
            format!("return hh[\"{}\"] > 1", case.key.key),
        ),
    };
    let mut schema = FeatureSchema::new();
    schema
        .insert(scope, &case.key.key, case.slot.clone())
        .map_err(|e| e.to_string())?;
    let checker = proada::corpus::Checker {
        program: Arc::new(parse_program(&src, "P").map_err(|e| e.to_string())?),
        schema: Arc::new(schema),
        requirements: None,
    };
    let gateway = Gateway::mock(
        MockProvider::new(vec![MockRule::contains(
            "What should we set as the value of",
            &[case.extraction],
        )])
        .with_seed(1),
    );
    let mut session =
        Session::open("p", vec![checker], Arc::new(gateway)).map_err(|e| e.to_string())?;
    match session.step().map_err(|e| e.to_string())? {
        AgentAction::Ask(_) => {}
        other => return Err(format!("expected a question, got {other:?}")),
    }
    session
        .ingest_answer(case.answer)
        .map_err(|e| e.to_string())
}

pub fn outcome_matches(outcome: &IngestOutcome, expect: &Expect) -> bool {
    match (outcome, expect) {
        (IngestOutcome::Stored(v), Expect::Stored(e)) => v == e,
        (IngestOutcome::Clarify(_), Expect::Clarify) => true,
        _ => false,
    }
}
