//! Corpus checkers rewritten by hand in Rust, with small feature grids to
//! run them over. Each oracle records `(label, outcome)` for every
//! condition it tests, which is what the evaluator's trace should encode.

use std::collections::{BTreeMap, BTreeSet};

use proada::corpus::Corpus;
use proada::features::Value;
use proada::rules::{evaluate, EvalOutcome, Trace};
use proada::usersim::HouseholdProfile;

#[derive(Default)]
pub struct Rec(pub BTreeSet<(u32, bool)>);

impl Rec {
    fn t(&mut self, label: u32, cond: bool) -> bool {
        self.0.insert((label, cond));
        cond
    }
}

type Oracle = fn(&HouseholdProfile, &mut Rec) -> bool;

pub struct Grid {
    pub household: Vec<(&'static str, Vec<Value>)>,
    pub member: Vec<(&'static str, Vec<Value>)>,
    pub max_members: usize,
}

fn product(axes: &[(&'static str, Vec<Value>)]) -> Vec<BTreeMap<String, Value>> {
    let mut out = vec![BTreeMap::new()];
    for (k, values) in axes {
        out = out
            .into_iter()
            .flat_map(|m| {
                values.iter().map(move |v| {
                    let mut m = m.clone();
                    m.insert(k.to_string(), v.clone());
                    m
                })
            })
            .collect();
    }
    out
}

impl Grid {
    pub fn profiles(&self) -> Vec<HouseholdProfile> {
        let members = product(&self.member);
        let mut groups: Vec<Vec<BTreeMap<String, Value>>> = Vec::new();
        let mut layer = vec![Vec::new()];
        for _ in 0..self.max_members {
            layer = layer
                .into_iter()
                .flat_map(|g: Vec<BTreeMap<String, Value>>| {
                    members.iter().map(move |m| {
                        let mut g = g.clone();
                        g.push(m.clone());
                        g
                    })
                })
                .collect();
            groups.extend(layer.iter().cloned());
        }
        let households = product(&self.household);
        groups
            .iter()
            .flat_map(|g| {
                households.iter().map(move |h| HouseholdProfile {
                    members: g.clone(),
                    household: h.clone(),
                })
            })
            .collect()
    }
}

pub struct OracleCase {
    pub id: &'static str,
    pub grid: Grid,
    pub oracle: Oracle,
}

fn st(m: &BTreeMap<String, Value>, k: &str) -> String {
    match &m[k] {
        Value::Str(s) => s.clone(),
        other => panic!("{k} is not a string: {other:?}"),
    }
}

fn num(m: &BTreeMap<String, Value>, k: &str) -> f64 {
    m[k].as_f64().unwrap()
}

fn ints(xs: &[i64]) -> Vec<Value> {
    xs.iter().map(|&x| Value::Int(x)).collect()
}

fn reals(xs: &[f64]) -> Vec<Value> {
    xs.iter().map(|&x| Value::Real(x)).collect()
}

fn yn() -> Vec<Value> {
    vec![Value::Str("yes".into()), Value::Str("no".into())]
}

fn n(hh: &HouseholdProfile) -> f64 {
    hh.size() as f64
}

pub fn cases() -> Vec<OracleCase> {
    vec![
        OracleCase {
            id: "SNAP",
            grid: Grid {
                household: vec![
                    ("receives_snap", yn()),
                    (
                        "annual_income",
                        reals(&[
                            0.0, 18960.0, 18972.0, 25680.0, 25692.0, 32400.0, 32412.0, 90000.0,
                        ]),
                    ),
                ],
                member: vec![],
                max_members: 3,
            },
            oracle: |hh, r| {
                let h = &hh.household;
                if r.t(0, st(h, "receives_snap") == "yes") {
                    return true;
                }
                num(h, "annual_income") / 12.0 <= 1580.0 + 560.0 * (n(hh) - 1.0)
            },
        },
        OracleCase {
            id: "LifelineInternet",
            grid: Grid {
                household: vec![
                    ("receives_snap", yn()),
                    (
                        "annual_income",
                        reals(&[
                            0.0, 20331.0, 20332.0, 27594.0, 27595.0, 34857.0, 34858.0, 90000.0,
                        ]),
                    ),
                ],
                member: vec![],
                max_members: 3,
            },
            oracle: |hh, r| {
                let h = &hh.household;
                if r.t(0, st(h, "receives_snap") == "yes") {
                    return true;
                }
                num(h, "annual_income") <= 1.35 * (15060.0 + 5380.0 * (n(hh) - 1.0))
            },
        },
        OracleCase {
            id: "HomeEnergyAssistance",
            grid: Grid {
                household: vec![
                    ("receives_snap", yn()),
                    ("pays_heating_bill", yn()),
                    (
                        "annual_income",
                        reals(&[38000.0, 38001.0, 46000.0, 46001.0, 54000.0, 54001.0]),
                    ),
                ],
                member: vec![],
                max_members: 3,
            },
            oracle: |hh, r| {
                let h = &hh.household;
                if r.t(0, st(h, "receives_snap") == "yes") {
                    return true;
                }
                if r.t(1, st(h, "pays_heating_bill") == "no") {
                    return false;
                }
                num(h, "annual_income") <= 30000.0 + 8000.0 * n(hh)
            },
        },
        OracleCase {
            id: "SeniorMeals",
            grid: Grid {
                household: vec![],
                member: vec![("age", ints(&[10, 59, 60, 80]))],
                max_members: 3,
            },
            oracle: |hh, r| {
                for m in &hh.members {
                    if r.t(0, num(m, "age") >= 60.0) {
                        return true;
                    }
                }
                false
            },
        },
        OracleCase {
            id: "ThreeK",
            grid: Grid {
                household: vec![("lives_in_nyc", yn())],
                member: vec![("age", ints(&[2, 3, 4]))],
                max_members: 3,
            },
            oracle: |hh, r| {
                if r.t(0, st(&hh.household, "lives_in_nyc") == "no") {
                    return false;
                }
                for m in &hh.members {
                    if r.t(1, num(m, "age") == 3.0) {
                        return true;
                    }
                }
                false
            },
        },
        OracleCase {
            id: "UniversalPreK",
            grid: Grid {
                household: vec![("lives_in_nyc", yn())],
                member: vec![("age", ints(&[3, 4, 5]))],
                max_members: 3,
            },
            oracle: |hh, r| {
                if r.t(0, st(&hh.household, "lives_in_nyc") == "no") {
                    return false;
                }
                for m in &hh.members {
                    if r.t(1, num(m, "age") == 4.0) {
                        return true;
                    }
                }
                false
            },
        },
        OracleCase {
            id: "SummerYouthEmployment",
            grid: Grid {
                household: vec![("lives_in_nyc", yn())],
                member: vec![("age", ints(&[13, 14, 24, 25]))],
                max_members: 3,
            },
            oracle: |hh, r| {
                if r.t(0, st(&hh.household, "lives_in_nyc") != "yes") {
                    return false;
                }
                for m in &hh.members {
                    if r.t(1, num(m, "age") >= 14.0) && r.t(2, num(m, "age") <= 24.0) {
                        return true;
                    }
                }
                false
            },
        },
        OracleCase {
            id: "TrainEarn",
            grid: Grid {
                household: vec![("lives_in_nyc", yn())],
                member: vec![
                    ("age", ints(&[15, 17, 18, 24, 25])),
                    ("registered_selective_service", yn()),
                    ("employed", yn()),
                    ("in_foster_care", yn()),
                    ("homeless_or_runaway", yn()),
                ],
                max_members: 1,
            },
            oracle: |hh, r| {
                if r.t(0, st(&hh.household, "lives_in_nyc") == "no") {
                    return false;
                }
                for m in &hh.members {
                    let age = num(m, "age");
                    if r.t(1, age >= 16.0) && r.t(2, age <= 24.0) {
                        if r.t(3, age >= 18.0)
                            && r.t(4, st(m, "registered_selective_service") == "yes")
                            && r.t(5, st(m, "employed") == "no")
                        {
                            return true;
                        }
                        if r.t(6, st(m, "in_foster_care") == "yes") {
                            return true;
                        }
                        if r.t(7, st(m, "homeless_or_runaway") == "yes") {
                            return true;
                        }
                    }
                }
                false
            },
        },
        OracleCase {
            id: "FairFares",
            grid: Grid {
                household: vec![
                    ("lives_in_nyc", yn()),
                    (
                        "annual_income",
                        reals(&[0.0, 18072.0, 18073.0, 24528.0, 24529.0]),
                    ),
                ],
                member: vec![("age", ints(&[17, 18, 64, 65]))],
                max_members: 2,
            },
            oracle: |hh, r| {
                let head = num(&hh.members[0], "age");
                if r.t(0, head < 18.0) {
                    return false;
                }
                if r.t(1, head > 64.0) {
                    return false;
                }
                if r.t(2, st(&hh.household, "lives_in_nyc") == "no") {
                    return false;
                }
                let poverty = 15060.0 + 5380.0 * (n(hh) - 1.0);
                num(&hh.household, "annual_income") <= 1.2 * poverty
            },
        },
        OracleCase {
            id: "WIC",
            grid: Grid {
                household: vec![
                    ("receives_snap", yn()),
                    ("annual_income", reals(&[27000.0, 37001.0, 47000.0])),
                ],
                member: vec![("age", ints(&[3, 30])), ("pregnant", yn())],
                max_members: 3,
            },
            oracle: |hh, r| {
                let mut qualifying = false;
                for m in &hh.members {
                    if r.t(0, num(m, "age") < 5.0) || r.t(1, st(m, "pregnant") == "yes") {
                        qualifying = true;
                    }
                }
                if r.t(2, !qualifying) {
                    return false;
                }
                if r.t(3, st(&hh.household, "receives_snap") == "yes") {
                    return true;
                }
                num(&hh.household, "annual_income") <= 27000.0 + 10000.0 * (n(hh) - 1.0)
            },
        },
        OracleCase {
            id: "JobsPlus",
            grid: Grid {
                household: vec![("public_housing", yn())],
                member: vec![("age", ints(&[17, 18, 64, 65])), ("employed", yn())],
                max_members: 2,
            },
            oracle: |hh, r| {
                if r.t(0, st(&hh.household, "public_housing") == "no") {
                    return false;
                }
                for m in &hh.members {
                    if r.t(1, num(m, "age") >= 18.0)
                        && r.t(2, num(m, "age") <= 64.0)
                        && r.t(3, st(m, "employed") == "no")
                    {
                        return true;
                    }
                }
                false
            },
        },
        OracleCase {
            id: "SeniorRentFreeze",
            grid: Grid {
                household: vec![
                    ("lives_in_nyc", yn()),
                    ("monthly_rent", reals(&[0.0, 500.0, 1500.0])),
                    ("annual_income", reals(&[0.0, 18000.0, 50000.0, 50001.0])),
                ],
                member: vec![("age", ints(&[61, 62]))],
                max_members: 1,
            },
            oracle: |hh, r| {
                let h = &hh.household;
                if r.t(0, num(&hh.members[0], "age") < 62.0) {
                    return false;
                }
                if r.t(1, st(h, "lives_in_nyc") == "no") {
                    return false;
                }
                if r.t(2, num(h, "monthly_rent") <= 0.0) {
                    return false;
                }
                if r.t(3, num(h, "annual_income") > 50000.0) {
                    return false;
                }
                num(h, "monthly_rent") * 12.0 > num(h, "annual_income") / 3.0
            },
        },
        OracleCase {
            id: "HeadStart",
            grid: Grid {
                household: vec![
                    ("receives_snap", yn()),
                    ("annual_income", reals(&[15650.0, 15651.0])),
                ],
                member: vec![
                    ("age", ints(&[2, 3, 4, 5])),
                    ("in_foster_care", yn()),
                    ("homeless_or_runaway", yn()),
                ],
                max_members: 1,
            },
            oracle: |hh, r| {
                for m in &hh.members {
                    if r.t(0, num(m, "age") >= 3.0) && r.t(1, num(m, "age") <= 4.0) {
                        if r.t(2, st(m, "in_foster_care") == "yes") {
                            return true;
                        }
                        if r.t(3, st(m, "homeless_or_runaway") == "yes") {
                            return true;
                        }
                        if r.t(4, st(&hh.household, "receives_snap") == "yes") {
                            return true;
                        }
                        return num(&hh.household, "annual_income")
                            <= 15650.0 + 5500.0 * (n(hh) - 1.0);
                    }
                }
                false
            },
        },
    ]
}

#[derive(Debug)]
pub struct CaseReport {
    pub id: &'static str,
    pub stores: usize,
    pub positives: usize,
    pub pairs_checked: usize,
}

/// Evaluate every grid store, compare decisions with the oracle, and check
/// that two stores share a trace exactly when they share branch outcomes.
pub fn check_case(case: &OracleCase, corpus: &Corpus) -> Result<CaseReport, String> {
    let checker = corpus
        .get(case.id)
        .ok_or_else(|| format!("{} is not in the corpus", case.id))?;
    let profiles = case.grid.profiles();
    if profiles.len() > 512 {
        return Err(format!("{}: grid has {} stores", case.id, profiles.len()));
    }
    let mut rows: Vec<(BTreeSet<(u32, bool)>, Trace)> = Vec::with_capacity(profiles.len());
    let mut positives = 0;
    for hh in &profiles {
        let mut rec = Rec::default();
        let expected = (case.oracle)(hh, &mut rec);
        let (eligible, trace) = match evaluate(&checker.program, hh) {
            Ok(EvalOutcome::Decision { eligible, trace }) => (eligible, trace),
            other => return Err(format!("{}: {other:?} on {hh:?}", case.id)),
        };
        if eligible != expected {
            return Err(format!(
                "{}: evaluator says {eligible}, oracle {expected} on {hh:?}",
                case.id
            ));
        }
        positives += eligible as usize;
        rows.push((rec.0, trace));
    }
    let mut pairs_checked = 0;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            pairs_checked += 1;
            if (rows[i].0 == rows[j].0) != (rows[i].1 == rows[j].1) {
                return Err(format!(
                    "{}: trace identity fails between {:?} and {:?}",
                    case.id, profiles[i], profiles[j]
                ));
            }
        }
    }
    Ok(CaseReport {
        id: case.id,
        stores: profiles.len(),
        positives,
        pairs_checked,
    })
}
