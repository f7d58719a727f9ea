use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::HouseholdProfile;
use crate::features::{FeatureSchema, ScopePattern, SlotConstraint, Value, HOUSEHOLD_SIZE_KEY};
use crate::rules::RuleProgram;

/// Upper bound on household size.
pub const MAX_MEMBERS: usize = 6;

const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("could not satisfy the consistency rules after {tries} tries; last violation: {last}")]
    ConstraintUnsatisfiable { tries: usize, last: String },
    #[error("no distribution for feature `{feature}`")]
    MissingDistribution { feature: String },
    #[error("invalid distribution for `{feature}`: {reason}")]
    InvalidDistribution { feature: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// One comparison against a member feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub key: String,
    pub op: String,
    pub value: toml::Value,
}

impl Condition {
    fn holds(&self, member: &BTreeMap<String, Value>) -> bool {
        let Some(v) = member.get(&self.key) else {
            return false;
        };
        let ord = match (v, &self.value) {
            (Value::Str(a), toml::Value::String(b)) => {
                return match self.op.as_str() {
                    "==" => a.eq_ignore_ascii_case(b),
                    "!=" => !a.eq_ignore_ascii_case(b),
                    _ => false,
                }
            }
            (v, toml::Value::Integer(b)) => v.as_f64().and_then(|a| a.partial_cmp(&(*b as f64))),
            (v, toml::Value::Float(b)) => v.as_f64().and_then(|a| a.partial_cmp(b)),
            (Value::Bool(a), toml::Value::Boolean(b)) => Some(a.cmp(b)),
            _ => None,
        };
        let Some(ord) = ord else {
            return false;
        };
        use std::cmp::Ordering::*;
        match self.op.as_str() {
            "<" => ord == Less,
            "<=" => ord != Greater,
            "==" => ord == Equal,
            "!=" => ord != Equal,
            ">=" => ord != Less,
            ">" => ord == Greater,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// No member may satisfy every condition.
    ForbidMember,
    /// At most `count` members may satisfy every condition.
    AtMost,
    /// The head of household may not satisfy every condition.
    ForbidHead,
}

/// A declarative logical-consistency rule over household members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRule {
    pub kind: RuleKind,
    pub message: String,
    #[serde(default)]
    pub count: usize,
    pub when: Vec<Condition>,
}

impl ConsistencyRule {
    fn matches(&self, member: &BTreeMap<String, Value>) -> bool {
        !self.when.is_empty() && self.when.iter().all(|c| c.holds(member))
    }

    pub fn check(&self, hh: &HouseholdProfile) -> Result<(), String> {
        let hits = hh.members.iter().filter(|m| self.matches(m)).count();
        let ok = match self.kind {
            RuleKind::ForbidMember => hits == 0,
            RuleKind::AtMost => hits <= self.count,
            RuleKind::ForbidHead => hh.members.first().is_none_or(|h| !self.matches(h)),
        };
        if ok {
            Ok(())
        } else {
            Err(self.message.clone())
        }
    }
}

/// The rule list, loadable from TOML (`[[rule]]` tables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRules {
    #[serde(default, rename = "rule")]
    pub rules: Vec<ConsistencyRule>,
}

impl Default for ConsistencyRules {
    fn default() -> Self {
        toml::from_str(DEFAULT_RULES).expect("built-in consistency rules parse")
    }
}

const DEFAULT_RULES: &str = r#"
[[rule]]
kind = "forbid_member"
message = "a member under 18 cannot be a grandparent"
when = [{ key = "age", op = "<", value = 18 }, { key = "relation", op = "==", value = "grandparent" }]

[[rule]]
kind = "forbid_member"
message = "an adult cannot be in foster care"
when = [{ key = "age", op = ">=", value = 21 }, { key = "in_foster_care", op = "==", value = "yes" }]

[[rule]]
kind = "at_most"
count = 1
message = "the head has at most one spouse"
when = [{ key = "relation", op = "==", value = "spouse" }]

[[rule]]
kind = "forbid_head"
message = "the head of household is not their own spouse"
when = [{ key = "relation", op = "==", value = "spouse" }]

[[rule]]
kind = "forbid_head"
message = "the head of household is at least 16"
when = [{ key = "age", op = "<", value = 16 }]
"#;

impl ConsistencyRules {
    pub fn none() -> Self {
        Self { rules: Vec::new() }
    }

    pub fn from_toml(text: &str) -> Result<Self, SampleError> {
        toml::from_str(text).map_err(|e| SampleError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, SampleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SampleError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The first violated rule's message, if any.
    pub fn check(&self, hh: &HouseholdProfile) -> Result<(), String> {
        self.rules.iter().try_for_each(|r| r.check(hh))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub low: f64,
    pub high: f64,
}

/// How one feature is drawn in representative sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Categorical {
        probs: BTreeMap<String, f64>,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// Weighted uniform ranges, e.g. income bands around a threshold.
    Mixture {
        components: Vec<MixtureComponent>,
    },
    Constant {
        value: toml::Value,
    },
}

/// Feature name → distribution. The special key `size` controls member
/// count (uniform 1..=6 when absent).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistribution {
    #[serde(default)]
    pub features: BTreeMap<String, Distribution>,
}

impl FeatureDistribution {
    pub fn from_toml(text: &str) -> Result<Self, SampleError> {
        let d: Self = toml::from_str(text).map_err(|e| SampleError::Config(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }

    pub fn from_path(path: &Path) -> Result<Self, SampleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SampleError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        for (feature, d) in &self.features {
            let bad = |reason: String| SampleError::InvalidDistribution {
                feature: feature.clone(),
                reason,
            };
            match d {
                Distribution::Categorical { probs } => {
                    if probs.is_empty() {
                        return Err(bad("no categories".into()));
                    }
                    if probs.values().any(|p| p.is_nan() || *p < 0.0) {
                        return Err(bad("negative probability".into()));
                    }
                    let sum: f64 = probs.values().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(bad(format!("probabilities sum to {sum}, not 1")));
                    }
                }
                Distribution::Uniform { low, high } => {
                    if low.is_nan() || high.is_nan() || low > high {
                        return Err(bad(format!("low {low} > high {high}")));
                    }
                }
                Distribution::Mixture { components } => {
                    if components.is_empty() {
                        return Err(bad("no components".into()));
                    }
                    if components.iter().any(|c| {
                        c.low.is_nan()
                            || c.high.is_nan()
                            || c.low > c.high
                            || c.weight.is_nan()
                            || c.weight < 0.0
                    }) {
                        return Err(bad("malformed component".into()));
                    }
                    if components.iter().map(|c| c.weight).sum::<f64>() <= 0.0 {
                        return Err(bad("weights sum to zero".into()));
                    }
                }
                Distribution::Constant { .. } => {}
            }
        }
        Ok(())
    }
}

fn toml_to_raw(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn draw(
    rng: &mut ChaCha8Rng,
    feature: &str,
    d: &Distribution,
    constraint: &SlotConstraint,
) -> Result<Value, SampleError> {
    let raw = match d {
        Distribution::Categorical { probs } => {
            let mut u: f64 = rng.random();
            let mut pick = probs.keys().next_back().expect("validated non-empty");
            for (k, p) in probs {
                if u < *p {
                    pick = k;
                    break;
                }
                u -= p;
            }
            pick.clone()
        }
        Distribution::Uniform { low, high } => return Ok(numeric_in(rng, *low, *high, constraint)),
        Distribution::Mixture { components } => {
            let total: f64 = components.iter().map(|c| c.weight).sum();
            let mut u = rng.random::<f64>() * total;
            let mut chosen = components.last().expect("validated non-empty");
            for c in components {
                if u < c.weight {
                    chosen = c;
                    break;
                }
                u -= c.weight;
            }
            return Ok(numeric_in(rng, chosen.low, chosen.high, constraint));
        }
        Distribution::Constant { value } => toml_to_raw(value),
    };
    constraint
        .parse_raw(&raw)
        .map_err(|reason| SampleError::InvalidDistribution {
            feature: feature.to_string(),
            reason,
        })
}

fn numeric_in(rng: &mut ChaCha8Rng, low: f64, high: f64, constraint: &SlotConstraint) -> Value {
    match constraint {
        SlotConstraint::Integer { .. } => {
            let (l, h) = (low.ceil() as i64, high.floor() as i64);
            Value::Int(if l >= h { l } else { rng.random_range(l..=h) })
        }
        _ => {
            let x = if low >= high {
                low
            } else {
                rng.random_range(low..=high)
            };
            // cents keep rendered values short
            Value::Real((x * 100.0).round() / 100.0)
        }
    }
}

fn member_slots(schema: &FeatureSchema) -> impl Iterator<Item = (&str, &SlotConstraint)> {
    schema
        .slots()
        .filter(|s| s.scope == ScopePattern::Member)
        .map(|s| (s.key.as_str(), &s.constraint))
}

fn household_slots(schema: &FeatureSchema) -> impl Iterator<Item = (&str, &SlotConstraint)> {
    schema
        .slots()
        .filter(|s| s.scope == ScopePattern::Household && s.key != HOUSEHOLD_SIZE_KEY)
        .map(|s| (s.key.as_str(), &s.constraint))
}

/// Draw until the consistency rules hold.
fn with_rejection(
    rules: &ConsistencyRules,
    mut make: impl FnMut() -> Result<HouseholdProfile, SampleError>,
) -> Result<HouseholdProfile, SampleError> {
    let mut last = String::new();
    for _ in 0..MAX_REJECTIONS {
        let hh = make()?;
        match rules.check(&hh) {
            Ok(()) => return Ok(hh),
            Err(m) => last = m,
        }
    }
    Err(SampleError::ConstraintUnsatisfiable {
        tries: MAX_REJECTIONS,
        last,
    })
}

/// Threshold-aware draw for one numeric feature: mostly values just either
/// side of a threshold some checker compares against, so both branch
/// outcomes show up, with occasional uniform draws across the range.
fn diverse_numeric(rng: &mut ChaCha8Rng, constraint: &SlotConstraint, thresholds: &[f64]) -> Value {
    let (low, high, integer) = match constraint {
        SlotConstraint::Integer { low, high } => {
            (low.map(|l| l as f64), high.map(|h| h as f64), true)
        }
        SlotConstraint::Real { low, high } => (*low, *high, false),
        SlotConstraint::Choice { .. } => unreachable!("numeric slots only"),
    };
    let top = thresholds.iter().cloned().fold(0.0f64, f64::max);
    let low = low.unwrap_or(0.0);
    let high = high.unwrap_or(if integer {
        (top * 2.0).max(100.0)
    } else {
        (top * 2.0).max(100_000.0)
    });
    let clamp = |x: f64| x.clamp(low, high);
    if thresholds.is_empty() || rng.random_bool(0.2) {
        return numeric_in(rng, low, high, constraint);
    }
    let t = thresholds[rng.random_range(0..thresholds.len())];
    let x = if integer {
        clamp(t + f64::from(rng.random_range(-1i32..=1)))
    } else {
        let step = (t.abs() * 0.05).max(1.0);
        let offsets = [-step, -0.01, 0.0, 0.01, step];
        clamp(t + offsets[rng.random_range(0..offsets.len())])
    };
    if integer {
        Value::Int(x.round() as i64)
    } else {
        Value::Real((x * 100.0).round() / 100.0)
    }
}

/// `n` fuzzed households over `schema`, balanced around the numeric
/// thresholds `programs` compare against. Deterministic for a seed.
pub fn sample_diverse(
    schema: &FeatureSchema,
    programs: &[RuleProgram],
    rules: &ConsistencyRules,
    seed: u64,
    n: usize,
) -> Result<Vec<HouseholdProfile>, SampleError> {
    let mut thresholds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in programs {
        for (k, ts) in p.numeric_thresholds() {
            let entry = thresholds.entry(k).or_default();
            for t in ts {
                if !entry.contains(&t) {
                    entry.push(t);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_value = |rng: &mut ChaCha8Rng, key: &str, c: &SlotConstraint| match c {
        SlotConstraint::Choice { choices } => {
            Value::Str(choices[rng.random_range(0..choices.len())].clone())
        }
        numeric => diverse_numeric(
            rng,
            numeric,
            thresholds.get(key).map(Vec::as_slice).unwrap_or(&[]),
        ),
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let hh = with_rejection(rules, || {
            let size = rng.random_range(1..=MAX_MEMBERS);
            let members = (0..size)
                .map(|_| {
                    member_slots(schema)
                        .map(|(k, c)| (k.to_string(), draw_value(&mut rng, k, c)))
                        .collect()
                })
                .collect();
            let household = household_slots(schema)
                .map(|(k, c)| (k.to_string(), draw_value(&mut rng, k, c)))
                .collect();
            Ok(HouseholdProfile { members, household })
        })?;
        out.push(hh);
    }
    Ok(out)
}

/// `n` households with every feature drawn independently from `dist`.
pub fn sample_representative(
    schema: &FeatureSchema,
    dist: &FeatureDistribution,
    rules: &ConsistencyRules,
    seed: u64,
    n: usize,
) -> Result<Vec<HouseholdProfile>, SampleError> {
    dist.validate()?;
    for slot in schema.slots() {
        if slot.key != HOUSEHOLD_SIZE_KEY && !dist.features.contains_key(&slot.key) {
            return Err(SampleError::MissingDistribution {
                feature: slot.key.clone(),
            });
        }
    }
    let size_constraint = SlotConstraint::integer_between(1, MAX_MEMBERS as i64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let hh = with_rejection(rules, || {
            let size = match dist.features.get(HOUSEHOLD_SIZE_KEY) {
                Some(d) => match draw(&mut rng, HOUSEHOLD_SIZE_KEY, d, &size_constraint)? {
                    Value::Int(s) => s as usize,
                    _ => unreachable!("integer constraint"),
                },
                None => rng.random_range(1..=MAX_MEMBERS),
            };
            let mut members = Vec::with_capacity(size);
            for _ in 0..size {
                let mut m = BTreeMap::new();
                for (k, c) in member_slots(schema) {
                    m.insert(k.to_string(), draw(&mut rng, k, &dist.features[k], c)?);
                }
                members.push(m);
            }
            let mut household = BTreeMap::new();
            for (k, c) in household_slots(schema) {
                household.insert(k.to_string(), draw(&mut rng, k, &dist.features[k], c)?);
            }
            Ok(HouseholdProfile { members, household })
        })?;
        out.push(hh);
    }
    Ok(out)
}
