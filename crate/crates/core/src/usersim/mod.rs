//! Simulated users: household profiles, their natural-language rendering,
//! and the answerers that respond to the agent's questions from them.

mod oracle;
mod sample;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureSchema, KeyPath, Scope, StoreError, Value, HOUSEHOLD_SIZE_KEY};
use crate::llm::{Gateway, GatewayError, Message};
use crate::prompts;
use crate::rules::FeatureLookup;

pub use oracle::{respond_oracle, OracleAnswer, CANNOT_ANSWER};
pub use sample::{
    sample_diverse, sample_representative, Condition, ConsistencyRule, ConsistencyRules,
    Distribution, FeatureDistribution, RuleKind, SampleError, MAX_MEMBERS,
};

/// Gold structured truth for one simulated household.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HouseholdProfile {
    /// Member records; index 0 is the head of household.
    pub members: Vec<BTreeMap<String, Value>>,
    /// Household-level features. The household size is implied by
    /// `members.len()` and never stored here.
    #[serde(default)]
    pub household: BTreeMap<String, Value>,
}

impl HouseholdProfile {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn value(&self, key: &KeyPath) -> Option<Value> {
        match key.scope {
            Scope::Household if key.key == HOUSEHOLD_SIZE_KEY => {
                Some(Value::Int(self.members.len() as i64))
            }
            Scope::Household => self.household.get(&key.key).cloned(),
            Scope::Member(i) => self.members.get(i).and_then(|m| m.get(&key.key)).cloned(),
        }
    }

    /// The profile as a store JSON object restricted to `schema`'s keys, with
    /// the size filled in when the schema has a size slot.
    pub fn to_store_json(&self, schema: &FeatureSchema) -> serde_json::Value {
        let mut household = serde_json::Map::new();
        if schema.contains_key(HOUSEHOLD_SIZE_KEY) {
            household.insert(HOUSEHOLD_SIZE_KEY.into(), serde_json::json!(self.size()));
        }
        for (k, v) in &self.household {
            if schema.contains_key(k) {
                household.insert(k.clone(), serde_json::to_value(v).expect("value"));
            }
        }
        let members: Vec<serde_json::Value> = self
            .members
            .iter()
            .map(|m| {
                serde_json::Value::Object(
                    m.iter()
                        .filter(|(k, _)| schema.contains_key(k))
                        .map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("value")))
                        .collect(),
                )
            })
            .collect();
        serde_json::json!({"household": household, "members": members})
    }
}

impl FeatureLookup for HouseholdProfile {
    fn lookup(&self, key: &KeyPath) -> Result<Option<Value>, StoreError> {
        Ok(self.value(key))
    }
}

/// `"in_foster_care"` → `"in foster care"`.
pub fn label(key: &str) -> String {
    key.replace('_', " ")
}

fn unlabel(label: &str) -> String {
    label.trim().replace(' ', "_")
}

fn value_text(v: &Value) -> String {
    v.to_string()
}

/// Deterministic natural-language profile: one paragraph per member, then a
/// household paragraph. Every feature is stated exactly once.
pub fn render_profile(hh: &HouseholdProfile) -> String {
    let mut out = String::new();
    for (i, member) in hh.members.iter().enumerate() {
        if i == 0 {
            let _ = write!(out, "Person 0 is the head of the household.");
        } else {
            let _ = write!(out, "Person {i} is a member of the household.");
        }
        for (k, v) in member {
            let _ = write!(out, " The {} of person {i} is {}.", label(k), value_text(v));
        }
        out.push_str("\n\n");
    }
    let n = hh.size();
    let _ = write!(
        out,
        "There {} {n} {} in the household.",
        if n == 1 { "is" } else { "are" },
        if n == 1 { "person" } else { "people" }
    );
    for (k, v) in &hh.household {
        let _ = write!(out, " The household's {} is {}.", label(k), value_text(v));
    }
    out
}

/// Profile facts as text, keyed by feature name. What a reader of a rendered
/// profile can recover.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileFacts {
    pub size: usize,
    pub members: Vec<BTreeMap<String, String>>,
    pub household: BTreeMap<String, String>,
}

impl From<&HouseholdProfile> for ProfileFacts {
    fn from(hh: &HouseholdProfile) -> Self {
        Self {
            size: hh.size(),
            members: hh
                .members
                .iter()
                .map(|m| m.iter().map(|(k, v)| (k.clone(), value_text(v))).collect())
                .collect(),
            household: hh
                .household
                .iter()
                .map(|(k, v)| (k.clone(), value_text(v)))
                .collect(),
        }
    }
}

static MEMBER_FACT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^The (.+) of person (\d+) is (.*)$").expect("regex"));
static HOUSEHOLD_FACT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^The household's (.+) is (.*)$").expect("regex"));
static SIZE_FACT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^There (?:is|are) (\d+) (?:person|people) in the household$").expect("regex")
});

/// Recover the facts from [`render_profile`] output.
pub fn parse_rendered(text: &str) -> ProfileFacts {
    let mut facts = ProfileFacts::default();
    for paragraph in text.split("\n\n") {
        let paragraph = paragraph.trim().trim_end_matches('.');
        for sentence in paragraph.split(". ") {
            let sentence = sentence.trim();
            if let Some(c) = MEMBER_FACT.captures(sentence) {
                let i: usize = c[2].parse().unwrap_or(0);
                if facts.members.len() <= i {
                    facts.members.resize_with(i + 1, BTreeMap::new);
                }
                facts.members[i].insert(unlabel(&c[1]), c[3].to_string());
            } else if let Some(c) = HOUSEHOLD_FACT.captures(sentence) {
                facts.household.insert(unlabel(&c[1]), c[2].to_string());
            } else if let Some(c) = SIZE_FACT.captures(sentence) {
                facts.size = c[1].parse().unwrap_or(0);
            }
        }
    }
    facts.size = facts.size.max(facts.members.len());
    facts.members.resize_with(facts.size, BTreeMap::new);
    facts
}

/// Answer a question from a rendered profile, as the oracle would.
pub fn answer_from_rendered(profile_text: &str, question: &str) -> String {
    respond_oracle(&parse_rendered(profile_text), question).text()
}

/// Something that answers the agent's questions.
pub trait SimulatedUser: Send {
    fn respond(&mut self, question: &str) -> Result<String, GatewayError>;
}

/// Deterministic answerer over the structured profile.
#[derive(Debug, Clone)]
pub struct OracleUser {
    facts: ProfileFacts,
}

impl OracleUser {
    pub fn new(profile: &HouseholdProfile) -> Self {
        Self {
            facts: ProfileFacts::from(profile),
        }
    }
}

impl SimulatedUser for OracleUser {
    fn respond(&mut self, question: &str) -> Result<String, GatewayError> {
        Ok(respond_oracle(&self.facts, question).text())
    }
}

/// Model-backed answerer prompted with the rendered profile.
pub struct LlmUser {
    gateway: Arc<Gateway>,
    system: String,
    history: Vec<Message>,
}

impl LlmUser {
    pub fn new(gateway: Arc<Gateway>, profile: &HouseholdProfile) -> Self {
        Self {
            gateway,
            system: prompts::user_sim(&render_profile(profile)),
            history: Vec::new(),
        }
    }
}

impl SimulatedUser for LlmUser {
    fn respond(&mut self, question: &str) -> Result<String, GatewayError> {
        let mut messages = vec![Message::system(self.system.clone())];
        messages.extend(self.history.iter().cloned());
        messages.push(Message::user(question));
        let answer = self
            .gateway
            .complete(&self.gateway.request_with(messages))?
            .trim()
            .to_string();
        self.history.push(Message::user(question));
        self.history.push(Message::assistant(answer.clone()));
        Ok(answer)
    }
}

/// A user that replays fixed answers in order, then repeats the last one.
#[derive(Debug, Clone)]
pub struct ScriptedUser {
    answers: Vec<String>,
    next: usize,
}

impl ScriptedUser {
    pub fn new<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            answers: answers.into_iter().map(Into::into).collect(),
            next: 0,
        }
    }
}

impl SimulatedUser for ScriptedUser {
    fn respond(&mut self, _question: &str) -> Result<String, GatewayError> {
        let i = self.next.min(self.answers.len().saturating_sub(1));
        self.next += 1;
        Ok(self.answers.get(i).cloned().unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> HouseholdProfile {
        let mut head = BTreeMap::new();
        head.insert("age".to_string(), Value::Int(34));
        head.insert("in_foster_care".to_string(), Value::Str("no".into()));
        let mut kid = BTreeMap::new();
        kid.insert("age".to_string(), Value::Int(3));
        kid.insert("in_foster_care".to_string(), Value::Str("no".into()));
        let mut household = BTreeMap::new();
        household.insert("monthly_rent".to_string(), Value::Real(1250.5));
        HouseholdProfile {
            members: vec![head, kid],
            household,
        }
    }

    #[test]
    fn rendering_round_trips_through_the_parser() {
        let hh = profile();
        let text = render_profile(&hh);
        assert!(text.contains("The age of person 0 is 34."));
        assert!(text.contains("The household's monthly rent is 1250.5."));
        assert_eq!(parse_rendered(&text), ProfileFacts::from(&hh));
    }

    #[test]
    fn profile_lookup_implies_size() {
        let hh = profile();
        assert_eq!(hh.value(&KeyPath::household_size()), Some(Value::Int(2)));
        assert_eq!(hh.value(&KeyPath::member(2, "age")), None);
    }

    #[test]
    fn scripted_user_repeats_last() {
        let mut u = ScriptedUser::new(["a", "b"]);
        assert_eq!(u.respond("?").unwrap(), "a");
        assert_eq!(u.respond("?").unwrap(), "b");
        assert_eq!(u.respond("?").unwrap(), "b");
    }
}
