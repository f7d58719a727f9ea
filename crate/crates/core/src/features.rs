//! Typed, schema-validated user feature store.
//!
//! The store is the engine's memory of what the user has told it. A lookup
//! that misses is not an error: it is the signal that drives the next
//! question.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Household feature that bounds every member loop.
pub const HOUSEHOLD_SIZE_KEY: &str = "size";

/// Where a feature lives: on the household as a whole or on one member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Household,
    /// Member index; 0 is the head of household.
    Member(usize),
}

/// A concrete feature address, e.g. `household.size` or `member(1).age`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyPath {
    pub scope: Scope,
    pub key: String,
}

impl KeyPath {
    pub fn household(key: impl Into<String>) -> Self {
        Self {
            scope: Scope::Household,
            key: key.into(),
        }
    }

    pub fn member(index: usize, key: impl Into<String>) -> Self {
        Self {
            scope: Scope::Member(index),
            key: key.into(),
        }
    }

    pub fn household_size() -> Self {
        Self::household(HOUSEHOLD_SIZE_KEY)
    }

    pub fn pattern(&self) -> ScopePattern {
        match self.scope {
            Scope::Household => ScopePattern::Household,
            Scope::Member(_) => ScopePattern::Member,
        }
    }

    pub fn member_index(&self) -> Option<usize> {
        match self.scope {
            Scope::Household => None,
            Scope::Member(i) => Some(i),
        }
    }

    /// The dictionary-style rendering used in prompts: `hh["k"]` or `hh[1]["k"]`.
    pub fn to_dict_syntax(&self) -> String {
        match self.scope {
            Scope::Household => format!("hh[\"{}\"]", self.key),
            Scope::Member(i) => format!("hh[{i}][\"{}\"]", self.key),
        }
    }
}

impl fmt::Display for KeyPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scope {
            Scope::Household => write!(f, "household.{}", self.key),
            Scope::Member(i) => write!(f, "member({i}).{}", self.key),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed key path `{0}` (expected `household.<key>` or `member(<i>).<key>`)")]
pub struct KeyPathParseError(pub String);

impl FromStr for KeyPath {
    type Err = KeyPathParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || KeyPathParseError(s.to_string());
        if let Some(key) = s.strip_prefix("household.") {
            if key.is_empty() {
                return Err(err());
            }
            return Ok(KeyPath::household(key));
        }
        let rest = s.strip_prefix("member(").ok_or_else(err)?;
        let (index, key) = rest.split_once(").").ok_or_else(err)?;
        let index: usize = index.parse().map_err(|_| err())?;
        if key.is_empty() {
            return Err(err());
        }
        Ok(KeyPath::member(index, key))
    }
}

impl Serialize for KeyPath {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KeyPath {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Scope half of a schema slot: a key is declared either for the household or
/// for every member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopePattern {
    Household,
    /// Any member of the household.
    #[serde(alias = "any-member", alias = "any_member")]
    Member,
}

impl fmt::Display for ScopePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScopePattern::Household => f.write_str("household"),
            ScopePattern::Member => f.write_str("member"),
        }
    }
}

/// A typed feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Int(i) => Some(i as f64),
            Value::Real(r) => Some(r),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "boolean",
            Value::Int(_) => "integer",
            Value::Real(_) => "real",
            Value::Str(_) => "string",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

/// What a slot accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SlotConstraint {
    Integer {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        low: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        high: Option<i64>,
    },
    Real {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        low: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        high: Option<f64>,
    },
    Choice {
        choices: Vec<String>,
    },
}

impl SlotConstraint {
    pub fn integer() -> Self {
        SlotConstraint::Integer {
            low: None,
            high: None,
        }
    }

    pub fn integer_between(low: i64, high: i64) -> Self {
        SlotConstraint::Integer {
            low: Some(low),
            high: Some(high),
        }
    }

    pub fn real() -> Self {
        SlotConstraint::Real {
            low: None,
            high: None,
        }
    }

    pub fn choice<I, S>(choices: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SlotConstraint::Choice {
            choices: choices.into_iter().map(Into::into).collect(),
        }
    }

    pub fn yes_no() -> Self {
        Self::choice(["yes", "no"])
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SlotConstraint::Integer { .. } => "integer",
            SlotConstraint::Real { .. } => "real",
            SlotConstraint::Choice { .. } => "choice",
        }
    }

    pub fn check_well_formed(&self) -> Result<(), SchemaError> {
        match self {
            SlotConstraint::Choice { choices } => {
                if choices.is_empty() {
                    return Err(SchemaError::InvalidConstraint(
                        "choice list is empty".into(),
                    ));
                }
                let mut seen = std::collections::BTreeSet::new();
                for c in choices {
                    if !seen.insert(normalize_choice(c)) {
                        return Err(SchemaError::InvalidConstraint(format!(
                            "duplicate choice `{c}`"
                        )));
                    }
                }
                Ok(())
            }
            SlotConstraint::Integer {
                low: Some(l),
                high: Some(h),
            } if l > h => Err(SchemaError::InvalidConstraint(format!(
                "integer bounds {l} > {h}"
            ))),
            SlotConstraint::Real { low, high } => {
                if low.is_some_and(|l| !l.is_finite()) || high.is_some_and(|h| !h.is_finite()) {
                    return Err(SchemaError::InvalidConstraint("non-finite bound".into()));
                }
                match (low, high) {
                    (Some(l), Some(h)) if l > h => Err(SchemaError::InvalidConstraint(format!(
                        "real bounds {l} > {h}"
                    ))),
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// Parse a canonical raw form into a value satisfying this constraint.
    pub fn parse_raw(&self, raw: &str) -> Result<Value, String> {
        let trimmed = raw.trim();
        match self {
            SlotConstraint::Integer { low, high } => {
                let v = parse_integer(trimmed)
                    .ok_or_else(|| format!("`{trimmed}` is not an integer"))?;
                if low.is_some_and(|l| v < l) || high.is_some_and(|h| v > h) {
                    return Err(format!("{v} is outside {}", bounds_text(low, high)));
                }
                Ok(Value::Int(v))
            }
            SlotConstraint::Real { low, high } => {
                let v: f64 = trimmed
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| format!("`{trimmed}` is not a number"))?;
                if low.is_some_and(|l| v < l) || high.is_some_and(|h| v > h) {
                    return Err(format!("{v} is outside {}", bounds_text(low, high)));
                }
                Ok(Value::Real(v))
            }
            SlotConstraint::Choice { choices } => {
                let wanted = normalize_choice(trimmed);
                choices
                    .iter()
                    .find(|c| normalize_choice(c) == wanted)
                    .map(|c| Value::Str(c.clone()))
                    .ok_or_else(|| format!("`{trimmed}` is not one of [{}]", choices.join(", ")))
            }
        }
    }

    pub fn admits(&self, value: &Value) -> bool {
        match (self, value) {
            (SlotConstraint::Integer { low, high }, Value::Int(v)) => {
                !(low.is_some_and(|l| *v < l) || high.is_some_and(|h| *v > h))
            }
            (SlotConstraint::Real { low, high }, v @ (Value::Real(_) | Value::Int(_))) => {
                let v = v.as_f64().unwrap_or(f64::NAN);
                v.is_finite() && !(low.is_some_and(|l| v < l) || high.is_some_and(|h| v > h))
            }
            (SlotConstraint::Choice { choices }, Value::Str(s)) => choices.contains(s),
            _ => false,
        }
    }
}

impl fmt::Display for SlotConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotConstraint::Integer { low, high } => {
                write!(f, "integer")?;
                if low.is_some() || high.is_some() {
                    write!(f, " {}", bounds_text(low, high))?;
                }
                Ok(())
            }
            SlotConstraint::Real { low, high } => {
                write!(f, "real")?;
                if low.is_some() || high.is_some() {
                    write!(f, " {}", bounds_text(low, high))?;
                }
                Ok(())
            }
            SlotConstraint::Choice { choices } => write!(f, "one of [{}]", choices.join(", ")),
        }
    }
}

fn bounds_text<T: fmt::Display>(low: &Option<T>, high: &Option<T>) -> String {
    let l = low.as_ref().map_or("-inf".to_string(), ToString::to_string);
    let h = high.as_ref().map_or("inf".to_string(), ToString::to_string);
    format!("[{l}, {h}]")
}

fn parse_integer(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    // "3.0" is still a canonical integer
    let f: f64 = s.parse().ok()?;
    if f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15 {
        Some(f as i64)
    } else {
        None
    }
}

pub(crate) fn normalize_choice(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("slot `{0}` is already defined")]
    DuplicateSlot(String),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("conflicting definitions for `{key}`: {left} vs {right}")]
    SchemaConflict {
        key: String,
        left: String,
        right: String,
    },
    #[error("malformed schema: {0}")]
    Malformed(String),
}

/// One schema entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub scope: ScopePattern,
    pub key: String,
    #[serde(flatten)]
    pub constraint: SlotConstraint,
}

/// Declared slots, keyed by feature name. A key lives in exactly one scope.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSchema {
    slots: BTreeMap<String, Slot>,
}

impl FeatureSchema {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns a new schema with the slot added; `self` is left untouched.
    pub fn define_slot(
        &self,
        scope: ScopePattern,
        key: &str,
        constraint: SlotConstraint,
    ) -> Result<FeatureSchema, SchemaError> {
        let mut next = self.clone();
        next.insert(scope, key, constraint)?;
        Ok(next)
    }

    pub fn insert(
        &mut self,
        scope: ScopePattern,
        key: &str,
        constraint: SlotConstraint,
    ) -> Result<(), SchemaError> {
        if self.slots.contains_key(key) {
            return Err(SchemaError::DuplicateSlot(key.to_string()));
        }
        constraint.check_well_formed()?;
        if key == HOUSEHOLD_SIZE_KEY
            && (scope != ScopePattern::Household
                || !matches!(constraint, SlotConstraint::Integer { .. }))
        {
            return Err(SchemaError::InvalidConstraint(
                "`size` must be an integer household slot".into(),
            ));
        }
        self.slots.insert(
            key.to_string(),
            Slot {
                scope,
                key: key.to_string(),
                constraint,
            },
        );
        Ok(())
    }

    pub fn slot(&self, key: &str) -> Option<&Slot> {
        self.slots.get(key)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.slots.contains_key(key)
    }

    /// The constraint for a concrete key path, provided the scope matches.
    pub fn constraint_for(&self, path: &KeyPath) -> Result<&SlotConstraint, StoreError> {
        match self.slots.get(&path.key) {
            Some(slot) if slot.scope == path.pattern() => Ok(&slot.constraint),
            _ => Err(StoreError::UndefinedSlot(path.clone())),
        }
    }

    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.slots.values()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Union of two schemas. Shared keys must agree on scope and constraint.
    pub fn merge(&self, other: &FeatureSchema) -> Result<FeatureSchema, SchemaError> {
        let mut merged = self.clone();
        for slot in other.slots.values() {
            match merged.slots.get(&slot.key) {
                Some(existing) if existing == slot => {}
                Some(existing) => {
                    return Err(SchemaError::SchemaConflict {
                        key: slot.key.clone(),
                        left: format!("{} {}", existing.scope, existing.constraint),
                        right: format!("{} {}", slot.scope, slot.constraint),
                    })
                }
                None => {
                    merged.slots.insert(slot.key.clone(), slot.clone());
                }
            }
        }
        Ok(merged)
    }

    pub fn to_file(&self, opportunity_id: Option<&str>) -> SchemaFile {
        SchemaFile {
            opportunity: opportunity_id.map(str::to_string),
            slots: self.slots.values().cloned().collect(),
        }
    }

    pub fn from_file(file: SchemaFile) -> Result<FeatureSchema, SchemaError> {
        let mut schema = FeatureSchema::new();
        for slot in file.slots {
            schema.insert(slot.scope, &slot.key, slot.constraint)?;
        }
        Ok(schema)
    }

    pub fn from_json_str(text: &str) -> Result<FeatureSchema, SchemaError> {
        let file: SchemaFile =
            serde_json::from_str(text).map_err(|e| SchemaError::Malformed(e.to_string()))?;
        Self::from_file(file)
    }
}

/// On-disk schema layout (`<opportunity_id>.schema.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opportunity: Option<String>,
    pub slots: Vec<Slot>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cannot store `{raw}` for {key}: {reason} (expected {constraint})")]
pub struct ValidationError {
    pub key: KeyPath,
    pub raw: String,
    pub constraint: SlotConstraint,
    pub reason: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("no schema slot for {0}")]
    UndefinedSlot(KeyPath),
    #[error(transparent)]
    Validation(Box<ValidationError>),
    #[error("{0} already has a value; answers are never overwritten")]
    Overwrite(KeyPath),
    #[error("{key} is beyond the household size {size}")]
    MemberOutOfRange { key: KeyPath, size: i64 },
    #[error("malformed store record: {0}")]
    Malformed(String),
}

impl From<ValidationError> for StoreError {
    fn from(e: ValidationError) -> Self {
        StoreError::Validation(Box::new(e))
    }
}

/// Known user facts for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    schema: Arc<FeatureSchema>,
    household: BTreeMap<String, Value>,
    members: Vec<BTreeMap<String, Value>>,
}

impl FeatureStore {
    pub fn new(schema: Arc<FeatureSchema>) -> Self {
        Self {
            schema,
            household: BTreeMap::new(),
            members: Vec::new(),
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn schema_arc(&self) -> Arc<FeatureSchema> {
        Arc::clone(&self.schema)
    }

    /// Known household size, if it has been answered.
    pub fn household_size(&self) -> Option<i64> {
        match self.household.get(HOUSEHOLD_SIZE_KEY) {
            Some(Value::Int(n)) => Some(*n),
            _ => None,
        }
    }

    pub fn get(&self, key: &KeyPath) -> Result<Option<&Value>, StoreError> {
        self.schema.constraint_for(key)?;
        Ok(match key.scope {
            Scope::Household => self.household.get(&key.key),
            Scope::Member(i) => {
                if self.household_size().is_some_and(|n| i as i64 >= n) {
                    None
                } else {
                    self.members.get(i).and_then(|m| m.get(&key.key))
                }
            }
        })
    }

    pub fn put(&mut self, key: &KeyPath, raw: &str) -> Result<&Value, StoreError> {
        let constraint = self.schema.constraint_for(key)?.clone();
        let invalid = |reason: String| {
            StoreError::from(ValidationError {
                key: key.clone(),
                raw: raw.to_string(),
                constraint: constraint.clone(),
                reason,
            })
        };
        let value = constraint.parse_raw(raw).map_err(invalid)?;
        match key.scope {
            Scope::Household => {
                if self.household.contains_key(&key.key) {
                    return Err(StoreError::Overwrite(key.clone()));
                }
                if key.key == HOUSEHOLD_SIZE_KEY {
                    let n = match value {
                        Value::Int(n) => n,
                        _ => unreachable!("size slot is always an integer"),
                    };
                    if n < 0 {
                        return Err(invalid("household size cannot be negative".into()));
                    }
                    if (self.members.len() as i64) > n {
                        return Err(invalid(format!(
                            "{} members are already known",
                            self.members.len()
                        )));
                    }
                }
                Ok(self.household.entry(key.key.clone()).or_insert(value))
            }
            Scope::Member(i) => {
                if let Some(size) = self.household_size() {
                    if i as i64 >= size {
                        return Err(StoreError::MemberOutOfRange {
                            key: key.clone(),
                            size,
                        });
                    }
                }
                if self.members.len() <= i {
                    self.members.resize_with(i + 1, BTreeMap::new);
                }
                let member = &mut self.members[i];
                if member.contains_key(&key.key) {
                    return Err(StoreError::Overwrite(key.clone()));
                }
                Ok(member.entry(key.key.clone()).or_insert(value))
            }
        }
    }

    /// Every stored (key, value) pair in a stable order.
    pub fn entries(&self) -> Vec<(KeyPath, &Value)> {
        let mut out: Vec<_> = self
            .household
            .iter()
            .map(|(k, v)| (KeyPath::household(k.clone()), v))
            .collect();
        for (i, m) in self.members.iter().enumerate() {
            out.extend(m.iter().map(|(k, v)| (KeyPath::member(i, k.clone()), v)));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.household.len() + self.members.iter().map(BTreeMap::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "household": self.household,
            "members": self.members,
        })
    }

    /// Rebuild a store from its JSON form by replaying every value through
    /// `put`, so the result is validated against `schema`.
    pub fn from_json(
        json: &serde_json::Value,
        schema: Arc<FeatureSchema>,
    ) -> Result<FeatureStore, StoreError> {
        let malformed = |m: &str| StoreError::Malformed(m.to_string());
        let obj = json
            .as_object()
            .ok_or_else(|| malformed("expected an object"))?;
        let mut store = FeatureStore::new(schema);
        let empty = serde_json::Map::new();
        let household = match obj.get("household") {
            Some(h) => h
                .as_object()
                .ok_or_else(|| malformed("`household` must be an object"))?,
            None => &empty,
        };
        // size first so member bounds are known
        if let Some(size) = household.get(HOUSEHOLD_SIZE_KEY) {
            store.put(&KeyPath::household_size(), &json_scalar(size)?)?;
        }
        for (k, v) in household {
            if k != HOUSEHOLD_SIZE_KEY {
                store.put(&KeyPath::household(k.clone()), &json_scalar(v)?)?;
            }
        }
        if let Some(members) = obj.get("members") {
            let members = members
                .as_array()
                .ok_or_else(|| malformed("`members` must be an array"))?;
            for (i, m) in members.iter().enumerate() {
                let m = m
                    .as_object()
                    .ok_or_else(|| malformed("each member must be an object"))?;
                for (k, v) in m {
                    store.put(&KeyPath::member(i, k.clone()), &json_scalar(v)?)?;
                }
            }
        }
        Ok(store)
    }
}

fn json_scalar(v: &serde_json::Value) -> Result<String, StoreError> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        other => Err(StoreError::Malformed(format!("unsupported value {other}"))),
    }
}
