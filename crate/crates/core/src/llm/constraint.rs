use std::fmt;

use serde::{Deserialize, Serialize};

use crate::features::{normalize_choice, SlotConstraint};

/// Shape a constrained completion must take.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutputConstraint {
    Choice { choices: Vec<String> },
    Integer,
    Real,
    Boolean,
    BoolArray { len: usize },
}

/// A value that satisfied its [`OutputConstraint`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Constrained {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
    Bools(Vec<bool>),
}

impl Constrained {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Constrained::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn into_bools(self) -> Option<Vec<bool>> {
        match self {
            Constrained::Bools(v) => Some(v),
            _ => None,
        }
    }

    /// Canonical text form, suitable for `FeatureStore::put`.
    pub fn to_raw(&self) -> String {
        match self {
            Constrained::Bool(b) => b.to_string(),
            Constrained::Int(i) => i.to_string(),
            Constrained::Real(r) => r.to_string(),
            Constrained::Text(s) => s.clone(),
            Constrained::Bools(v) => serde_json::to_string(v).unwrap_or_default(),
        }
    }
}

impl fmt::Display for OutputConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputConstraint::Choice { choices } => write!(f, "one of {}", choices.join(", ")),
            OutputConstraint::Integer => f.write_str("an integer"),
            OutputConstraint::Real => f.write_str("a number"),
            OutputConstraint::Boolean => f.write_str("True or False"),
            OutputConstraint::BoolArray { len } => write!(f, "a boolean array of length {len}"),
        }
    }
}

impl OutputConstraint {
    pub fn choice<I, S>(choices: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        OutputConstraint::Choice {
            choices: choices.into_iter().map(Into::into).collect(),
        }
    }

    /// The extraction constraint for a feature slot.
    pub fn for_slot(slot: &SlotConstraint) -> Self {
        match slot {
            SlotConstraint::Integer { .. } => OutputConstraint::Integer,
            SlotConstraint::Real { .. } => OutputConstraint::Real,
            SlotConstraint::Choice { choices } => OutputConstraint::Choice {
                choices: choices.clone(),
            },
        }
    }

    pub fn check_well_formed(&self) -> Result<(), String> {
        match self {
            OutputConstraint::Choice { choices } if choices.is_empty() => {
                Err("choice set must not be empty".into())
            }
            OutputConstraint::BoolArray { len: 0 } => Err("array length must be at least 1".into()),
            _ => Ok(()),
        }
    }

    /// JSON schema for provider-native structured output. The value is always
    /// wrapped as `{"value": ...}`.
    pub fn json_schema(&self) -> serde_json::Value {
        let value = match self {
            OutputConstraint::Choice { choices } => {
                serde_json::json!({"type": "string", "enum": choices})
            }
            OutputConstraint::Integer => serde_json::json!({"type": "integer"}),
            OutputConstraint::Real => serde_json::json!({"type": "number"}),
            OutputConstraint::Boolean => serde_json::json!({"type": "boolean"}),
            OutputConstraint::BoolArray { len } => serde_json::json!({
                "type": "array",
                "items": {"type": "boolean"},
                "minItems": len,
                "maxItems": len,
            }),
        };
        serde_json::json!({
            "type": "object",
            "properties": {"value": value},
            "required": ["value"],
            "additionalProperties": false,
        })
    }

    /// Check a raw emission. Accepts the bare value or the structured
    /// `{"value": ...}` wrapper.
    pub fn validate(&self, raw: &str) -> Result<Constrained, String> {
        let text = unwrap_structured(raw);
        let text = clean(&text);
        match self {
            OutputConstraint::Choice { choices } => {
                let wanted = normalize_choice(&text);
                choices
                    .iter()
                    .find(|c| normalize_choice(c) == wanted)
                    .map(|c| Constrained::Text(c.clone()))
                    .ok_or_else(|| format!("`{text}` is not one of {}", choices.join(", ")))
            }
            OutputConstraint::Integer => {
                let t = text.replace(',', "");
                if let Ok(i) = t.parse::<i64>() {
                    return Ok(Constrained::Int(i));
                }
                match t.parse::<f64>() {
                    Ok(r) if r.is_finite() && r.fract() == 0.0 && r.abs() < 9.0e15 => {
                        Ok(Constrained::Int(r as i64))
                    }
                    _ => Err(format!("`{text}` is not an integer")),
                }
            }
            OutputConstraint::Real => {
                let t = text.trim_start_matches('$').replace(',', "");
                match t.parse::<f64>() {
                    Ok(r) if r.is_finite() => Ok(Constrained::Real(r)),
                    _ => Err(format!("`{text}` is not a number")),
                }
            }
            OutputConstraint::Boolean => parse_bool(&text)
                .map(Constrained::Bool)
                .ok_or_else(|| format!("`{text}` is not True or False")),
            OutputConstraint::BoolArray { len } => {
                let lowered = text.replace("True", "true").replace("False", "false");
                let v: Vec<serde_json::Value> = serde_json::from_str(&lowered)
                    .map_err(|_| format!("`{text}` is not an array"))?;
                if v.len() != *len {
                    return Err(format!("expected {len} entries, got {}", v.len()));
                }
                v.iter()
                    .map(|x| x.as_bool().ok_or_else(|| format!("`{x}` is not a boolean")))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Constrained::Bools)
            }
        }
    }
}

fn unwrap_structured(raw: &str) -> String {
    let trimmed = raw.trim();
    if trimmed.starts_with('{') {
        if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(trimmed) {
            if let Some(v) = map.get("value") {
                return match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
            }
        }
    }
    trimmed.to_string()
}

/// Strip fences, wrapping quotes/backticks and trailing sentence punctuation.
fn clean(text: &str) -> String {
    let mut t = text.trim();
    if t.starts_with("```") {
        t = t.trim_start_matches("```");
        t = t.trim_end_matches("```");
        t = t.trim();
    }
    let t = t.trim_end_matches(['.', '!']).trim();
    let t = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .or_else(|| t.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')))
        .or_else(|| t.strip_prefix('`').and_then(|s| s.strip_suffix('`')))
        .unwrap_or(t);
    t.trim().to_string()
}

fn parse_bool(text: &str) -> Option<bool> {
    match text.to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}
