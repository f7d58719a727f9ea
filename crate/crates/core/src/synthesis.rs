//! Checker synthesis: requirements text in, rule program plus feature
//! schema out.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{check_schema_closure, CorpusError, RequirementDoc, SCHEMA_SUFFIX};
use crate::features::{
    normalize_choice, FeatureSchema, KeyPath, SchemaError, ScopePattern, SlotConstraint,
    HOUSEHOLD_SIZE_KEY,
};
use crate::llm::{Gateway, GatewayError, OutputConstraint, DEFAULT_MAX_ATTEMPTS};
use crate::prompts;
use crate::rules::{parse_program, pretty_print, to_checker_file, RuleProgram};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("no parseable checker for `{opportunity}` after {} attempts: {}", errors.len(), errors.join("; "))]
    SynthesisExhausted {
        opportunity: String,
        errors: Vec<String>,
    },
    #[error("choices for `{key}` never covered {missing:?}")]
    ChoicesIncomplete { key: String, missing: Vec<String> },
    #[error("could not read a list of values for `{key}`: {last_raw:?}")]
    MalformedChoices { key: String, last_raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("max_attempts must be at least 1")]
    ZeroAttempts,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub program: RuleProgram,
    /// Slots the program reads, including reused preexisting ones.
    pub schema: FeatureSchema,
    pub attempts: u32,
    pub raw_generations: Vec<String>,
}

/// Raw emissions kept beside a synthesized checker so the parse can be
/// replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub opportunity: String,
    pub raw_generations: Vec<String>,
}

impl GenerationLog {
    /// Re-parse the last generation.
    pub fn replay(&self) -> Option<RuleProgram> {
        self.raw_generations
            .last()
            .and_then(|raw| parse_program(raw, &self.opportunity).ok())
    }
}

pub struct Synthesizer {
    gateway: Arc<Gateway>,
    pub max_attempts: u32,
    pub choice_attempts: u32,
}

/// How existing slots are listed in the generation prompt.
pub fn describe_keys(schema: &FeatureSchema) -> String {
    if schema.is_empty() {
        return "(none)".to_string();
    }
    schema
        .slots()
        .map(|s| {
            let path = match s.scope {
                ScopePattern::Household => format!("hh[\"{}\"]", s.key),
                ScopePattern::Member => format!("hh[i][\"{}\"]", s.key),
            };
            format!("{path}: {}", s.constraint)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn example_path(scope: ScopePattern, key: &str) -> KeyPath {
    match scope {
        ScopePattern::Household => KeyPath::household(key),
        ScopePattern::Member => KeyPath::member(0, key),
    }
}

/// Parse a list-of-strings emission, tolerating fences, single quotes and
/// surrounding prose.
fn parse_string_list(raw: &str) -> Option<Vec<String>> {
    let start = raw.find('[')?;
    let end = raw.rfind(']')?;
    if end < start {
        return None;
    }
    let body = &raw[start..=end];
    if let Ok(v) = serde_json::from_str::<Vec<serde_json::Value>>(body) {
        return Some(
            v.into_iter()
                .map(|x| match x {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                })
                .collect(),
        );
    }
    // Python-style ['a', 'b']
    let inner = &body[1..body.len() - 1];
    let items: Vec<String> = inner
        .split(',')
        .map(|s| s.trim().trim_matches(['\'', '"']).trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    Some(items)
}

fn dedup_choices(values: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        let v = v.trim().to_string();
        if !v.is_empty()
            && !out
                .iter()
                .any(|o| normalize_choice(o) == normalize_choice(&v))
        {
            out.push(v);
        }
    }
    out
}

impl Synthesizer {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self {
            gateway,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            choice_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn with_max_attempts(mut self, n: u32) -> Self {
        self.max_attempts = n;
        self
    }

    /// Prompt for a checker, re-prompting with the parse error until one
    /// parses, then type every slot it reads that `preexisting` lacks.
    pub fn generate_checker(
        &self,
        doc: &RequirementDoc,
        preexisting: &FeatureSchema,
    ) -> Result<SynthesisResult, SynthesisError> {
        if self.max_attempts == 0 {
            return Err(SynthesisError::ZeroAttempts);
        }
        let keys = describe_keys(preexisting);
        let mut raw_generations = Vec::new();
        let mut errors = Vec::new();
        let mut program = None;
        for attempt in 1..=self.max_attempts {
            let retry = raw_generations
                .last()
                .zip(errors.last())
                .map(|(r, e): (&String, &String)| (r.as_str(), e.as_str()));
            let prompt = prompts::generate_checker(&doc.body, &keys, attempt, retry);
            let raw = self.gateway.complete(&self.gateway.request(prompt))?;
            let parsed = parse_program(&raw, &doc.opportunity_id);
            raw_generations.push(raw);
            match parsed {
                Ok(p) => {
                    program = Some(p);
                    break;
                }
                Err(e) => {
                    tracing::debug!(opportunity = %doc.opportunity_id, attempt, error = %e, "checker did not parse");
                    errors.push(e.to_string());
                }
            }
        }
        let Some(program) = program else {
            return Err(SynthesisError::SynthesisExhausted {
                opportunity: doc.opportunity_id.clone(),
                errors,
            });
        };

        let mut schema = FeatureSchema::new();
        for (scope, key) in program.feature_keys() {
            let constraint = match preexisting.slot(&key) {
                Some(slot) if slot.scope == scope => slot.constraint.clone(),
                Some(slot) => {
                    return Err(SchemaError::SchemaConflict {
                        key,
                        left: format!("{} {}", slot.scope, slot.constraint),
                        right: format!("{scope} key"),
                    }
                    .into())
                }
                None if key == HOUSEHOLD_SIZE_KEY => SlotConstraint::Integer {
                    low: Some(1),
                    high: None,
                },
                None => self.infer_constraint(scope, &key, &program, doc)?,
            };
            schema.insert(scope, &key, constraint)?;
        }
        check_schema_closure(&program, &schema)?;
        Ok(SynthesisResult {
            attempts: raw_generations.len() as u32,
            program,
            schema,
            raw_generations,
        })
    }

    /// Ask for the slot type. How the program uses the key takes precedence
    /// over the model's answer: string comparisons force a choice slot, and
    /// a choice answer for a key only ever compared with numbers is
    /// overridden to a number.
    pub fn infer_constraint(
        &self,
        scope: ScopePattern,
        key: &str,
        program: &RuleProgram,
        doc: &RequirementDoc,
    ) -> Result<SlotConstraint, SynthesisError> {
        let code = pretty_print(program);
        let key_text = prompts::key_text(&example_path(scope, key));
        let req = self
            .gateway
            .request(prompts::get_type(&doc.body, &code, &key_text));
        let kind = self
            .gateway
            .complete_constrained(
                &req,
                &OutputConstraint::choice(["int", "float", "choice"]),
                self.max_attempts.max(1),
            )?
            .to_raw();
        let strings = program.compared_strings(key);
        let thresholds = program.numeric_thresholds().remove(key).unwrap_or_default();
        let fractional = thresholds.iter().any(|t| t.fract() != 0.0);
        let kind = match kind.as_str() {
            _ if !strings.is_empty() => "choice",
            "choice" if !thresholds.is_empty() => {
                if fractional {
                    "float"
                } else {
                    "int"
                }
            }
            "int" if fractional => "float",
            other => other,
        };
        Ok(match kind {
            "choice" => SlotConstraint::choice(self.enumerate_choices(scope, key, program, doc)?),
            "float" => SlotConstraint::real(),
            _ => SlotConstraint::Integer {
                low: Some(0),
                high: None,
            },
        })
    }

    /// Ask for the possible values of a choice slot. Every string the program
    /// compares the key against must be listed; a list missing some is sent
    /// back with the omissions named.
    pub fn enumerate_choices(
        &self,
        scope: ScopePattern,
        key: &str,
        program: &RuleProgram,
        doc: &RequirementDoc,
    ) -> Result<Vec<String>, SynthesisError> {
        let code = pretty_print(program);
        let key_text = prompts::key_text(&example_path(scope, key));
        let base = prompts::get_values(&doc.body, &code, &key_text);
        let required: Vec<String> = program.compared_strings(key).into_iter().collect();
        let mut prompt = base.clone();
        let mut last_raw = String::new();
        let mut missing = Vec::new();
        for _ in 0..self.choice_attempts.max(1) {
            let raw = self
                .gateway
                .complete(&self.gateway.request(prompt.clone()))?;
            let Some(values) = parse_string_list(&raw) else {
                last_raw = raw;
                prompt = base.clone();
                continue;
            };
            let values = dedup_choices(values);
            missing = required
                .iter()
                .filter(|r| {
                    !values
                        .iter()
                        .any(|v| normalize_choice(v) == normalize_choice(r))
                })
                .cloned()
                .collect();
            if missing.is_empty() && !values.is_empty() {
                return Ok(values);
            }
            last_raw = raw;
            prompt = format!(
                "{base}\n\nThe code also compares {key_text} against {}, so the list must include {}.",
                missing.join(", "),
                if missing.len() == 1 { "it" } else { "them" }
            );
        }
        if missing.is_empty() {
            Err(SynthesisError::MalformedChoices {
                key: key.to_string(),
                last_raw,
            })
        } else {
            Err(SynthesisError::ChoicesIncomplete {
                key: key.to_string(),
                missing,
            })
        }
    }

    /// Synthesize every document in id order. Each checker sees the slots
    /// defined by the ones before it, so shared features get one definition.
    pub fn synthesize_all(
        &self,
        docs: &[RequirementDoc],
        base: &FeatureSchema,
    ) -> Result<Vec<SynthesisResult>, SynthesisError> {
        let mut known = base.clone();
        let mut out = Vec::with_capacity(docs.len());
        for doc in docs {
            let result = self.generate_checker(doc, &known)?;
            known = known.merge(&result.schema)?;
            out.push(result);
        }
        Ok(out)
    }
}

/// Write `<id>.rule`, `<id>.schema.json`, `<id>.generations.json` and a copy
/// of the requirements into `dir`.
pub fn write_artifacts(
    dir: &Path,
    doc: &RequirementDoc,
    result: &SynthesisResult,
) -> Result<(), SynthesisError> {
    let write = |name: String, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|source| SynthesisError::Io { path, source })
    };
    std::fs::create_dir_all(dir).map_err(|source| SynthesisError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let id = &doc.opportunity_id;
    write(format!("{id}.rule"), to_checker_file(&result.program))?;
    let schema =
        serde_json::to_string_pretty(&result.schema.to_file(Some(id))).expect("schema serializes");
    write(format!("{id}{SCHEMA_SUFFIX}"), schema + "\n")?;
    let log = GenerationLog {
        opportunity: id.clone(),
        raw_generations: result.raw_generations.clone(),
    };
    write(
        format!("{id}.generations.json"),
        serde_json::to_string_pretty(&log).expect("log serializes") + "\n",
    )?;
    write(format!("{id}.txt"), doc.body.clone() + "\n")
}
