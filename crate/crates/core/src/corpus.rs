//! A rule corpus on disk: `<id>.rule` checker files, each with a
//! `<id>.schema.json` beside it and optionally the `<id>.txt` requirements
//! it was written from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::features::{FeatureSchema, SchemaError};
use crate::rules::{opportunity_header, parse_program, ParseError, RuleProgram};

pub const RULE_EXT: &str = "rule";
pub const SCHEMA_SUFFIX: &str = ".schema.json";
pub const REQUIREMENTS_EXT: &str = "txt";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: {source}")]
    Schema { path: PathBuf, source: SchemaError },
    #[error("{path}: header names `{header}` but the file is named for `{file}`")]
    IdMismatch {
        path: PathBuf,
        header: String,
        file: String,
    },
    #[error("schema for `{id}` lacks slot `{key}` read by its checker")]
    SchemaIncomplete { id: String, key: String },
    #[error("unknown opportunity `{0}`")]
    UnknownOpportunity(String),
    #[error("requirements file {0} is empty")]
    EmptyRequirements(PathBuf),
    #[error("no checkers found in {0}")]
    Empty(PathBuf),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Plain-language eligibility requirements for one opportunity.
#[derive(Debug, Clone, PartialEq)]
pub struct RequirementDoc {
    pub opportunity_id: String,
    pub title: String,
    pub body: String,
}

impl RequirementDoc {
    pub fn new(
        opportunity_id: impl Into<String>,
        title: impl Into<String>,
        body: impl Into<String>,
    ) -> Self {
        Self {
            opportunity_id: opportunity_id.into(),
            title: title.into(),
            body: body.into(),
        }
    }

    /// Load `<id>.txt`. The first non-empty line doubles as the title.
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        let body = text.trim().to_string();
        if body.is_empty() {
            return Err(CorpusError::EmptyRequirements(path.to_path_buf()));
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let title = body
            .lines()
            .next()
            .unwrap_or_default()
            .trim_start_matches('#')
            .trim()
            .to_string();
        Ok(Self::new(id, title, body))
    }

    /// Every `*.txt` in `dir`, sorted by opportunity id.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, CorpusError> {
        let mut docs = Vec::new();
        for path in sorted_files(dir, REQUIREMENTS_EXT)? {
            docs.push(Self::from_path(&path)?);
        }
        Ok(docs)
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Checker {
    pub program: Arc<RuleProgram>,
    pub schema: Arc<FeatureSchema>,
    pub requirements: Option<RequirementDoc>,
}

impl Checker {
    pub fn id(&self) -> &str {
        &self.program.opportunity_id
    }

    /// Text handed to prompts that need the requirements. Falls back to the
    /// checker source when no requirements file was shipped.
    pub fn requirements_text(&self) -> &str {
        match &self.requirements {
            Some(doc) => &doc.body,
            None => self.program.source_text(),
        }
    }
}

/// Every slot the program reads must be in its schema.
pub fn check_schema_closure(
    program: &RuleProgram,
    schema: &FeatureSchema,
) -> Result<(), CorpusError> {
    for (scope, key) in program.feature_keys() {
        match schema.slot(&key) {
            Some(slot) if slot.scope == scope => {}
            _ => {
                return Err(CorpusError::SchemaIncomplete {
                    id: program.opportunity_id.clone(),
                    key,
                })
            }
        }
    }
    Ok(())
}

/// Checkers keyed (and therefore ordered) by opportunity id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    checkers: BTreeMap<String, Checker>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, checker: Checker) {
        self.checkers.insert(checker.id().to_string(), checker);
    }

    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let mut corpus = Self::new();
        for path in sorted_files(dir, RULE_EXT)? {
            let source = std::fs::read_to_string(&path).map_err(io(&path))?;
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let id = match opportunity_header(&source) {
                Some(h) if h != stem => {
                    return Err(CorpusError::IdMismatch {
                        path,
                        header: h.to_string(),
                        file: stem,
                    })
                }
                Some(h) => h.to_string(),
                None => stem,
            };
            let program = parse_program(&source, &id).map_err(|source| CorpusError::Parse {
                path: path.clone(),
                source,
            })?;
            let schema_path = dir.join(format!("{id}{SCHEMA_SUFFIX}"));
            let text = std::fs::read_to_string(&schema_path).map_err(io(&schema_path))?;
            let schema =
                FeatureSchema::from_json_str(&text).map_err(|source| CorpusError::Schema {
                    path: schema_path.clone(),
                    source,
                })?;
            check_schema_closure(&program, &schema)?;
            let req_path = dir.join(format!("{id}.{REQUIREMENTS_EXT}"));
            let requirements = if req_path.is_file() {
                Some(RequirementDoc::from_path(&req_path)?)
            } else {
                None
            };
            corpus.insert(Checker {
                program: Arc::new(program),
                schema: Arc::new(schema),
                requirements,
            });
        }
        if corpus.is_empty() {
            return Err(CorpusError::Empty(dir.to_path_buf()));
        }
        Ok(corpus)
    }

    pub fn get(&self, id: &str) -> Option<&Checker> {
        self.checkers.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.checkers.keys().map(String::as_str)
    }

    pub fn checkers(&self) -> impl Iterator<Item = &Checker> {
        self.checkers.values()
    }

    pub fn len(&self) -> usize {
        self.checkers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkers.is_empty()
    }

    /// The named checkers in id order, deduplicated.
    pub fn select(&self, ids: &[String]) -> Result<Vec<Checker>, CorpusError> {
        let mut ids: Vec<&String> = ids.iter().collect();
        ids.sort();
        ids.dedup();
        ids.into_iter()
            .map(|id| {
                self.checkers
                    .get(id)
                    .cloned()
                    .ok_or_else(|| CorpusError::UnknownOpportunity(id.clone()))
            })
            .collect()
    }

    /// Union of every checker's schema.
    pub fn merged_schema(&self) -> Result<FeatureSchema, SchemaError> {
        self.checkers
            .values()
            .try_fold(FeatureSchema::new(), |acc, c| acc.merge(&c.schema))
    }
}
