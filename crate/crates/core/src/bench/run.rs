use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetRecord;
use super::metrics::{micro_f1, turn_weighted_f1};
use super::BenchError;
use crate::baseline::{BaselineMode, PromptAgent, RandomAgent};
use crate::corpus::Corpus;
use crate::dialog::Session;
use crate::llm::Gateway;
use crate::usersim::{LlmUser, OracleUser, SimulatedUser};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Proada,
    Direct,
    React,
    Random,
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proada" => Ok(Self::Proada),
            "direct" => Ok(Self::Direct),
            "react" => Ok(Self::React),
            "random" => Ok(Self::Random),
            other => Err(format!(
                "unknown agent `{other}` (expected proada, direct, react or random)"
            )),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Proada => "proada",
            Self::Direct => "direct",
            Self::React => "react",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserMode {
    Oracle,
    Llm,
}

impl FromStr for UserMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "llm" => Ok(Self::Llm),
            other => Err(format!(
                "unknown user mode `{other}` (expected oracle or llm)"
            )),
        }
    }
}

impl fmt::Display for UserMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Oracle => "oracle",
            Self::Llm => "llm",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub agent: AgentKind,
    pub user: UserMode,
    pub seed: u64,
    pub parallelism: usize,
    /// Per-session transcripts are written here when set.
    pub transcripts: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(agent: AgentKind, user: UserMode, seed: u64) -> Self {
        Self {
            agent,
            user,
            seed,
            parallelism: 1,
            transcripts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub household: usize,
    pub opportunity: String,
    pub prediction: bool,
    pub gold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub household: usize,
    pub turns: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub agent: AgentKind,
    pub provider: String,
    pub model: String,
    pub user: UserMode,
    pub seed: u64,
    pub households: usize,
    pub pairs: usize,
    /// Clarification re-asks are counted as turns. Not counting them would
    /// give lower turn means for the adaptive agent.
    pub clarifications_counted_as_turns: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metadata: ReportMetadata,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No true positives anywhere; F1 is 0 by convention.
    pub degenerate_f1: bool,
    pub turns_mean: f64,
    pub turn_weighted_f1: f64,
    pub failed_sessions: Vec<usize>,
    pub sessions: Vec<SessionSummary>,
    pub pairs: Vec<PairResult>,
}

impl BenchmarkReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<(), BenchError> {
        std::fs::write(path, self.to_json_pretty() + "\n").map_err(|e| BenchError::io(path, e))
    }
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum BaselineRecord<'a> {
    Turn {
        index: usize,
        question: &'a str,
        answer: &'a str,
    },
    Predictions {
        predictions: &'a BTreeMap<String, bool>,
        turns: usize,
    },
}

struct SessionRun {
    predictions: BTreeMap<String, bool>,
    summary: SessionSummary,
}

fn household_seed(seed: u64, household: usize) -> u64 {
    seed ^ (household as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_one(
    index: usize,
    record: &DatasetRecord,
    corpus: &Corpus,
    gateway: &Arc<Gateway>,
    opts: &RunOptions,
) -> Result<SessionRun, String> {
    let checkers = corpus
        .select(&record.opportunities)
        .map_err(|e| e.to_string())?;
    let mut user: Box<dyn SimulatedUser> = match opts.user {
        UserMode::Oracle => Box::new(OracleUser::new(&record.household)),
        UserMode::Llm => Box::new(LlmUser::new(gateway.clone(), &record.household)),
    };
    let transcript_path = opts
        .transcripts
        .as_ref()
        .map(|dir| dir.join(format!("household-{index:04}.jsonl")));
    match opts.agent {
        AgentKind::Proada => {
            let mut session =
                Session::open(format!("household-{index:04}"), checkers, gateway.clone())
                    .map_err(|e| e.to_string())?;
            if let Some(path) = &transcript_path {
                session = session.with_log(path).map_err(|e| e.to_string())?;
            }
            let predictions = session.run_with(user.as_mut()).map_err(|e| e.to_string())?;
            Ok(SessionRun {
                predictions,
                summary: SessionSummary {
                    household: index,
                    turns: session.budget().used,
                    failed: None,
                    warnings: session.warnings().to_vec(),
                },
            })
        }
        AgentKind::Direct | AgentKind::React => {
            let mode = if opts.agent == AgentKind::Direct {
                BaselineMode::Direct
            } else {
                BaselineMode::React
            };
            let outcome = PromptAgent::new(gateway.clone(), mode)
                .run(&checkers, user.as_mut())
                .map_err(|e| e.to_string())?;
            if let Some(path) = &transcript_path {
                write_baseline_transcript(
                    path,
                    &outcome.transcript,
                    &outcome.predictions,
                    outcome.turns,
                )
                .map_err(|e| e.to_string())?;
            }
            Ok(SessionRun {
                predictions: outcome.predictions,
                summary: SessionSummary {
                    household: index,
                    turns: outcome.turns,
                    failed: None,
                    warnings: outcome.warnings,
                },
            })
        }
        AgentKind::Random => {
            let ids: Vec<String> = checkers.iter().map(|c| c.id().to_string()).collect();
            let predictions = RandomAgent::new(household_seed(opts.seed, index)).predict(&ids);
            if let Some(path) = &transcript_path {
                write_baseline_transcript(path, &[], &predictions, 0).map_err(|e| e.to_string())?;
            }
            Ok(SessionRun {
                predictions,
                summary: SessionSummary {
                    household: index,
                    turns: 0,
                    failed: None,
                    warnings: Vec::new(),
                },
            })
        }
    }
}

fn write_baseline_transcript(
    path: &Path,
    turns: &[(String, String)],
    predictions: &BTreeMap<String, bool>,
    used: usize,
) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (index, (question, answer)) in turns.iter().enumerate() {
        let r = BaselineRecord::Turn {
            index,
            question,
            answer,
        };
        writeln!(
            out,
            "{}",
            serde_json::to_string(&r).expect("record serializes")
        )?;
    }
    let r = BaselineRecord::Predictions {
        predictions,
        turns: used,
    };
    writeln!(
        out,
        "{}",
        serde_json::to_string(&r).expect("record serializes")
    )?;
    out.flush()
}

/// One session per household over its opportunities, then pooled metrics.
/// A failed session is reported and scored as all-false predictions.
pub fn run_benchmark(
    dataset: &[DatasetRecord],
    corpus: &Corpus,
    gateway: Arc<Gateway>,
    opts: &RunOptions,
) -> Result<BenchmarkReport, BenchError> {
    for (i, r) in dataset.iter().enumerate() {
        if let Some(missing) = r.opportunities.iter().find(|o| !r.gold.contains_key(*o)) {
            return Err(BenchError::Unlabeled {
                household: i,
                opportunity: missing.clone(),
            });
        }
        corpus.select(&r.opportunities)?;
    }
    let pair_count: usize = dataset.iter().map(|r| r.opportunities.len()).sum();
    if pair_count == 0 {
        return Err(BenchError::EmptyReport);
    }
    if let Some(dir) = &opts.transcripts {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }

    let run = |(i, record): (usize, &DatasetRecord)| {
        if record.opportunities.is_empty() {
            return SessionRun {
                predictions: BTreeMap::new(),
                summary: SessionSummary {
                    household: i,
                    turns: 0,
                    failed: None,
                    warnings: Vec::new(),
                },
            };
        }
        run_one(i, record, corpus, &gateway, opts).unwrap_or_else(|message| {
            tracing::warn!(household = i, %message, "session failed");
            SessionRun {
                predictions: record
                    .opportunities
                    .iter()
                    .map(|o| (o.clone(), false))
                    .collect(),
                summary: SessionSummary {
                    household: i,
                    turns: 0,
                    failed: Some(message),
                    warnings: Vec::new(),
                },
            }
        })
    };
    let runs: Vec<SessionRun> = if opts.parallelism <= 1 {
        dataset.iter().enumerate().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallelism)
            .build()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        pool.install(|| dataset.par_iter().enumerate().map(run).collect())
    };

    let mut pairs = Vec::with_capacity(pair_count);
    for (i, (record, run)) in dataset.iter().zip(&runs).enumerate() {
        let mut ids = record.opportunities.clone();
        ids.sort();
        ids.dedup();
        for o in ids {
            pairs.push(PairResult {
                household: i,
                prediction: run.predictions.get(&o).copied().unwrap_or(false),
                gold: record.gold[&o],
                opportunity: o,
            });
        }
    }
    let scores = micro_f1(
        &pairs
            .iter()
            .map(|p| (p.prediction, p.gold))
            .collect::<Vec<_>>(),
    )
    .ok_or(BenchError::EmptyReport)?;
    let sessions: Vec<SessionSummary> = runs.into_iter().map(|r| r.summary).collect();
    let turns_mean = sessions.iter().map(|s| s.turns as f64).sum::<f64>() / sessions.len() as f64;
    Ok(BenchmarkReport {
        metadata: ReportMetadata {
            agent: opts.agent,
            provider: gateway.provider_name().to_string(),
            model: gateway.model().to_string(),
            user: opts.user,
            seed: opts.seed,
            households: dataset.len(),
            pairs: pairs.len(),
            clarifications_counted_as_turns: true,
        },
        precision: scores.precision,
        recall: scores.recall,
        f1: scores.f1,
        degenerate_f1: scores.degenerate,
        turns_mean,
        turn_weighted_f1: turn_weighted_f1(scores.f1, turns_mean),
        failed_sessions: sessions
            .iter()
            .filter(|s| s.failed.is_some())
            .map(|s| s.household)
            .collect(),
        sessions,
        pairs,
    })
}
