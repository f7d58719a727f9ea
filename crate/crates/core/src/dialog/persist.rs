use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecisionSource, Turn};

/// One line of a session transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionRecord {
    Open {
        session_id: String,
        opportunities: Vec<String>,
        max_turns: usize,
    },
    Turn {
        index: usize,
        #[serde(flatten)]
        turn: Turn,
    },
    Decisions {
        decisions: BTreeMap<String, bool>,
        sources: BTreeMap<String, DecisionSource>,
        rationale: BTreeMap<String, Vec<String>>,
        turns_used: usize,
    },
}

/// Append-only JSONL writer, flushed after every record.
pub struct SessionLog {
    out: BufWriter<File>,
}

impl SessionLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, record: &SessionRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(self.out, "{line}")?;
        self.out.flush()
    }
}

impl std::fmt::Debug for SessionLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SessionLog")
    }
}

pub fn read_log(path: &Path) -> std::io::Result<Vec<SessionRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), n + 1),
            )
        })?;
        out.push(record);
    }
    Ok(out)
}

/// The user's answers in order; feeding them to a fresh session with the
/// same checkers and a deterministic gateway reproduces the transcript.
pub fn recorded_answers(records: &[SessionRecord]) -> Vec<String> {
    records
        .iter()
        .filter_map(|r| match r {
            SessionRecord::Turn { turn, .. } => Some(turn.answer.clone()),
            _ => None,
        })
        .collect()
}
