use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::corpus::{Checker, Corpus};
use crate::features::KeyPath;
use crate::rules::{evaluate, EvalOutcome, Trace};
use crate::usersim::HouseholdProfile;

/// One benchmark household and the opportunities it is screened for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub household: HouseholdProfile,
    #[serde(default)]
    pub opportunities: Vec<String>,
    #[serde(default)]
    pub gold: BTreeMap<String, bool>,
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DatasetRecord>, BenchError> {
    let file = File::open(path).map_err(|e| BenchError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| BenchError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| BenchError::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<(), BenchError> {
    let file = File::create(path).map_err(|e| BenchError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(out, "{line}").map_err(|e| BenchError::io(path, e))?;
    }
    out.flush().map_err(|e| BenchError::io(path, e))
}

/// Evaluate one checker on a complete household.
pub fn evaluate_full(
    checker: &Checker,
    household: &HouseholdProfile,
    index: usize,
) -> Result<(bool, Trace), BenchError> {
    match evaluate(&checker.program, household) {
        Ok(EvalOutcome::Decision { eligible, trace }) => Ok((eligible, trace)),
        Ok(EvalOutcome::Missing { key, .. }) => Err(BenchError::IncompleteProfile {
            household: index,
            key,
        }),
        Err(e) => Err(BenchError::Checker {
            opportunity: checker.id().to_string(),
            message: e.to_string(),
        }),
    }
}

/// The opportunities a record is screened for; every corpus checker when
/// the record names none.
pub fn record_opportunities(record: &DatasetRecord, corpus: &Corpus) -> Vec<String> {
    if record.opportunities.is_empty() {
        corpus.ids().map(str::to_string).collect()
    } else {
        let mut ids = record.opportunities.clone();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Fill `gold` by running each record's checkers on its full profile.
pub fn label_gold(records: &mut [DatasetRecord], corpus: &Corpus) -> Result<(), BenchError> {
    for (i, record) in records.iter_mut().enumerate() {
        let ids = record_opportunities(record, corpus);
        let mut gold = BTreeMap::new();
        for checker in corpus.select(&ids)? {
            let (eligible, _) = evaluate_full(&checker, &record.household, i)?;
            gold.insert(checker.id().to_string(), eligible);
        }
        record.opportunities = ids;
        record.gold = gold;
    }
    Ok(())
}

/// Every key a household lacks for a checker, for error messages.
pub fn first_missing(checker: &Checker, household: &HouseholdProfile) -> Option<KeyPath> {
    match evaluate(&checker.program, household) {
        Ok(EvalOutcome::Missing { key, .. }) => Some(key),
        _ => None,
    }
}
