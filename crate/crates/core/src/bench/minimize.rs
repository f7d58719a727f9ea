use std::collections::BTreeSet;

use super::dataset::{evaluate_full, record_opportunities, DatasetRecord};
use super::BenchError;
use crate::corpus::Corpus;
use crate::rules::{NodeId, Trace};

/// A coverage unit: one node of one opportunity's checker.
pub type Unit = (String, NodeId);

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub household: usize,
    pub opportunity: String,
    pub trace: Trace,
    pub decision: bool,
}

impl PoolEntry {
    fn units(&self) -> impl Iterator<Item = Unit> + '_ {
        self.trace.iter().map(|&n| (self.opportunity.clone(), n))
    }
}

/// Traces of every (household, opportunity) pair in a candidate pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoveragePool {
    pub entries: Vec<PoolEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Kept (household, opportunity) pairs, ascending.
    pub pairs: Vec<(usize, String)>,
    /// Households in the order phase 1 picked them.
    pub picked: Vec<usize>,
    pub covered: BTreeSet<Unit>,
}

impl Selection {
    pub fn households(&self) -> BTreeSet<usize> {
        self.pairs.iter().map(|(h, _)| *h).collect()
    }
}

impl CoveragePool {
    /// Run every record's checkers on its profile.
    pub fn build(records: &[DatasetRecord], corpus: &Corpus) -> Result<Self, BenchError> {
        let mut entries = Vec::new();
        for (i, record) in records.iter().enumerate() {
            for checker in corpus.select(&record_opportunities(record, corpus))? {
                let (decision, trace) = evaluate_full(&checker, &record.household, i)?;
                entries.push(PoolEntry {
                    household: i,
                    opportunity: checker.id().to_string(),
                    trace,
                    decision,
                });
            }
        }
        Ok(Self { entries })
    }

    /// Add an entry, replacing any earlier one for the same pair.
    pub fn push(&mut self, entry: PoolEntry) {
        self.entries
            .retain(|e| !(e.household == entry.household && e.opportunity == entry.opportunity));
        self.entries.push(entry);
    }

    pub fn covered(&self) -> BTreeSet<Unit> {
        self.entries.iter().flat_map(|e| e.units()).collect()
    }

    fn household_units(&self, h: usize) -> BTreeSet<Unit> {
        self.entries
            .iter()
            .filter(|e| e.household == h)
            .flat_map(|e| e.units())
            .collect()
    }

    /// Greedy household selection by new coverage (ties to the lowest
    /// index), then pruning of pairs that add nothing the rest of the
    /// selection does not already cover, rescanned until none can go.
    pub fn minimize(&self) -> Selection {
        let households: BTreeSet<usize> = self.entries.iter().map(|e| e.household).collect();
        let mut covered = BTreeSet::new();
        let mut picked = Vec::new();
        let mut remaining: Vec<usize> = households.into_iter().collect();
        loop {
            let best = remaining
                .iter()
                .map(|&h| (h, self.household_units(h).difference(&covered).count()))
                .filter(|&(_, gain)| gain > 0)
                // max gain; on ties the lowest index, which comes first
                .fold(None, |best: Option<(usize, usize)>, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                });
            let Some((h, _)) = best else { break };
            covered.extend(self.household_units(h));
            picked.push(h);
            remaining.retain(|&x| x != h);
        }

        let mut kept: Vec<&PoolEntry> = self
            .entries
            .iter()
            .filter(|e| picked.contains(&e.household))
            .collect();
        kept.sort_by(|a, b| (a.household, &a.opportunity).cmp(&(b.household, &b.opportunity)));
        loop {
            let removable = (0..kept.len()).find(|&i| {
                let others: BTreeSet<Unit> = kept
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .flat_map(|(_, e)| e.units())
                    .collect();
                kept[i].units().all(|u| others.contains(&u))
            });
            match removable {
                Some(i) => {
                    kept.remove(i);
                }
                None => break,
            }
        }
        Selection {
            pairs: kept
                .iter()
                .map(|e| (e.household, e.opportunity.clone()))
                .collect(),
            picked,
            covered,
        }
    }
}

/// The selected households, each restricted to its kept opportunities.
pub fn select_records(records: &[DatasetRecord], selection: &Selection) -> Vec<DatasetRecord> {
    selection
        .households()
        .into_iter()
        .map(|h| {
            let mut r = records[h].clone();
            r.opportunities = selection
                .pairs
                .iter()
                .filter(|(x, _)| *x == h)
                .map(|(_, o)| o.clone())
                .collect();
            r.gold.retain(|k, _| r.opportunities.contains(k));
            r
        })
        .collect()
}
