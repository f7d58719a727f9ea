//! The adaptive dialog loop: run every checker against what is known, ask
//! about the first feature one of them is missing, map the answer onto the
//! feature's slot, and stop once every checker has returned.

mod persist;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Checker;
use crate::features::{
    FeatureSchema, FeatureStore, KeyPath, SchemaError, Scope, StoreError, Value,
};
use crate::llm::{Gateway, GatewayError, Message, OutputConstraint, DEFAULT_MAX_ATTEMPTS};
use crate::prompts;
use crate::rules::{evaluate, node_summary, EvalOutcome, NodeId, NodeKind, RuleProgram, Trace};
use crate::usersim::{label, SimulatedUser};

pub use persist::{read_log, recorded_answers, SessionLog, SessionRecord};

/// Questions allowed per opportunity before the budget cap.
pub const TURNS_PER_OPPORTUNITY: usize = 20;
pub const MAX_TURNS: usize = 100;
/// Re-asks allowed after an answer that cannot be mapped.
pub const MAX_CLARITY_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("a session needs at least one checker")]
    NoCheckers,
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("a question is awaiting an answer")]
    QuestionPending,
    #[error("no question is awaiting an answer")]
    NoPendingQuestion,
    #[error("the session has concluded")]
    Concluded,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("transcript write failed: {0}")]
    Log(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnBudget {
    pub max_turns: usize,
    pub used: usize,
}

impl TurnBudget {
    pub fn for_opportunities(k: usize) -> Self {
        Self {
            max_turns: (TURNS_PER_OPPORTUNITY * k).min(MAX_TURNS),
            used: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.max_turns - self.used
    }

    pub fn exhausted(&self) -> bool {
        self.used >= self.max_turns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnOutcome {
    Stored,
    Clarified,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub question: String,
    pub answer: String,
    pub key: KeyPath,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extracted: Option<Value>,
    pub outcome: TurnOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuestion {
    pub key: KeyPath,
    pub question: String,
    /// The question as first asked, before any clarification wording.
    pub base_question: String,
    pub clarity_attempts_used: u32,
    pub source_node: NodeId,
    pub source_program: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgentAction {
    Ask(String),
    Conclude(BTreeMap<String, bool>),
}

/// Where a decision came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    /// The checker returned.
    Computed,
    /// The checker was blocked and the model predicted the outcome.
    Predicted,
    /// The checker was blocked and the prediction failed.
    DefaultFalse,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Stored(Value),
    /// The answer could not be used; the pending question now holds the
    /// clarification to ask.
    Clarify(String),
    Abandoned,
}

/// Why a checker could not return.
#[derive(Debug, Clone, PartialEq)]
enum Blocked {
    Unanswerable(KeyPath),
    Fault(String),
}

/// One live eligibility dialog over a fixed set of checkers.
#[derive(Debug)]
pub struct Session {
    id: String,
    checkers: Vec<Checker>,
    store: FeatureStore,
    gateway: Arc<Gateway>,
    transcript: Vec<Turn>,
    pending: Option<PendingQuestion>,
    budget: TurnBudget,
    computed: BTreeMap<String, (bool, Trace)>,
    unanswerable: BTreeSet<KeyPath>,
    decisions: Option<BTreeMap<String, bool>>,
    sources: BTreeMap<String, DecisionSource>,
    warnings: Vec<String>,
    log: Option<SessionLog>,
}

impl Session {
    /// Checkers are ordered by opportunity id; shared keys must agree across
    /// their schemas.
    pub fn open(
        id: impl Into<String>,
        checkers: Vec<Checker>,
        gateway: Arc<Gateway>,
    ) -> Result<Self, EngineError> {
        if checkers.is_empty() {
            return Err(EngineError::NoCheckers);
        }
        let mut checkers = checkers;
        checkers.sort_by(|a, b| a.id().cmp(b.id()));
        checkers.dedup_by(|a, b| a.id() == b.id());
        let schema = checkers
            .iter()
            .try_fold(FeatureSchema::new(), |acc, c| acc.merge(&c.schema))?;
        let budget = TurnBudget::for_opportunities(checkers.len());
        Ok(Self {
            id: id.into(),
            checkers,
            store: FeatureStore::new(Arc::new(schema)),
            gateway,
            transcript: Vec::new(),
            pending: None,
            budget,
            computed: BTreeMap::new(),
            unanswerable: BTreeSet::new(),
            decisions: None,
            sources: BTreeMap::new(),
            warnings: Vec::new(),
            log: None,
        })
    }

    /// Write the transcript to `path` as the session progresses.
    pub fn with_log(mut self, path: &Path) -> Result<Self, EngineError> {
        let mut log = SessionLog::create(path)?;
        log.write(&SessionRecord::Open {
            session_id: self.id.clone(),
            opportunities: self.opportunity_ids(),
            max_turns: self.budget.max_turns,
        })?;
        self.log = Some(log);
        Ok(self)
    }

    /// Override the turn budget (tests and constrained deployments).
    pub fn with_max_turns(mut self, max_turns: usize) -> Self {
        self.budget.max_turns = max_turns;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn opportunity_ids(&self) -> Vec<String> {
        self.checkers.iter().map(|c| c.id().to_string()).collect()
    }

    pub fn store(&self) -> &FeatureStore {
        &self.store
    }

    pub fn transcript(&self) -> &[Turn] {
        &self.transcript
    }

    pub fn pending(&self) -> Option<&PendingQuestion> {
        self.pending.as_ref()
    }

    pub fn budget(&self) -> TurnBudget {
        self.budget
    }

    pub fn decisions(&self) -> Option<&BTreeMap<String, bool>> {
        self.decisions.as_ref()
    }

    pub fn sources(&self) -> &BTreeMap<String, DecisionSource> {
        &self.sources
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn unanswerable(&self) -> &BTreeSet<KeyPath> {
        &self.unanswerable
    }

    pub fn is_concluded(&self) -> bool {
        self.decisions.is_some()
    }

    /// Trace of a checker that returned.
    pub fn trace(&self, opportunity: &str) -> Option<&Trace> {
        self.computed.get(opportunity).map(|(_, t)| t)
    }

    fn log(&mut self, record: SessionRecord) -> Result<(), EngineError> {
        if let Some(log) = self.log.as_mut() {
            log.write(&record)?;
        }
        Ok(())
    }

    /// Advance the dialog: ask about the first missing feature, or conclude.
    pub fn step(&mut self) -> Result<AgentAction, EngineError> {
        if self.pending.is_some() {
            return Err(EngineError::QuestionPending);
        }
        if let Some(d) = &self.decisions {
            return Ok(AgentAction::Conclude(d.clone()));
        }
        let mut first_miss: Option<(usize, KeyPath, NodeId)> = None;
        let mut blocked: Vec<(usize, Blocked)> = Vec::new();
        for (i, checker) in self.checkers.iter().enumerate() {
            if self.computed.contains_key(checker.id()) {
                continue;
            }
            match evaluate(&checker.program, &self.store) {
                Ok(EvalOutcome::Decision { eligible, trace }) => {
                    self.computed
                        .insert(checker.id().to_string(), (eligible, trace));
                }
                Ok(EvalOutcome::Missing { key, node }) => {
                    if self.unanswerable.contains(&key) {
                        blocked.push((i, Blocked::Unanswerable(key)));
                    } else if first_miss.is_none() {
                        first_miss = Some((i, key, node));
                    }
                }
                Err(e) => blocked.push((i, Blocked::Fault(e.to_string()))),
            }
        }
        for (i, why) in blocked {
            if let Blocked::Fault(message) = why {
                let w = format!("{}: {message}", self.checkers[i].id());
                if !self.warnings.contains(&w) {
                    tracing::warn!(session = %self.id, "{w}");
                    self.warnings.push(w);
                }
            }
        }
        match first_miss {
            Some((i, key, node)) if !self.budget.exhausted() => {
                let checker = &self.checkers[i];
                let question = formulate_question(
                    &self.gateway,
                    &key,
                    checker.program.source_line(node),
                    checker.requirements_text(),
                )?;
                self.pending = Some(PendingQuestion {
                    key,
                    question: question.clone(),
                    base_question: question.clone(),
                    clarity_attempts_used: 0,
                    source_node: node,
                    source_program: checker.id().to_string(),
                });
                self.budget.used += 1;
                Ok(AgentAction::Ask(question))
            }
            Some(_) => {
                self.warnings.push(format!(
                    "turn budget of {} exhausted",
                    self.budget.max_turns
                ));
                self.finish()
            }
            None => self.finish(),
        }
    }

    /// Decide everything still undecided and record the decisions.
    fn finish(&mut self) -> Result<AgentAction, EngineError> {
        let undecided: Vec<usize> = (0..self.checkers.len())
            .filter(|&i| !self.computed.contains_key(self.checkers[i].id()))
            .collect();
        let predicted = self.conclude_fallback(&undecided);
        let mut decisions = BTreeMap::new();
        for checker in &self.checkers {
            let id = checker.id().to_string();
            let (value, source) = match self.computed.get(&id) {
                Some((eligible, _)) => (*eligible, DecisionSource::Computed),
                None => predicted
                    .get(&id)
                    .cloned()
                    .unwrap_or((false, DecisionSource::DefaultFalse)),
            };
            decisions.insert(id.clone(), value);
            self.sources.insert(id, source);
        }
        self.decisions = Some(decisions.clone());
        let rationale = self.rationale();
        self.log(SessionRecord::Decisions {
            decisions: decisions.clone(),
            sources: self.sources.clone(),
            rationale,
            turns_used: self.budget.used,
        })?;
        Ok(AgentAction::Conclude(decisions))
    }

    /// One boolean-array prediction over the undecided checkers, from the
    /// transcript so far. Any failure leaves them all false.
    fn conclude_fallback(
        &mut self,
        undecided: &[usize],
    ) -> BTreeMap<String, (bool, DecisionSource)> {
        if undecided.is_empty() {
            return BTreeMap::new();
        }
        let checkers: Vec<&Checker> = undecided.iter().map(|&i| &self.checkers[i]).collect();
        let requirements = requirements_block(checkers.iter().copied());
        let mut messages = history_messages(
            self.transcript
                .iter()
                .map(|t| (t.question.as_str(), t.answer.as_str())),
        );
        messages.push(Message::user(prompts::predict(
            &requirements,
            checkers.len(),
        )));
        let req = self.gateway.request_with(messages);
        let result = self.gateway.complete_constrained(
            &req,
            &OutputConstraint::BoolArray {
                len: checkers.len(),
            },
            DEFAULT_MAX_ATTEMPTS,
        );
        match result.map(|c| c.into_bools()) {
            Ok(Some(bools)) => checkers
                .iter()
                .zip(bools)
                .map(|(c, b)| (c.id().to_string(), (b, DecisionSource::Predicted)))
                .collect(),
            Ok(None) | Err(_) => {
                let w =
                    "fallback prediction failed; undecided opportunities set to false".to_string();
                tracing::warn!(session = %self.id, "{w}");
                self.warnings.push(w);
                checkers
                    .iter()
                    .map(|c| (c.id().to_string(), (false, DecisionSource::DefaultFalse)))
                    .collect()
            }
        }
    }

    /// Map the user's reply onto the pending question's slot.
    pub fn ingest_answer(&mut self, answer: &str) -> Result<IngestOutcome, EngineError> {
        if self.decisions.is_some() {
            return Err(EngineError::Concluded);
        }
        let Some(pending) = self.pending.clone() else {
            return Err(EngineError::NoPendingQuestion);
        };
        let requirements = self
            .checkers
            .iter()
            .find(|c| c.id() == pending.source_program)
            .map(|c| {
                (
                    c.requirements_text().to_string(),
                    c.program.source_line(pending.source_node).to_string(),
                )
            })
            .unwrap_or_default();
        let extracted = self
            .extract(&pending, &requirements.0, &requirements.1, answer)
            .and_then(|raw| {
                self.store
                    .put(&pending.key, &raw)
                    .cloned()
                    .map_err(|e| match e {
                        StoreError::Validation(v) => v.reason,
                        other => other.to_string(),
                    })
            });
        let (outcome, turn_outcome, value) = match extracted {
            Ok(value) => (
                IngestOutcome::Stored(value.clone()),
                TurnOutcome::Stored,
                Some(value),
            ),
            Err(reason)
                if pending.clarity_attempts_used < MAX_CLARITY_ATTEMPTS
                    && !self.budget.exhausted() =>
            {
                let question = prompts::clarify(&pending.base_question, &reason);
                (
                    IngestOutcome::Clarify(question),
                    TurnOutcome::Clarified,
                    None,
                )
            }
            Err(reason) => {
                tracing::debug!(session = %self.id, key = %pending.key, %reason, "giving up on key");
                (IngestOutcome::Abandoned, TurnOutcome::Abandoned, None)
            }
        };
        let turn = Turn {
            question: pending.question.clone(),
            answer: answer.to_string(),
            key: pending.key.clone(),
            extracted: value,
            outcome: turn_outcome,
        };
        self.transcript.push(turn.clone());
        match &outcome {
            IngestOutcome::Clarify(question) => {
                self.pending = Some(PendingQuestion {
                    question: question.clone(),
                    clarity_attempts_used: pending.clarity_attempts_used + 1,
                    ..pending
                });
                self.budget.used += 1;
            }
            IngestOutcome::Abandoned => {
                self.unanswerable.insert(pending.key.clone());
                self.pending = None;
            }
            IngestOutcome::Stored(_) => self.pending = None,
        }
        self.log(SessionRecord::Turn {
            index: self.transcript.len() - 1,
            turn,
        })?;
        Ok(outcome)
    }

    fn extract(
        &self,
        pending: &PendingQuestion,
        requirements: &str,
        line: &str,
        answer: &str,
    ) -> Result<String, String> {
        let constraint = self
            .store
            .schema()
            .constraint_for(&pending.key)
            .map_err(|e| e.to_string())?
            .clone();
        let prompt = prompts::extract_value(
            requirements,
            line,
            &prompts::key_text(&pending.key),
            &pending.question,
            answer,
        );
        self.gateway
            .complete_constrained(
                &self.gateway.request(prompt),
                &OutputConstraint::for_slot(&constraint),
                DEFAULT_MAX_ATTEMPTS,
            )
            .map_err(|e| match e {
                GatewayError::ConstraintExhausted { .. } => format!("expected {constraint}"),
                other => other.to_string(),
            })
            .map(|c| c.to_raw())
    }

    /// Ingest an answer and advance: the next question (possibly a
    /// clarification) or the decisions.
    pub fn answer(&mut self, text: &str) -> Result<AgentAction, EngineError> {
        match self.ingest_answer(text)? {
            IngestOutcome::Clarify(q) => Ok(AgentAction::Ask(q)),
            IngestOutcome::Stored(_) | IngestOutcome::Abandoned => self.step(),
        }
    }

    /// Per-opportunity explanation: the executed conditionals and the return
    /// reached, or how the decision was made without one.
    pub fn rationale(&self) -> BTreeMap<String, Vec<String>> {
        let mut out = BTreeMap::new();
        for checker in &self.checkers {
            let id = checker.id().to_string();
            let lines = match self.computed.get(&id) {
                Some((_, trace)) => trace_rationale(&checker.program, trace),
                None => {
                    let blocked: Vec<String> = self
                        .unanswerable
                        .iter()
                        .filter(|k| checker.program.reads_key(k))
                        .map(|k| k.to_string())
                        .collect();
                    let mut lines = vec![match self.sources.get(&id) {
                        Some(DecisionSource::Predicted) => {
                            "decided by model prediction; the checker did not finish".to_string()
                        }
                        _ => "defaulted to not eligible; the checker did not finish".to_string(),
                    }];
                    if !blocked.is_empty() {
                        lines.push(format!("unanswered: {}", blocked.join(", ")));
                    }
                    lines
                }
            };
            out.insert(id, lines);
        }
        out
    }

    /// Drive the session to its end against a simulated user.
    pub fn run_with(
        &mut self,
        user: &mut dyn SimulatedUser,
    ) -> Result<BTreeMap<String, bool>, EngineError> {
        let mut action = self.step()?;
        loop {
            match action {
                AgentAction::Conclude(d) => return Ok(d),
                AgentAction::Ask(q) => {
                    let reply = user.respond(&q)?;
                    action = self.answer(&reply)?;
                }
            }
        }
    }
}

/// The executed conditionals (with the branch taken) and the return reached,
/// in source order.
pub fn trace_rationale(program: &RuleProgram, trace: &Trace) -> Vec<String> {
    let mut lines = Vec::new();
    for &id in trace {
        match &program.node(id).kind {
            NodeKind::Conditional {
                then_branch,
                else_branch,
                ..
            } => {
                let outcome = match (trace.contains(then_branch), trace.contains(else_branch)) {
                    (true, true) => "true for some members, false for others",
                    (true, false) => "true",
                    _ => "false",
                };
                lines.push(format!("{} -> {outcome}", node_summary(program, id)));
            }
            NodeKind::Return { .. } | NodeKind::MemberLoop { .. } => {
                lines.push(node_summary(program, id))
            }
            NodeKind::Block { .. } | NodeKind::Assignment { .. } => {}
        }
    }
    lines
}

/// Numbered requirements for several opportunities, as embedded in the
/// prediction prompts.
pub fn requirements_block<'a>(checkers: impl IntoIterator<Item = &'a Checker>) -> String {
    checkers
        .into_iter()
        .enumerate()
        .map(|(i, c)| format!("Program {i} ({}):\n{}", c.id(), c.requirements_text()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Prior dialog as alternating assistant questions and user answers.
pub fn history_messages<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Vec<Message> {
    let mut out = Vec::new();
    for (q, a) in pairs {
        out.push(Message::assistant(q));
        out.push(Message::user(a));
    }
    out
}

fn default_question(key: &KeyPath) -> String {
    let l = label(&key.key);
    match key.scope {
        Scope::Member(i) => format!("What is the {l} of person {i}?"),
        Scope::Household if key.key == crate::features::HOUSEHOLD_SIZE_KEY => {
            "How many people live in your household, including you?".to_string()
        }
        Scope::Household => format!("What is your household's {l}?"),
    }
}

/// Turn a missing key into a question for the user. Model output is kept
/// when it is a single question naming the member for member-scoped keys;
/// raw underscore key names are replaced with their spoken form.
pub fn formulate_question(
    gateway: &Gateway,
    key: &KeyPath,
    line: &str,
    requirements: &str,
) -> Result<String, GatewayError> {
    let prompt = prompts::key_error(requirements, line, &prompts::key_text(key));
    let raw = gateway.complete(&gateway.request(prompt))?;
    let mut q = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or_default()
        .trim_matches(['"', '`'])
        .trim()
        .to_string();
    if key.key.contains('_') {
        q = q.replace(&key.key, &label(&key.key));
    }
    let names_member = match key.scope {
        Scope::Member(i) => {
            let lower = q.to_lowercase();
            lower.contains(&format!("person {i}"))
        }
        Scope::Household => true,
    };
    if q.is_empty() || !names_member || q.contains("hh[") {
        q = default_question(key);
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_caps_at_one_hundred() {
        assert_eq!(TurnBudget::for_opportunities(1).max_turns, 20);
        assert_eq!(TurnBudget::for_opportunities(5).max_turns, 100);
        assert_eq!(TurnBudget::for_opportunities(10).max_turns, 100);
    }

    #[test]
    fn default_questions_are_readable() {
        assert_eq!(
            default_question(&KeyPath::member(2, "in_foster_care")),
            "What is the in foster care of person 2?"
        );
        assert!(!default_question(&KeyPath::household("annual_income")).contains('_'));
    }
}
