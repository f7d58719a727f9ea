//! Prompting baselines: ask the model whether it is ready, ask it for a
//! question until it is, then ask it for the predictions.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Checker;
use crate::dialog::{history_messages, requirements_block, TurnBudget};
use crate::llm::{Gateway, GatewayError, Message, OutputConstraint, DEFAULT_MAX_ATTEMPTS};
use crate::prompts;
use crate::usersim::SimulatedUser;

/// Tries at getting a usable question out of the model per turn.
pub const ASK_ATTEMPTS: u32 = 2;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no question could be read from the model after {attempts} attempts: {last_raw:?}")]
    MalformedEmission { attempts: u32, last_raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("a baseline needs at least one opportunity")]
    NoOpportunities,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Direct,
    React,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub history: Vec<(String, String)>,
    pub requirements: String,
    pub mode: BaselineMode,
}

impl BaselineState {
    pub fn new(checkers: &[Checker], mode: BaselineMode) -> Self {
        Self {
            history: Vec::new(),
            requirements: requirements_block(checkers),
            mode,
        }
    }

    fn messages(&self, prompt: String) -> Vec<Message> {
        let mut m = history_messages(self.history.iter().map(|(q, a)| (q.as_str(), a.as_str())));
        m.push(Message::user(prompt));
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub predictions: BTreeMap<String, bool>,
    pub transcript: Vec<(String, String)>,
    pub turns: usize,
    pub warnings: Vec<String>,
}

pub struct PromptAgent {
    gateway: Arc<Gateway>,
    mode: BaselineMode,
}

/// Text after the last `Question:` marker, if any.
fn question_after_marker(raw: &str) -> Option<String> {
    let idx = raw.rfind("Question:")?;
    let q = raw[idx + "Question:".len()..]
        .lines()
        .next()
        .unwrap_or_default()
        .trim()
        .trim_matches(['"', '*'])
        .trim();
    (!q.is_empty()).then(|| q.to_string())
}

impl PromptAgent {
    pub fn new(gateway: Arc<Gateway>, mode: BaselineMode) -> Self {
        Self { gateway, mode }
    }

    pub fn ready(&self, state: &BaselineState) -> Result<bool, BaselineError> {
        let constrained = match state.mode {
            BaselineMode::Direct => self
                .gateway
                .request_with(state.messages(prompts::ready(&state.requirements))),
            BaselineMode::React => {
                let reasoning = self.gateway.complete(
                    &self
                        .gateway
                        .request_with(state.messages(prompts::cot_ready(&state.requirements))),
                )?;
                self.gateway
                    .request(prompts::cot_ready_constrained(reasoning.trim()))
            }
        };
        let v = self.gateway.complete_constrained(
            &constrained,
            &OutputConstraint::Boolean,
            DEFAULT_MAX_ATTEMPTS,
        )?;
        Ok(v.as_bool().unwrap_or(false))
    }

    pub fn ask(&self, state: &BaselineState) -> Result<String, BaselineError> {
        let prompt = match state.mode {
            BaselineMode::Direct => prompts::ask(&state.requirements),
            BaselineMode::React => prompts::react_ask(&state.requirements),
        };
        let req = self.gateway.request_with(state.messages(prompt));
        let mut last_raw = String::new();
        for _ in 0..ASK_ATTEMPTS {
            let raw = self.gateway.complete(&req)?;
            let q = match state.mode {
                BaselineMode::Direct => Some(raw.trim().to_string()).filter(|q| !q.is_empty()),
                BaselineMode::React => question_after_marker(&raw),
            };
            if let Some(q) = q {
                return Ok(q);
            }
            last_raw = raw;
        }
        Err(BaselineError::MalformedEmission {
            attempts: ASK_ATTEMPTS,
            last_raw,
        })
    }

    /// `n` predictions. An exhausted constraint yields all false and a
    /// warning rather than an error.
    pub fn predict(
        &self,
        state: &BaselineState,
        n: usize,
    ) -> Result<(Vec<bool>, Option<String>), BaselineError> {
        let constraint = OutputConstraint::BoolArray { len: n };
        let req = match state.mode {
            BaselineMode::Direct => self
                .gateway
                .request_with(state.messages(prompts::predict(&state.requirements, n))),
            BaselineMode::React => {
                let reasoning = self.gateway.complete(&self.gateway.request_with(
                    state.messages(prompts::cot_predict_reasoning(&state.requirements, n)),
                ))?;
                self.gateway
                    .request(prompts::cot_predict_constrained(reasoning.trim(), n))
            }
        };
        match self
            .gateway
            .complete_constrained(&req, &constraint, DEFAULT_MAX_ATTEMPTS)
        {
            Ok(v) => Ok((v.into_bools().unwrap_or_else(|| vec![false; n]), None)),
            Err(e @ GatewayError::ConstraintExhausted { .. }) => Ok((
                vec![false; n],
                Some(format!("prediction defaulted to all false: {e}")),
            )),
            Err(e) => Err(e.into()),
        }
    }

    /// Ask until ready or out of budget, then predict once.
    pub fn run(
        &self,
        checkers: &[Checker],
        user: &mut dyn SimulatedUser,
    ) -> Result<BaselineOutcome, BaselineError> {
        if checkers.is_empty() {
            return Err(BaselineError::NoOpportunities);
        }
        let mut checkers = checkers.to_vec();
        checkers.sort_by(|a, b| a.id().cmp(b.id()));
        let mut state = BaselineState::new(&checkers, self.mode);
        let budget = TurnBudget::for_opportunities(checkers.len());
        let mut warnings = Vec::new();
        while state.history.len() < budget.max_turns && !self.ready(&state)? {
            let q = self.ask(&state)?;
            let a = user.respond(&q)?;
            state.history.push((q, a));
        }
        if state.history.len() >= budget.max_turns {
            warnings.push(format!("turn budget of {} exhausted", budget.max_turns));
        }
        let (bools, warning) = self.predict(&state, checkers.len())?;
        warnings.extend(warning);
        Ok(BaselineOutcome {
            predictions: checkers
                .iter()
                .map(|c| c.id().to_string())
                .zip(bools)
                .collect(),
            turns: state.history.len(),
            transcript: state.history,
            warnings,
        })
    }
}

/// Coin-flip predictions with no dialog.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn predict(&mut self, opportunities: &[String]) -> BTreeMap<String, bool> {
        let mut ids = opportunities.to_vec();
        ids.sort();
        ids.into_iter()
            .map(|id| (id, self.rng.random_bool(0.5)))
            .collect()
    }
}
