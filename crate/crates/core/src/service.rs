//! HTTP API over live dialog sessions.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError};
use crate::dialog::{read_log, EngineError, Session, SessionRecord};
use crate::llm::Gateway;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingAnswer,
    Concluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiTurn {
    pub question: String,
    pub answer: String,
}

/// What clients see of a session. `current_question` is set exactly when
/// the state is `awaiting_answer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    pub state: SessionState,
    pub current_question: Option<String>,
    pub decisions: Option<BTreeMap<String, bool>>,
    pub rationale: Option<BTreeMap<String, Vec<String>>>,
    pub turns_used: usize,
    pub opportunities: Vec<String>,
    pub transcript: Vec<ApiTurn>,
}

impl ApiSession {
    pub fn from_session(session: &Session) -> Self {
        let concluded = session.is_concluded();
        Self {
            session_id: session.id().to_string(),
            state: if concluded {
                SessionState::Concluded
            } else {
                SessionState::AwaitingAnswer
            },
            current_question: session.pending().map(|p| p.question.clone()),
            decisions: session.decisions().cloned(),
            rationale: concluded.then(|| session.rationale()),
            turns_used: session.budget().used,
            opportunities: session.opportunity_ids(),
            transcript: session
                .transcript()
                .iter()
                .map(|t| ApiTurn {
                    question: t.question.clone(),
                    answer: t.answer.clone(),
                })
                .collect(),
        }
    }

    /// Rebuild a concluded session from its transcript file.
    fn from_records(records: &[SessionRecord]) -> Option<Self> {
        let mut session_id = None;
        let mut opportunities = Vec::new();
        let mut transcript = Vec::new();
        let mut concluded = None;
        for r in records {
            match r {
                SessionRecord::Open {
                    session_id: id,
                    opportunities: ids,
                    ..
                } => {
                    session_id = Some(id.clone());
                    opportunities = ids.clone();
                }
                SessionRecord::Turn { turn, .. } => transcript.push(ApiTurn {
                    question: turn.question.clone(),
                    answer: turn.answer.clone(),
                }),
                SessionRecord::Decisions {
                    decisions,
                    rationale,
                    turns_used,
                    ..
                } => concluded = Some((decisions.clone(), rationale.clone(), *turns_used)),
            }
        }
        let (decisions, rationale, turns_used) = concluded?;
        Some(Self {
            session_id: session_id?,
            state: SessionState::Concluded,
            current_question: None,
            decisions: Some(decisions),
            rationale: Some(rationale),
            turns_used,
            opportunities,
            transcript,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub opportunity_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PostAnswer {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpportunitySummary {
    pub id: String,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ServiceError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ServiceError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "session_not_found",
            format!("no session `{id}`"),
        )
    }
}

impl From<EngineError> for ServiceError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Concluded => {
                Self::new(StatusCode::CONFLICT, "session_concluded", e.to_string())
            }
            EngineError::NoPendingQuestion | EngineError::QuestionPending => {
                Self::new(StatusCode::CONFLICT, "invalid_state", e.to_string())
            }
            EngineError::NoCheckers => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "empty_opportunities",
                e.to_string(),
            ),
            EngineError::Schema(_) => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "schema_conflict",
                e.to_string(),
            ),
            EngineError::Gateway(_) => {
                Self::new(StatusCode::BAD_GATEWAY, "provider_error", e.to_string())
            }
            EngineError::Log(_) => Self::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "log_error",
                e.to_string(),
            ),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ApiError {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type Shared = Arc<Mutex<Session>>;

/// Shared service state: the corpus, one gateway, and live sessions.
pub struct AppState {
    corpus: Arc<Corpus>,
    gateway: Arc<Gateway>,
    sessions: Mutex<HashMap<String, Shared>>,
    log_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(corpus: Corpus, gateway: Arc<Gateway>) -> Self {
        Self {
            corpus: Arc::new(corpus),
            gateway,
            sessions: Mutex::new(HashMap::new()),
            log_dir: None,
        }
    }

    /// Write each session's transcript to `<dir>/<session id>.jsonl`.
    pub fn with_log_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.log_dir = Some(dir.into());
        self
    }

    fn live(&self, id: &str) -> Option<Shared> {
        self.sessions.lock().expect("session map").get(id).cloned()
    }

    fn persisted(&self, id: &str) -> Option<ApiSession> {
        // ids are generated uuids; anything else never names a file
        if !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return None;
        }
        let records = read_log(&self.log_dir.as_ref()?.join(format!("{id}.jsonl"))).ok()?;
        ApiSession::from_records(&records)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/opportunities", get(list_opportunities))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/answers", post(post_answer))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ServiceError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    })?
}

async fn list_opportunities(State(state): State<Arc<AppState>>) -> Json<Vec<OpportunitySummary>> {
    Json(
        state
            .corpus
            .checkers()
            .map(|c| OpportunitySummary {
                id: c.id().to_string(),
                title: c.requirements.as_ref().map(|r| r.title.clone()),
            })
            .collect(),
    )
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<ApiSession>), ServiceError> {
    if body.opportunity_ids.is_empty() {
        return Err(ServiceError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "empty_opportunities",
            "opportunity_ids must name at least one opportunity",
        ));
    }
    let checkers = state
        .corpus
        .select(&body.opportunity_ids)
        .map_err(|e| match e {
            CorpusError::UnknownOpportunity(_) => {
                ServiceError::new(StatusCode::NOT_FOUND, "unknown_opportunity", e.to_string())
            }
            other => ServiceError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_request",
                other.to_string(),
            ),
        })?;
    let id = uuid::Uuid::new_v4().to_string();
    let st = state.clone();
    let view = blocking(move || {
        let mut session = Session::open(id.clone(), checkers, st.gateway.clone())?;
        if let Some(dir) = &st.log_dir {
            session = session.with_log(&dir.join(format!("{id}.jsonl")))?;
        }
        session.step()?;
        let view = ApiSession::from_session(&session);
        st.sessions
            .lock()
            .expect("session map")
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<ApiSession>, ServiceError> {
    if let Some(shared) = state.live(&id) {
        let session = shared.lock().expect("session lock");
        return Ok(Json(ApiSession::from_session(&session)));
    }
    state
        .persisted(&id)
        .map(Json)
        .ok_or_else(|| ServiceError::not_found(&id))
}

async fn post_answer(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<PostAnswer>,
) -> Result<Json<ApiSession>, ServiceError> {
    let Some(shared) = state.live(&id) else {
        return match state.persisted(&id) {
            Some(_) => Err(ServiceError::new(
                StatusCode::CONFLICT,
                "session_concluded",
                format!("session `{id}` has concluded"),
            )),
            None => Err(ServiceError::not_found(&id)),
        };
    };
    blocking(move || {
        let mut session = shared.lock().expect("session lock");
        if session.is_concluded() {
            return Err(EngineError::Concluded.into());
        }
        session.answer(&body.text)?;
        Ok(Json(ApiSession::from_session(&session)))
    })
    .await
}
