//! HTTP JSON API over a loaded dataset split.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgabduce::abducer::{abduce, refine, Abduction, ScoredHypothesis, SearchBudget, SearchMode};
use kgabduce::enumerate::ExhaustiveBound;
use kgabduce::error::IdKind;
use kgabduce::executor::evaluate;
use kgabduce::graph::SplitName;
use kgabduce::rewards::{combined_reward, RewardBreakdown, RewardWeights};
use kgabduce::synth::derive_seed;
use kgabduce::{parse, DatasetSplit, Direction, EntityId, EntitySet, Error, KnowledgeGraph};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::view::{self, ConditionInput, Named, ResultItem};

pub const MAX_ENTITY_HITS: usize = 50;
pub const DEFAULT_K: usize = 5;

/// Machine-readable error codes. The set is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedRequest,
    InvalidCondition,
    InvalidHypothesis,
    UnknownEntity,
    UnknownRelation,
    UnknownSession,
    EmptyObservation,
    Unsatisfiable,
    ExhaustiveBound,
    GraphLoading,
    Internal,
}

impl ErrorCode {
    fn status(self) -> StatusCode {
        match self {
            ErrorCode::MalformedRequest | ErrorCode::InvalidCondition | ErrorCode::InvalidHypothesis => {
                StatusCode::BAD_REQUEST
            }
            ErrorCode::UnknownEntity | ErrorCode::UnknownRelation | ErrorCode::UnknownSession => StatusCode::NOT_FOUND,
            ErrorCode::EmptyObservation | ErrorCode::Unsatisfiable | ErrorCode::ExhaustiveBound => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ErrorCode::GraphLoading => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::OutOfRange { kind: IdKind::Entity, .. } => ErrorCode::UnknownEntity,
            Error::OutOfRange { kind: IdKind::Relation, .. } => ErrorCode::UnknownRelation,
            Error::Syntax { .. } => ErrorCode::InvalidHypothesis,
            Error::Condition { .. } => ErrorCode::InvalidCondition,
            Error::SizeBound { .. } => ErrorCode::ExhaustiveBound,
            Error::Contract(_) => ErrorCode::Unsatisfiable,
            _ => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(ErrorCode::MalformedRequest, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(ErrorCode::MalformedRequest, r.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Session {
    rounds: Vec<Round>,
    last_top: Option<ScoredHypothesis>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopSummary {
    pub hypothesis_text: String,
    pub hypothesis_named: String,
    pub jaccard: f64,
    pub r_hat: f64,
    pub condition_ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Round {
    pub index: usize,
    pub observation: EntitySet,
    pub condition: String,
    pub seed: u64,
    pub top: Option<TopSummary>,
}

struct Inner {
    loaded: OnceLock<(DatasetSplit, SplitName)>,
    sessions: Mutex<HashMap<u64, Arc<tokio::sync::Mutex<Session>>>>,
    next_session: AtomicU64,
    bound: ExhaustiveBound,
}

/// Shared service state. The graph may be installed after the server starts;
/// until then graph-backed endpoints answer 503.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(bound: ExhaustiveBound) -> Self {
        AppState {
            inner: Arc::new(Inner {
                loaded: OnceLock::new(),
                sessions: Mutex::new(HashMap::new()),
                next_session: AtomicU64::new(1),
                bound,
            }),
        }
    }

    pub fn with_split(split: DatasetSplit, which: SplitName, bound: ExhaustiveBound) -> Self {
        let s = AppState::new(bound);
        s.install(split, which);
        s
    }

    /// Makes the graph available. Later calls are ignored.
    pub fn install(&self, split: DatasetSplit, which: SplitName) {
        let _ = self.inner.loaded.set((split, which));
    }

    fn graph(&self) -> Result<&KnowledgeGraph, ApiError> {
        self.inner
            .loaded
            .get()
            .map(|(s, w)| s.graph(*w))
            .ok_or_else(|| ApiError::new(ErrorCode::GraphLoading, "the graph is still loading"))
    }

    fn session(&self, id: u64) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        self.inner
            .sessions
            .lock()
            .expect("session table poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::new(ErrorCode::UnknownSession, format!("no session {id}")))
    }
}

pub fn router(state: AppState, ui_origin: Option<HeaderValue>) -> Router {
    let origin = match ui_origin {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/patterns", get(patterns))
        .route("/entities", get(entities))
        .route("/neighbors/{id}", get(neighbors))
        .route("/abduce", post(abduce_handler))
        .route("/score", post(score))
        .route("/session", post(new_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/round", post(round))
        .fallback(|| async { ApiError::new(ErrorCode::MalformedRequest, "no such endpoint") })
        .layer(cors)
        .with_state(state)
}

async fn patterns() -> Json<Vec<view::PatternInfo>> {
    Json(view::patterns())
}

#[derive(Debug, Deserialize)]
struct EntityQuery {
    #[serde(default)]
    q: String,
    limit: Option<usize>,
}

async fn entities(State(st): State<AppState>, q: Result<Query<EntityQuery>, QueryRejection>) -> ApiResult<Vec<Named>> {
    let Query(q) = q?;
    let g = st.graph()?;
    let limit = q.limit.unwrap_or(MAX_ENTITY_HITS).min(MAX_ENTITY_HITS);
    Ok(Json(g.search_entities(&q.q, limit).into_iter().map(|e| view::entity(g, e)).collect()))
}

#[derive(Debug, Deserialize)]
struct NeighborQuery {
    dir: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Neighbor {
    pub relation: Named,
    pub entity: Named,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Neighbors {
    pub entity: Named,
    pub direction: String,
    pub neighbors: Vec<Neighbor>,
}

async fn neighbors(
    State(st): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<NeighborQuery>, QueryRejection>,
) -> ApiResult<Neighbors> {
    let Query(q) = q?;
    let g = st.graph()?;
    let id: u32 = id
        .parse()
        .map_err(|_| ApiError::new(ErrorCode::MalformedRequest, format!("`{id}` is not an entity id")))?;
    let (direction, label) = match q.dir.as_deref().unwrap_or("out") {
        "out" | "forward" => (Direction::Forward, "out"),
        "in" | "inverse" => (Direction::Inverse, "in"),
        other => {
            return Err(ApiError::new(
                ErrorCode::MalformedRequest,
                format!("dir must be `out` or `in`, got `{other}`"),
            ))
        }
    };
    let e = EntityId(id);
    let list = g.neighbors(e, direction)?;
    Ok(Json(Neighbors {
        entity: view::entity(g, e),
        direction: label.into(),
        neighbors: list
            .into_iter()
            .map(|(r, v)| Neighbor {
                relation: view::relation(g, r),
                entity: view::entity(g, v),
            })
            .collect(),
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetInput {
    pub mode: Option<SearchMode>,
    pub proposals_per_pattern: Option<usize>,
    pub beam_width: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct AbduceRequest {
    pub observation: Vec<u32>,
    pub condition: ConditionInput,
    #[serde(default)]
    pub budget: BudgetInput,
    pub k: Option<usize>,
    pub weights: Option<RewardWeights>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AbduceResponse {
    pub seed: u64,
    pub condition: String,
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub results: Vec<ResultItem>,
}

fn observation(g: &KnowledgeGraph, ids: &[u32]) -> Result<EntitySet, ApiError> {
    if ids.is_empty() {
        return Err(ApiError::new(ErrorCode::EmptyObservation, "observation must hold at least one entity"));
    }
    let set: EntitySet = ids.iter().copied().map(EntityId).collect();
    for &e in set.iter() {
        g.check_entity(e)?;
    }
    Ok(set)
}

fn budget(input: &BudgetInput, seed: u64, bound: ExhaustiveBound) -> SearchBudget {
    let d = SearchBudget::default();
    SearchBudget {
        proposals_per_pattern: input.proposals_per_pattern.unwrap_or(d.proposals_per_pattern),
        beam_width: input.beam_width.unwrap_or(d.beam_width),
        mode: input.mode.unwrap_or(d.mode),
        seed,
        exhaustive_bound: bound,
    }
}

fn respond(g: &KnowledgeGraph, seed: u64, condition: String, obs: &EntitySet, out: Abduction) -> AbduceResponse {
    AbduceResponse {
        seed,
        condition,
        candidates: out.candidates,
        diagnostic: out.diagnostic,
        results: out.hypotheses.iter().map(|s| ResultItem::new(g, s, obs)).collect(),
    }
}

async fn abduce_handler(State(st): State<AppState>, body: Result<Json<AbduceRequest>, JsonRejection>) -> ApiResult<AbduceResponse> {
    let Json(req) = body?;
    let g = st.graph()?;
    let obs = observation(g, &req.observation)?;
    let cond = req.condition.resolve(g)?;
    let seed = req.budget.seed.unwrap_or(0);
    let b = budget(&req.budget, seed, st.inner.bound);
    let k = req.k.unwrap_or(DEFAULT_K);
    let w = req.weights.unwrap_or_default();
    let st2 = st.clone();
    let obs2 = obs.clone();
    let out = tokio::task::spawn_blocking(move || {
        let g = st2.graph()?;
        abduce(g, &obs2, &cond, &b, k, &w).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))??;
    Ok(Json(respond(g, seed, cond.to_string(), &obs, out)))
}

#[derive(Debug, Deserialize)]
pub struct ScoreRequest {
    pub hypothesis_text: String,
    pub observation: Vec<u32>,
    pub condition: ConditionInput,
    pub weights: Option<RewardWeights>,
}

async fn score(State(st): State<AppState>, body: Result<Json<ScoreRequest>, JsonRejection>) -> ApiResult<RewardBreakdown> {
    let Json(req) = body?;
    let g = st.graph()?;
    let obs = observation(g, &req.observation)?;
    let cond = req.condition.resolve(g)?;
    let h = parse(&req.hypothesis_text)?;
    let conclusion = evaluate(g, &h)?;
    let w = req.weights.unwrap_or_default();
    w.validate()?;
    Ok(Json(combined_reward(&conclusion, &obs, &h, &cond, &w)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: u64,
    pub rounds: Vec<Round>,
}

async fn new_session(State(st): State<AppState>) -> ApiResult<SessionView> {
    st.graph()?;
    let id = st.inner.next_session.fetch_add(1, Ordering::Relaxed);
    let session = Session {
        rounds: Vec::new(),
        last_top: None,
    };
    st.inner
        .sessions
        .lock()
        .expect("session table poisoned")
        .insert(id, Arc::new(tokio::sync::Mutex::new(session)));
    Ok(Json(SessionView {
        session_id: id,
        rounds: Vec::new(),
    }))
}

fn session_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::new(ErrorCode::UnknownSession, format!("no session {raw}")))
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let id = session_id(&id)?;
    let s = st.session(id)?;
    let s = s.lock().await;
    Ok(Json(SessionView {
        session_id: id,
        rounds: s.rounds.clone(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RoundResponse {
    pub session_id: u64,
    pub round: usize,
    #[serde(flatten)]
    pub result: AbduceResponse,
    pub history: Vec<Round>,
}

/// Runs one refinement round. The previous round's top hypothesis warm-starts
/// the search; without an explicit seed one is derived from the session id
/// and round index.
async fn round(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<AbduceRequest>, JsonRejection>,
) -> ApiResult<RoundResponse> {
    let id = session_id(&id)?;
    let session = st.session(id)?;
    let Json(req) = body?;
    let g = st.graph()?;
    let obs = observation(g, &req.observation)?;
    let cond = req.condition.resolve(g)?;
    let mut s = session.lock().await;
    let index = s.rounds.len();
    let seed = req.budget.seed.unwrap_or_else(|| derive_seed(&[id, index as u64]));
    let b = budget(&req.budget, seed, st.inner.bound);
    let k = req.k.unwrap_or(DEFAULT_K);
    let w = req.weights.unwrap_or_default();
    let prev = s.last_top.clone();
    let (st2, obs2) = (st.clone(), obs.clone());
    let out = tokio::task::spawn_blocking(move || {
        let g = st2.graph()?;
        match &prev {
            Some(p) => refine(p, &cond, g, &obs2, &b, k, &w),
            None => abduce(g, &obs2, &cond, &b, k, &w),
        }
        .map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))??;
    let top = out.hypotheses.first().map(|t| TopSummary {
        hypothesis_text: t.hypothesis.to_string(),
        hypothesis_named: t.hypothesis.display_named(g),
        jaccard: t.breakdown.jaccard,
        r_hat: t.breakdown.r_hat,
        condition_ok: t.condition_ok,
    });
    if let Some(t) = out.hypotheses.first() {
        s.last_top = Some(t.clone());
    }
    s.rounds.push(Round {
        index,
        observation: obs.clone(),
        condition: cond.to_string(),
        seed,
        top,
    });
    Ok(Json(RoundResponse {
        session_id: id,
        round: index,
        result: respond(g, seed, cond.to_string(), &obs, out),
        history: s.rounds.clone(),
    }))
}
