//! Route handlers. Reads open the session from disk without locking; writes
//! take the session's writer lock and run on the blocking pool.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use lrn_core::concordance::{compare_sets, SetComparison};
use lrn_core::prisma::{self, PrismaFormat};
use lrn_core::ruleset::{self, CompiledRule, MatchDoc};
use lrn_core::session::{list_sessions, Phase, RuleEdit, Session, SessionConfig, SessionSummary};
use lrn_core::types::{Label, Pmid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::jobs::Job;
use crate::AppState;

/// JSON body whose rejections are structured [`ApiError`]s.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

pub struct ApiQuery<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| ApiQuery(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

pub struct ApiPath<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned + Send> FromRequestParts<S> for ApiPath<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Path::<T>::from_request_parts(parts, state)
            .await
            .map(|Path(v)| ApiPath(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::internal(format!("worker task failed: {e}"))
}

/// Run `f` against a freshly opened session on the blocking pool.
async fn read<T, F>(state: &AppState, id: &str, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Session) -> Result<T, ApiError> + Send + 'static,
{
    let dir = state.session_dir(id)?;
    tokio::task::spawn_blocking(move || f(&Session::open(&dir)?))
        .await
        .map_err(join_error)?
}

/// Run `f` under the session's writer lock.
pub(crate) async fn write<T, F>(state: &AppState, id: &str, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
{
    let dir = state.session_dir(id)?;
    let guard = state.writer_lock(id).lock_owned().await;
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        f(&mut Session::open(&dir)?)
    })
    .await
    .map_err(join_error)?
}

pub async fn list(State(state): State<Arc<AppState>>) -> Result<Json<Vec<SessionSummary>>, ApiError> {
    let root = state.root.clone();
    let out = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let mut out = Vec::new();
        for dir in list_sessions(&root)? {
            match Session::open(&dir) {
                Ok(s) => out.push(s.summary()),
                Err(e) => log::warn!("skipping {}: {e}", dir.display()),
            }
        }
        Ok(out)
    })
    .await
    .map_err(join_error)??;
    Ok(Json(out))
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateParams {
    #[serde(default)]
    force: bool,
}

pub async fn create(
    State(state): State<Arc<AppState>>,
    ApiQuery(params): ApiQuery<CreateParams>,
    ApiJson(config): ApiJson<SessionConfig>,
) -> Result<(StatusCode, Json<SessionSummary>), ApiError> {
    let id = config.session_id.clone();
    let dir = state.session_dir(&id)?;
    let guard = state.writer_lock(&id).lock_owned().await;
    let summary = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let _guard = guard;
        Ok(Session::init(&dir, config, params.force)?.summary())
    })
    .await
    .map_err(join_error)??;
    Ok((StatusCode::CREATED, Json(summary)))
}

pub async fn get_session(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
) -> Result<Json<SessionSummary>, ApiError> {
    read(&state, &id, |s| Ok(s.summary())).await.map(Json)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub field: String,
    pub start: usize,
    pub end: usize,
    pub rule_id: u32,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub pmid: Pmid,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub prediction: Label,
    pub probability: f64,
    pub potential: f64,
    pub highlights: Vec<Highlight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueView {
    pub iteration: Option<u32>,
    pub phase: Phase,
    pub labeled: usize,
    pub items: Vec<QueueEntry>,
}

fn queue_view(s: &Session) -> QueueView {
    let rules: Vec<CompiledRule> = s.ruleset().active().into_iter().map(CompiledRule::new).collect();
    let labels = s.labels();
    let items = s
        .queue()
        .iter()
        .map(|q| {
            let (title, abstract_text) = s
                .corpus()
                .get(&q.pmid)
                .map(|r| (r.title.clone(), r.abstract_text.clone()))
                .unwrap_or_else(|| (q.title.clone(), String::new()));
            let mut highlights = Vec::new();
            for (field, text) in [("title", &title), ("abstract", &abstract_text)] {
                for rule in &rules {
                    for (start, end) in ruleset::highlight_spans(rule, text) {
                        highlights.push(Highlight {
                            field: field.to_owned(),
                            start,
                            end,
                            rule_id: rule.rule_id,
                            label: rule.label,
                        });
                    }
                }
            }
            QueueEntry {
                pmid: q.pmid.clone(),
                title,
                abstract_text,
                prediction: Label::from_probability(q.probability),
                probability: q.probability,
                potential: q.potential,
                highlights,
            }
        })
        .collect();
    QueueView {
        iteration: s.state().current,
        phase: s.phase(),
        labeled: s.queue().iter().filter(|q| labels.contains_key(&q.pmid)).count(),
        items,
    }
}

pub async fn queue(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
) -> Result<Json<QueueView>, ApiError> {
    read(&state, &id, |s| Ok(queue_view(s))).await.map(Json)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum LabelRequest {
    Batch {
        labels: BTreeMap<Pmid, Label>,
        #[serde(default)]
        rule_edits: Vec<RuleEdit>,
    },
    Single {
        pmid: Pmid,
        label: Label,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub appended: usize,
    pub phase: Phase,
    pub labeled: usize,
    pub queued: usize,
}

pub async fn labels(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
    ApiJson(body): ApiJson<LabelRequest>,
) -> Result<Json<LabelResponse>, ApiError> {
    let (labels, edits) = match body {
        LabelRequest::Batch { labels, rule_edits } => (labels, rule_edits),
        LabelRequest::Single { pmid, label } => (BTreeMap::from([(pmid, label)]), Vec::new()),
    };
    write(&state, &id, move |s| {
        let appended = s.submit_feedback(&labels, &edits)?;
        let view = queue_view(s);
        Ok(LabelResponse {
            appended,
            phase: s.phase(),
            labeled: view.labeled,
            queued: view.items.len(),
        })
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleView {
    pub rule_id: u32,
    pub text: String,
    pub label: Label,
    pub history: String,
    pub active: bool,
    pub hits: usize,
    pub total: usize,
    pub coverage: String,
}

fn rule_views(s: &Session) -> Vec<RuleView> {
    let docs: Vec<MatchDoc> = s
        .corpus()
        .eligible()
        .map(|r| MatchDoc::new(&r.title, &r.abstract_text))
        .collect();
    s.ruleset()
        .rules
        .iter()
        .map(|r| {
            let c = ruleset::coverage(r, &docs);
            RuleView {
                rule_id: r.rule_id,
                text: r.text.clone(),
                label: r.label,
                history: r.history_notation(),
                active: r.is_active(),
                hits: c.hits,
                total: c.total,
                coverage: c.to_string(),
            }
        })
        .collect()
}

pub async fn rules(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
) -> Result<Json<Vec<RuleView>>, ApiError> {
    read(&state, &id, |s| Ok(rule_views(s))).await.map(Json)
}

#[derive(Debug, Deserialize)]
pub struct AddRule {
    text: String,
    label: Label,
}

fn rule_view(s: &Session, rule_id: u32) -> Result<RuleView, ApiError> {
    rule_views(s)
        .into_iter()
        .find(|r| r.rule_id == rule_id)
        .ok_or_else(|| ApiError::internal(format!("rule {rule_id} missing after edit")))
}

pub async fn add_rule(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
    ApiJson(body): ApiJson<AddRule>,
) -> Result<(StatusCode, Json<RuleView>), ApiError> {
    let view = write(&state, &id, move |s| {
        let rule_id = s.apply_rule_edit(&RuleEdit::Add {
            text: body.text,
            label: body.label,
        })?;
        rule_view(s, rule_id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

#[derive(Debug, Deserialize)]
pub struct RemoveParams {
    rule_id: u32,
}

async fn remove(state: &AppState, id: &str, rule_id: u32) -> Result<Json<RuleView>, ApiError> {
    write(state, id, move |s| {
        s.apply_rule_edit(&RuleEdit::Remove { rule_id })?;
        rule_view(s, rule_id)
    })
    .await
    .map(Json)
}

pub async fn remove_rule_query(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
    ApiQuery(params): ApiQuery<RemoveParams>,
) -> Result<Json<RuleView>, ApiError> {
    remove(&state, &id, params.rule_id).await
}

pub async fn remove_rule_path(
    State(state): State<Arc<AppState>>,
    ApiPath((id, rule_id)): ApiPath<(String, u32)>,
) -> Result<Json<RuleView>, ApiError> {
    remove(&state, &id, rule_id).await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: u64,
    pub action: String,
}

/// Queue a training job: the first model and queue from `Configured`, or a
/// retrain after feedback from `Training`.
pub async fn train(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
) -> Result<(StatusCode, Json<JobAccepted>), ApiError> {
    let phase = read(&state, &id, |s| Ok(s.phase())).await?;
    let action = match phase {
        Phase::Configured => "start",
        Phase::Training => "finish",
        other => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "PhaseViolation",
                format!("train is not allowed in phase {other}"),
            ))
        }
    };
    let job = state.jobs.submit(&id, action)?;
    let job_id = job.id;
    let task_state = state.clone();
    tokio::spawn(async move {
        let jobs = task_state.clone();
        let outcome = write(&task_state, &id, move |s| {
            jobs.jobs.set_running(job_id);
            run_training(s)
        })
        .await;
        task_state.jobs.finish(job_id, outcome);
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(JobAccepted {
            job_id,
            action: action.to_owned(),
        }),
    ))
}

fn run_training(s: &mut Session) -> Result<serde_json::Value, ApiError> {
    let to_value = |v: serde_json::Result<serde_json::Value>| v.map_err(|e| ApiError::internal(e.to_string()));
    match s.phase() {
        Phase::Configured => {
            let queue = s.start_iteration()?;
            to_value(Ok(serde_json::json!({
                "action": "start",
                "iteration": s.state().current,
                "queue_len": queue.len(),
            })))
        }
        Phase::Training => {
            let snap = s.finish_iteration()?;
            to_value(serde_json::to_value(&snap.metrics).map(|m| {
                serde_json::json!({
                    "action": "finish",
                    "iteration": snap.iteration,
                    "metrics": m,
                })
            }))
        }
        other => Err(ApiError::new(
            StatusCode::CONFLICT,
            "PhaseViolation",
            format!("train is not allowed in phase {other}"),
        )),
    }
}

pub async fn job(State(state): State<Arc<AppState>>, ApiPath(id): ApiPath<u64>) -> Result<Json<Job>, ApiError> {
    state
        .jobs
        .get(id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "JobNotFound", format!("no job {id}")))
}

#[derive(Debug, Default, Deserialize)]
pub struct IterationParams {
    iteration: Option<u32>,
}

fn pick_iteration(s: &Session, requested: Option<u32>) -> Result<u32, ApiError> {
    match requested.or_else(|| s.latest_iteration()) {
        Some(n) => Ok(n),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "NoSuchIteration",
            "no iteration has finished yet",
        )),
    }
}

pub async fn metrics(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
    ApiQuery(p): ApiQuery<IterationParams>,
) -> Result<Response, ApiError> {
    read(&state, &id, move |s| {
        let n = pick_iteration(s, p.iteration)?;
        Ok(Json(s.metrics(n)?).into_response())
    })
    .await
}

pub async fn correlations(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
    ApiQuery(p): ApiQuery<IterationParams>,
) -> Result<Response, ApiError> {
    read(&state, &id, move |s| {
        let n = pick_iteration(s, p.iteration)?;
        Ok(Json(s.correlations(n)?).into_response())
    })
    .await
}

pub async fn wordcloud(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
    ApiQuery(p): ApiQuery<IterationParams>,
) -> Result<Response, ApiError> {
    read(&state, &id, move |s| {
        let n = pick_iteration(s, p.iteration)?;
        Ok(Json(s.wordcloud(n)?).into_response())
    })
    .await
}

pub async fn prisma_svg(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
) -> Result<Response, ApiError> {
    let svg = read(&state, &id, |s| Ok(prisma::render(&s.prisma_counts()?, PrismaFormat::Svg)?)).await?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct DeployRequest {
    iteration: Option<u32>,
}

pub async fn deploy(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let req: DeployRequest = if body.iter().all(u8::is_ascii_whitespace) {
        DeployRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    write(&state, &id, move |s| Ok(Json(s.deploy(req.iteration)?).into_response())).await
}

#[derive(Debug, Deserialize)]
pub struct ConcordanceRequest {
    name_a: String,
    a: BTreeSet<Pmid>,
    name_b: String,
    b: BTreeSet<Pmid>,
    #[serde(default)]
    universe: Option<BTreeSet<Pmid>>,
    /// Use this session's eligible records as the universe.
    #[serde(default)]
    session_id: Option<String>,
    #[serde(default = "default_replications")]
    replications: u64,
    #[serde(default)]
    seed: u64,
}

fn default_replications() -> u64 {
    1_000_000
}

pub async fn concordance(
    State(state): State<Arc<AppState>>,
    ApiJson(req): ApiJson<ConcordanceRequest>,
) -> Result<Json<SetComparison>, ApiError> {
    let universe = match (req.universe, &req.session_id) {
        (Some(u), None) => u,
        (None, Some(id)) => read(&state, id, |s| Ok(s.corpus().eligible().map(|r| r.pmid.clone()).collect())).await?,
        _ => return Err(ApiError::bad_request("give exactly one of universe or session_id")),
    };
    tokio::task::spawn_blocking(move || {
        compare_sets(&req.name_a, &req.a, &req.name_b, &req.b, &universe, req.replications, req.seed)
    })
    .await
    .map_err(join_error)?
    .map(Json)
    .map_err(ApiError::from)
}

#[derive(Debug, Default, Deserialize)]
pub struct ReportParams {
    #[serde(default)]
    format: Option<String>,
}

/// Regenerate the package insert and return it as JSON or Markdown.
pub async fn report(
    State(state): State<Arc<AppState>>,
    ApiPath(id): ApiPath<String>,
    ApiQuery(p): ApiQuery<ReportParams>,
) -> Result<Response, ApiError> {
    let markdown = match p.format.as_deref() {
        None | Some("json") => false,
        Some("md") => true,
        Some(other) => return Err(ApiError::bad_request(format!("unknown report format {other:?}"))),
    };
    write(&state, &id, move |s| {
        let insert = s.generate_package_insert()?;
        Ok(if markdown {
            (
                [(header::CONTENT_TYPE, "text/markdown; charset=utf-8")],
                lrn_core::session::report::render_markdown(&insert),
            )
                .into_response()
        } else {
            Json(insert).into_response()
        })
    })
    .await
}

pub async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "RouteNotFound", "no such route")
}
