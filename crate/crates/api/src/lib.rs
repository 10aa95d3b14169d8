//! HTTP facade over review sessions stored under one root directory.
//!
//! Each session lives in `<root>/<session_id>/`. Mutating routes are
//! serialized per session by a writer lock; reads open the committed state
//! from disk, so every read payload is a projection of the directory.

pub mod error;
pub mod jobs;
pub mod routes;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::http::{HeaderValue, Method};
use axum::routing::{delete, get, post};
use axum::Router;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::ApiError;
pub use jobs::{Job, JobStatus, JobStore};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("session root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("could not bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: std::io::Error },
    #[error("invalid CORS origin {0:?}")]
    InvalidOrigin(String),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub session_root: PathBuf,
    /// Allowed browser origins; `*` allows any.
    pub cors_origins: Vec<String>,
}

pub struct AppState {
    pub root: PathBuf,
    pub jobs: JobStore,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            jobs: JobStore::default(),
            locks: Mutex::new(HashMap::new()),
        }
    }

    /// Directory of session `id`, rejecting ids that are not a single plain
    /// path component.
    pub fn session_dir(&self, id: &str) -> Result<PathBuf, ApiError> {
        let ok = !id.is_empty()
            && !id.starts_with('.')
            && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !ok {
            return Err(ApiError::bad_request(format!("invalid session id {id:?}")));
        }
        Ok(self.root.join(id))
    }

    pub fn writer_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table")
            .entry(id.to_owned())
            .or_default()
            .clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    use routes::*;
    Router::new()
        .route("/sessions", get(list).post(create))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/queue", get(queue))
        .route("/sessions/{id}/labels", post(labels))
        .route(
            "/sessions/{id}/rules",
            get(rules).post(add_rule).delete(remove_rule_query),
        )
        .route("/sessions/{id}/rules/{rule_id}", delete(remove_rule_path))
        .route("/sessions/{id}/train", post(train))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/correlations", get(correlations))
        .route("/sessions/{id}/wordcloud", get(wordcloud))
        .route("/sessions/{id}/prisma.svg", get(prisma_svg))
        .route("/sessions/{id}/deploy", post(deploy))
        .route("/sessions/{id}/report", get(report))
        .route("/concordance", post(concordance))
        .route("/jobs/{id}", get(job))
        .fallback(not_found)
        .with_state(state)
}

pub fn cors_layer(origins: &[String]) -> Result<Option<CorsLayer>, ServeError> {
    if origins.is_empty() {
        return Ok(None);
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        let values = origins
            .iter()
            .map(|o| HeaderValue::from_str(o).map_err(|_| ServeError::InvalidOrigin(o.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        AllowOrigin::list(values)
    };
    Ok(Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST, Method::DELETE])
            .allow_headers([axum::http::header::CONTENT_TYPE]),
    ))
}

/// Build the full application for `root`, including CORS.
pub fn app(root: &Path, cors_origins: &[String]) -> Result<Router, ServeError> {
    let router = router(Arc::new(AppState::new(root)));
    Ok(match cors_layer(cors_origins)? {
        Some(layer) => router.layer(layer),
        None => router,
    })
}

/// Bind and serve until the process is stopped.
pub async fn serve(config: ServerConfig) -> Result<(), ServeError> {
    if !config.session_root.is_dir() {
        return Err(ServeError::MissingRoot(config.session_root));
    }
    let app = app(&config.session_root, &config.cors_origins)?;
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServeError::BindFailure {
            addr: config.bind,
            source,
        })?;
    log::info!("serving {} on {}", config.session_root.display(), config.bind);
    axum::serve(listener, app).await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_ids_are_single_components() {
        let s = AppState::new("/tmp/root");
        assert!(s.session_dir("glove-1_a.b").is_ok());
        for bad in ["", "..", ".hidden", "a/b", "a\\b", "x y"] {
            assert_eq!(s.session_dir(bad).unwrap_err().code, "BadRequest", "{bad}");
        }
    }

    #[test]
    fn bad_origin_is_rejected() {
        assert!(cors_layer(&[]).unwrap().is_none());
        assert!(cors_layer(&["*".into()]).unwrap().is_some());
        assert!(matches!(cors_layer(&["bad\norigin".into()]), Err(ServeError::InvalidOrigin(_))));
    }

    #[tokio::test]
    async fn missing_root_is_reported() {
        let cfg = ServerConfig {
            bind: "127.0.0.1:0".parse().unwrap(),
            session_root: "/definitely/not/here".into(),
            cors_origins: vec![],
        };
        assert!(matches!(serve(cfg).await, Err(ServeError::MissingRoot(_))));
    }
}
