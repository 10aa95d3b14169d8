//! Background training jobs, at most one running per session.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub session_id: String,
    pub action: String,
    pub status: JobStatus,
    pub result: Option<serde_json::Value>,
    pub error: Option<ApiError>,
}

#[derive(Default)]
pub struct JobStore {
    next: AtomicU64,
    jobs: Mutex<BTreeMap<u64, Job>>,
    active: Mutex<BTreeSet<String>>,
}

impl JobStore {
    /// Register a queued job, or fail if the session already has one that
    /// has not finished.
    pub fn submit(&self, session_id: &str, action: &str) -> Result<Job, ApiError> {
        let mut active = self.active.lock().expect("job lock");
        if active.contains(session_id) {
            return Err(ApiError::new(
                axum::http::StatusCode::CONFLICT,
                "JobRunning",
                format!("session {session_id} already has a training job in progress"),
            ));
        }
        active.insert(session_id.to_owned());
        let id = self.next.fetch_add(1, Ordering::SeqCst) + 1;
        let job = Job {
            id,
            session_id: session_id.to_owned(),
            action: action.to_owned(),
            status: JobStatus::Queued,
            result: None,
            error: None,
        };
        self.jobs.lock().expect("job lock").insert(id, job.clone());
        Ok(job)
    }

    pub fn get(&self, id: u64) -> Option<Job> {
        self.jobs.lock().expect("job lock").get(&id).cloned()
    }

    pub fn set_running(&self, id: u64) {
        if let Some(j) = self.jobs.lock().expect("job lock").get_mut(&id) {
            j.status = JobStatus::Running;
        }
    }

    pub fn finish(&self, id: u64, outcome: Result<serde_json::Value, ApiError>) {
        let session = {
            let mut jobs = self.jobs.lock().expect("job lock");
            let Some(j) = jobs.get_mut(&id) else { return };
            match outcome {
                Ok(v) => {
                    j.status = JobStatus::Succeeded;
                    j.result = Some(v);
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
            }
            j.session_id.clone()
        };
        self.active.lock().expect("job lock").remove(&session);
    }
}
