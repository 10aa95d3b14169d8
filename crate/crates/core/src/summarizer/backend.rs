//! Completion backends: a deterministic mock and an HTTP endpoint taking
//! `{prompt, max_tokens}` and answering `{text}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("request failed: {0}")]
    Request(String),
    #[error("endpoint returned HTTP {status}")]
    Status { status: u16 },
    #[error("malformed response: {0}")]
    Malformed(String),
}

pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, BackendError>;
}

/// Answers with the prompt's SHA-256 prefix and a citation of every record
/// quoted in the prompt, so output is a pure function of the prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl Backend for MockBackend {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, BackendError> {
        let hash = hex::encode(Sha256::digest(prompt.as_bytes()));
        let mut ids: Vec<&str> = prompt
            .lines()
            .filter_map(|l| l.split_once("] Record ").map(|(_, rest)| rest))
            .filter_map(|rest| rest.split_whitespace().next())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        let cites: Vec<String> = ids.iter().map(|id| format!("[{id}]")).collect();
        Ok(format!(
            "Mock completion {} (max {max_tokens} tokens) drawing on {}.",
            &hash[..16],
            cites.join(" ")
        ))
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

pub struct HttpBackend {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Request(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_owned(),
            client,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, BackendError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&CompletionRequest { prompt, max_tokens })
            .send()
            .map_err(|e| BackendError::Request(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(BackendError::Status {
                status: resp.status().as_u16(),
            });
        }
        let body: CompletionResponse = resp.json().map_err(|e| BackendError::Malformed(e.to_string()))?;
        Ok(body.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_is_deterministic_and_cites_quoted_records() {
        let prompt = "Intro\n[1] Record 42 (tokens 0-3):\nabc\n[2] Record 7 (tokens 0-3):\ndef\n";
        let a = MockBackend.complete(prompt, 100).unwrap();
        assert_eq!(a, MockBackend.complete(prompt, 100).unwrap());
        assert!(a.contains("[42]") && a.contains("[7]"));
        assert_ne!(a, MockBackend.complete("other", 100).unwrap());
    }
}
