//! Request execution: offline fixtures, live HTTP, retry/rate-limit wrapper
//! and a recorder that captures live responses as fixtures.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::RequestDescriptor;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("network failure: {0}")]
    Network(String),
    #[error("HTTP 429 Too Many Requests")]
    RateLimited,
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("no fixture {path} for {canonical}")]
    FixtureMissing { path: String, canonical: String },
    #[error("io: {0}")]
    Io(String),
}

impl TransportError {
    fn is_retryable(&self) -> bool {
        matches!(self, TransportError::Network(_) | TransportError::RateLimited)
    }
}

/// Executes one E-utilities GET and returns the response body.
pub trait Transport: Send + Sync {
    fn execute(&self, req: &RequestDescriptor) -> Result<String, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn execute(&self, req: &RequestDescriptor) -> Result<String, TransportError> {
        (**self).execute(req)
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn execute(&self, req: &RequestDescriptor) -> Result<String, TransportError> {
        (**self).execute(req)
    }
}

/// Serves responses from `<dir>/<fixture_key>.xml`.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, req: &RequestDescriptor) -> PathBuf {
        fixture_path(&self.dir, req)
    }
}

pub(crate) fn fixture_path(dir: &Path, req: &RequestDescriptor) -> PathBuf {
    dir.join(format!("{}.xml", req.fixture_key()))
}

impl Transport for FixtureTransport {
    fn execute(&self, req: &RequestDescriptor) -> Result<String, TransportError> {
        let path = self.path_for(req);
        std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => TransportError::FixtureMissing {
                path: path.display().to_string(),
                canonical: req.canonical_query(),
            },
            _ => TransportError::Io(format!("{}: {e}", path.display())),
        })
    }
}

/// Single-attempt live HTTP client.
pub struct HttpSender {
    client: reqwest::blocking::Client,
}

impl HttpSender {
    pub fn new() -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .user_agent(concat!("lrn/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpSender {
    fn execute(&self, req: &RequestDescriptor) -> Result<String, TransportError> {
        let resp = self
            .client
            .get(req.url())
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(TransportError::RateLimited);
        }
        if !status.is_success() {
            return Err(TransportError::Status(status.as_u16()));
        }
        resp.text().map_err(|e| TransportError::Network(e.to_string()))
    }
}

/// Sleep abstraction so retry and rate-limit timing can be observed in tests.
pub trait Pause: Send + Sync {
    fn pause(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadPause;

impl Pause for ThreadPause {
    fn pause(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Token bucket refilled at `rate` tokens per second, capacity `rate`.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64) -> Self {
        Self {
            rate: rate_per_sec,
            state: Mutex::new((rate_per_sec, Instant::now())),
        }
    }

    /// 10 requests/s with an API key, 3 without.
    pub fn for_key(has_api_key: bool) -> Self {
        Self::new(if has_api_key { 10.0 } else { 3.0 })
    }

    /// Take one token, returning how long the caller must wait first.
    pub fn acquire(&self) -> Duration {
        let mut state = self.state.lock().expect("rate limiter poisoned");
        let now = Instant::now();
        let (tokens, last) = *state;
        let refilled = (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(self.rate);
        let remaining = refilled - 1.0;
        *state = (remaining, now);
        if remaining >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-remaining / self.rate)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Waits before each retry; the request is attempted `backoff.len() + 1` times.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            backoff: vec![
                Duration::from_secs(1),
                Duration::from_secs(2),
                Duration::from_secs(4),
            ],
        }
    }
}

/// Adds client-side rate limiting and retry with exponential backoff on
/// network errors and HTTP 429.
pub struct ResilientTransport<T> {
    inner: T,
    limiter: RateLimiter,
    policy: RetryPolicy,
    pause: Box<dyn Pause>,
}

impl<T: Transport> ResilientTransport<T> {
    pub fn new(inner: T, limiter: RateLimiter) -> Self {
        Self {
            inner,
            limiter,
            policy: RetryPolicy::default(),
            pause: Box::new(ThreadPause),
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_pause(mut self, pause: Box<dyn Pause>) -> Self {
        self.pause = pause;
        self
    }
}

impl<T: Transport> Transport for ResilientTransport<T> {
    fn execute(&self, req: &RequestDescriptor) -> Result<String, TransportError> {
        let mut attempt = 0;
        loop {
            let wait = self.limiter.acquire();
            if !wait.is_zero() {
                self.pause.pause(wait);
            }
            match self.inner.execute(req) {
                Ok(body) => return Ok(body),
                Err(e) if e.is_retryable() && attempt < self.policy.backoff.len() => {
                    log::warn!("{} failed ({e}); retry {}", req.describe(), attempt + 1);
                    self.pause.pause(self.policy.backoff[attempt]);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Passes requests to `inner` and writes every successful body to
/// `<dir>/<fixture_key>.xml`, producing a fixture set for offline replay.
pub struct RecordingTransport<T> {
    inner: T,
    dir: PathBuf,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn execute(&self, req: &RequestDescriptor) -> Result<String, TransportError> {
        let body = self.inner.execute(req)?;
        std::fs::create_dir_all(&self.dir).map_err(|e| TransportError::Io(e.to_string()))?;
        std::fs::write(fixture_path(&self.dir, req), &body)
            .map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pubmed::{build_fetch_request, Endpoint};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Flaky {
        failures: Vec<TransportError>,
        calls: AtomicUsize,
    }

    impl Transport for Flaky {
        fn execute(&self, _req: &RequestDescriptor) -> Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            match self.failures.get(n) {
                Some(e) => Err(e.clone()),
                None => Ok("<ok/>".into()),
            }
        }
    }

    #[derive(Default)]
    struct RecordPause(Arc<Mutex<Vec<Duration>>>);

    impl Pause for RecordPause {
        fn pause(&self, d: Duration) {
            self.0.lock().unwrap().push(d);
        }
    }

    fn req() -> RequestDescriptor {
        RequestDescriptor {
            endpoint: Endpoint::Esearch,
            params: vec![("db".into(), "pubmed".into())],
        }
    }

    #[test]
    fn retries_429_with_backoff_then_succeeds() {
        let waits = Arc::new(Mutex::new(Vec::new()));
        let flaky = Flaky {
            failures: vec![TransportError::RateLimited, TransportError::Network("reset".into())],
            calls: AtomicUsize::new(0),
        };
        let t = ResilientTransport::new(flaky, RateLimiter::new(1000.0))
            .with_pause(Box::new(RecordPause(waits.clone())));
        assert_eq!(t.execute(&req()).unwrap(), "<ok/>");
        assert_eq!(
            *waits.lock().unwrap(),
            vec![Duration::from_secs(1), Duration::from_secs(2)]
        );
    }

    #[test]
    fn gives_up_after_three_retries() {
        let waits = Arc::new(Mutex::new(Vec::new()));
        let flaky = Flaky {
            failures: vec![TransportError::RateLimited; 10],
            calls: AtomicUsize::new(0),
        };
        let t = ResilientTransport::new(flaky, RateLimiter::new(1000.0))
            .with_pause(Box::new(RecordPause(waits.clone())));
        assert_eq!(t.execute(&req()), Err(TransportError::RateLimited));
        assert_eq!(t.inner.calls.load(Ordering::SeqCst), 4);
        assert_eq!(waits.lock().unwrap().len(), 3);
    }

    #[test]
    fn non_retryable_status_fails_immediately() {
        let flaky = Flaky {
            failures: vec![TransportError::Status(500)],
            calls: AtomicUsize::new(0),
        };
        let t = ResilientTransport::new(flaky, RateLimiter::new(1000.0))
            .with_pause(Box::new(RecordPause::default()));
        assert_eq!(t.execute(&req()), Err(TransportError::Status(500)));
        assert_eq!(t.inner.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn token_bucket_spaces_requests() {
        let limiter = RateLimiter::new(3.0);
        let waits: Vec<Duration> = (0..5).map(|_| limiter.acquire()).collect();
        assert!(waits[..3].iter().all(|w| w.is_zero()));
        assert!(waits[3] > Duration::from_millis(250));
        assert!(waits[4] > waits[3]);
    }

    #[test]
    fn recording_then_fixture_replay() {
        let dir = tempfile::tempdir().unwrap();
        struct Echo;
        impl Transport for Echo {
            fn execute(&self, req: &RequestDescriptor) -> Result<String, TransportError> {
                Ok(format!("<body>{}</body>", req.canonical_query()))
            }
        }
        let r = build_fetch_request(&[crate::types::Pmid::new("42").unwrap()], None);
        let rec = RecordingTransport::new(Echo, dir.path());
        let live = rec.execute(&r).unwrap();
        let fixtures = FixtureTransport::new(dir.path());
        assert_eq!(fixtures.execute(&r).unwrap(), live);
        let other = build_fetch_request(&[crate::types::Pmid::new("43").unwrap()], None);
        assert!(matches!(
            fixtures.execute(&other),
            Err(TransportError::FixtureMissing { .. })
        ));
    }
}
