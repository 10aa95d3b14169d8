//! Human labor and runtime bookkeeping.
//!
//! Labor is measured from activity marks (label submissions, rule edits,
//! queue views): the gap between two consecutive marks of the same
//! iteration counts toward labor when it is at most the idle cutoff.
//! Manually logged minutes are added on top. Runtime spans run from the
//! first `RuntimeStart` to the last `RuntimeEnd` of an iteration.

use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

pub const DEFAULT_IDLE_CUTOFF_SECS: i64 = 120;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("clock skew: event at {event} precedes last recorded event at {last}")]
pub struct ClockSkew {
    pub last: DateTime<Utc>,
    pub event: DateTime<Utc>,
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Returns `start`, `start + step`, `start + 2·step`, … on successive calls.
#[derive(Debug)]
pub struct SteppingClock {
    next: Mutex<DateTime<Utc>>,
    step: Duration,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        Self {
            next: Mutex::new(start),
            step,
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let mut next = self.next.lock().expect("clock poisoned");
        let t = *next;
        *next = t + self.step;
        t
    }
}

/// Clock choice persisted with the session configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClockConfig {
    #[default]
    System,
    /// Deterministic clock for reproducible runs. On reopen it resumes one
    /// step after the last recorded event.
    Stepping { start: DateTime<Utc>, step_secs: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TelemetryKind {
    Activity,
    ManualLabor { minutes: f64 },
    RuntimeStart,
    RuntimeEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub at: DateTime<Utc>,
    pub iteration: u32,
    #[serde(flatten)]
    pub kind: TelemetryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub iteration: u32,
    pub labor_minutes: f64,
    pub runtime_start: Option<DateTime<Utc>>,
    pub runtime_end: Option<DateTime<Utc>>,
    pub total_runtime_secs: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub events: Vec<TelemetryEvent>,
}

/// `hh:mm:ss`; hours are not wrapped at 24.
pub fn format_hms(total_secs: i64) -> String {
    let s = total_secs.max(0);
    format!("{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

pub fn format_clock(t: &DateTime<Utc>) -> String {
    t.format("%H:%M:%S").to_string()
}

/// Span between two instants; `end` before `start` is a clock skew.
pub fn runtime_secs(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<i64, ClockSkew> {
    if end < start {
        return Err(ClockSkew { last: start, event: end });
    }
    Ok((end - start).num_seconds())
}

impl Telemetry {
    pub fn last_at(&self) -> Option<DateTime<Utc>> {
        self.events.last().map(|e| e.at)
    }

    pub fn record(&mut self, event: TelemetryEvent) -> Result<(), ClockSkew> {
        if let Some(last) = self.last_at() {
            if event.at < last {
                return Err(ClockSkew { last, event: event.at });
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub fn labor_minutes(&self, iteration: u32, idle_cutoff_secs: i64) -> f64 {
        let mut secs = 0i64;
        let mut manual = 0.0;
        let mut prev: Option<DateTime<Utc>> = None;
        for e in self.events.iter().filter(|e| e.iteration == iteration) {
            match e.kind {
                TelemetryKind::Activity => {
                    if let Some(p) = prev {
                        let gap = (e.at - p).num_seconds();
                        if gap <= idle_cutoff_secs {
                            secs += gap;
                        }
                    }
                    prev = Some(e.at);
                }
                TelemetryKind::ManualLabor { minutes } => manual += minutes,
                _ => {}
            }
        }
        secs as f64 / 60.0 + manual
    }

    pub fn runtime_span(&self, iteration: u32) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let of = |k: &TelemetryKind| {
            self.events
                .iter()
                .filter(|e| e.iteration == iteration && &e.kind == k)
                .map(|e| e.at)
                .collect::<Vec<_>>()
        };
        let start = of(&TelemetryKind::RuntimeStart).into_iter().next()?;
        let end = of(&TelemetryKind::RuntimeEnd).into_iter().last()?;
        Some((start, end))
    }

    pub fn iterations(&self) -> Vec<u32> {
        let mut its: Vec<u32> = self.events.iter().map(|e| e.iteration).collect();
        its.sort_unstable();
        its.dedup();
        its
    }

    pub fn rows(&self, idle_cutoff_secs: i64) -> Vec<TelemetryRow> {
        self.iterations()
            .into_iter()
            .map(|iteration| {
                let span = self.runtime_span(iteration);
                TelemetryRow {
                    iteration,
                    labor_minutes: self.labor_minutes(iteration, idle_cutoff_secs),
                    runtime_start: span.map(|s| s.0),
                    runtime_end: span.map(|s| s.1),
                    total_runtime_secs: span
                        .and_then(|(s, e)| runtime_secs(s, e).ok())
                        .unwrap_or(0),
                }
            })
            .collect()
    }
}

/// Sum of per-row labor, rendered with one decimal.
pub fn total_labor(rows: &[TelemetryRow]) -> String {
    format!("{:.1}", rows.iter().map(|r| r.labor_minutes).sum::<f64>())
}

pub fn total_runtime_secs(rows: &[TelemetryRow]) -> i64 {
    rows.iter().map(|r| r.total_runtime_secs).sum()
}
