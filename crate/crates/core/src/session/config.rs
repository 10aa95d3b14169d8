//! Frozen per-session configuration (`config.json`).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::telemetry::{ClockConfig, DEFAULT_IDLE_CUTOFF_SECS};
use crate::corpus::default_blocked_languages;
use crate::discriminative::{SelectionConfig, TrainConfig};
use crate::label_model::LabelModelConfig;
use crate::pubmed::SearchSpec;
use crate::summarizer::SummarizerConfig;
use crate::types::Label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub text: String,
    pub label: Label,
}

fn default_queue_size() -> usize {
    20
}
fn default_alpha() -> f64 {
    0.5
}
fn default_min_df() -> usize {
    2
}
fn default_cv_folds() -> usize {
    5
}
fn default_idle_cutoff() -> i64 {
    DEFAULT_IDLE_CUTOFF_SECS
}
fn default_top_terms() -> usize {
    100
}
fn default_fdr() -> f64 {
    crate::xai::DEFAULT_FDR_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    pub searches: Vec<SearchSpec>,
    pub initial_rules: Vec<RuleSpec>,
    #[serde(default = "default_blocked_languages")]
    pub blocked_languages: BTreeSet<String>,
    #[serde(default = "default_queue_size")]
    pub queue_size: usize,
    #[serde(default = "default_alpha")]
    pub potential_alpha: f64,
    #[serde(default = "default_min_df")]
    pub min_df: usize,
    /// Folds used to obtain out-of-fold predictions for labeled records.
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    #[serde(default)]
    pub label_model: LabelModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default = "default_fdr")]
    pub fdr_threshold: f64,
    #[serde(default = "default_top_terms")]
    pub wordcloud_terms: usize,
    #[serde(default = "default_idle_cutoff")]
    pub idle_cutoff_secs: i64,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub summarizer: SummarizerConfig,
}

impl SessionConfig {
    /// Configuration with default model settings.
    pub fn new(session_id: &str, searches: Vec<SearchSpec>, initial_rules: Vec<RuleSpec>) -> Self {
        Self {
            session_id: session_id.to_owned(),
            searches,
            initial_rules,
            blocked_languages: default_blocked_languages(),
            queue_size: default_queue_size(),
            potential_alpha: default_alpha(),
            min_df: default_min_df(),
            cv_folds: default_cv_folds(),
            label_model: LabelModelConfig::default(),
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            fdr_threshold: default_fdr(),
            wordcloud_terms: default_top_terms(),
            idle_cutoff_secs: default_idle_cutoff(),
            clock: ClockConfig::default(),
            summarizer: SummarizerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.session_id.is_empty()
            || !self
                .session_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(format!(
                "session id {:?} must be non-empty and use only letters, digits, '-' or '_'",
                self.session_id
            ));
        }
        if self.searches.is_empty() {
            return Err("at least one search spec is required".into());
        }
        let mut ids = BTreeSet::new();
        for s in &self.searches {
            if !ids.insert(&s.id) {
                return Err(format!("duplicate search id {:?}", s.id));
            }
            s.validate().map_err(|e| e.to_string())?;
        }
        for label in [Label::Include, Label::Exclude] {
            if !self.initial_rules.iter().any(|r| r.label == label) {
                return Err(format!("initial ruleset has no {label} rule"));
            }
        }
        if self.queue_size == 0 {
            return Err("queue_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.potential_alpha) {
            return Err("potential_alpha must lie in [0, 1]".into());
        }
        if self.cv_folds < 2 {
            return Err("cv_folds must be at least 2".into());
        }
        if self.summarizer.overlap >= self.summarizer.window {
            return Err("summarizer overlap must be smaller than its window".into());
        }
        Ok(())
    }
}
