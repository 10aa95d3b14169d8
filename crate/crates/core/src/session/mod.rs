//! Persisted review sessions.
//!
//! A session directory holds the frozen configuration, the corpus, the
//! ruleset with its edit history, an append-only label log, telemetry and
//! one immutable snapshot per completed iteration. Phases move
//! `Configured → AwaitingFeedback → Training → Configured …` and end in
//! `Finalized` once a snapshot is deployed over the corpus.
//!
//! Iteration `n` queues records using rules active at `n` and labels from
//! iterations before `n`; finishing it retrains on labels up to and
//! including `n`. Rule edits are stamped with the iteration being worked on.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod store;
pub mod telemetry;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::concordance::ConcordanceError;
use crate::corpus::{Corpus, CorpusError, Eligibility, ReferenceLibrary};
use crate::discriminative::rank_queue;
use crate::label_model::LabelModelParams;
use crate::metrics::{confusion, IterationMetrics};
use crate::prisma::{self, PrismaCounts, PrismaError, PrismaFormat};
use crate::pubmed::{self, PubmedError, RawRecord, Transport};
use crate::ruleset::{MatchDoc, RuleEventKind, Ruleset, RulesetError};
use crate::summarizer::{self, Backend, PromptSet, ReviewDocument, SourceDoc, SummarizerError};
use crate::types::{Label, Pmid};
use crate::xai::{self, CorrelationRow, WordCloud};

pub use config::{RuleSpec, SessionConfig};
pub use pipeline::PipelineModel;
pub use report::PackageInsert;
pub use telemetry::{Clock, ClockConfig, ClockSkew, SteppingClock, SystemClock, Telemetry, TelemetryKind};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("{0} already contains a session; pass force to overwrite")]
    AlreadyExists(PathBuf),
    #[error("{0} is not a session directory")]
    NotASession(PathBuf),
    #[error("{op} is not allowed in phase {phase}")]
    PhaseViolation { op: &'static str, phase: Phase },
    #[error("{0}")]
    NotReady(String),
    #[error("no eligible unlabeled records left to queue")]
    NoEligibleRecords,
    #[error("pmid {0} is not in the current queue")]
    UnknownPmid(Pmid),
    #[error("no snapshot for iteration {0}")]
    NoSuchIteration(u32),
    #[error("training failed: {0}")]
    TrainingFailure(String),
    #[error(transparent)]
    ClockSkew(#[from] ClockSkew),
    #[error(transparent)]
    Ruleset(#[from] RulesetError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pubmed(#[from] PubmedError),
    #[error(transparent)]
    Prisma(#[from] PrismaError),
    #[error(transparent)]
    Concordance(#[from] ConcordanceError),
    #[error(transparent)]
    Summarizer(#[from] SummarizerError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Configured,
    AwaitingFeedback,
    Training,
    Finalized,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Configured => "Configured",
            Phase::AwaitingFeedback => "AwaitingFeedback",
            Phase::Training => "Training",
            Phase::Finalized => "Finalized",
        })
    }
}

/// One line of `labels.log`. The latest event for a PMID wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub seq: u64,
    pub iteration: u32,
    pub pmid: Pmid,
    pub label: Label,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RuleEdit {
    Add { text: String, label: Label },
    Remove { rule_id: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub pmid: Pmid,
    pub title: String,
    pub probability: f64,
    pub potential: f64,
    pub uncertainty: f64,
    pub novelty: f64,
}

/// `state.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    /// Number of finished iterations; snapshots exist for `1..=completed`.
    pub completed: u32,
    /// Iteration whose queue is out for feedback.
    pub current: Option<u32>,
    pub queue: Vec<QueueItem>,
    pub screened: bool,
    pub pinned: Option<u32>,
    /// Snapshot chosen by an explicit revert; deployment defaults to it.
    pub deployment_iteration: Option<u32>,
}

impl Default for SessionState {
    fn default() -> Self {
        Self {
            phase: Phase::Configured,
            completed: 0,
            current: None,
            queue: Vec::new(),
            screened: false,
            pinned: None,
            deployment_iteration: None,
        }
    }
}

/// Per-search retrieval results kept in `searches.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub total_count: u64,
    pub retrieved: usize,
    pub missing: usize,
    pub query_translation: Option<String>,
    pub exclusion_pmids: Vec<Pmid>,
}

/// `iterations/<n>/metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iteration: u32,
    /// Size of the cumulative labeled set the metrics are computed on.
    pub labeled: usize,
    pub metrics: Option<IterationMetrics>,
}

/// `iterations/<n>/snapshot.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSnapshot {
    pub iteration: u32,
    pub active_rules: Vec<u32>,
    pub rules_added: Vec<u32>,
    pub rules_removed: Vec<u32>,
    pub label_model: LabelModelParams,
    pub selected_features: usize,
    pub queue: Vec<Pmid>,
    /// Labels submitted during this iteration.
    pub labels: BTreeMap<Pmid, Label>,
    pub metrics: MetricsReport,
    pub runtime_start: Option<DateTime<Utc>>,
    pub runtime_end: Option<DateTime<Utc>>,
    pub total_runtime_secs: i64,
    pub labor_minutes: f64,
}

/// `deployment.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub iteration: u32,
    pub include: Vec<Pmid>,
    pub exclude: Vec<Pmid>,
    /// Records whose class comes from a reviewer label.
    pub user_labeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub phase: Phase,
    pub completed_iterations: u32,
    pub current_iteration: Option<u32>,
    pub queue_len: usize,
    pub labeled: usize,
    pub records: usize,
    pub eligible: usize,
    pub active_rules: usize,
    pub pinned: Option<u32>,
    pub deployment_iteration: Option<u32>,
}

/// Best iteration by Cohen's kappa, then accuracy, then the lower number.
pub fn best_iteration(candidates: &[(u32, f64, f64)]) -> Option<u32> {
    candidates
        .iter()
        .copied()
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.2.total_cmp(&b.2))
                .then(b.0.cmp(&a.0))
        })
        .map(|c| c.0)
}

pub const CONFIG_FILE: &str = "config.json";
const STATE_FILE: &str = "state.json";
const RULESET_FILE: &str = "ruleset.csv";
const LABELS_FILE: &str = "labels.log";
const TELEMETRY_FILE: &str = "telemetry.log";
const SEARCHES_FILE: &str = "searches.json";
const DEPLOYMENT_FILE: &str = "deployment.json";

pub struct Session {
    dir: PathBuf,
    config: SessionConfig,
    corpus: Corpus,
    ruleset: Ruleset,
    labels: Vec<LabelEvent>,
    state: SessionState,
    telemetry: Telemetry,
    searches: BTreeMap<String, SearchSummary>,
    clock: Box<dyn Clock>,
}

fn make_clock(cfg: &ClockConfig, last: Option<DateTime<Utc>>) -> Box<dyn Clock> {
    match cfg {
        ClockConfig::System => Box::new(SystemClock),
        ClockConfig::Stepping { start, step_secs } => {
            let step = Duration::seconds(*step_secs);
            Box::new(SteppingClock::new(last.map_or(*start, |l| l + step), step))
        }
    }
}

impl Session {
    /// Create a session directory with a frozen configuration and the
    /// initial ruleset stamped at iteration 1.
    pub fn init(dir: &Path, config: SessionConfig, force: bool) -> Result<Self, SessionError> {
        config.validate().map_err(SessionError::InvalidConfig)?;
        if dir.join(CONFIG_FILE).exists() {
            if !force {
                return Err(SessionError::AlreadyExists(dir.to_path_buf()));
            }
            std::fs::remove_dir_all(dir).map_err(store::io_err(dir))?;
        }
        let mut ruleset = Ruleset::new();
        for r in &config.initial_rules {
            ruleset
                .upsert_rule(&r.text, r.label, 1)
                .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        }
        std::fs::create_dir_all(dir).map_err(store::io_err(dir))?;
        let session = Session {
            dir: dir.to_path_buf(),
            clock: make_clock(&config.clock, None),
            config,
            corpus: Corpus::default(),
            ruleset,
            labels: Vec::new(),
            state: SessionState::default(),
            telemetry: Telemetry::default(),
            searches: BTreeMap::new(),
        };
        store::write_json(&dir.join(CONFIG_FILE), &session.config)?;
        session.save_corpus()?;
        session.save_ruleset()?;
        session.save_state()?;
        store::write_json(&dir.join(SEARCHES_FILE), &session.searches)?;
        Ok(session)
    }

    pub fn open(dir: &Path) -> Result<Self, SessionError> {
        let config_path = dir.join(CONFIG_FILE);
        if !config_path.is_file() {
            return Err(SessionError::NotASession(dir.to_path_buf()));
        }
        let config: SessionConfig = store::read_json(&config_path)?;
        let telemetry = Telemetry {
            events: store::read_ndjson(&dir.join(TELEMETRY_FILE))?,
        };
        Ok(Session {
            dir: dir.to_path_buf(),
            clock: make_clock(&config.clock, telemetry.last_at()),
            corpus: Corpus::load(dir)?,
            ruleset: Ruleset::load(&dir.join(RULESET_FILE))?,
            labels: store::read_ndjson(&dir.join(LABELS_FILE))?,
            state: store::read_json(&dir.join(STATE_FILE))?,
            searches: store::read_json(&dir.join(SEARCHES_FILE))?,
            telemetry,
            config,
        })
    }

    /// Replace the clock (tests and replay tooling).
    pub fn with_clock(mut self, clock: Box<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn ruleset(&self) -> &Ruleset {
        &self.ruleset
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    pub fn label_log(&self) -> &[LabelEvent] {
        &self.labels
    }

    pub fn searches(&self) -> &BTreeMap<String, SearchSummary> {
        &self.searches
    }

    pub fn queue(&self) -> &[QueueItem] {
        &self.state.queue
    }

    /// Iteration that rule edits and activity marks are attributed to.
    pub fn working_iteration(&self) -> u32 {
        self.state.current.unwrap_or(self.state.completed + 1)
    }

    /// Latest label per PMID among events from iterations `<= upto`.
    pub fn labels_upto(&self, upto: u32) -> BTreeMap<Pmid, Label> {
        let mut out = BTreeMap::new();
        for e in self.labels.iter().filter(|e| e.iteration <= upto) {
            out.insert(e.pmid.clone(), e.label);
        }
        out
    }

    pub fn labels(&self) -> BTreeMap<Pmid, Label> {
        self.labels_upto(u32::MAX)
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.config.session_id.clone(),
            phase: self.state.phase,
            completed_iterations: self.state.completed,
            current_iteration: self.state.current,
            queue_len: self.state.queue.len(),
            labeled: self.labels().len(),
            records: self.corpus.len(),
            eligible: self.corpus.eligible().count(),
            active_rules: self.ruleset.active().len(),
            pinned: self.state.pinned,
            deployment_iteration: self.state.deployment_iteration,
        }
    }

    fn iteration_dir(&self, n: u32) -> PathBuf {
        self.dir.join("iterations").join(n.to_string())
    }

    fn save_state(&self) -> Result<(), SessionError> {
        store::write_json(&self.dir.join(STATE_FILE), &self.state)
    }

    fn save_ruleset(&self) -> Result<(), SessionError> {
        let mut buf = Vec::new();
        self.ruleset.write_csv(&mut buf)?;
        store::write_atomic(&self.dir.join(RULESET_FILE), &buf)
    }

    fn save_corpus(&self) -> Result<(), SessionError> {
        Ok(self.corpus.save(&self.dir)?)
    }

    fn require(&self, op: &'static str, phases: &[Phase]) -> Result<(), SessionError> {
        if phases.contains(&self.state.phase) {
            Ok(())
        } else {
            Err(SessionError::PhaseViolation {
                op,
                phase: self.state.phase,
            })
        }
    }

    /// Corpus changes are only allowed before the first iteration starts.
    fn require_setup(&self, op: &'static str) -> Result<(), SessionError> {
        self.require(op, &[Phase::Configured])?;
        if self.state.completed > 0 || self.state.current.is_some() {
            return Err(SessionError::PhaseViolation {
                op,
                phase: self.state.phase,
            });
        }
        Ok(())
    }

    fn record_event(&mut self, iteration: u32, kind: TelemetryKind) -> Result<DateTime<Utc>, SessionError> {
        let at = self.clock.now();
        let event = telemetry::TelemetryEvent { at, iteration, kind };
        self.telemetry.record(event.clone())?;
        store::append_ndjson(&self.dir.join(TELEMETRY_FILE), &[event])?;
        Ok(at)
    }

    /// Note reviewer activity (queue view, label, rule edit) for labor accounting.
    pub fn mark_activity(&mut self) -> Result<(), SessionError> {
        self.record_event(self.working_iteration(), TelemetryKind::Activity)?;
        Ok(())
    }

    pub fn record_manual_labor(&mut self, minutes: f64) -> Result<(), SessionError> {
        if !(minutes.is_finite() && minutes >= 0.0) {
            return Err(SessionError::InvalidConfig(format!("labor minutes must be >= 0, got {minutes}")));
        }
        self.record_event(self.working_iteration(), TelemetryKind::ManualLabor { minutes })?;
        Ok(())
    }

    /// Run every configured search (and exclusion search) through
    /// `transport` and merge the fetched records into the corpus.
    pub fn fetch(&mut self, transport: &dyn Transport) -> Result<BTreeMap<String, SearchSummary>, SessionError> {
        self.require_setup("fetch")?;
        let env_key = std::env::var(pubmed::API_KEY_ENV).ok().filter(|k| !k.is_empty());
        for mut spec in self.config.searches.clone() {
            if spec.api_key.is_none() {
                spec.api_key = env_key.clone();
            }
            let result = pubmed::run_search(&spec, transport)?;
            let fetched = if result.pmids.is_empty() {
                pubmed::FetchResult {
                    records: Vec::new(),
                    missing: Vec::new(),
                }
            } else {
                pubmed::fetch_records(&result.pmids, transport, spec.api_key.as_deref())?
            };
            let exclusion = pubmed::run_exclusion_search(&spec, transport)?;
            let summary = SearchSummary {
                total_count: result.total_count,
                retrieved: fetched.records.len(),
                missing: fetched.missing.len(),
                query_translation: result.server_query_translation.clone(),
                exclusion_pmids: exclusion.map(|e| e.pmids).unwrap_or_default(),
            };
            log::info!(
                "search {}: {} hits, {} records fetched, {} missing",
                spec.id,
                summary.total_count,
                summary.retrieved,
                summary.missing
            );
            self.corpus.add_batch(&spec.id, fetched.records);
            self.searches.insert(spec.id.clone(), summary);
        }
        self.save_corpus()?;
        store::write_json(&self.dir.join(SEARCHES_FILE), &self.searches)?;
        Ok(self.searches.clone())
    }

    /// Add already-retrieved records for one search string.
    pub fn ingest(
        &mut self,
        search_id: &str,
        records: Vec<RawRecord>,
        exclusion_pmids: Vec<Pmid>,
    ) -> Result<(), SessionError> {
        self.require_setup("ingest")?;
        let summary = SearchSummary {
            total_count: records.len() as u64,
            retrieved: records.len(),
            missing: 0,
            query_translation: None,
            exclusion_pmids,
        };
        self.corpus.add_batch(search_id, records);
        self.searches.insert(search_id.to_owned(), summary);
        self.save_corpus()?;
        store::write_json(&self.dir.join(SEARCHES_FILE), &self.searches)
    }

    /// Eligibility screening followed by negative-set flagging from the
    /// exclusion searches.
    pub fn screen(&mut self) -> Result<crate::corpus::EligibilityTally, SessionError> {
        self.require_setup("screen")?;
        self.corpus.screen(&self.config.blocked_languages);
        let exclusion: BTreeSet<Pmid> = self
            .searches
            .values()
            .flat_map(|s| s.exclusion_pmids.iter().cloned())
            .collect();
        let report = self.corpus.build_negative_set(&exclusion);
        log::info!(
            "negative set: {} flagged, {} exclusion hits outside the corpus",
            report.flagged.len(),
            report.not_in_corpus
        );
        self.state.screened = true;
        self.save_corpus()?;
        self.save_state()?;
        Ok(self.corpus.tally())
    }

    fn train(&self, rule_iteration: u32, labels: &BTreeMap<Pmid, Label>) -> Result<(PipelineModel, pipeline::TrainingData), SessionError> {
        let data = pipeline::prepare(&self.corpus, &self.ruleset, rule_iteration, labels, &self.config)
            .map_err(SessionError::TrainingFailure)?;
        pipeline::fit(data, labels, rule_iteration, &self.config).map_err(SessionError::TrainingFailure)
    }

    /// Train on the current rules and all earlier labels, then queue the
    /// unlabeled eligible records with the highest potential.
    pub fn start_iteration(&mut self) -> Result<Vec<QueueItem>, SessionError> {
        self.require("start_iteration", &[Phase::Configured])?;
        if !self.state.screened {
            return Err(SessionError::NotReady("screen the corpus before starting an iteration".into()));
        }
        let n = self.state.completed + 1;
        let labels = self.labels_upto(n - 1);
        let unlabeled = self
            .corpus
            .eligible()
            .filter(|r| !labels.contains_key(&r.pmid))
            .count();
        if unlabeled == 0 {
            return Err(SessionError::NoEligibleRecords);
        }
        self.record_event(n, TelemetryKind::RuntimeStart)?;
        let (model, data) = self.train(n, &labels)?;
        let probs = pipeline::predict_rows(&model, &data);
        let scored = pipeline::potentials(&data, &probs, &labels, self.config.potential_alpha);
        let ranked: Vec<(Pmid, crate::discriminative::PotentialScore)> =
            scored.iter().map(|(p, _, s)| (p.clone(), *s)).collect();
        let by_pmid: BTreeMap<&Pmid, (f64, crate::discriminative::PotentialScore)> =
            scored.iter().map(|(p, prob, s)| (p, (*prob, *s))).collect();
        let queue: Vec<QueueItem> = rank_queue(&ranked, self.config.queue_size)
            .into_iter()
            .map(|pmid| {
                let (probability, s) = by_pmid[&pmid];
                QueueItem {
                    title: self.corpus.get(&pmid).map(|r| r.title.clone()).unwrap_or_default(),
                    pmid,
                    probability,
                    potential: s.value,
                    uncertainty: s.uncertainty,
                    novelty: s.novelty,
                }
            })
            .collect();
        store::write_json(&self.iteration_dir(n).join("queue.json"), &queue)?;
        self.state.current = Some(n);
        self.state.queue = queue.clone();
        self.state.phase = Phase::AwaitingFeedback;
        self.save_state()?;
        self.record_event(n, TelemetryKind::Activity)?;
        Ok(queue)
    }

    /// Apply one rule edit stamped with the working iteration.
    pub fn apply_rule_edit(&mut self, edit: &RuleEdit) -> Result<u32, SessionError> {
        self.require(
            "rule edit",
            &[Phase::Configured, Phase::AwaitingFeedback, Phase::Training],
        )?;
        let n = self.working_iteration();
        let id = match edit {
            RuleEdit::Add { text, label } => self.ruleset.upsert_rule(text, *label, n)?,
            RuleEdit::Remove { rule_id } => {
                self.ruleset.remove_rule(*rule_id, n)?;
                *rule_id
            }
        };
        self.save_ruleset()?;
        self.record_event(n, TelemetryKind::Activity)?;
        Ok(id)
    }

    /// Record labels for queued records and apply rule edits. May be called
    /// repeatedly until the iteration is finished; resubmitting the same
    /// label for a record within an iteration is a no-op.
    pub fn submit_feedback(
        &mut self,
        labels: &BTreeMap<Pmid, Label>,
        rule_edits: &[RuleEdit],
    ) -> Result<usize, SessionError> {
        self.require("submit_feedback", &[Phase::AwaitingFeedback, Phase::Training])?;
        let n = self.state.current.expect("an iteration is in progress");
        if let Some(p) = labels.keys().find(|p| !self.state.queue.iter().any(|q| &q.pmid == *p)) {
            return Err(SessionError::UnknownPmid(p.clone()));
        }
        let mut seq = self.labels.last().map_or(0, |e| e.seq);
        let mut events = Vec::new();
        for (pmid, &label) in labels {
            let already = self
                .labels
                .iter()
                .rev()
                .find(|e| &e.pmid == pmid)
                .is_some_and(|e| e.iteration == n && e.label == label);
            if already {
                continue;
            }
            seq += 1;
            events.push(LabelEvent {
                seq,
                iteration: n,
                pmid: pmid.clone(),
                label,
                at: self.clock.now(),
            });
        }
        store::append_ndjson(&self.dir.join(LABELS_FILE), &events)?;
        let appended = events.len();
        self.labels.extend(events);
        for edit in rule_edits {
            self.apply_rule_edit(edit)?;
        }
        self.state.phase = Phase::Training;
        self.save_state()?;
        self.record_event(n, TelemetryKind::Activity)?;
        Ok(appended)
    }

    /// Retrain on all labels of the current iteration, compute metrics on
    /// the cumulative labeled set and persist the snapshot.
    pub fn finish_iteration(&mut self) -> Result<IterationSnapshot, SessionError> {
        self.require("finish_iteration", &[Phase::Training])?;
        let n = self.state.current.expect("an iteration is in progress");
        let labels = self.labels_upto(n);
        let (model, data) = self.train(n, &labels)?;
        let probs = pipeline::predict_rows(&model, &data);
        let oof = pipeline::out_of_fold(&model, &data, &labels, &self.config).map_err(SessionError::TrainingFailure)?;

        let pairs: Vec<(Label, Label)> = oof
            .iter()
            .map(|(p, &prob)| (labels[p], Label::from_probability(prob)))
            .collect();
        let scored = pipeline::potentials(&data, &probs, &labels, self.config.potential_alpha);
        let pool: Vec<f64> = scored.iter().map(|(_, _, s)| s.value).collect();
        let metrics = if pairs.is_empty() {
            None
        } else {
            Some(IterationMetrics::compute(confusion(pairs), &pool).map_err(|e| SessionError::TrainingFailure(e.to_string()))?)
        };
        let metrics = MetricsReport {
            iteration: n,
            labeled: oof.len(),
            metrics,
        };

        let eligible: Vec<_> = self.corpus.eligible().collect();
        let docs: Vec<MatchDoc> = eligible.iter().map(|r| MatchDoc::new(&r.title, &r.abstract_text)).collect();
        let correlations = xai::correlation_table(&self.ruleset, n, &docs, self.config.fdr_threshold);
        let index = data.index();
        let texts: Vec<(String, Label)> = eligible
            .iter()
            .map(|r| {
                let label = labels
                    .get(&r.pmid)
                    .copied()
                    .unwrap_or_else(|| Label::from_probability(probs[index[&r.pmid]]));
                (r.text(), label)
            })
            .collect();
        let wordcloud = xai::term_frequencies(texts.iter().map(|(t, l)| (t.as_str(), *l)), self.config.wordcloud_terms);

        let dir = self.iteration_dir(n);
        store::write_json(&dir.join("model.json"), &model)?;
        store::write_json(&dir.join("metrics.json"), &metrics)?;
        let mut csv_buf = Vec::new();
        xai::write_correlations_csv(&correlations, &mut csv_buf)
            .map_err(|e| SessionError::TrainingFailure(e.to_string()))?;
        store::write_atomic(&dir.join("correlations.csv"), &csv_buf)?;
        store::write_json(&dir.join("correlations.json"), &correlations)?;
        store::write_json(&dir.join("wordcloud.json"), &wordcloud)?;
        let mut matrix_buf = Vec::new();
        data.matrix
            .write_triplets(&mut matrix_buf)
            .map_err(|e| SessionError::TrainingFailure(e.to_string()))?;
        store::write_atomic(&dir.join("labelmatrix.csv"), &matrix_buf)?;

        self.record_event(n, TelemetryKind::RuntimeEnd)?;
        let (runtime_start, runtime_end) = match self.telemetry.runtime_span(n) {
            Some((s, e)) => (Some(s), Some(e)),
            None => (None, None),
        };
        let events_at = |kinds: &[RuleEventKind]| -> Vec<u32> {
            self.ruleset
                .rules
                .iter()
                .filter(|r| r.history.iter().any(|e| e.iteration == n && kinds.contains(&e.kind)))
                .map(|r| r.rule_id)
                .collect()
        };
        let snapshot = IterationSnapshot {
            iteration: n,
            active_rules: model.rule_ids.clone(),
            rules_added: events_at(&[RuleEventKind::Added, RuleEventKind::Reinstated]),
            rules_removed: events_at(&[RuleEventKind::Removed]),
            label_model: model.label_model.clone(),
            selected_features: model.selection.features.len(),
            queue: self.state.queue.iter().map(|q| q.pmid.clone()).collect(),
            labels: self
                .labels
                .iter()
                .filter(|e| e.iteration == n)
                .map(|e| (e.pmid.clone(), e.label))
                .collect(),
            metrics,
            runtime_start,
            runtime_end,
            total_runtime_secs: match (runtime_start, runtime_end) {
                (Some(s), Some(e)) => telemetry::runtime_secs(s, e)?,
                _ => 0,
            },
            labor_minutes: self.telemetry.labor_minutes(n, self.config.idle_cutoff_secs),
        };
        store::write_json(&dir.join("snapshot.json"), &snapshot)?;

        self.state.completed = n;
        self.state.current = None;
        self.state.queue.clear();
        self.state.phase = Phase::Configured;
        self.save_state()?;
        Ok(snapshot)
    }

    pub fn snapshot(&self, n: u32) -> Result<IterationSnapshot, SessionError> {
        self.check_iteration(n)?;
        store::read_json(&self.iteration_dir(n).join("snapshot.json"))
    }

    pub fn snapshots(&self) -> Result<Vec<IterationSnapshot>, SessionError> {
        (1..=self.state.completed).map(|n| self.snapshot(n)).collect()
    }

    pub fn model(&self, n: u32) -> Result<PipelineModel, SessionError> {
        self.check_iteration(n)?;
        let m: PipelineModel = store::read_json(&self.iteration_dir(n).join("model.json"))?;
        Ok(m.reindexed())
    }

    pub fn metrics(&self, n: u32) -> Result<MetricsReport, SessionError> {
        self.check_iteration(n)?;
        store::read_json(&self.iteration_dir(n).join("metrics.json"))
    }

    pub fn correlations(&self, n: u32) -> Result<Vec<CorrelationRow>, SessionError> {
        self.check_iteration(n)?;
        store::read_json(&self.iteration_dir(n).join("correlations.json"))
    }

    pub fn wordcloud(&self, n: u32) -> Result<WordCloud, SessionError> {
        self.check_iteration(n)?;
        store::read_json(&self.iteration_dir(n).join("wordcloud.json"))
    }

    fn check_iteration(&self, n: u32) -> Result<(), SessionError> {
        if n == 0 || n > self.state.completed {
            return Err(SessionError::NoSuchIteration(n));
        }
        Ok(())
    }

    pub fn latest_iteration(&self) -> Option<u32> {
        (self.state.completed > 0).then_some(self.state.completed)
    }

    /// Pinned iteration if any, else the best by kappa / accuracy / number.
    pub fn select_best_iteration(&self) -> Result<u32, SessionError> {
        if let Some(p) = self.state.pinned {
            return Ok(p);
        }
        if self.state.completed == 0 {
            return Err(SessionError::NoSuchIteration(0));
        }
        let mut candidates = Vec::new();
        for s in self.snapshots()? {
            let (k, a) = s.metrics.metrics.map_or((f64::NEG_INFINITY, f64::NEG_INFINITY), |m| (m.kappa, m.accuracy));
            candidates.push((s.iteration, k, a));
        }
        Ok(best_iteration(&candidates).expect("at least one snapshot"))
    }

    pub fn pin_iteration(&mut self, n: Option<u32>) -> Result<(), SessionError> {
        if let Some(n) = n {
            self.check_iteration(n)?;
        }
        self.state.pinned = n;
        self.save_state()
    }

    /// Make snapshot `n` the deployment model. Later rule edits and labels
    /// stay in the logs but are ignored by deployment.
    pub fn revert_to_iteration(&mut self, n: u32) -> Result<(), SessionError> {
        self.check_iteration(n)?;
        self.state.deployment_iteration = Some(n);
        self.save_state()
    }

    /// Classify every eligible record with snapshot `n` (explicit, else the
    /// reverted-to snapshot, else the best one). Reviewer labels up to `n`
    /// override model predictions.
    pub fn deploy(&mut self, n: Option<u32>) -> Result<Deployment, SessionError> {
        self.require("deploy", &[Phase::Configured, Phase::Finalized])?;
        let n = match n.or(self.state.deployment_iteration) {
            Some(n) => n,
            None => self.select_best_iteration()?,
        };
        let model = self.model(n)?;
        let labels = self.labels_upto(n);
        let eligible: Vec<_> = self.corpus.eligible().collect();
        let predicted: Vec<Label> = {
            use rayon::prelude::*;
            eligible
                .par_iter()
                .map(|r| Label::from_probability(model.predict_text(&r.text())))
                .collect()
        };
        let mut deployment = Deployment {
            iteration: n,
            include: Vec::new(),
            exclude: Vec::new(),
            user_labeled: 0,
        };
        for (r, predicted) in eligible.iter().zip(predicted) {
            let label = match labels.get(&r.pmid) {
                Some(&l) => {
                    deployment.user_labeled += 1;
                    l
                }
                None => predicted,
            };
            match label {
                Label::Include => deployment.include.push(r.pmid.clone()),
                Label::Exclude => deployment.exclude.push(r.pmid.clone()),
            }
        }
        store::write_json(&self.dir.join(DEPLOYMENT_FILE), &deployment)?;
        self.state.deployment_iteration = Some(n);
        self.state.phase = Phase::Finalized;
        self.save_state()?;
        self.write_prisma()?;
        Ok(deployment)
    }

    pub fn deployment(&self) -> Result<Option<Deployment>, SessionError> {
        let path = self.dir.join(DEPLOYMENT_FILE);
        if !path.exists() {
            return Ok(None);
        }
        store::read_json(&path).map(Some)
    }

    /// PRISMA counts for the current state; reviewer labels are taken up to
    /// the deployed iteration when there is one.
    pub fn prisma_counts(&self) -> Result<PrismaCounts, SessionError> {
        let deployment = self.deployment()?;
        let labels = match &deployment {
            Some(d) => self.labels_upto(d.iteration),
            None => self.labels(),
        };
        let counts = prisma::tally(&self.corpus, &labels, deployment.map(|d| d.include.len() as u64))?;
        Ok(counts)
    }

    /// Write `prisma.svg`, `prisma.dot` and `prisma.json`.
    pub fn write_prisma(&self) -> Result<PrismaCounts, SessionError> {
        let counts = self.prisma_counts()?;
        for format in [PrismaFormat::Svg, PrismaFormat::Dot, PrismaFormat::Json] {
            let body = prisma::render(&counts, format)?;
            store::write_atomic(&self.dir.join(format!("prisma.{}", format.extension())), body.as_bytes())?;
        }
        Ok(counts)
    }

    /// Store a reference library under `reference/<name>.pmids`.
    pub fn import_library(&self, library: &ReferenceLibrary) -> Result<PathBuf, SessionError> {
        Ok(library.save(&self.dir)?)
    }

    /// Build, write (`report/insert.{md,json}`) and return the package insert.
    pub fn generate_package_insert(&self) -> Result<PackageInsert, SessionError> {
        if self.state.completed == 0 {
            return Err(SessionError::NoSuchIteration(0));
        }
        let insert = report::build(self)?;
        let dir = self.dir.join("report");
        store::write_json(&dir.join("insert.json"), &insert)?;
        store::write_atomic(&dir.join("insert.md"), report::render_markdown(&insert).as_bytes())?;
        Ok(insert)
    }

    /// Draft the review from the deployed INCLUDE set and write
    /// `report/slr.{md,json}`. A full text at `<fulltext_dir>/<pmid>.txt`
    /// replaces the title and abstract of that record. Sections that fail are
    /// written as failed and reported as an error after the files are saved.
    pub fn summarize(
        &self,
        prompts: &PromptSet,
        fulltext_dir: Option<&Path>,
        backend: &dyn Backend,
    ) -> Result<ReviewDocument, SessionError> {
        let deployment = self
            .deployment()?
            .ok_or_else(|| SessionError::NotReady("deploy a snapshot before summarizing".into()))?;
        let mut docs = Vec::new();
        for pmid in &deployment.include {
            let full = fulltext_dir.map(|d| d.join(format!("{pmid}.txt"))).filter(|p| p.is_file());
            let text = match full {
                Some(path) => std::fs::read_to_string(&path).map_err(store::io_err(&path))?,
                None => self.corpus.get(pmid).map(|r| r.text()).unwrap_or_default(),
            };
            docs.push(SourceDoc {
                doc_id: pmid.to_string(),
                text,
            });
        }
        let review = summarizer::generate_review(prompts, &docs, backend, &self.config.summarizer)?;
        review.write(&self.dir.join("report"), "slr")?;
        review.check()?;
        Ok(review)
    }

    /// Eligible records that have a reviewer label.
    pub fn labeled_eligible(&self) -> usize {
        let labels = self.labels();
        self.corpus
            .eligible()
            .filter(|r| labels.contains_key(&r.pmid))
            .count()
    }

    /// Records excluded at screening, by PMID.
    pub fn ineligible(&self) -> Vec<(&Pmid, &Eligibility)> {
        self.corpus
            .records
            .values()
            .filter(|r| !r.is_eligible())
            .map(|r| (&r.pmid, &r.eligibility))
            .collect()
    }
}

/// List session directories (those containing `config.json`) under `root`.
pub fn list_sessions(root: &Path) -> Result<Vec<PathBuf>, SessionError> {
    let mut out = Vec::new();
    let entries = match std::fs::read_dir(root) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(store::io_err(root)(e)),
    };
    for entry in entries {
        let path = entry.map_err(store::io_err(root))?.path();
        if path.join(CONFIG_FILE).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
