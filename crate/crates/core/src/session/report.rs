//! Package insert: a per-session document with configuration, rule history,
//! per-iteration metrics, rule correlations, telemetry and PRISMA counts.
//! Rendering is deterministic (no generation timestamp) so a report rebuilt
//! from the session directory is byte-identical.

use std::fmt::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::telemetry::{format_clock, format_hms};
use super::{Session, SessionError};
use crate::metrics::{ClassMetrics, ConfusionMatrix};
use crate::prisma::PrismaCounts;
use crate::ruleset::HistoryRow;
use crate::types::{percent, sci, Label};
use crate::xai::CorrelationRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub id: String,
    pub query: String,
    pub exclusion_query: Option<String>,
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
    pub total_count: Option<u64>,
    pub retrieved: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub queue_size: usize,
    pub potential_alpha: f64,
    pub min_df: usize,
    pub cv_folds: usize,
    pub feature_budget: usize,
    pub annealing_steps: usize,
    pub selection_seed: u64,
    pub l2: f64,
    pub epochs: usize,
    pub label_model_seed: u64,
    pub blocked_languages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRow {
    pub identified: usize,
    pub unique: usize,
    pub eligible: usize,
    pub no_abstract: usize,
    pub language_blocked: usize,
    pub duplicate: usize,
    pub exclusion_query_match: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleChangeRow {
    pub iteration: u32,
    pub added: Vec<String>,
    pub removed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: u32,
    pub labeled: usize,
    pub confusion: Option<ConfusionMatrix>,
    pub kappa: Option<f64>,
    pub accuracy: Option<f64>,
    pub average_potential: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetricRow {
    pub iteration: u32,
    pub class: Label,
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelRow {
    pub iteration: u32,
    pub class_prior: f64,
    pub rule_accuracies: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationCorrelations {
    pub iteration: u32,
    pub rows: Vec<CorrelationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRowView {
    pub iteration: u32,
    pub labor_minutes: f64,
    pub runtime_start: Option<String>,
    pub runtime_end: Option<String>,
    pub total_runtime: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRow {
    pub iteration: u32,
    pub include: usize,
    pub exclude: usize,
    pub user_labeled: usize,
}

/// `report/insert.json`; `insert.md` is rendered from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageInsert {
    pub session_id: String,
    pub searches: Vec<SearchRow>,
    pub settings: Settings,
    pub corpus: CorpusRow,
    pub rules: Vec<HistoryRow>,
    pub ruleset_changes: Vec<RuleChangeRow>,
    pub metrics: Vec<MetricRow>,
    pub class_metrics: Vec<ClassMetricRow>,
    pub label_model: Vec<LabelModelRow>,
    pub correlations: Vec<IterationCorrelations>,
    pub telemetry: Vec<TelemetryRowView>,
    pub total_labor_minutes: String,
    pub total_runtime: String,
    pub selected_iteration: u32,
    pub pinned: Option<u32>,
    pub deployment: Option<DeploymentRow>,
    pub prisma: Option<PrismaCounts>,
}

pub(crate) fn build(session: &Session) -> Result<PackageInsert, SessionError> {
    let cfg = session.config();
    let rule_text = |id: &u32| {
        session
            .ruleset()
            .get(*id)
            .map(|r| format!("{} ({})", r.text, r.label))
            .unwrap_or_else(|| format!("#{id}"))
    };
    let snapshots = session.snapshots()?;
    let mut metrics = Vec::new();
    let mut class_metrics = Vec::new();
    let mut correlations = Vec::new();
    let mut telemetry = Vec::new();
    let mut label_model = Vec::new();
    let mut changes = Vec::new();
    for s in &snapshots {
        let m = s.metrics.metrics.as_ref();
        metrics.push(MetricRow {
            iteration: s.iteration,
            labeled: s.metrics.labeled,
            confusion: m.map(|m| m.confusion),
            kappa: m.map(|m| m.kappa),
            accuracy: m.map(|m| m.accuracy),
            average_potential: m.and_then(|m| m.average_potential),
        });
        if let Some(m) = m {
            for class in [Label::Include, Label::Exclude] {
                class_metrics.push(ClassMetricRow {
                    iteration: s.iteration,
                    class,
                    metrics: *m.class(class),
                });
            }
        }
        label_model.push(LabelModelRow {
            iteration: s.iteration,
            class_prior: s.label_model.class_prior,
            rule_accuracies: s
                .label_model
                .rule_ids
                .iter()
                .copied()
                .zip(s.label_model.accuracies.iter().copied())
                .collect(),
        });
        changes.push(RuleChangeRow {
            iteration: s.iteration,
            added: s.rules_added.iter().map(rule_text).collect(),
            removed: s.rules_removed.iter().map(rule_text).collect(),
        });
        correlations.push(IterationCorrelations {
            iteration: s.iteration,
            rows: session.correlations(s.iteration)?,
        });
        telemetry.push(TelemetryRowView {
            iteration: s.iteration,
            labor_minutes: s.labor_minutes,
            runtime_start: s.runtime_start.as_ref().map(format_clock),
            runtime_end: s.runtime_end.as_ref().map(format_clock),
            total_runtime: format_hms(s.total_runtime_secs),
        });
    }
    let tally = session.corpus().tally();
    let deployment = session.deployment()?;
    Ok(PackageInsert {
        session_id: cfg.session_id.clone(),
        searches: cfg
            .searches
            .iter()
            .map(|s| {
                let summary = session.searches().get(&s.id);
                SearchRow {
                    id: s.id.clone(),
                    query: s.query_text.clone(),
                    exclusion_query: s.exclusion_query_text.clone(),
                    date_start: s.date_start,
                    date_end: s.date_end,
                    total_count: summary.map(|x| x.total_count),
                    retrieved: summary.map(|x| x.retrieved),
                }
            })
            .collect(),
        settings: Settings {
            queue_size: cfg.queue_size,
            potential_alpha: cfg.potential_alpha,
            min_df: cfg.min_df,
            cv_folds: cfg.cv_folds,
            feature_budget: cfg.selection.budget,
            annealing_steps: cfg.selection.steps,
            selection_seed: cfg.selection.seed,
            l2: cfg.train.l2,
            epochs: cfg.train.epochs,
            label_model_seed: cfg.label_model.seed,
            blocked_languages: cfg.blocked_languages.iter().cloned().collect(),
        },
        corpus: CorpusRow {
            identified: session.corpus().identified(),
            unique: tally.total,
            eligible: tally.eligible,
            no_abstract: tally.no_abstract,
            language_blocked: tally.language_blocked,
            duplicate: tally.duplicate,
            exclusion_query_match: tally.exclusion_query_match,
        },
        rules: session.ruleset().export_history(),
        ruleset_changes: changes,
        metrics,
        class_metrics,
        label_model,
        correlations,
        total_labor_minutes: format!("{:.1}", telemetry.iter().map(|t| t.labor_minutes).sum::<f64>()),
        total_runtime: format_hms(snapshots.iter().map(|s| s.total_runtime_secs).sum()),
        telemetry,
        selected_iteration: session.select_best_iteration()?,
        pinned: session.state().pinned,
        deployment: deployment.map(|d| DeploymentRow {
            iteration: d.iteration,
            include: d.include.len(),
            exclude: d.exclude.len(),
            user_labeled: d.user_labeled,
        }),
        prisma: session.prisma_counts().ok(),
    })
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_else(|| "n/a".into())
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

pub fn render_markdown(p: &PackageInsert) -> String {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "# AI Package Insert: {}\n", p.session_id);

    let _ = writeln!(w, "## Search strings\n");
    let _ = writeln!(w, "| ID | Query | Exclusion query | Dates | Hits | Retrieved |");
    let _ = writeln!(w, "|---|---|---|---|---|---|");
    for s in &p.searches {
        let _ = writeln!(
            w,
            "| {} | {} | {} | {} to {} | {} | {} |",
            s.id,
            cell(&s.query),
            cell(s.exclusion_query.as_deref().unwrap_or("")),
            s.date_start,
            s.date_end,
            opt(s.total_count, |x| x.to_string()),
            opt(s.retrieved, |x| x.to_string()),
        );
    }

    let st = &p.settings;
    let _ = writeln!(w, "\n## Settings\n");
    let _ = writeln!(w, "- Queue size: {}", st.queue_size);
    let _ = writeln!(w, "- Potential weight on uncertainty: {}", st.potential_alpha);
    let _ = writeln!(w, "- Minimum document frequency: {}", st.min_df);
    let _ = writeln!(w, "- Cross-validation folds: {}", st.cv_folds);
    let _ = writeln!(
        w,
        "- Feature selection: budget {}, {} annealing steps, seed {}",
        st.feature_budget, st.annealing_steps, st.selection_seed
    );
    let _ = writeln!(w, "- Classifier: L2 {}, {} epochs", st.l2, st.epochs);
    let _ = writeln!(w, "- Label model seed: {}", st.label_model_seed);
    let _ = writeln!(w, "- Blocked languages: {}", st.blocked_languages.join(", "));

    let c = &p.corpus;
    let _ = writeln!(w, "\n## Corpus\n");
    let _ = writeln!(w, "| Identified | Unique | Eligible | No abstract | Language | Duplicate | Exclusion query |");
    let _ = writeln!(w, "|---|---|---|---|---|---|---|");
    let _ = writeln!(
        w,
        "| {} | {} | {} | {} | {} | {} | {} |",
        c.identified, c.unique, c.eligible, c.no_abstract, c.language_blocked, c.duplicate, c.exclusion_query_match
    );

    let _ = writeln!(w, "\n## Concept rules\n");
    let _ = writeln!(w, "| Rule Number | Rule | Label | Iteration Modified |");
    let _ = writeln!(w, "|---|---|---|---|");
    for r in &p.rules {
        let _ = writeln!(w, "| {} | {} | {} | {} |", r.rule_number, cell(&r.text), r.label, r.iterations);
    }

    let _ = writeln!(w, "\n## Ruleset changes\n");
    let _ = writeln!(w, "| Iteration | Added | Removed |");
    let _ = writeln!(w, "|---|---|---|");
    for r in &p.ruleset_changes {
        let _ = writeln!(
            w,
            "| {} | {} | {} |",
            r.iteration,
            cell(&r.added.join("; ")),
            cell(&r.removed.join("; "))
        );
    }

    let _ = writeln!(w, "\n## Performance metrics\n");
    let _ = writeln!(w, "| Iteration | Labeled | Confusion [[II, IE], [EI, EE]] | Cohen's Kappa | Accuracy | Average Potential |");
    let _ = writeln!(w, "|---|---|---|---|---|---|");
    for m in &p.metrics {
        let _ = writeln!(
            w,
            "| {}{} | {} | {} | {} | {} | {} |",
            m.iteration,
            if m.iteration == p.selected_iteration { "*" } else { "" },
            m.labeled,
            opt(m.confusion, |c| format!("{:?}", c.counts)),
            opt(m.kappa, |k| format!("{k:.4}")),
            opt(m.accuracy, percent),
            opt(m.average_potential, |a| format!("{a:.4}")),
        );
    }
    let _ = writeln!(w, "\n(*) selected iteration{}", if p.pinned.is_some() { " (pinned)" } else { "" });

    let _ = writeln!(w, "\n## Class metrics\n");
    let _ = writeln!(w, "| Iteration | Class | Recall | Precision | F-score |");
    let _ = writeln!(w, "|---|---|---|---|---|");
    for r in &p.class_metrics {
        let _ = writeln!(
            w,
            "| {} | {} | {} | {} | {} |",
            r.iteration,
            r.class,
            percent(r.metrics.recall),
            percent(r.metrics.precision),
            percent(r.metrics.f_score)
        );
    }

    let _ = writeln!(w, "\n## Label model\n");
    let _ = writeln!(w, "| Iteration | INCLUDE prior | Rule accuracies |");
    let _ = writeln!(w, "|---|---|---|");
    for r in &p.label_model {
        let accs: Vec<String> = r
            .rule_accuracies
            .iter()
            .map(|(id, a)| format!("{id}: {a:.3}"))
            .collect();
        let _ = writeln!(w, "| {} | {:.4} | {} |", r.iteration, r.class_prior, accs.join(", "));
    }

    for ic in &p.correlations {
        let _ = writeln!(w, "\n## Rule correlations, iteration {}\n", ic.iteration);
        if ic.rows.is_empty() {
            let _ = writeln!(w, "No rule pairs pass the FDR threshold.");
            continue;
        }
        let _ = writeln!(w, "| Rule 1 | Rule 2 | Class 1 | Class 2 | Correlation | P-value (FDR-adjusted) | Coverage 1 | Coverage 2 |");
        let _ = writeln!(w, "|---|---|---|---|---|---|---|---|");
        for r in &ic.rows {
            let _ = writeln!(
                w,
                "| {} | {} | {} | {} | {:.4} | {} | {} | {} |",
                cell(&r.rule1),
                cell(&r.rule2),
                r.class1,
                r.class2,
                r.correlation,
                sci(r.p_adjusted),
                r.coverage1,
                r.coverage2
            );
        }
    }

    let _ = writeln!(w, "\n## Telemetry\n");
    let _ = writeln!(w, "| Iteration | Human Labor (mins) | Runtime Start | Runtime End | Total Runtime |");
    let _ = writeln!(w, "|---|---|---|---|---|");
    for t in &p.telemetry {
        let _ = writeln!(
            w,
            "| {} | {:.1} | {} | {} | {} |",
            t.iteration,
            t.labor_minutes,
            t.runtime_start.as_deref().unwrap_or("n/a"),
            t.runtime_end.as_deref().unwrap_or("n/a"),
            t.total_runtime
        );
    }
    let _ = writeln!(w, "| Total | {} | | | {} |", p.total_labor_minutes, p.total_runtime);

    let _ = writeln!(w, "\n## Deployment\n");
    match &p.deployment {
        Some(d) => {
            let _ = writeln!(
                w,
                "Iteration {} classified {} INCLUDE and {} EXCLUDE ({} from reviewer labels).",
                d.iteration, d.include, d.exclude, d.user_labeled
            );
        }
        None => {
            let _ = writeln!(w, "Not deployed.");
        }
    }

    let _ = writeln!(w, "\n## PRISMA\n");
    match &p.prisma {
        Some(c) => {
            let _ = writeln!(w, "| Stage | Count |");
            let _ = writeln!(w, "|---|---|");
            for (k, v) in [
                ("Records identified", c.identified),
                ("Duplicates removed", c.duplicates_removed),
                ("Removed for other reasons", c.removed_other_reasons),
                ("Ineligible by exclusion criteria", c.ineligible_by_criteria),
                ("Records screened", c.records_screened),
                ("Records excluded", c.records_excluded),
                ("Reports sought for retrieval", c.sought_fulltext),
                ("Reports excluded", c.reports_excluded()),
                ("Studies included", c.included),
            ] {
                let _ = writeln!(w, "| {k} | {v} |");
            }
        }
        None => {
            let _ = writeln!(w, "Corpus not screened.");
        }
    }
    out
}
