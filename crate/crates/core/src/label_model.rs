//! Weak labels from concept rules, fused by a generative label model.
//!
//! Each rule j votes `sign(label_j)` on records it matches and abstains
//! elsewhere. Given the latent class y, non-abstaining votes are independent
//! and correct with probability `a_j`. Parameters (π, a) are fitted by EM:
//!
//! ```text
//! E:  q_i  = π·Π a_j^[v=y+]·(1−a_j)^[v≠y+] / Z_i
//! M:  π    = mean_i q_i
//!     a_j  = Σ_i [v_ij=+1]·q_i + [v_ij=−1]·(1−q_i)  /  #{i : v_ij ≠ 0}
//! ```
//!
//! Both M-step updates maximize a concave expected log-likelihood in one
//! variable, so clamping them to their boxes keeps EM monotone.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ruleset::{CompiledRule, MatchDoc, Ruleset};
use crate::types::{Label, Pmid};

pub const ACCURACY_MIN: f64 = 0.05;
pub const ACCURACY_MAX: f64 = 0.95;
pub const PRIOR_MIN: f64 = 1e-3;
pub const PRIOR_MAX: f64 = 1.0 - 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum LabelModelError {
    #[error("ruleset needs at least one active INCLUDE and one active EXCLUDE rule at iteration {0}")]
    EmptyRuleset(u32),
    #[error("label matrix has no non-abstaining votes")]
    DegenerateMatrix,
    #[error("row has {got} votes but the model has {expected} rules")]
    RowLength { expected: usize, got: usize },
    #[error("label matrix file, line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub record_ids: Vec<Pmid>,
    pub rule_ids: Vec<u32>,
    /// Row-major, one row per record: +1 INCLUDE, −1 EXCLUDE, 0 abstain.
    pub votes: Vec<Vec<i8>>,
}

impl LabelMatrix {
    pub fn n_records(&self) -> usize {
        self.record_ids.len()
    }

    pub fn n_rules(&self) -> usize {
        self.rule_ids.len()
    }

    pub fn nonzero(&self) -> usize {
        self.votes.iter().flatten().filter(|&&v| v != 0).count()
    }

    pub fn column(&self, j: usize) -> Vec<i8> {
        self.votes.iter().map(|row| row[j]).collect()
    }

    /// Sparse `record_id,rule_id,vote` triplets, abstains omitted.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<(), LabelModelError> {
        writeln!(w, "record_id,rule_id,vote")?;
        for (pmid, row) in self.record_ids.iter().zip(&self.votes) {
            for (rule, &v) in self.rule_ids.iter().zip(row) {
                if v != 0 {
                    writeln!(w, "{pmid},{rule},{v}")?;
                }
            }
        }
        Ok(())
    }

    /// Rebuild a matrix from triplets; the record and rule axes must be
    /// supplied since all-abstain rows and columns are not stored.
    pub fn read_triplets<R: Read>(
        mut r: R,
        record_ids: Vec<Pmid>,
        rule_ids: Vec<u32>,
    ) -> Result<Self, LabelModelError> {
        let mut body = String::new();
        r.read_to_string(&mut body)?;
        let row_of: std::collections::HashMap<&Pmid, usize> =
            record_ids.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let col_of: std::collections::HashMap<u32, usize> =
            rule_ids.iter().enumerate().map(|(j, &r)| (r, j)).collect();
        let mut votes = vec![vec![0i8; rule_ids.len()]; record_ids.len()];
        for (n, line) in body.lines().enumerate().skip(1) {
            let bad = |message: String| LabelModelError::Parse { line: n + 1, message };
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", parts.len())));
            }
            let pmid = Pmid::new(parts[0]).map_err(|e| bad(e.to_string()))?;
            let rule: u32 = parts[1].parse().map_err(|_| bad(format!("bad rule id {:?}", parts[1])))?;
            let v: i8 = parts[2].parse().map_err(|_| bad(format!("bad vote {:?}", parts[2])))?;
            if v != 1 && v != -1 {
                return Err(bad(format!("vote must be ±1, got {v}")));
            }
            let i = *row_of.get(&pmid).ok_or_else(|| bad(format!("unknown record {pmid}")))?;
            let j = *col_of.get(&rule).ok_or_else(|| bad(format!("unknown rule {rule}")))?;
            votes[i][j] = v;
        }
        Ok(LabelMatrix {
            record_ids,
            rule_ids,
            votes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LabelModelError> {
        let f = std::fs::File::create(path)?;
        self.write_triplets(std::io::BufWriter::new(f))
    }
}

/// Apply the rules active at `iteration` to each document.
pub fn build_label_matrix(
    ruleset: &Ruleset,
    iteration: u32,
    docs: &[(Pmid, MatchDoc)],
) -> Result<LabelMatrix, LabelModelError> {
    if !ruleset.has_both_classes_at(iteration) {
        return Err(LabelModelError::EmptyRuleset(iteration));
    }
    let rules: Vec<CompiledRule> = ruleset
        .active_at(iteration)
        .into_iter()
        .map(CompiledRule::new)
        .collect();
    let votes = docs
        .par_iter()
        .map(|(_, doc)| {
            rules
                .iter()
                .map(|r| if r.matches(doc) { r.label.sign() } else { 0 })
                .collect()
        })
        .collect();
    Ok(LabelMatrix {
        record_ids: docs.iter().map(|(p, _)| p.clone()).collect(),
        rule_ids: rules.iter().map(|r| r.rule_id).collect(),
        votes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub init_accuracy: f64,
    pub seed: u64,
    /// Extra fits from random starting points; the best log-likelihood wins.
    pub restarts: usize,
    /// Lower clamp for accuracies, at least [`ACCURACY_MIN`]. Raising it to
    /// 0.5 encodes "every rule is better than chance".
    #[serde(default = "default_floor")]
    pub accuracy_floor: f64,
    /// Keep π at this value instead of re-estimating it.
    #[serde(default)]
    pub fixed_prior: Option<f64>,
}

fn default_floor() -> f64 {
    ACCURACY_MIN
}

impl Default for LabelModelConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            init_accuracy: 0.7,
            seed: 0,
            restarts: 0,
            accuracy_floor: ACCURACY_MIN,
            fixed_prior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelParams {
    pub class_prior: f64,
    pub rule_ids: Vec<u32>,
    pub accuracies: Vec<f64>,
    /// Log-likelihood at the starting point and after every EM step.
    pub log_likelihood: Vec<f64>,
}

impl LabelModelParams {
    pub fn accuracy(&self, rule_id: u32) -> Option<f64> {
        self.rule_ids
            .iter()
            .position(|&r| r == rule_id)
            .map(|j| self.accuracies[j])
    }

    pub fn iterations(&self) -> usize {
        self.log_likelihood.len().saturating_sub(1)
    }
}

/// (log P(row, y=+), log P(row, y=−)).
fn joint_logs(prior: f64, acc: &[f64], row: &[i8]) -> (f64, f64) {
    let mut lp = prior.ln();
    let mut ln = (1.0 - prior).ln();
    for (&v, &a) in row.iter().zip(acc) {
        match v {
            1 => {
                lp += a.ln();
                ln += (1.0 - a).ln();
            }
            -1 => {
                lp += (1.0 - a).ln();
                ln += a.ln();
            }
            _ => {}
        }
    }
    (lp, ln)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn posterior_raw(prior: f64, acc: &[f64], row: &[i8]) -> f64 {
    let (lp, ln) = joint_logs(prior, acc, row);
    1.0 / (1.0 + (ln - lp).exp())
}

fn log_likelihood(m: &LabelMatrix, anchors: &[Option<Label>], prior: f64, acc: &[f64]) -> f64 {
    // Per-row terms in parallel, summed in row order so the result is
    // independent of thread scheduling.
    let terms: Vec<f64> = m
        .votes
        .par_iter()
        .zip(anchors)
        .map(|(row, anchor)| {
            let (lp, ln) = joint_logs(prior, acc, row);
            match anchor {
                Some(Label::Include) => lp,
                Some(Label::Exclude) => ln,
                None => log_sum_exp(lp, ln),
            }
        })
        .collect();
    terms.iter().sum()
}

fn run_em(
    m: &LabelMatrix,
    anchors: &[Option<Label>],
    cfg: &LabelModelConfig,
    mut prior: f64,
    mut acc: Vec<f64>,
) -> LabelModelParams {
    let floor = cfg.accuracy_floor.clamp(ACCURACY_MIN, ACCURACY_MAX);
    let mut trace = vec![log_likelihood(m, anchors, prior, &acc)];
    for _ in 0..cfg.max_iters {
        let q: Vec<f64> = m
            .votes
            .par_iter()
            .zip(anchors)
            .map(|(row, anchor)| match anchor {
                Some(Label::Include) => 1.0,
                Some(Label::Exclude) => 0.0,
                None => posterior_raw(prior, &acc, row),
            })
            .collect();
        if cfg.fixed_prior.is_none() {
            prior = (q.iter().sum::<f64>() / q.len() as f64).clamp(PRIOR_MIN, PRIOR_MAX);
        }
        for (j, a) in acc.iter_mut().enumerate() {
            let mut agree = 0.0;
            let mut n = 0usize;
            for (row, &qi) in m.votes.iter().zip(&q) {
                match row[j] {
                    1 => {
                        agree += qi;
                        n += 1;
                    }
                    -1 => {
                        agree += 1.0 - qi;
                        n += 1;
                    }
                    _ => {}
                }
            }
            if n > 0 {
                *a = (agree / n as f64).clamp(floor, ACCURACY_MAX);
            }
        }
        let ll = log_likelihood(m, anchors, prior, &acc);
        let prev = *trace.last().expect("trace starts non-empty");
        debug_assert!(ll >= prev - 1e-9 * prev.abs().max(1.0), "EM decreased: {prev} -> {ll}");
        trace.push(ll);
        if (ll - prev).abs() < cfg.tol {
            break;
        }
    }
    LabelModelParams {
        class_prior: prior,
        rule_ids: m.rule_ids.clone(),
        accuracies: acc,
        log_likelihood: trace,
    }
}

pub fn fit(m: &LabelMatrix, cfg: &LabelModelConfig) -> Result<LabelModelParams, LabelModelError> {
    fit_anchored(m, &vec![None; m.n_records()], cfg)
}

/// EM where rows with a known class (`anchors[i] = Some(label)`) keep that
/// class in every E-step; their likelihood term is the joint with the known
/// class rather than the mixture.
pub fn fit_anchored(
    m: &LabelMatrix,
    anchors: &[Option<Label>],
    cfg: &LabelModelConfig,
) -> Result<LabelModelParams, LabelModelError> {
    if m.n_records() == 0 || m.nonzero() == 0 {
        return Err(LabelModelError::DegenerateMatrix);
    }
    if anchors.len() != m.n_records() {
        return Err(LabelModelError::RowLength {
            expected: m.n_records(),
            got: anchors.len(),
        });
    }
    let floor = cfg.accuracy_floor.clamp(ACCURACY_MIN, ACCURACY_MAX);
    let init = cfg.init_accuracy.clamp(floor, ACCURACY_MAX);
    let start_prior = cfg.fixed_prior.map_or(0.5, |p| p.clamp(PRIOR_MIN, PRIOR_MAX));
    let mut best = run_em(m, anchors, cfg, start_prior, vec![init; m.n_rules()]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.restarts {
        let prior = rng.random_range(0.2..0.8);
        let prior = cfg.fixed_prior.map_or(prior, |_| start_prior);
        let acc = (0..m.n_rules())
            .map(|_| rng.random_range(0.55..0.95f64).max(floor))
            .collect();
        let candidate = run_em(m, anchors, cfg, prior, acc);
        if candidate.log_likelihood.last() > best.log_likelihood.last() {
            best = candidate;
        }
    }
    Ok(best)
}

/// P(INCLUDE | row). An all-abstain row returns the prior exactly.
pub fn posterior(params: &LabelModelParams, row: &[i8]) -> Result<f64, LabelModelError> {
    if row.len() != params.accuracies.len() {
        return Err(LabelModelError::RowLength {
            expected: params.accuracies.len(),
            got: row.len(),
        });
    }
    if row.iter().all(|&v| v == 0) {
        return Ok(params.class_prior);
    }
    Ok(posterior_raw(params.class_prior, &params.accuracies, row))
}

/// Posteriors for every row of `m`.
pub fn posteriors(params: &LabelModelParams, m: &LabelMatrix) -> Result<Vec<f64>, LabelModelError> {
    m.votes.iter().map(|row| posterior(params, row)).collect()
}

/// Sign of the vote sum; ties (including all-abstain) go to INCLUDE.
pub fn majority_vote(row: &[i8]) -> Label {
    let sum: i32 = row.iter().map(|&v| i32::from(v)).sum();
    if sum >= 0 {
        Label::Include
    } else {
        Label::Exclude
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(prior: f64, acc: Vec<f64>) -> LabelModelParams {
        LabelModelParams {
            class_prior: prior,
            rule_ids: (1..=acc.len() as u32).collect(),
            accuracies: acc,
            log_likelihood: vec![],
        }
    }

    #[test]
    fn posterior_bayes_product() {
        let p = params(0.5, vec![0.9; 3]);
        let expected = 0.9f64.powi(3) / (0.9f64.powi(3) + 0.1f64.powi(3));
        assert_abs_diff_eq!(posterior(&p, &[1, 1, 1]).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(posterior(&p, &[1, 1, 1]).unwrap(), 0.99863, epsilon = 1e-5);
        let p = params(0.4, vec![0.9; 3]);
        assert_eq!(posterior(&p, &[0, 0, 0]).unwrap(), 0.4);
        let p = params(0.5, vec![0.8, 0.8]);
        assert_abs_diff_eq!(posterior(&p, &[1, -1]).unwrap(), 0.5, epsilon = 1e-12);
        assert!(posterior(&p, &[1]).is_err());
    }

    #[test]
    fn majority_vote_ties_include() {
        assert_eq!(majority_vote(&[1, -1, 1]), Label::Include);
        assert_eq!(majority_vote(&[-1, -1, 0]), Label::Exclude);
        assert_eq!(majority_vote(&[1, -1]), Label::Include);
        assert_eq!(majority_vote(&[0, 0]), Label::Include);
    }

    #[test]
    fn degenerate_matrix_rejected() {
        let m = LabelMatrix {
            record_ids: vec![Pmid::new("1").unwrap()],
            rule_ids: vec![1],
            votes: vec![vec![0]],
        };
        assert!(matches!(fit(&m, &LabelModelConfig::default()), Err(LabelModelError::DegenerateMatrix)));
    }

    #[test]
    fn triplet_round_trip() {
        let m = LabelMatrix {
            record_ids: vec![Pmid::new("1").unwrap(), Pmid::new("2").unwrap()],
            rule_ids: vec![7, 9],
            votes: vec![vec![1, 0], vec![0, -1]],
        };
        let mut buf = Vec::new();
        m.write_triplets(&mut buf).unwrap();
        let back = LabelMatrix::read_triplets(&buf[..], m.record_ids.clone(), m.rule_ids.clone()).unwrap();
        assert_eq!(back, m);
    }

    fn matrix(votes: Vec<Vec<i8>>) -> LabelMatrix {
        LabelMatrix {
            record_ids: (1..=votes.len()).map(|i| Pmid::new(&i.to_string()).unwrap()).collect(),
            rule_ids: (1..=votes[0].len() as u32).collect(),
            votes,
        }
    }

    #[test]
    fn fixed_prior_is_kept() {
        let m = matrix(vec![vec![1, 0], vec![1, -1], vec![0, -1], vec![1, 0]]);
        let cfg = LabelModelConfig {
            fixed_prior: Some(0.3),
            ..LabelModelConfig::default()
        };
        let p = fit(&m, &cfg).unwrap();
        assert_eq!(p.class_prior, 0.3);
        assert!(p.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn accuracy_floor_bounds_estimates() {
        let m = matrix(vec![vec![1, -1], vec![1, -1], vec![1, -1], vec![0, -1]]);
        let cfg = LabelModelConfig {
            accuracy_floor: 0.6,
            ..LabelModelConfig::default()
        };
        let p = fit(&m, &cfg).unwrap();
        assert!(p.accuracies.iter().all(|&a| (0.6..=ACCURACY_MAX).contains(&a)));
    }

    #[test]
    fn anchors_fix_row_classes() {
        // One rule fires on four rows; anchors say two are INCLUDE and two
        // EXCLUDE, so the M-step gives accuracy exactly 0.5 and π = 0.5.
        let m = matrix(vec![vec![1], vec![1], vec![1], vec![1]]);
        let anchors = vec![
            Some(Label::Include),
            Some(Label::Include),
            Some(Label::Exclude),
            Some(Label::Exclude),
        ];
        let p = fit_anchored(&m, &anchors, &LabelModelConfig::default()).unwrap();
        assert_abs_diff_eq!(p.accuracies[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.class_prior, 0.5, epsilon = 1e-12);
        assert!(matches!(
            fit_anchored(&m, &anchors[..2], &LabelModelConfig::default()),
            Err(LabelModelError::RowLength { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn unanchored_fit_matches_fit() {
        let m = matrix(vec![vec![1, 0, -1], vec![1, 1, 0], vec![0, -1, -1], vec![1, 0, 0]]);
        let cfg = LabelModelConfig::default();
        assert_eq!(fit(&m, &cfg).unwrap(), fit_anchored(&m, &[None, None, None, None], &cfg).unwrap());
    }
}
