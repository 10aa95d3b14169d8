//! Wrapper feature selection by simulated annealing.
//!
//! State: a feature subset of size min(budget, dim). Move: swap one selected
//! feature for one unselected feature. A worse candidate is accepted with
//! probability exp(Δ/T); T starts at `t0` and is multiplied by `cooling`
//! after every step. The objective is pooled 5-fold cross-validated F1 of the
//! INCLUDE class against soft labels thresholded at 0.5.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{fit_design, sigmoid, Design, TrainConfig};
use super::features::SparseVector;

pub const MIN_EXAMPLES: usize = 10;
pub const FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectionError {
    #[error("feature selection needs at least {MIN_EXAMPLES} examples, got {0}")]
    InsufficientData(usize),
    #[error("feature budget must be at least 1")]
    ZeroBudget,
    #[error("{vectors} vectors but {labels} labels")]
    LengthMismatch { vectors: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSubset {
    /// Uniformly random subset.
    Random,
    /// Features with the largest mean difference between the two classes.
    Ranked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub budget: usize,
    pub steps: usize,
    pub t0: f64,
    pub cooling: f64,
    pub seed: u64,
    pub init: InitialSubset,
    /// Training settings for the classifier inside the objective.
    pub inner: TrainConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            budget: 300,
            steps: 200,
            t0: 1.0,
            cooling: 0.95,
            seed: 0,
            init: InitialSubset::Ranked,
            inner: TrainConfig {
                epochs: 50,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected feature indices, ascending.
    pub features: Vec<u32>,
    pub objective: f64,
    pub initial_objective: f64,
    pub accepted_moves: usize,
}

/// F1 of the positive class; 0 when there are no positives and no predictions.
pub fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

struct Objective<'a> {
    vectors: &'a [SparseVector],
    targets: Vec<f64>,
    folds: Vec<usize>,
    inner: TrainConfig,
}

impl Objective<'_> {
    fn eval(&self, subset: &[u32]) -> f64 {
        let mut sorted = subset.to_vec();
        sorted.sort_unstable();
        let design = Design::project(self.vectors, &self.targets, &sorted);
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for k in 0..FOLDS {
            let mut train_rows = Vec::new();
            let mut train_t = Vec::new();
            for (i, row) in design.rows.iter().enumerate() {
                if self.folds[i] != k {
                    train_rows.push(row.clone());
                    train_t.push(design.targets[i]);
                }
            }
            if train_rows.is_empty() {
                continue;
            }
            let fold_design = Design {
                rows: train_rows,
                targets: train_t,
                width: design.width,
            };
            let Ok((w, b, _)) = fit_design(&fold_design, &self.inner) else {
                return 0.0;
            };
            for (i, row) in design.rows.iter().enumerate() {
                if self.folds[i] != k {
                    continue;
                }
                let pred = sigmoid(row.dot_dense(&w) + b) >= 0.5;
                let actual = design.targets[i] >= 0.5;
                match (actual, pred) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
        }
        f1(tp, fp, fn_)
    }
}

/// Per-feature |mean(x | y=1) − mean(x | y=0)|.
fn class_mean_gap(vectors: &[SparseVector], hard: &[f64], dim: usize) -> Vec<f64> {
    let mut sums = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];
    for (v, &y) in vectors.iter().zip(hard) {
        let c = usize::from(y >= 0.5);
        counts[c] += 1;
        for (i, x) in v.iter() {
            sums[c][i as usize] += x;
        }
    }
    (0..dim)
        .map(|i| {
            let m1 = sums[1][i] / counts[1].max(1) as f64;
            let m0 = sums[0][i] / counts[0].max(1) as f64;
            (m1 - m0).abs()
        })
        .collect()
}

pub fn select_features(
    vectors: &[SparseVector],
    soft_labels: &[f64],
    cfg: &SelectionConfig,
) -> Result<SelectionResult, SelectionError> {
    if vectors.len() != soft_labels.len() {
        return Err(SelectionError::LengthMismatch {
            vectors: vectors.len(),
            labels: soft_labels.len(),
        });
    }
    if vectors.len() < MIN_EXAMPLES {
        return Err(SelectionError::InsufficientData(vectors.len()));
    }
    if cfg.budget == 0 {
        return Err(SelectionError::ZeroBudget);
    }
    let dim = vectors[0].dim;
    let hard: Vec<f64> = soft_labels
        .iter()
        .map(|&p| if p >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.shuffle(&mut rng);
    let mut folds = vec![0; vectors.len()];
    for (rank, &i) in order.iter().enumerate() {
        folds[i] = rank % FOLDS;
    }
    let objective = Objective {
        vectors,
        targets: hard.clone(),
        folds,
        inner: cfg.inner.clone(),
    };

    let size = cfg.budget.min(dim);
    let mut all: Vec<u32> = (0..dim as u32).collect();
    let mut current: Vec<u32> = match cfg.init {
        InitialSubset::Random => {
            all.shuffle(&mut rng);
            all[..size].to_vec()
        }
        InitialSubset::Ranked => {
            let gap = class_mean_gap(vectors, &hard, dim);
            all.sort_by(|&a, &b| gap[b as usize].total_cmp(&gap[a as usize]).then(a.cmp(&b)));
            all[..size].to_vec()
        }
    };
    let mut outside: Vec<u32> = all[size..].to_vec();
    let mut current_score = objective.eval(&current);
    let initial_objective = current_score;
    let mut best = (current.clone(), current_score);
    let mut accepted_moves = 0;

    if !outside.is_empty() {
        let mut temperature = cfg.t0;
        for _ in 0..cfg.steps {
            let i = rng.random_range(0..current.len());
            let o = rng.random_range(0..outside.len());
            std::mem::swap(&mut current[i], &mut outside[o]);
            let score = objective.eval(&current);
            let delta = score - current_score;
            let accept = delta >= 0.0 || rng.random::<f64>() < (delta / temperature).exp();
            if accept {
                accepted_moves += 1;
                current_score = score;
                if score > best.1 {
                    best = (current.clone(), score);
                }
            } else {
                std::mem::swap(&mut current[i], &mut outside[o]);
            }
            temperature *= cfg.cooling;
        }
    }

    let mut features = best.0;
    features.sort_unstable();
    Ok(SelectionResult {
        features,
        objective: best.1,
        initial_objective,
        accepted_moves,
    })
}
