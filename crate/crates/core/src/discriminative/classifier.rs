//! L2-regularized logistic regression on soft targets.
//!
//! Loss over n examples with targets t_i ∈ [0,1]:
//!
//! ```text
//! L(w, b) = (1/n) Σ −t_i ln σ(z_i) − (1−t_i) ln(1−σ(z_i))  +  (λ/2)‖w‖²,   z_i = w·x_i + b
//! ∇_w L   = (1/n) Σ (σ(z_i) − t_i) x_i + λw
//! ∂_b L   = (1/n) Σ (σ(z_i) − t_i)
//! ```
//!
//! The loss is L-smooth with L ≤ ¼·max_i(‖x_i‖² + 1) + λ, so gradient descent
//! with step ≤ 1/L never increases it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::features::SparseVector;
use crate::types::Label;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("no training examples")]
    EmptyTrainingSet,
    #[error("{vectors} vectors but {labels} labels")]
    LengthMismatch { vectors: usize, labels: usize },
    #[error("soft label {value} at position {index} is outside [0, 1]")]
    InvalidSoftLabel { index: usize, value: f64 },
    #[error("loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("vector dimension {got} does not match feature space dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2: f64,
    /// Upper bound on the step; the actual step is min(learning_rate, 1/L).
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            learning_rate: 4.0,
            epochs: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    /// Dimension of the full feature space the model accepts.
    pub dim: usize,
    /// Feature indices (into the full space) carrying a weight, ascending.
    pub selected_features: Vec<u32>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub training_config: TrainConfig,
    pub loss_trace: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Training data restricted to a feature subset, with compact indices.
#[derive(Debug, Clone)]
pub struct Design {
    pub rows: Vec<SparseVector>,
    pub targets: Vec<f64>,
    pub width: usize,
}

impl Design {
    /// Project `vectors` onto `selected` (ascending full-space indices).
    pub fn project(vectors: &[SparseVector], targets: &[f64], selected: &[u32]) -> Self {
        let pos: HashMap<u32, u32> = selected
            .iter()
            .enumerate()
            .map(|(k, &f)| (f, k as u32))
            .collect();
        let rows = vectors
            .iter()
            .map(|v| {
                SparseVector::from_pairs(
                    selected.len(),
                    v.iter().filter_map(|(i, x)| pos.get(&i).map(|&k| (k, x))),
                )
            })
            .collect();
        Design {
            rows,
            targets: targets.to_vec(),
            width: selected.len(),
        }
    }
}

/// Regularized loss at (w, b).
pub fn objective(rows: &[SparseVector], targets: &[f64], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = rows.len() as f64;
    let data: f64 = rows
        .iter()
        .zip(targets)
        .map(|(x, &t)| {
            let z = x.dot_dense(w) + b;
            // −t ln σ(z) − (1−t) ln(1−σ(z)) = softplus(z) − t z
            softplus(z) - t * z
        })
        .sum::<f64>()
        / n;
    data + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Analytic gradient (∇_w, ∂_b) at (w, b).
pub fn gradient(rows: &[SparseVector], targets: &[f64], w: &[f64], b: f64, l2: f64) -> (Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut gw: Vec<f64> = w.iter().map(|v| l2 * v).collect();
    let mut gb = 0.0;
    for (x, &t) in rows.iter().zip(targets) {
        let r = (sigmoid(x.dot_dense(w) + b) - t) / n;
        gb += r;
        for (i, v) in x.iter() {
            gw[i as usize] += r * v;
        }
    }
    (gw, gb)
}

fn validate(vectors: &[SparseVector], soft: &[f64]) -> Result<usize, TrainError> {
    if vectors.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if vectors.len() != soft.len() {
        return Err(TrainError::LengthMismatch {
            vectors: vectors.len(),
            labels: soft.len(),
        });
    }
    if let Some((index, &value)) = soft
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(TrainError::InvalidSoftLabel { index, value });
    }
    let dim = vectors[0].dim;
    if let Some(v) = vectors.iter().find(|v| v.dim != dim) {
        return Err(TrainError::DimensionMismatch {
            expected: dim,
            got: v.dim,
        });
    }
    Ok(dim)
}

/// Gradient descent on a projected design. Returns (w, b, loss trace).
pub fn fit_design(d: &Design, cfg: &TrainConfig) -> Result<(Vec<f64>, f64, Vec<f64>), TrainError> {
    let max_sq = d.rows.iter().map(|x| x.norm_sq()).fold(0.0, f64::max);
    let lipschitz = 0.25 * (max_sq + 1.0) + cfg.l2;
    let step = cfg.learning_rate.min(1.0 / lipschitz);
    let mut w = vec![0.0; d.width];
    let mut b = 0.0;
    let mut trace = vec![objective(&d.rows, &d.targets, &w, b, cfg.l2)];
    for epoch in 0..cfg.epochs {
        let (gw, gb) = gradient(&d.rows, &d.targets, &w, b, cfg.l2);
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * g;
        }
        b -= step * gb;
        let loss = objective(&d.rows, &d.targets, &w, b, cfg.l2);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss(epoch + 1));
        }
        let prev = *trace.last().expect("trace non-empty");
        debug_assert!(loss <= prev + 1e-9, "loss increased at epoch {epoch}: {prev} -> {loss}");
        trace.push(loss);
    }
    Ok((w, b, trace))
}

/// Train on the features in `selected` (all features when `None`).
pub fn train(
    vectors: &[SparseVector],
    soft_labels: &[f64],
    selected: Option<&[u32]>,
    cfg: &TrainConfig,
) -> Result<ClassifierModel, TrainError> {
    let dim = validate(vectors, soft_labels)?;
    let selected: Vec<u32> = match selected {
        Some(s) => {
            let mut s = s.to_vec();
            s.sort_unstable();
            s.dedup();
            if let Some(&bad) = s.iter().find(|&&f| f as usize >= dim) {
                return Err(TrainError::DimensionMismatch {
                    expected: dim,
                    got: bad as usize + 1,
                });
            }
            s
        }
        None => (0..dim as u32).collect(),
    };
    let design = Design::project(vectors, soft_labels, &selected);
    let (weights, bias, loss_trace) = fit_design(&design, cfg)?;
    Ok(ClassifierModel {
        dim,
        selected_features: selected,
        weights,
        bias,
        training_config: cfg.clone(),
        loss_trace,
    })
}

impl ClassifierModel {
    /// Weight of a full-space feature (0 when not selected).
    pub fn weight_of(&self, feature: u32) -> f64 {
        self.selected_features
            .binary_search(&feature)
            .map_or(0.0, |k| self.weights[k])
    }

    pub fn score(&self, v: &SparseVector) -> Result<f64, TrainError> {
        if v.dim != self.dim {
            return Err(TrainError::DimensionMismatch {
                expected: self.dim,
                got: v.dim,
            });
        }
        Ok(v.iter().map(|(i, x)| x * self.weight_of(i)).sum::<f64>() + self.bias)
    }

    /// P(INCLUDE | v).
    pub fn predict(&self, v: &SparseVector) -> Result<f64, TrainError> {
        self.score(v).map(sigmoid)
    }

    pub fn classify(&self, v: &SparseVector) -> Result<Label, TrainError> {
        self.predict(v).map(Label::from_probability)
    }
}

/// Free-function form of [`ClassifierModel::predict`].
pub fn predict(model: &ClassifierModel, v: &SparseVector) -> Result<f64, TrainError> {
    model.predict(v)
}
