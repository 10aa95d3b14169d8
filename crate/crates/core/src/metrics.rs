//! Confusion matrices and agreement statistics between reviewer labels and
//! model predictions.

use serde::{Deserialize, Serialize};

use crate::types::{percent, Label};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("cannot average an empty list")]
    EmptyList,
}

/// `counts[actual][predicted]`, index 0 = INCLUDE, 1 = EXCLUDE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        Self { counts }
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn add(&mut self, actual: Label, predicted: Label) {
        self.counts[actual.index()][predicted.index()] += 1;
    }

    pub fn row(&self, c: usize) -> u64 {
        self.counts[c][0] + self.counts[c][1]
    }

    pub fn col(&self, c: usize) -> u64 {
        self.counts[0][c] + self.counts[1][c]
    }

    pub fn trace(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    /// Same matrix with the class order reversed.
    pub fn swapped(&self) -> Self {
        let c = self.counts;
        Self {
            counts: [[c[1][1], c[1][0]], [c[0][1], c[0][0]]],
        }
    }
}

pub fn confusion<I>(pairs: I) -> ConfusionMatrix
where
    I: IntoIterator<Item = (Label, Label)>,
{
    let mut m = ConfusionMatrix::default();
    for (actual, predicted) in pairs {
        m.add(actual, predicted);
    }
    m
}

fn nonempty(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match m.n() {
        0 => Err(MetricsError::EmptyMatrix),
        n => Ok(n as f64),
    }
}

/// Cohen's κ; 0 when expected agreement is 1.
pub fn kappa(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let n = nonempty(m)?;
    let p_o = m.trace() as f64 / n;
    let p_e: f64 = (0..2)
        .map(|c| (m.row(c) as f64 / n) * (m.col(c) as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    Ok(m.trace() as f64 / nonempty(m)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Recall, precision and F for one class; empty rows/columns give 0.
pub fn class_metrics(m: &ConfusionMatrix, class: Label) -> Result<ClassMetrics, MetricsError> {
    nonempty(m)?;
    let c = class.index();
    let recall = ratio(m.counts[c][c], m.row(c));
    let precision = ratio(m.counts[c][c], m.col(c));
    Ok(ClassMetrics {
        recall,
        precision,
        f_score: harmonic_mean(precision, recall),
    })
}

/// Arithmetic mean of potential values in [0, 1].
pub fn average_potential(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub confusion: ConfusionMatrix,
    pub kappa: f64,
    pub accuracy: f64,
    pub include: ClassMetrics,
    pub exclude: ClassMetrics,
    /// Mean potential over the unlabeled pool, in [0, 1]; `None` if the pool is empty.
    pub average_potential: Option<f64>,
}

impl IterationMetrics {
    pub fn compute(m: ConfusionMatrix, potentials: &[f64]) -> Result<Self, MetricsError> {
        Ok(Self {
            kappa: kappa(&m)?,
            accuracy: accuracy(&m)?,
            include: class_metrics(&m, Label::Include)?,
            exclude: class_metrics(&m, Label::Exclude)?,
            average_potential: average_potential(potentials).ok(),
            confusion: m,
        })
    }

    pub fn class(&self, label: Label) -> &ClassMetrics {
        match label {
            Label::Include => &self.include,
            Label::Exclude => &self.exclude,
        }
    }

    pub fn accuracy_pct(&self) -> String {
        percent(self.accuracy)
    }
}
