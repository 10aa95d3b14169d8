//! Potential scores for choosing which records to show a reviewer next.
//!
//! value = α·H(p) + (1−α)·(1 − max_k cos(x, x_k)), where H is the binary
//! entropy in bits of the classifier probability and x_k ranges over the
//! already-labeled records.

use serde::{Deserialize, Serialize};

use super::features::SparseVector;
use crate::types::Pmid;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_QUEUE_SIZE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialScore {
    pub value: f64,
    pub uncertainty: f64,
    pub novelty: f64,
}

/// Binary entropy in bits; 0 at p ∈ {0, 1}.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    (h(p) + h(1.0 - p)).clamp(0.0, 1.0)
}

/// 1 − max cosine to the labeled set; 1 when the set is empty.
pub fn novelty(v: &SparseVector, labeled: &[SparseVector]) -> f64 {
    let max_cos = labeled
        .iter()
        .map(|l| v.cosine(l))
        .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))));
    match max_cos {
        Some(c) => (1.0 - c.max(0.0)).clamp(0.0, 1.0),
        None => 1.0,
    }
}

pub fn combine(uncertainty: f64, novelty: f64, alpha: f64) -> PotentialScore {
    PotentialScore {
        value: alpha * uncertainty + (1.0 - alpha) * novelty,
        uncertainty,
        novelty,
    }
}

/// Potential of a record with classifier probability `p`.
pub fn potential(p: f64, v: &SparseVector, labeled: &[SparseVector], alpha: f64) -> PotentialScore {
    combine(binary_entropy(p), novelty(v, labeled), alpha)
}

/// Top `k` records by potential, descending; equal values by PMID ascending.
pub fn rank_queue(scores: &[(Pmid, PotentialScore)], k: usize) -> Vec<Pmid> {
    let mut ordered: Vec<&(Pmid, PotentialScore)> = scores.iter().collect();
    ordered.sort_by(|a, b| b.1.value.total_cmp(&a.1.value).then_with(|| a.0.cmp(&b.0)));
    ordered.into_iter().take(k).map(|(p, _)| p.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn extremes_and_hand_example() {
        let v = SparseVector::from_dense(&[1.0, 0.0]);
        assert_abs_diff_eq!(potential(0.5, &v, &[], 0.5).value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(potential(1.0, &v, &[v.clone()], 0.5).value, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(binary_entropy(0.8), 0.721928, epsilon = 1e-6);
        assert_abs_diff_eq!(combine(binary_entropy(0.8), 0.4, 0.5).value, 0.5610, epsilon = 1e-4);
    }

    #[test]
    fn queue_size_and_ties() {
        let s = |v: f64| combine(v, v, 0.5);
        let scores: Vec<(Pmid, PotentialScore)> = (1..=25)
            .map(|i| (Pmid::new(i.to_string()).unwrap(), s(f64::from(i % 3) / 3.0)))
            .collect();
        assert_eq!(rank_queue(&scores, 20).len(), 20);
        assert_eq!(rank_queue(&scores[..7], 20).len(), 7);
        let tied = vec![
            (Pmid::new("20").unwrap(), s(0.5)),
            (Pmid::new("3").unwrap(), s(0.5)),
        ];
        assert_eq!(rank_queue(&tied, 2)[0].as_str(), "3");
    }
}
