//! Unigram + bigram TF-IDF features.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::text;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("cannot build a feature space from an empty corpus")]
    EmptyCorpus,
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from unordered (index, value) pairs; duplicate indices are summed
    /// and zeros dropped.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, v) in pairs {
            assert!((i as usize) < dim, "index {i} out of range for dimension {dim}");
            *acc.entry(i).or_default() += v;
        }
        let (indices, values) = acc.into_iter().filter(|&(_, v)| v != 0.0).unzip();
        Self { dim, indices, values }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_pairs(
            values.len(),
            values.iter().enumerate().map(|(i, &v)| (i as u32, v)),
        )
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn get(&self, index: u32) -> f64 {
        self.indices
            .binary_search(&index)
            .map_or(0.0, |pos| self.values[pos])
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut sum) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i as usize]).sum()
    }

    /// Cosine similarity; 0 when either vector is zero.
    pub fn cosine(&self, other: &SparseVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            (self.dot(other) / denom).clamp(-1.0, 1.0)
        }
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.values {
                *v /= n;
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    /// Sorted unigrams and bigrams ("glove", "glove tear", …).
    pub vocabulary: Vec<String>,
    pub document_frequency: Vec<usize>,
    pub idf: Vec<f64>,
    pub n_docs: usize,
    pub min_df: usize,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

/// Unigrams followed by adjacent-token bigrams of normalized, unstemmed text.
pub fn terms(doc: &str) -> Vec<String> {
    let toks = text::tokenize(doc);
    let mut out = toks.clone();
    out.extend(toks.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    out
}

impl FeatureSpace {
    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    /// Restore the lookup table after deserialization.
    pub fn reindexed(mut self) -> Self {
        self.rebuild_index();
        self
    }

    pub fn term_index(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    /// L2-normalized TF-IDF vector (raw counts × idf) of one document.
    pub fn transform(&self, doc: &str) -> SparseVector {
        let pairs = terms(doc)
            .into_iter()
            .filter_map(|t| self.term_index(&t))
            .map(|i| (i, self.idf[i as usize]));
        SparseVector::from_pairs(self.dim(), pairs).normalized()
    }
}

/// Fit the vocabulary on `docs` and vectorize them.
pub fn featurize(docs: &[String], min_df: usize) -> Result<(FeatureSpace, Vec<SparseVector>), FeatureError> {
    if docs.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<String> = terms(doc);
        seen.sort();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = docs.len();
    let kept: Vec<(String, usize)> = df.into_iter().filter(|(_, d)| *d >= min_df.max(1)).collect();
    let idf = kept
        .iter()
        .map(|(_, d)| ((1.0 + n as f64) / (1.0 + *d as f64)).ln() + 1.0)
        .collect();
    let (vocabulary, document_frequency) = kept.into_iter().unzip();
    let mut space = FeatureSpace {
        vocabulary,
        document_frequency,
        idf,
        n_docs: n,
        min_df,
        index: HashMap::new(),
    };
    space.rebuild_index();
    let vectors = docs.iter().map(|d| space.transform(d)).collect();
    Ok((space, vectors))
}
