//! Set-level agreement between classified corpora and reference libraries.
//!
//! Bootstrap null: A* and B* are uniform random subsets of the universe with
//! |A*| = |A| and |B*| = |B|. Because J = k / (|A| + |B| − k) is increasing in
//! the intersection size k, comparing J* ≥ J is the same as comparing
//! k* ≥ k, and k* is hypergeometric. Each replicate draws k* by sequentially
//! sampling |B| elements without replacement and counting hits in A.
//!
//! Replicates are split into fixed blocks; block i uses the ChaCha8 stream
//! `i` under the user seed, so results do not depend on thread scheduling.

use std::collections::BTreeSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ReferenceLibrary;
use crate::types::{sci, Pmid};
use crate::xai::bh_adjust;

pub const DEFAULT_REPLICATIONS: u64 = 1_000_000;
const BLOCK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConcordanceError {
    #[error("{count} PMIDs of set {set} are not in the universe")]
    SetsNotInUniverse { set: String, count: usize },
    #[error("replications must be at least 1")]
    ZeroReplications,
    #[error("{0} predicted PMIDs are not in the corpus")]
    PredictedOutsideCorpus(usize),
    #[error("no comparisons given")]
    NoComparisons,
    #[error("csv: {0}")]
    Csv(String),
}

/// |A ∩ B| / |A ∪ B|; 1 when both sets are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection size of two uniform random subsets of sizes `ka` and `kb`
/// drawn from `n` items.
fn draw_intersection(rng: &mut ChaCha8Rng, n: u64, ka: u64, kb: u64) -> u64 {
    let mut hits = 0;
    for i in 0..kb {
        let remaining = n - i;
        if rng.random_range(0..remaining) < ka - hits {
            hits += 1;
        }
    }
    hits
}

/// Count of null replicates with intersection ≥ `observed`.
fn null_exceedances(n: u64, ka: u64, kb: u64, observed: u64, reps: u64, seed: u64) -> u64 {
    // Draw the smaller set so each replicate costs min(|A|, |B|) steps.
    let (ka, kb) = if kb <= ka { (ka, kb) } else { (kb, ka) };
    let blocks = reps.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block);
            let count = BLOCK.min(reps - block * BLOCK);
            (0..count)
                .filter(|_| draw_intersection(&mut rng, n, ka, kb) >= observed)
                .count() as u64
        })
        .sum()
}

fn check_subset(name: &str, set: &BTreeSet<Pmid>, universe: &BTreeSet<Pmid>) -> Result<(), ConcordanceError> {
    let outside = set.difference(universe).count();
    if outside > 0 {
        return Err(ConcordanceError::SetsNotInUniverse {
            set: name.to_owned(),
            count: outside,
        });
    }
    Ok(())
}

/// (1 + #{J(A*, B*) ≥ J(A, B)}) / (1 + replications).
pub fn bootstrap_p(
    a: &BTreeSet<Pmid>,
    b: &BTreeSet<Pmid>,
    universe: &BTreeSet<Pmid>,
    replications: u64,
    seed: u64,
) -> Result<f64, ConcordanceError> {
    if replications == 0 {
        return Err(ConcordanceError::ZeroReplications);
    }
    check_subset("A", a, universe)?;
    check_subset("B", b, universe)?;
    let observed = a.intersection(b).count() as u64;
    let exceed = null_exceedances(
        universe.len() as u64,
        a.len() as u64,
        b.len() as u64,
        observed,
        replications,
        seed,
    );
    Ok((1 + exceed) as f64 / (1 + replications) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetComparison {
    pub name_a: String,
    pub name_b: String,
    pub size_a: usize,
    pub size_b: usize,
    pub intersection: usize,
    pub jaccard: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub replications: u64,
    pub seed: u64,
}

pub fn compare_sets(
    name_a: &str,
    a: &BTreeSet<Pmid>,
    name_b: &str,
    b: &BTreeSet<Pmid>,
    universe: &BTreeSet<Pmid>,
    replications: u64,
    seed: u64,
) -> Result<SetComparison, ConcordanceError> {
    let p = bootstrap_p(a, b, universe, replications, seed)?;
    Ok(SetComparison {
        name_a: name_a.to_owned(),
        name_b: name_b.to_owned(),
        size_a: a.len(),
        size_b: b.len(),
        intersection: a.intersection(b).count(),
        jaccard: jaccard(a, b),
        p_raw: p,
        p_adjusted: p,
        replications,
        seed,
    })
}

/// Apply Benjamini–Hochberg across the comparisons' raw p-values.
pub fn pairwise_table(mut comparisons: Vec<SetComparison>) -> Result<Vec<SetComparison>, ConcordanceError> {
    if comparisons.is_empty() {
        return Err(ConcordanceError::NoComparisons);
    }
    let raw: Vec<f64> = comparisons.iter().map(|c| c.p_raw).collect();
    let adjusted = bh_adjust(&raw).expect("bootstrap p-values lie in (0, 1]");
    for (c, adj) in comparisons.iter_mut().zip(adjusted) {
        c.p_adjusted = adj.max(c.p_raw);
    }
    Ok(comparisons)
}

pub const CONCORDANCE_HEADERS: [&str; 5] = [
    "Search String",
    "Comparison Set",
    "Jaccard Index",
    "P-value (raw)",
    "P-value (FDR-adjusted)",
];

pub fn write_table_csv<W: Write>(rows: &[SetComparison], w: W) -> Result<(), ConcordanceError> {
    let err = |e: csv::Error| ConcordanceError::Csv(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CONCORDANCE_HEADERS).map_err(err)?;
    for r in rows {
        out.write_record([
            r.name_a.clone(),
            r.name_b.clone(),
            format!("{:.4}", r.jaccard),
            sci(r.p_raw),
            sci(r.p_adjusted),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| ConcordanceError::Csv(e.to_string()))
}

/// Agreement of a deployed classification with a reference library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReport {
    pub reference: String,
    pub corpus_size: usize,
    pub reference_in_corpus: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    /// TP / |reference ∩ corpus|.
    pub coverage: f64,
    /// TP / total_reported, when the library size is known.
    pub library_coverage: Option<f64>,
}

pub fn compare_to_reference(
    predicted_include: &BTreeSet<Pmid>,
    reference: &ReferenceLibrary,
    corpus_pmids: &BTreeSet<Pmid>,
) -> Result<ReferenceReport, ConcordanceError> {
    let outside = predicted_include.difference(corpus_pmids).count();
    if outside > 0 {
        return Err(ConcordanceError::PredictedOutsideCorpus(outside));
    }
    let ref_in_corpus = reference.pmids.intersection(corpus_pmids).count();
    let tp = predicted_include.intersection(&reference.pmids).count();
    let fp = predicted_include.len() - tp;
    let fn_ = ref_in_corpus - tp;
    let tn = corpus_pmids.len() - tp - fp - fn_;
    Ok(ReferenceReport {
        reference: reference.name.clone(),
        corpus_size: corpus_pmids.len(),
        reference_in_corpus: ref_in_corpus,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        coverage: if ref_in_corpus == 0 {
            0.0
        } else {
            tp as f64 / ref_in_corpus as f64
        },
        library_coverage: library_coverage(predicted_include, reference),
    })
}

/// Share of the full reported library covered by `covered` (e.g. the union of
/// several classifications' INCLUDE sets).
pub fn library_coverage(covered: &BTreeSet<Pmid>, reference: &ReferenceLibrary) -> Option<f64> {
    reference
        .total_reported
        .filter(|&t| t > 0)
        .map(|t| covered.intersection(&reference.pmids).count() as f64 / t as f64)
}
