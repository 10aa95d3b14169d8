//! Explainability statistics: rule co-occurrence association, FDR
//! adjustment, correlation tables and word-cloud term counts.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ruleset::{CompiledRule, Coverage, MatchDoc, Ruleset};
use crate::text;
use crate::types::{sci, Label};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum XaiError {
    #[error("p-value {value} at position {index} is outside [0, 1]")]
    InvalidP { index: usize, value: f64 },
    #[error("csv: {0}")]
    Csv(String),
}

/// Record-level co-occurrence of two rules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    /// Both rules match.
    pub a: u64,
    /// Only rule 1 matches.
    pub b: u64,
    /// Only rule 2 matches.
    pub c: u64,
    /// Neither matches.
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn n(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// Build from per-record match indicators of the two rules.
    pub fn from_hits(hits1: &[bool], hits2: &[bool]) -> Self {
        assert_eq!(hits1.len(), hits2.len(), "hit vectors differ in length");
        let mut t = Self::default();
        for (&x, &y) in hits1.iter().zip(hits2) {
            match (x, y) {
                (true, true) => t.a += 1,
                (true, false) => t.b += 1,
                (false, true) => t.c += 1,
                (false, false) => t.d += 1,
            }
        }
        t
    }
}

/// Contingency table of two rules over a set of documents.
pub fn cooccurrence(rule1: &CompiledRule, rule2: &CompiledRule, docs: &[MatchDoc]) -> ContingencyTable2x2 {
    let h1: Vec<bool> = docs.iter().map(|d| rule1.matches(d)).collect();
    let h2: Vec<bool> = docs.iter().map(|d| rule2.matches(d)).collect();
    ContingencyTable2x2::from_hits(&h1, &h2)
}

/// Pearson χ² without continuity correction and its df=1 p-value,
/// p = erfc(√(χ²/2)). A zero marginal gives (0, 1).
pub fn chi_square(t: &ContingencyTable2x2) -> (f64, f64) {
    let (a, b, c, d) = (t.a as f64, t.b as f64, t.c as f64, t.d as f64);
    let n = a + b + c + d;
    let margins = (a + b) * (c + d) * (a + c) * (b + d);
    if n == 0.0 || margins == 0.0 {
        return (0.0, 1.0);
    }
    let diff = a * d - b * c;
    let chi2 = n * diff * diff / margins;
    (chi2, libm::erfc((chi2 / 2.0).sqrt()))
}

/// Cramér's V for a 2×2 table: √(χ²/n), clamped to [0, 1].
pub fn cramers_v(chi2: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (chi2 / n as f64).sqrt().clamp(0.0, 1.0)
}

/// Benjamini–Hochberg step-up adjustment, returned in input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>, XaiError> {
    if let Some((index, &value)) = p_values
        .iter()
        .enumerate()
        .find(|(_, p)| !(0.0..=1.0).contains(*p))
    {
        return Err(XaiError::InvalidP { index, value });
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p_values[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub rule1_id: u32,
    pub rule2_id: u32,
    pub rule1: String,
    pub rule2: String,
    pub class1: Label,
    pub class2: Label,
    pub correlation: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub coverage1: Coverage,
    pub coverage2: Coverage,
    pub table: ContingencyTable2x2,
}

pub const DEFAULT_FDR_THRESHOLD: f64 = 1e-3;

/// Score every unordered pair of rules active at `iteration`, adjust the p-values
/// across all pairs, keep rows with adjusted p below `threshold`, and sort by
/// correlation descending (ties by rule ids).
pub fn correlation_table(
    ruleset: &Ruleset,
    iteration: u32,
    docs: &[MatchDoc],
    threshold: f64,
) -> Vec<CorrelationRow> {
    let rules = ruleset.active_at(iteration);
    let hits: Vec<Vec<bool>> = rules
        .par_iter()
        .map(|r| {
            let c = CompiledRule::new(r);
            docs.iter().map(|d| c.matches(d)).collect()
        })
        .collect();
    let n = docs.len();
    let mut rows = Vec::new();
    for i in 0..rules.len() {
        for j in i + 1..rules.len() {
            let (r1, r2, h1, h2) = if rules[i].rule_id <= rules[j].rule_id {
                (rules[i], rules[j], &hits[i], &hits[j])
            } else {
                (rules[j], rules[i], &hits[j], &hits[i])
            };
            let table = ContingencyTable2x2::from_hits(h1, h2);
            let (chi2, p) = chi_square(&table);
            rows.push(CorrelationRow {
                rule1_id: r1.rule_id,
                rule2_id: r2.rule_id,
                rule1: r1.text.clone(),
                rule2: r2.text.clone(),
                class1: r1.label,
                class2: r2.label,
                correlation: cramers_v(chi2, table.n()),
                p_raw: p,
                p_adjusted: p,
                coverage1: Coverage {
                    hits: h1.iter().filter(|&&x| x).count(),
                    total: n,
                },
                coverage2: Coverage {
                    hits: h2.iter().filter(|&&x| x).count(),
                    total: n,
                },
                table,
            });
        }
    }
    let raw: Vec<f64> = rows.iter().map(|r| r.p_raw).collect();
    let adjusted = bh_adjust(&raw).expect("chi-square p-values lie in [0, 1]");
    for (row, adj) in rows.iter_mut().zip(adjusted) {
        row.p_adjusted = adj.max(row.p_raw);
    }
    rows.retain(|r| r.p_adjusted < threshold);
    rows.sort_by(|x, y| {
        y.correlation
            .total_cmp(&x.correlation)
            .then(x.rule1_id.cmp(&y.rule1_id))
            .then(x.rule2_id.cmp(&y.rule2_id))
    });
    rows
}

pub const CORRELATION_HEADERS: [&str; 9] = [
    "Rule 1",
    "Rule 2",
    "Rule 1 Class",
    "Rule 2 Class",
    "Correlation value",
    "P-value (raw)",
    "P-value (FDR-adjusted)",
    "Rule 1 Report Coverage",
    "Rule 2 Report Coverage",
];

pub fn write_correlations_csv<W: Write>(rows: &[CorrelationRow], w: W) -> Result<(), XaiError> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| XaiError::Csv(e.to_string());
    out.write_record(CORRELATION_HEADERS).map_err(err)?;
    for r in rows {
        out.write_record([
            r.rule1.clone(),
            r.rule2.clone(),
            r.class1.to_string(),
            r.class2.to_string(),
            format!("{:.4}", r.correlation),
            sci(r.p_raw),
            sci(r.p_adjusted),
            r.coverage1.to_string(),
            r.coverage2.to_string(),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| XaiError::Csv(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermCount {
    pub term: String,
    pub count: usize,
}

/// Word-cloud input: top terms per class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCloud {
    pub include: Vec<TermCount>,
    pub exclude: Vec<TermCount>,
}

impl WordCloud {
    pub fn class(&self, label: Label) -> &[TermCount] {
        match label {
            Label::Include => &self.include,
            Label::Exclude => &self.exclude,
        }
    }
}

fn top_terms(counts: HashMap<String, usize>, top_k: usize) -> Vec<TermCount> {
    let mut v: Vec<TermCount> = counts
        .into_iter()
        .map(|(term, count)| TermCount { term, count })
        .collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.term.cmp(&b.term)));
    v.truncate(top_k);
    v
}

/// Occurrences of normalized unigrams per class, stop words and
/// single-character tokens removed.
pub fn term_frequencies<'a, I>(docs: I, top_k: usize) -> WordCloud
where
    I: IntoIterator<Item = (&'a str, Label)>,
{
    let mut counts: BTreeMap<Label, HashMap<String, usize>> = BTreeMap::new();
    for (doc, label) in docs {
        let class = counts.entry(label).or_default();
        for tok in text::tokenize(doc) {
            if tok.chars().count() > 1 && !text::is_stopword(&tok) {
                *class.entry(tok).or_default() += 1;
            }
        }
    }
    WordCloud {
        include: top_terms(counts.remove(&Label::Include).unwrap_or_default(), top_k),
        exclude: top_terms(counts.remove(&Label::Exclude).unwrap_or_default(), top_k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn chi_square_examples() {
        let t = ContingencyTable2x2 { a: 20, b: 10, c: 5, d: 65 };
        let (chi2, _) = chi_square(&t);
        assert_abs_diff_eq!(chi2, 39.6825, epsilon = 1e-4);
        assert_abs_diff_eq!(cramers_v(chi2, 100), 0.6300, epsilon = 1e-4);
        let (chi2, p) = chi_square(&ContingencyTable2x2 { a: 10, b: 20, c: 5, d: 10 });
        assert_eq!((chi2, p), (0.0, 1.0));
        let (chi2, p) = chi_square(&ContingencyTable2x2 { a: 10, b: 0, c: 0, d: 10 });
        assert_abs_diff_eq!(chi2, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p, 7.74e-6, epsilon = 1e-8);
        assert_eq!(cramers_v(20.0, 20), 1.0);
        assert_eq!(chi_square(&ContingencyTable2x2 { a: 0, b: 0, c: 3, d: 4 }), (0.0, 1.0));
    }

    #[test]
    fn cooccurrence_counts() {
        let h1: Vec<bool> = (1..=226).map(|i| i <= 9).collect();
        let h2: Vec<bool> = (1..=226).map(|i| i <= 6 || (10..=13).contains(&i)).collect();
        let t = ContingencyTable2x2::from_hits(&h1, &h2);
        assert_eq!((t.a, t.b, t.c, t.d), (6, 3, 4, 213));
    }

    #[test]
    fn bh_examples() {
        let adj = bh_adjust(&[0.001, 0.01, 0.03, 0.04]).unwrap();
        for (a, e) in adj.iter().zip([0.004, 0.02, 0.04, 0.04]) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-12);
        }
        assert_eq!(bh_adjust(&[0.3]).unwrap(), vec![0.3]);
        let adj = bh_adjust(&[0.02; 5]).unwrap();
        assert!(adj.iter().all(|&a| (a - 0.02).abs() < 1e-12));
        assert!(matches!(bh_adjust(&[0.1, 1.5]), Err(XaiError::InvalidP { index: 1, .. })));
        assert_eq!(bh_adjust(&[]).unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn word_cloud_counts_and_ties() {
        let docs = [
            ("The glove tore.", Label::Include),
            ("A glove, a gown", Label::Include),
            ("vinyl", Label::Exclude),
        ];
        let wc = term_frequencies(docs, 100);
        assert_eq!(wc.include[0], TermCount { term: "glove".into(), count: 2 });
        assert!(wc.include.iter().all(|t| t.term != "the" && t.term != "a"));
        assert_eq!(wc.include[1].term, "gown");
        let top1 = term_frequencies(docs, 1);
        assert_eq!(top1.include.len(), 1);
        assert_eq!(top1.exclude[0].term, "vinyl");
    }
}
