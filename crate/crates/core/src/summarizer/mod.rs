//! Retrieval-augmented drafting of a review document from included records.
//!
//! Each source text is split into overlapping windows of whitespace tokens.
//! For every section question the chunks are ranked with BM25, the best ones
//! are packed into a prompt under a token budget, and the prompt is sent to a
//! completion backend. Section outputs are merged in a fixed order with an
//! appendix of the cited records.
//!
//! BM25 with Lucene's non-negative idf:
//!
//! ```text
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! score(q, c) = Σ_t∈q idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|c| / avgdl))
//! ```
//!
//! Query and chunk terms are normalized, stemmed and stripped of stopwords;
//! repeated query terms count once.

mod backend;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub use backend::{Backend, BackendError, HttpBackend, MockBackend};

use crate::text;

const PREAMBLE: &str = include_str!("preamble.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SummarizerError {
    #[error("window {window} must be larger than overlap {overlap}")]
    InvalidWindow { window: usize, overlap: usize },
    #[error("no source chunks to retrieve from")]
    NoChunks,
    #[error("token budget {budget} cannot hold the prompt frame and one excerpt ({needed} tokens)")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("invalid prompt set: {0}")]
    InvalidPromptSet(String),
    #[error("backend failed on the {section} section: {message}")]
    Backend { section: Section, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Section {
    Introduction,
    Results,
    Discussion,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::Introduction, Section::Results, Section::Discussion];
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Introduction => "Introduction",
            Section::Results => "Results",
            Section::Discussion => "Discussion",
        })
    }
}

/// One question per section for one generation of the review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub generation: u32,
    pub sections: BTreeMap<Section, String>,
}

impl PromptSet {
    pub fn new(generation: u32, introduction: &str, results: &str, discussion: &str) -> Self {
        Self {
            generation,
            sections: BTreeMap::from([
                (Section::Introduction, introduction.to_owned()),
                (Section::Results, results.to_owned()),
                (Section::Discussion, discussion.to_owned()),
            ]),
        }
    }

    pub fn validate(&self) -> Result<(), SummarizerError> {
        for s in Section::ALL {
            match self.sections.get(&s) {
                Some(q) if !q.trim().is_empty() => {}
                _ => return Err(SummarizerError::InvalidPromptSet(format!("{s} question is missing or empty"))),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummarizerConfig {
    pub window: usize,
    pub overlap: usize,
    /// Chunks retrieved per question before budget truncation.
    pub top_k: usize,
    pub k1: f64,
    pub b: f64,
    /// Maximum prompt length in whitespace tokens.
    pub budget_tokens: usize,
    /// Completion length requested from the backend.
    pub max_tokens: usize,
    /// HTTP completion endpoint; unset means a backend must be chosen by the caller.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        Self {
            window: 1000,
            overlap: 200,
            top_k: 8,
            k1: 1.2,
            b: 0.75,
            budget_tokens: 6000,
            max_tokens: 1024,
            endpoint: None,
        }
    }
}

/// A source text: a full text when one was supplied, else title + abstract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDoc {
    pub doc_id: String,
    pub text: String,
}

/// Tokens `start..end` of a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Whitespace tokens after Unicode compatibility folding.
pub fn chunk_tokens(text: &str) -> Vec<String> {
    let folded: String = text.nfkc().collect();
    folded.split_whitespace().map(str::to_owned).collect()
}

/// Windows start at multiples of `window − overlap`; the last one may be
/// short and ends at the final token. An empty document has no chunks.
pub fn chunk_document(doc_id: &str, text: &str, window: usize, overlap: usize) -> Result<Vec<Chunk>, SummarizerError> {
    if window == 0 || overlap >= window {
        return Err(SummarizerError::InvalidWindow { window, overlap });
    }
    let tokens = chunk_tokens(text);
    let stride = window - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        let end = (start + window).min(tokens.len());
        chunks.push(Chunk {
            doc_id: doc_id.to_owned(),
            start,
            end,
            text: tokens[start..end].join(" "),
        });
        if end == tokens.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

fn index_terms(text: &str) -> Vec<String> {
    text::tokenize(text)
        .into_iter()
        .filter(|t| !text::is_stopword(t))
        .map(|t| text::stem(&t))
        .collect()
}

/// BM25 score of every chunk for `question`, in input order.
pub fn bm25_scores(question: &str, chunks: &[Chunk], k1: f64, b: f64) -> Vec<f64> {
    let query: BTreeSet<String> = index_terms(question).into_iter().collect();
    let docs: Vec<HashMap<String, usize>> = chunks
        .iter()
        .map(|c| {
            let mut tf = HashMap::new();
            for t in index_terms(&c.text) {
                *tf.entry(t).or_insert(0) += 1;
            }
            tf
        })
        .collect();
    let lengths: Vec<f64> = docs.iter().map(|d| d.values().sum::<usize>() as f64).collect();
    let n = chunks.len() as f64;
    let avgdl = if chunks.is_empty() { 0.0 } else { lengths.iter().sum::<f64>() / n };
    let idf: Vec<(&String, f64)> = query
        .iter()
        .map(|t| {
            let df = docs.iter().filter(|d| d.contains_key(t)).count() as f64;
            (t, (1.0 + (n - df + 0.5) / (df + 0.5)).ln())
        })
        .collect();
    docs.iter()
        .zip(&lengths)
        .map(|(d, &len)| {
            let norm = if avgdl > 0.0 { 1.0 - b + b * len / avgdl } else { 1.0 };
            idf.iter()
                .map(|(t, w)| {
                    let tf = d.get(*t).copied().unwrap_or(0) as f64;
                    w * tf * (k1 + 1.0) / (tf + k1 * norm)
                })
                .sum()
        })
        .collect()
}

/// Top `k` chunks by BM25 score, ties by (doc_id, start, end).
pub fn retrieve_chunks<'a>(question: &str, chunks: &'a [Chunk], k: usize, k1: f64, b: f64) -> Vec<(&'a Chunk, f64)> {
    let scores = bm25_scores(question, chunks, k1, b);
    let mut ranked: Vec<(&Chunk, f64)> = chunks.iter().zip(scores).collect();
    ranked.sort_by(|(ca, sa), (cb, sb)| {
        sb.total_cmp(sa)
            .then_with(|| ca.doc_id.cmp(&cb.doc_id))
            .then(ca.start.cmp(&cb.start))
            .then(ca.end.cmp(&cb.end))
    });
    ranked.truncate(k);
    ranked
}

fn render_prompt(section: Section, question: &str, chunks: &[&Chunk]) -> String {
    let mut out = String::from(PREAMBLE.trim_end());
    out.push_str(&format!("\n\nSection: {section}\n\nExcerpts:\n"));
    for (i, c) in chunks.iter().enumerate() {
        out.push_str(&format!("\n[{}] Record {} (tokens {}-{}):\n{}\n", i + 1, c.doc_id, c.start, c.end, c.text));
    }
    out.push_str(&format!("\nQuestion: {}\n", question.trim()));
    out
}

pub fn prompt_tokens(prompt: &str) -> usize {
    prompt.split_whitespace().count()
}

/// A prompt and the chunks it quotes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub text: String,
    pub chunks: Vec<Chunk>,
}

/// Fixed preamble, section name, numbered excerpts with record ids, then the
/// question. `ranked` is best-first; the lowest-ranked excerpts are dropped
/// until the prompt fits `budget` tokens.
pub fn assemble_prompt(section: Section, question: &str, ranked: &[&Chunk], budget: usize) -> Result<Prompt, SummarizerError> {
    if ranked.is_empty() {
        return Err(SummarizerError::NoChunks);
    }
    for keep in (1..=ranked.len()).rev() {
        let text = render_prompt(section, question, &ranked[..keep]);
        let tokens = prompt_tokens(&text);
        if tokens <= budget {
            return Ok(Prompt {
                text,
                chunks: ranked[..keep].iter().map(|c| (*c).clone()).collect(),
            });
        }
        if keep == 1 {
            return Err(SummarizerError::BudgetTooSmall { budget, needed: tokens });
        }
    }
    unreachable!("loop returns on its last pass")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionOutput {
    pub section: Section,
    pub question: String,
    /// Generated text, or None when the backend failed.
    pub text: Option<String>,
    pub error: Option<String>,
    /// Records quoted in the prompt, sorted.
    pub citations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDocument {
    pub generation: u32,
    /// Always Introduction, Results, Discussion.
    pub sections: Vec<SectionOutput>,
}

impl ReviewDocument {
    /// Records cited by successful sections.
    pub fn cited(&self) -> BTreeSet<String> {
        self.sections
            .iter()
            .filter(|s| s.text.is_some())
            .flat_map(|s| s.citations.iter().cloned())
            .collect()
    }

    /// The first failed section as an error.
    pub fn check(&self) -> Result<(), SummarizerError> {
        match self.sections.iter().find(|s| s.text.is_none()) {
            Some(s) => Err(SummarizerError::Backend {
                section: s.section,
                message: s.error.clone().unwrap_or_default(),
            }),
            None => Ok(()),
        }
    }

    pub fn render_markdown(&self) -> String {
        let mut out = format!("# Literature review draft (generation {})\n", self.generation);
        for s in &self.sections {
            out.push_str(&format!("\n## {}\n\n", s.section));
            match (&s.text, &s.error) {
                (Some(t), _) => out.push_str(t.trim()),
                (None, e) => out.push_str(&format!("_Generation failed: {}_", e.as_deref().unwrap_or("unknown error"))),
            }
            out.push('\n');
        }
        out.push_str("\n## Appendix: cited records\n\n");
        for id in self.cited() {
            out.push_str(&format!("- {id}\n"));
        }
        out
    }

    /// Write `<stem>.md` and `<stem>.json` next to each other.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), SummarizerError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |e: std::io::Error| SummarizerError::Io {
                path,
                message: e.to_string(),
            }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let md = dir.join(format!("{stem}.md"));
        std::fs::write(&md, self.render_markdown()).map_err(io(&md))?;
        let json = dir.join(format!("{stem}.json"));
        let body = serde_json::to_string_pretty(self).expect("review document serializes") + "\n";
        std::fs::write(&json, body).map_err(io(&json))?;
        Ok(())
    }
}

/// Chunk every source, then draft the three sections (concurrently). Backend
/// failures are kept in the returned document so finished sections are not
/// lost; call [`ReviewDocument::check`] to turn them into an error.
pub fn generate_review(
    prompts: &PromptSet,
    docs: &[SourceDoc],
    backend: &dyn Backend,
    cfg: &SummarizerConfig,
) -> Result<ReviewDocument, SummarizerError> {
    prompts.validate()?;
    let mut chunks = Vec::new();
    for d in docs {
        chunks.extend(chunk_document(&d.doc_id, &d.text, cfg.window, cfg.overlap)?);
    }
    if chunks.is_empty() {
        return Err(SummarizerError::NoChunks);
    }
    let assembled: Vec<(Section, String, Prompt)> = Section::ALL
        .iter()
        .map(|&s| {
            let q = &prompts.sections[&s];
            let ranked: Vec<&Chunk> = retrieve_chunks(q, &chunks, cfg.top_k, cfg.k1, cfg.b)
                .into_iter()
                .map(|(c, _)| c)
                .collect();
            assemble_prompt(s, q, &ranked, cfg.budget_tokens).map(|p| (s, q.clone(), p))
        })
        .collect::<Result<_, _>>()?;
    let sections = assembled
        .par_iter()
        .map(|(section, question, prompt)| {
            let citations: BTreeSet<String> = prompt.chunks.iter().map(|c| c.doc_id.clone()).collect();
            let (text, error) = match backend.complete(&prompt.text, cfg.max_tokens) {
                Ok(t) => (Some(t), None),
                Err(e) => {
                    log::warn!("{section} section failed: {e}");
                    (None, Some(e.to_string()))
                }
            };
            SectionOutput {
                section: *section,
                question: question.clone(),
                text,
                error,
                citations: citations.into_iter().collect(),
            }
        })
        .collect();
    Ok(ReviewDocument {
        generation: prompts.generation,
        sections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn doc(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            doc_id: id.into(),
            start: 0,
            end: text.split_whitespace().count(),
            text: text.into(),
        }
    }

    #[test]
    fn stride_arithmetic() {
        let c = chunk_document("d", &doc(2500), 1000, 200).unwrap();
        let spans: Vec<(usize, usize)> = c.iter().map(|c| (c.start, c.end)).collect();
        assert_eq!(spans, vec![(0, 1000), (800, 1800), (1600, 2500)]);
        assert_eq!(c[1].text.split(' ').next(), Some("w800"));
        assert_eq!(chunk_document("d", &doc(10), 1000, 200).unwrap().len(), 1);
        assert!(chunk_document("d", "", 1000, 200).unwrap().is_empty());
        assert!(matches!(
            chunk_document("d", "x", 100, 100),
            Err(SummarizerError::InvalidWindow { window: 100, overlap: 100 })
        ));
        // Exact fit: no trailing chunk that is wholly inside the previous one.
        let c = chunk_document("d", &doc(1800), 1000, 200).unwrap();
        assert_eq!(c.last().map(|c| (c.start, c.end)), Some((800, 1800)));
    }

    #[test]
    fn bm25_hand_computation() {
        // Two chunks with one "glove" each; lengths 2 and 4, avgdl 3.
        let chunks = vec![chunk("a", "glove tear"), chunk("b", "glove puncture surgical theatre")];
        let s = bm25_scores("glove", &chunks, 1.2, 0.75);
        let idf = (1.0f64 + (2.0 - 2.0 + 0.5) / (2.0 + 0.5)).ln();
        let short = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 2.0 / 3.0));
        let long = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 4.0 / 3.0));
        assert_abs_diff_eq!(s[0], short, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], long, epsilon = 1e-12);
        assert!(s[0] > s[1]);
    }

    #[test]
    fn retrieval_ranks_and_breaks_ties() {
        let chunks = vec![
            chunk("3", "latex allergy"),
            chunk("1", "needle puncture"),
            chunk("2", "latex allergy"),
        ];
        let r = retrieve_chunks("puncture", &chunks, 8, 1.2, 0.75);
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].0.doc_id, "1");
        // Zero-score ties fall back to doc id order.
        assert_eq!(r[1].0.doc_id, "2");
        assert_eq!(r[2].0.doc_id, "3");
        assert_eq!(retrieve_chunks("puncture", &chunks, 1, 1.2, 0.75).len(), 1);
    }

    #[test]
    fn prompt_truncates_lowest_ranked_first() {
        let a = chunk("111", &doc(50));
        let b = chunk("222", &doc(50));
        let c = chunk("333", &doc(50));
        let ranked = [&a, &b, &c];
        let full = assemble_prompt(Section::Results, "What was found?", &ranked, 10_000).unwrap();
        for id in ["111", "222", "333"] {
            assert!(full.text.contains(&format!("Record {id}")));
        }
        let budget = prompt_tokens(&full.text) - 1;
        let cut = assemble_prompt(Section::Results, "What was found?", &ranked, budget).unwrap();
        assert_eq!(cut.chunks.len(), 2);
        assert!(!cut.text.contains("Record 333"));
        assert!(cut.text.contains("Record 222"));
        assert!(matches!(
            assemble_prompt(Section::Results, "What was found?", &ranked, 20),
            Err(SummarizerError::BudgetTooSmall { budget: 20, .. })
        ));
        assert!(matches!(assemble_prompt(Section::Results, "q", &[], 100), Err(SummarizerError::NoChunks)));
    }

    #[test]
    fn prompt_set_requires_all_sections() {
        assert!(PromptSet::new(1, "a", "b", "c").validate().is_ok());
        let mut p = PromptSet::new(1, "a", " ", "c");
        assert!(p.validate().is_err());
        p.sections.remove(&Section::Results);
        assert!(p.validate().is_err());
    }
}
