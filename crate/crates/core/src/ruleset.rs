//! User-authored concept rules with per-iteration history and lexical matching.
//!
//! A rule is a short phrase labeled INCLUDE or EXCLUDE. It matches a record
//! when its stemmed token sequence appears contiguously in the stemmed
//! title + abstract (see [`crate::text`]). Each rule keeps the ordered list of
//! Added / Removed / Reinstated events so the ruleset active at any iteration
//! can be recomputed, and so the history can be rendered as `"2, 4 / 3"`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text;
use crate::types::Label;

pub const MAX_RULE_TOKENS: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum RulesetError {
    #[error("rule {text:?} ({label}) is already active")]
    DuplicateActiveRule { text: String, label: Label },
    #[error("rule {0} is not active")]
    RuleNotActive(u32),
    #[error("no rule with id {0}")]
    UnknownRule(u32),
    #[error("iteration must be >= 1 (got {0})")]
    InvalidIteration(u32),
    #[error("iteration {iteration} precedes the last event of rule {rule_id} (iteration {last})")]
    NonMonotoneIteration { rule_id: u32, iteration: u32, last: u32 },
    #[error("rule text {0:?} must have 1 to 6 tokens after normalization")]
    InvalidRuleText(String),
    #[error("malformed history {0:?}")]
    InvalidHistory(String),
    #[error("ruleset csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("ruleset io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleEventKind {
    Added,
    Removed,
    Reinstated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleEvent {
    pub iteration: u32,
    pub kind: RuleEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRule {
    pub rule_id: u32,
    pub text: String,
    pub label: Label,
    pub history: Vec<RuleEvent>,
    /// Extra phrases treated as equivalent to `text` when matching.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<String>,
}

impl ConceptRule {
    /// Whether the rule is in force at `iteration`, replaying its history.
    pub fn active_at(&self, iteration: u32) -> bool {
        let mut active = false;
        for ev in self.history.iter().take_while(|e| e.iteration <= iteration) {
            active = !matches!(ev.kind, RuleEventKind::Removed);
        }
        active
    }

    /// State after the last recorded event.
    pub fn is_active(&self) -> bool {
        self.history
            .last()
            .is_some_and(|e| e.kind != RuleEventKind::Removed)
    }

    /// Stemmed token sequences this rule looks for (text first, then synonyms).
    pub fn patterns(&self) -> Vec<Vec<String>> {
        std::iter::once(&self.text)
            .chain(self.synonyms.iter())
            .map(|p| text::stemmed_tokens(p))
            .filter(|p| !p.is_empty())
            .collect()
    }

    /// `"2, 4 / 3"`: Added/Reinstated iterations, then Removed iterations.
    pub fn history_notation(&self) -> String {
        let join = |kinds: &[RuleEventKind]| {
            self.history
                .iter()
                .filter(|e| kinds.contains(&e.kind))
                .map(|e| e.iteration.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        let added = join(&[RuleEventKind::Added, RuleEventKind::Reinstated]);
        let removed = join(&[RuleEventKind::Removed]);
        if removed.is_empty() {
            added
        } else {
            format!("{added} / {removed}")
        }
    }
}

/// Rebuild an event list from its `"2, 4 / 3"` notation. Events alternate
/// starting with Added, so sorting both lists and interleaving is lossless.
pub fn parse_history_notation(s: &str) -> Result<Vec<RuleEvent>, RulesetError> {
    let bad = || RulesetError::InvalidHistory(s.to_owned());
    let parse_list = |part: &str| -> Result<Vec<u32>, RulesetError> {
        part.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<u32>().map_err(|_| bad()))
            .collect()
    };
    let (adds, removes) = match s.split_once('/') {
        Some((a, r)) => (parse_list(a)?, parse_list(r)?),
        None => (parse_list(s)?, Vec::new()),
    };
    if adds.is_empty() || removes.len() > adds.len() || adds.len() > removes.len() + 1 {
        return Err(bad());
    }
    let mut events = Vec::with_capacity(adds.len() + removes.len());
    for (i, &it) in adds.iter().enumerate() {
        let kind = if i == 0 {
            RuleEventKind::Added
        } else {
            RuleEventKind::Reinstated
        };
        if let Some(prev) = events.last().map(|e: &RuleEvent| e.iteration) {
            if it < prev {
                return Err(bad());
            }
        }
        events.push(RuleEvent { iteration: it, kind });
        if let Some(&r) = removes.get(i) {
            if r < it {
                return Err(bad());
            }
            events.push(RuleEvent {
                iteration: r,
                kind: RuleEventKind::Removed,
            });
        }
    }
    Ok(events)
}

/// One row of the rule-history table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub rule_number: u32,
    pub text: String,
    pub label: Label,
    pub iterations: String,
}

/// Key under which rule texts must be unique per label: case- and
/// whitespace-folded surface text. Inflected variants ("animal"/"animals")
/// stay distinct rules even though they match the same records.
fn rule_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ruleset {
    pub rules: Vec<ConceptRule>,
}

impl Ruleset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, rule_id: u32) -> Option<&ConceptRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    pub fn active_at(&self, iteration: u32) -> Vec<&ConceptRule> {
        self.rules.iter().filter(|r| r.active_at(iteration)).collect()
    }

    pub fn active(&self) -> Vec<&ConceptRule> {
        self.rules.iter().filter(|r| r.is_active()).collect()
    }

    /// True when at least one INCLUDE and one EXCLUDE rule are active at `iteration`.
    pub fn has_both_classes_at(&self, iteration: u32) -> bool {
        let active = self.active_at(iteration);
        active.iter().any(|r| r.label == Label::Include)
            && active.iter().any(|r| r.label == Label::Exclude)
    }

    /// Add a rule, or reinstate a removed one with the same text and label.
    /// Returns the id of the affected rule.
    pub fn upsert_rule(&mut self, text: &str, label: Label, iteration: u32) -> Result<u32, RulesetError> {
        if iteration < 1 {
            return Err(RulesetError::InvalidIteration(iteration));
        }
        let ntok = text::tokenize(text).len();
        if ntok == 0 || ntok > MAX_RULE_TOKENS {
            return Err(RulesetError::InvalidRuleText(text.to_owned()));
        }
        let key = rule_key(text);
        if let Some(rule) = self
            .rules
            .iter_mut()
            .find(|r| r.label == label && rule_key(&r.text) == key)
        {
            if rule.is_active() {
                return Err(RulesetError::DuplicateActiveRule {
                    text: rule.text.clone(),
                    label,
                });
            }
            let last = rule.history.last().map_or(0, |e| e.iteration);
            if iteration < last {
                return Err(RulesetError::NonMonotoneIteration {
                    rule_id: rule.rule_id,
                    iteration,
                    last,
                });
            }
            rule.history.push(RuleEvent {
                iteration,
                kind: RuleEventKind::Reinstated,
            });
            return Ok(rule.rule_id);
        }
        let rule_id = self.rules.iter().map(|r| r.rule_id).max().unwrap_or(0) + 1;
        self.rules.push(ConceptRule {
            rule_id,
            text: text.trim().to_owned(),
            label,
            history: vec![RuleEvent {
                iteration,
                kind: RuleEventKind::Added,
            }],
            synonyms: Vec::new(),
        });
        Ok(rule_id)
    }

    pub fn remove_rule(&mut self, rule_id: u32, iteration: u32) -> Result<(), RulesetError> {
        if iteration < 1 {
            return Err(RulesetError::InvalidIteration(iteration));
        }
        let rule = self
            .rules
            .iter_mut()
            .find(|r| r.rule_id == rule_id)
            .ok_or(RulesetError::UnknownRule(rule_id))?;
        if !rule.is_active() {
            return Err(RulesetError::RuleNotActive(rule_id));
        }
        let last = rule.history.last().map_or(0, |e| e.iteration);
        if iteration < last {
            return Err(RulesetError::NonMonotoneIteration {
                rule_id,
                iteration,
                last,
            });
        }
        rule.history.push(RuleEvent {
            iteration,
            kind: RuleEventKind::Removed,
        });
        Ok(())
    }

    /// Attach synonym phrases to a rule (extension hook for vocabulary mapping).
    pub fn set_synonyms(&mut self, rule_id: u32, synonyms: Vec<String>) -> Result<(), RulesetError> {
        let rule = self
            .rules
            .iter_mut()
            .find(|r| r.rule_id == rule_id)
            .ok_or(RulesetError::UnknownRule(rule_id))?;
        rule.synonyms = synonyms;
        Ok(())
    }

    pub fn export_history(&self) -> Vec<HistoryRow> {
        self.rules
            .iter()
            .map(|r| HistoryRow {
                rule_number: r.rule_id,
                text: r.text.clone(),
                label: r.label,
                iterations: r.history_notation(),
            })
            .collect()
    }

    /// Write `ruleset.csv` (rule number, rule, label, iteration modified, synonyms).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), RulesetError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["Rule Number", "Rule", "Label", "Iteration Modified", "Synonyms"])?;
        for r in &self.rules {
            out.write_record([
                r.rule_id.to_string(),
                r.text.clone(),
                r.label.to_string(),
                r.history_notation(),
                r.synonyms.join("|"),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, RulesetError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
        let mut rules = Vec::new();
        let mut seen = BTreeSet::new();
        for row in rdr.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("").trim().to_owned();
            let rule_id: u32 = field(0)
                .parse()
                .map_err(|_| RulesetError::InvalidHistory(format!("bad rule number {:?}", field(0))))?;
            if !seen.insert(rule_id) {
                return Err(RulesetError::InvalidHistory(format!("duplicate rule number {rule_id}")));
            }
            let label: Label = field(2)
                .parse()
                .map_err(|_| RulesetError::InvalidHistory(format!("bad label {:?}", field(2))))?;
            let synonyms = field(4)
                .split('|')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect();
            rules.push(ConceptRule {
                rule_id,
                text: field(1),
                label,
                history: parse_history_notation(&field(3))?,
                synonyms,
            });
        }
        Ok(Ruleset { rules })
    }

    pub fn save(&self, path: &Path) -> Result<(), RulesetError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, RulesetError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Record text pre-tokenized for repeated rule matching.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDoc {
    tokens: Vec<String>,
}

impl MatchDoc {
    pub fn new(title: &str, abstract_text: &str) -> Self {
        MatchDoc {
            tokens: text::stemmed_tokens(&format!("{title} {abstract_text}")),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// A rule compiled to its stemmed patterns.
#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub rule_id: u32,
    pub label: Label,
    patterns: Vec<Vec<String>>,
}

impl CompiledRule {
    pub fn new(rule: &ConceptRule) -> Self {
        CompiledRule {
            rule_id: rule.rule_id,
            label: rule.label,
            patterns: rule.patterns(),
        }
    }

    pub fn matches(&self, doc: &MatchDoc) -> bool {
        self.patterns
            .iter()
            .any(|p| text::contains_sequence(&doc.tokens, p))
    }
}

/// Whether `rule` fires on a record with the given title and abstract.
pub fn matches(rule: &ConceptRule, title: &str, abstract_text: &str) -> bool {
    CompiledRule::new(rule).matches(&MatchDoc::new(title, abstract_text))
}

/// Byte ranges of `text` where `rule` matches, sorted and non-duplicated.
/// Tokens are maximal alphanumeric runs, folded and stemmed as in matching,
/// so a hit on "double gloving" covers "double-gloving" in the source.
pub fn highlight_spans(rule: &CompiledRule, text: &str) -> Vec<(usize, usize)> {
    let mut tokens: Vec<(String, usize, usize)> = Vec::new();
    let mut run_start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        match (c.is_alphanumeric(), run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                for t in text::stemmed_tokens(&text[s..i]) {
                    tokens.push((t, s, i));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let mut spans = Vec::new();
    for p in &rule.patterns {
        if p.is_empty() || p.len() > tokens.len() {
            continue;
        }
        for w in 0..=tokens.len() - p.len() {
            if tokens[w..w + p.len()].iter().zip(p).all(|(t, q)| &t.0 == q) {
                spans.push((tokens[w].1, tokens[w + p.len() - 1].2));
            }
        }
    }
    spans.sort_unstable();
    spans.dedup();
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub hits: usize,
    pub total: usize,
}

impl std::fmt::Display for Coverage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} / {}", self.hits, self.total)
    }
}

pub fn coverage(rule: &ConceptRule, docs: &[MatchDoc]) -> Coverage {
    let compiled = CompiledRule::new(rule);
    Coverage {
        hits: docs.iter().filter(|d| compiled.matches(d)).count(),
        total: docs.len(),
    }
}
