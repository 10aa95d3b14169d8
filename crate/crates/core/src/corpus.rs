//! Record store: pooling of search results, deduplication, eligibility
//! screening, negative-set flagging and reference-library import.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::pubmed::RawRecord;
use crate::text;
use crate::types::Pmid;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reference library {0:?} contains no PMIDs")]
    EmptyLibrary(String),
    #[error("reference library {name:?}: {count} PMIDs exceed total_reported {total}")]
    TotalTooSmall { name: String, count: usize, total: usize },
    #[error("unknown PMID {0}")]
    UnknownPmid(Pmid),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid record on line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IneligibleReason {
    NoAbstract,
    LanguageBlocked,
    Duplicate,
    ExclusionQueryMatch,
}

impl fmt::Display for IneligibleReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IneligibleReason::NoAbstract => "no abstract",
            IneligibleReason::LanguageBlocked => "blocked language",
            IneligibleReason::Duplicate => "duplicate",
            IneligibleReason::ExclusionQueryMatch => "exclusion query match",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason")]
pub enum Eligibility {
    Pending,
    Eligible,
    Ineligible(IneligibleReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub pmid: Pmid,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub language_codes: Vec<String>,
    pub publication_date: Option<NaiveDate>,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    pub eligibility: Eligibility,
    pub source_strings: BTreeSet<String>,
    #[serde(default)]
    pub in_negative_set: bool,
    /// Optional path to a full-text file used by the summarizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<PathBuf>,
}

impl Record {
    pub fn from_raw(raw: RawRecord, string_id: &str) -> Self {
        Record {
            pmid: raw.pmid,
            title: raw.title,
            abstract_text: raw.abstract_text,
            language_codes: raw.language_codes,
            publication_date: raw.publication_date,
            authors: raw.authors,
            keywords: raw.keywords,
            eligibility: Eligibility::Pending,
            source_strings: BTreeSet::from([string_id.to_owned()]),
            in_negative_set: false,
            attachment: None,
        }
    }

    pub fn is_eligible(&self) -> bool {
        self.eligibility == Eligibility::Eligible
    }

    /// Title and abstract joined, the text rules and features see.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

/// Languages blocked by default: Russian and Chinese (both ISO 639-2 forms).
pub fn default_blocked_languages() -> BTreeSet<String> {
    ["rus", "chi", "zho"].iter().map(|s| s.to_string()).collect()
}

/// Eligibility of a single record. Pure; `Duplicate` is never produced here.
pub fn screen_eligibility(record: &Record, blocked_languages: &BTreeSet<String>) -> Eligibility {
    if record.abstract_text.trim().is_empty() {
        Eligibility::Ineligible(IneligibleReason::NoAbstract)
    } else if record
        .language_codes
        .iter()
        .any(|l| blocked_languages.contains(&l.to_ascii_lowercase()))
    {
        Eligibility::Ineligible(IneligibleReason::LanguageBlocked)
    } else {
        Eligibility::Eligible
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    /// Records seen again after their first occurrence (within or across strings).
    pub duplicates_merged: usize,
    /// Pairs of distinct PMIDs whose normalized titles coincide.
    pub suspected_title_duplicates: Vec<(Pmid, Pmid)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSetReport {
    pub flagged: Vec<Pmid>,
    /// Exclusion-search PMIDs that are not part of the corpus.
    pub not_in_corpus: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityTally {
    pub total: usize,
    pub pending: usize,
    pub eligible: usize,
    pub no_abstract: usize,
    pub language_blocked: usize,
    pub duplicate: usize,
    pub exclusion_query_match: usize,
}

impl EligibilityTally {
    pub fn ineligible(&self) -> usize {
        self.no_abstract + self.language_blocked + self.duplicate + self.exclusion_query_match
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: BTreeMap<Pmid, Record>,
    /// Search-string id → PMIDs in retrieval order (each listed once per string).
    pub provenance: BTreeMap<String, Vec<Pmid>>,
}

/// Pool search batches into one corpus; the first occurrence of a PMID wins.
pub fn merge_and_dedupe(batches: Vec<(String, Vec<RawRecord>)>) -> (Corpus, MergeReport) {
    let mut corpus = Corpus::default();
    let mut report = MergeReport::default();
    for (string_id, records) in batches {
        report.duplicates_merged += corpus.add_batch(&string_id, records);
    }
    report.suspected_title_duplicates = corpus.suspected_title_duplicates();
    (corpus, report)
}

impl Corpus {
    /// Merge one batch; returns how many of its records were already present.
    pub fn add_batch(&mut self, string_id: &str, records: Vec<RawRecord>) -> usize {
        let mut dups = 0;
        let list = self.provenance.entry(string_id.to_owned()).or_default();
        for raw in records {
            if !list.contains(&raw.pmid) {
                list.push(raw.pmid.clone());
            }
            match self.records.get_mut(&raw.pmid) {
                Some(existing) => {
                    dups += 1;
                    existing.source_strings.insert(string_id.to_owned());
                }
                None => {
                    self.records
                        .insert(raw.pmid.clone(), Record::from_raw(raw, string_id));
                }
            }
        }
        dups
    }

    /// Batches equivalent to this corpus, one per search string.
    pub fn to_batches(&self) -> Vec<(String, Vec<RawRecord>)> {
        self.provenance
            .iter()
            .map(|(id, pmids)| {
                let recs = pmids
                    .iter()
                    .filter_map(|p| self.records.get(p))
                    .map(|r| RawRecord {
                        pmid: r.pmid.clone(),
                        title: r.title.clone(),
                        abstract_text: r.abstract_text.clone(),
                        language_codes: r.language_codes.clone(),
                        publication_date: r.publication_date,
                        authors: r.authors.clone(),
                        keywords: r.keywords.clone(),
                    })
                    .collect();
                (id.clone(), recs)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, pmid: &Pmid) -> Option<&Record> {
        self.records.get(pmid)
    }

    /// Records identified across all searches, counting each retrieval.
    pub fn identified(&self) -> usize {
        self.provenance.values().map(Vec::len).sum()
    }

    pub fn suspected_title_duplicates(&self) -> Vec<(Pmid, Pmid)> {
        let mut first: HashMap<String, &Pmid> = HashMap::new();
        let mut out = Vec::new();
        for (pmid, rec) in &self.records {
            let key = text::normalize(&rec.title);
            if key.is_empty() {
                continue;
            }
            match first.get(&key) {
                Some(prev) => out.push(((*prev).clone(), pmid.clone())),
                None => {
                    first.insert(key, pmid);
                }
            }
        }
        out
    }

    /// Decide eligibility for every pending record.
    pub fn screen(&mut self, blocked_languages: &BTreeSet<String>) {
        for rec in self.records.values_mut() {
            if rec.eligibility == Eligibility::Pending {
                rec.eligibility = screen_eligibility(rec, blocked_languages);
            }
        }
    }

    /// Flag exclusion-search matches. Records already ineligible for another
    /// reason keep that reason but still join the negative set.
    pub fn build_negative_set(&mut self, exclusion_pmids: &BTreeSet<Pmid>) -> NegativeSetReport {
        let mut report = NegativeSetReport::default();
        for pmid in exclusion_pmids {
            match self.records.get_mut(pmid) {
                Some(rec) => {
                    rec.in_negative_set = true;
                    if matches!(rec.eligibility, Eligibility::Eligible | Eligibility::Pending) {
                        rec.eligibility = Eligibility::Ineligible(IneligibleReason::ExclusionQueryMatch);
                    }
                    report.flagged.push(pmid.clone());
                }
                None => report.not_in_corpus += 1,
            }
        }
        report
    }

    pub fn eligible(&self) -> impl Iterator<Item = &Record> {
        self.records.values().filter(|r| r.is_eligible())
    }

    pub fn negative_set(&self) -> impl Iterator<Item = &Record> {
        self.records.values().filter(|r| r.in_negative_set)
    }

    pub fn tally(&self) -> EligibilityTally {
        let mut t = EligibilityTally {
            total: self.records.len(),
            ..Default::default()
        };
        for r in self.records.values() {
            match r.eligibility {
                Eligibility::Pending => t.pending += 1,
                Eligibility::Eligible => t.eligible += 1,
                Eligibility::Ineligible(IneligibleReason::NoAbstract) => t.no_abstract += 1,
                Eligibility::Ineligible(IneligibleReason::LanguageBlocked) => t.language_blocked += 1,
                Eligibility::Ineligible(IneligibleReason::Duplicate) => t.duplicate += 1,
                Eligibility::Ineligible(IneligibleReason::ExclusionQueryMatch) => {
                    t.exclusion_query_match += 1
                }
            }
        }
        t
    }

    /// Write `records.ndjson` (sorted by PMID) and `provenance.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("records.ndjson");
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        for rec in self.records.values() {
            let line = serde_json::to_string(rec).expect("record serializes");
            writeln!(w, "{line}").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        let prov = dir.join("provenance.json");
        let body = serde_json::to_string_pretty(&self.provenance).expect("provenance serializes");
        std::fs::write(&prov, body + "\n").map_err(io_err(&prov))
    }

    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let path = dir.join("records.ndjson");
        let file = std::fs::File::open(&path).map_err(io_err(&path))?;
        let mut records = BTreeMap::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                line: i + 1,
                source,
            })?;
            records.insert(rec.pmid.clone(), rec);
        }
        let prov = dir.join("provenance.json");
        let provenance = match std::fs::read_to_string(&prov) {
            Ok(body) => serde_json::from_str(&body).map_err(|source| CorpusError::Json { line: 1, source })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(io_err(&prov)(e)),
        };
        Ok(Corpus { records, provenance })
    }
}

/// External bibliography (e.g. a published review's reference list) keyed by PMID.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceLibrary {
    pub name: String,
    pub pmids: BTreeSet<Pmid>,
    /// Number of items in the original library, including those without a PMID.
    pub total_reported: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportWarning {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ImportWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn parse_total_comment(line: &str) -> Option<usize> {
    let body = line.trim_start_matches('#').trim();
    body.strip_prefix("total_reported")
        .map(|rest| rest.trim_start_matches([' ', '=', ':']).trim())
        .and_then(|v| v.parse().ok())
}

impl ReferenceLibrary {
    pub fn new(name: &str, pmids: BTreeSet<Pmid>, total_reported: Option<usize>) -> Result<Self, CorpusError> {
        if pmids.is_empty() {
            return Err(CorpusError::EmptyLibrary(name.to_owned()));
        }
        if let Some(total) = total_reported {
            if pmids.len() > total {
                return Err(CorpusError::TotalTooSmall {
                    name: name.to_owned(),
                    count: pmids.len(),
                    total,
                });
            }
        }
        Ok(Self {
            name: name.to_owned(),
            pmids,
            total_reported,
        })
    }

    /// Parse one-PMID-per-line text or CSV with a `pmid` column. Lines starting
    /// with `#` are comments; `# total_reported=N` sets the reported size.
    pub fn parse(content: &str, name: &str) -> Result<(Self, Vec<ImportWarning>), CorpusError> {
        let mut total_reported = None;
        let mut data: Vec<(usize, &str)> = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let t = line.trim();
            if t.starts_with('#') {
                if let Some(n) = parse_total_comment(t) {
                    total_reported = Some(n);
                }
                continue;
            }
            if !t.is_empty() {
                data.push((i + 1, line));
            }
        }

        let mut values: Vec<(usize, String)> = Vec::new();
        let is_csv = data
            .first()
            .is_some_and(|(_, l)| l.contains(',') || l.trim().eq_ignore_ascii_case("pmid"));
        if is_csv {
            let (header_line, header) = data[0];
            let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(header.as_bytes());
            let cols: Vec<String> = reader
                .records()
                .next()
                .and_then(Result::ok)
                .map(|r| r.iter().map(|c| c.trim().to_ascii_lowercase()).collect())
                .unwrap_or_default();
            let idx = cols.iter().position(|c| c == "pmid").ok_or(CorpusError::Parse {
                line: header_line,
                message: "CSV header has no pmid column".into(),
            })?;
            for &(line_no, line) in &data[1..] {
                let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
                let rec = r
                    .records()
                    .next()
                    .and_then(Result::ok)
                    .ok_or_else(|| CorpusError::Parse {
                        line: line_no,
                        message: "malformed CSV row".into(),
                    })?;
                let cell = rec.get(idx).unwrap_or("").trim().to_owned();
                values.push((line_no, cell));
            }
        } else {
            values = data.iter().map(|(n, l)| (*n, l.trim().to_owned())).collect();
        }

        let mut pmids = BTreeSet::new();
        let mut first_seen: HashMap<Pmid, usize> = HashMap::new();
        let mut warnings = Vec::new();
        for (line, v) in values {
            let pmid = Pmid::new(&v).map_err(|_| CorpusError::Parse {
                line,
                message: format!("not a PMID: {v:?}"),
            })?;
            match first_seen.get(&pmid) {
                Some(first) => warnings.push(ImportWarning {
                    line,
                    message: format!("duplicate PMID {pmid} (first on line {first})"),
                }),
                None => {
                    first_seen.insert(pmid.clone(), line);
                    pmids.insert(pmid);
                }
            }
        }
        Ok((Self::new(name, pmids, total_reported)?, warnings))
    }

    pub fn import(path: &Path, name: &str) -> Result<(Self, Vec<ImportWarning>), CorpusError> {
        let content = std::fs::read_to_string(path).map_err(io_err(path))?;
        let (lib, warnings) = Self::parse(&content, name)?;
        for w in &warnings {
            log::warn!("{}: {w}", path.display());
        }
        Ok((lib, warnings))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(total) = self.total_reported {
            out.push_str(&format!("# total_reported={total}\n"));
        }
        for p in &self.pmids {
            out.push_str(p.as_str());
            out.push('\n');
        }
        out
    }

    /// Store as `<dir>/reference/<name>.pmids`.
    pub fn save(&self, session_dir: &Path) -> Result<PathBuf, CorpusError> {
        let dir = session_dir.join("reference");
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("{}.pmids", self.name));
        std::fs::write(&path, self.render()).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn load(session_dir: &Path, name: &str) -> Result<Self, CorpusError> {
        let path = session_dir.join("reference").join(format!("{name}.pmids"));
        Ok(Self::import(&path, name)?.0)
    }
}

/// Convenience wrapper mirroring the CLI verb.
pub fn import_reference_library(path: &Path, name: &str) -> Result<ReferenceLibrary, CorpusError> {
    ReferenceLibrary::import(path, name).map(|(lib, _)| lib)
}
