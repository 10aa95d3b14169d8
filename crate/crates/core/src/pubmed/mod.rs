//! PubMed E-utilities client: esearch pagination, batched efetch, and an
//! offline fixture mode.
//!
//! Endpoints:
//!   esearch: https://eutils.ncbi.nlm.nih.gov/entrez/eutils/esearch.fcgi
//!   efetch:  https://eutils.ncbi.nlm.nih.gov/entrez/eutils/efetch.fcgi
//!
//! Query translation (MeSH expansion) is left to the server; the
//! `QueryTranslation` element of the first esearch page is stored verbatim.

mod transport;
mod xml;

use std::collections::HashSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::types::Pmid;

pub use transport::{
    FixtureTransport, HttpSender, Pause, RateLimiter, RecordingTransport, ResilientTransport, RetryPolicy,
    ThreadPause, Transport, TransportError,
};
pub use xml::{parse_efetch, parse_esearch, EsearchPage};

pub const ESEARCH_URL: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/esearch.fcgi";
pub const EFETCH_URL: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/efetch.fcgi";
/// Environment variable consulted for an NCBI API key.
pub const API_KEY_ENV: &str = "NCBI_API_KEY";
/// Largest number of ids sent in one efetch request.
pub const FETCH_BATCH: usize = 200;
pub const MAX_PAGE_SIZE: u32 = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum PubmedError {
    #[error("invalid search spec: {0}")]
    InvalidSpec(String),
    #[error("network error for {request}: {message}")]
    Network { request: String, message: String },
    #[error("rate limited by server for {request}")]
    RateLimited { request: String },
    #[error("could not parse response for {request}: {message}")]
    Parse { request: String, message: String },
    #[error("no PMIDs to fetch")]
    EmptyPmids,
}

impl PubmedError {
    fn from_transport(req: &RequestDescriptor, err: TransportError) -> Self {
        let request = req.describe();
        match err {
            TransportError::RateLimited => PubmedError::RateLimited { request },
            other => PubmedError::Network {
                request,
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpec {
    /// Identifier of the search string within a session, e.g. "1".
    pub id: String,
    pub query_text: String,
    #[serde(default)]
    pub exclusion_query_text: Option<String>,
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
    #[serde(default = "default_page_size")]
    pub page_size: u32,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

fn default_page_size() -> u32 {
    200
}

impl SearchSpec {
    pub fn validate(&self) -> Result<(), PubmedError> {
        if self.query_text.trim().is_empty() {
            return Err(PubmedError::InvalidSpec("query text is empty".into()));
        }
        if self.date_start > self.date_end {
            return Err(PubmedError::InvalidSpec(format!(
                "date_start {} is after date_end {}",
                self.date_start, self.date_end
            )));
        }
        if !(1..=MAX_PAGE_SIZE).contains(&self.page_size) {
            return Err(PubmedError::InvalidSpec(format!(
                "page_size {} outside 1..={MAX_PAGE_SIZE}",
                self.page_size
            )));
        }
        Ok(())
    }

    /// Publication-date filter in E-utilities syntax: `1980/01/01:2023/01/01[dp]`.
    pub fn date_filter(&self) -> String {
        format!(
            "{}:{}[dp]",
            self.date_start.format("%Y/%m/%d"),
            self.date_end.format("%Y/%m/%d")
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Esearch,
    Efetch,
}

impl Endpoint {
    pub fn url(self) -> &'static str {
        match self {
            Endpoint::Esearch => ESEARCH_URL,
            Endpoint::Efetch => EFETCH_URL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Endpoint::Esearch => "esearch",
            Endpoint::Efetch => "efetch",
        }
    }
}

/// A fully specified GET request against one E-utilities endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestDescriptor {
    pub endpoint: Endpoint,
    pub params: Vec<(String, String)>,
}

impl RequestDescriptor {
    pub fn param(&self, key: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Query string with parameters sorted by key and `api_key` omitted,
    /// prefixed by the endpoint name. Stable across runs and machines.
    pub fn canonical_query(&self) -> String {
        let mut params: Vec<&(String, String)> =
            self.params.iter().filter(|(k, _)| k != "api_key").collect();
        params.sort();
        let mut ser = url::form_urlencoded::Serializer::new(String::new());
        for (k, v) in params {
            ser.append_pair(k, v);
        }
        format!("{}?{}", self.endpoint.name(), ser.finish())
    }

    /// Fixture file stem: first 16 hex digits of SHA-256 over the canonical query.
    pub fn fixture_key(&self) -> String {
        let digest = Sha256::digest(self.canonical_query().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn url(&self) -> String {
        let mut ser = url::form_urlencoded::Serializer::new(String::new());
        for (k, v) in &self.params {
            ser.append_pair(k, v);
        }
        format!("{}?{}", self.endpoint.url(), ser.finish())
    }

    /// Short human-readable identification used in error messages.
    pub fn describe(&self) -> String {
        match self.endpoint {
            Endpoint::Esearch => format!(
                "esearch retstart={} [{}]",
                self.param("retstart").unwrap_or("0"),
                self.fixture_key()
            ),
            Endpoint::Efetch => {
                let n = self.param("id").map_or(0, |ids| ids.split(',').count());
                format!("efetch {n} ids [{}]", self.fixture_key())
            }
        }
    }
}

fn esearch_request(spec: &SearchSpec, query: &str, page_index: u32) -> Result<RequestDescriptor, PubmedError> {
    spec.validate()?;
    if query.trim().is_empty() {
        return Err(PubmedError::InvalidSpec("query text is empty".into()));
    }
    let retstart = u64::from(page_index) * u64::from(spec.page_size);
    let mut params = vec![
        ("db".to_owned(), "pubmed".to_owned()),
        ("term".to_owned(), format!("({}) AND ({})", query.trim(), spec.date_filter())),
        ("retstart".to_owned(), retstart.to_string()),
        ("retmax".to_owned(), spec.page_size.to_string()),
        ("retmode".to_owned(), "xml".to_owned()),
    ];
    if let Some(key) = &spec.api_key {
        params.push(("api_key".to_owned(), key.clone()));
    }
    Ok(RequestDescriptor {
        endpoint: Endpoint::Esearch,
        params,
    })
}

/// esearch request for one page of the main search string. The XML
/// response carries the server's `QueryTranslation`.
pub fn build_search_request(spec: &SearchSpec, page_index: u32) -> Result<RequestDescriptor, PubmedError> {
    esearch_request(spec, &spec.query_text, page_index)
}

/// esearch request for one page of the exclusion search string, if any.
pub fn build_exclusion_request(
    spec: &SearchSpec,
    page_index: u32,
) -> Result<Option<RequestDescriptor>, PubmedError> {
    match &spec.exclusion_query_text {
        Some(q) => esearch_request(spec, q, page_index).map(Some),
        None => Ok(None),
    }
}

pub fn build_fetch_request(pmids: &[Pmid], api_key: Option<&str>) -> RequestDescriptor {
    let ids = pmids.iter().map(Pmid::as_str).collect::<Vec<_>>().join(",");
    let mut params = vec![
        ("db".to_owned(), "pubmed".to_owned()),
        ("id".to_owned(), ids),
        ("retmode".to_owned(), "xml".to_owned()),
        ("rettype".to_owned(), "abstract".to_owned()),
    ];
    if let Some(key) = api_key {
        params.push(("api_key".to_owned(), key.to_owned()));
    }
    RequestDescriptor {
        endpoint: Endpoint::Efetch,
        params,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub total_count: u64,
    pub pmids: Vec<Pmid>,
    pub server_query_translation: Option<String>,
    pub requests_issued: usize,
}

fn paginate(
    spec: &SearchSpec,
    transport: &dyn Transport,
    build: impl Fn(u32) -> Result<RequestDescriptor, PubmedError>,
) -> Result<SearchResult, PubmedError> {
    let mut seen = HashSet::new();
    let mut pmids = Vec::new();
    let mut total_count = 0;
    let mut translation = None;
    let mut pages = 1u64;
    let mut page = 0u32;
    while u64::from(page) < pages {
        let req = build(page)?;
        let body = transport
            .execute(&req)
            .map_err(|e| PubmedError::from_transport(&req, e))?;
        let parsed = parse_esearch(&body).map_err(|message| PubmedError::Parse {
            request: req.describe(),
            message,
        })?;
        if page == 0 {
            total_count = parsed.count;
            translation = parsed.query_translation;
            pages = total_count.div_ceil(u64::from(spec.page_size)).max(1);
        }
        for id in parsed.ids {
            if seen.insert(id.clone()) {
                pmids.push(id);
            }
        }
        page += 1;
    }
    pmids.truncate(total_count as usize);
    Ok(SearchResult {
        total_count,
        pmids,
        server_query_translation: translation,
        requests_issued: page as usize,
    })
}

/// Run the main search string, issuing ⌈count / page_size⌉ esearch requests.
pub fn run_search(spec: &SearchSpec, transport: &dyn Transport) -> Result<SearchResult, PubmedError> {
    paginate(spec, transport, |page| build_search_request(spec, page))
}

/// Run the exclusion search string; `None` when the spec has none.
pub fn run_exclusion_search(
    spec: &SearchSpec,
    transport: &dyn Transport,
) -> Result<Option<SearchResult>, PubmedError> {
    if spec.exclusion_query_text.is_none() {
        return Ok(None);
    }
    paginate(spec, transport, |page| {
        build_exclusion_request(spec, page).map(|r| r.expect("exclusion query present"))
    })
    .map(Some)
}

/// One bibliographic item as returned by efetch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub pmid: Pmid,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub language_codes: Vec<String>,
    pub publication_date: Option<NaiveDate>,
    pub authors: Vec<String>,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchResult {
    /// Records in the order of the requested PMIDs.
    pub records: Vec<RawRecord>,
    /// Requested PMIDs absent from every response.
    pub missing: Vec<Pmid>,
}

/// Fetch full records in batches of [`FETCH_BATCH`].
pub fn fetch_records(
    pmids: &[Pmid],
    transport: &dyn Transport,
    api_key: Option<&str>,
) -> Result<FetchResult, PubmedError> {
    if pmids.is_empty() {
        return Err(PubmedError::EmptyPmids);
    }
    let mut by_pmid = std::collections::HashMap::new();
    for batch in pmids.chunks(FETCH_BATCH) {
        let req = build_fetch_request(batch, api_key);
        let body = transport
            .execute(&req)
            .map_err(|e| PubmedError::from_transport(&req, e))?;
        let records = parse_efetch(&body).map_err(|message| PubmedError::Parse {
            request: req.describe(),
            message,
        })?;
        for r in records {
            by_pmid.entry(r.pmid.clone()).or_insert(r);
        }
    }
    let mut records = Vec::with_capacity(pmids.len());
    let mut missing = Vec::new();
    let mut emitted = HashSet::new();
    for p in pmids {
        if !emitted.insert(p.clone()) {
            continue;
        }
        match by_pmid.remove(p) {
            Some(r) => records.push(r),
            None => {
                log::warn!("PMID {p} missing from efetch response");
                missing.push(p.clone());
            }
        }
    }
    Ok(FetchResult { records, missing })
}
