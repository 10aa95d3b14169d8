//! Structured error responses. Every core error variant maps to one machine
//! code; the code names the variant so clients can branch on it.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use lrn_core::concordance::ConcordanceError;
use lrn_core::corpus::CorpusError;
use lrn_core::prisma::PrismaError;
use lrn_core::pubmed::PubmedError;
use lrn_core::ruleset::RulesetError;
use lrn_core::session::SessionError;
use lrn_core::summarizer::SummarizerError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code} ({status}): {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_owned(),
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn ruleset_code(e: &RulesetError) -> (StatusCode, &'static str) {
    use RulesetError::*;
    match e {
        DuplicateActiveRule { .. } => (StatusCode::CONFLICT, "DuplicateActiveRule"),
        RuleNotActive(_) => (StatusCode::CONFLICT, "RuleNotActive"),
        UnknownRule(_) => (StatusCode::NOT_FOUND, "UnknownRule"),
        InvalidIteration(_) => (StatusCode::BAD_REQUEST, "InvalidIteration"),
        NonMonotoneIteration { .. } => (StatusCode::CONFLICT, "NonMonotoneIteration"),
        InvalidRuleText(_) => (StatusCode::BAD_REQUEST, "InvalidRuleText"),
        InvalidHistory(_) => (StatusCode::INTERNAL_SERVER_ERROR, "InvalidHistory"),
        Csv(_) => (StatusCode::INTERNAL_SERVER_ERROR, "RulesetCsv"),
        Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "RulesetIo"),
    }
}

fn corpus_code(e: &CorpusError) -> (StatusCode, &'static str) {
    use CorpusError::*;
    match e {
        Parse { .. } => (StatusCode::BAD_REQUEST, "CorpusParse"),
        EmptyLibrary(_) => (StatusCode::BAD_REQUEST, "EmptyLibrary"),
        TotalTooSmall { .. } => (StatusCode::BAD_REQUEST, "TotalTooSmall"),
        UnknownPmid(_) => (StatusCode::NOT_FOUND, "UnknownRecord"),
        Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "CorpusIo"),
        Json { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "CorpusJson"),
    }
}

fn pubmed_code(e: &PubmedError) -> (StatusCode, &'static str) {
    use PubmedError::*;
    match e {
        InvalidSpec(_) => (StatusCode::BAD_REQUEST, "InvalidSpec"),
        Network { .. } => (StatusCode::BAD_GATEWAY, "Network"),
        RateLimited { .. } => (StatusCode::SERVICE_UNAVAILABLE, "RateLimited"),
        Parse { .. } => (StatusCode::BAD_GATEWAY, "PubmedParse"),
        EmptyPmids => (StatusCode::BAD_REQUEST, "EmptyPmids"),
    }
}

fn prisma_code(e: &PrismaError) -> (StatusCode, &'static str) {
    match e {
        PrismaError::InconsistentState(_) => (StatusCode::INTERNAL_SERVER_ERROR, "InconsistentState"),
        PrismaError::UnsupportedFormat(_) => (StatusCode::BAD_REQUEST, "UnsupportedFormat"),
    }
}

fn concordance_code(e: &ConcordanceError) -> (StatusCode, &'static str) {
    use ConcordanceError::*;
    match e {
        SetsNotInUniverse { .. } => (StatusCode::BAD_REQUEST, "SetsNotInUniverse"),
        ZeroReplications => (StatusCode::BAD_REQUEST, "ZeroReplications"),
        PredictedOutsideCorpus(_) => (StatusCode::BAD_REQUEST, "PredictedOutsideCorpus"),
        NoComparisons => (StatusCode::BAD_REQUEST, "NoComparisons"),
        Csv(_) => (StatusCode::INTERNAL_SERVER_ERROR, "ConcordanceCsv"),
    }
}

fn summarizer_code(e: &SummarizerError) -> (StatusCode, &'static str) {
    use SummarizerError::*;
    match e {
        InvalidWindow { .. } => (StatusCode::BAD_REQUEST, "InvalidWindow"),
        NoChunks => (StatusCode::CONFLICT, "NoChunks"),
        BudgetTooSmall { .. } => (StatusCode::BAD_REQUEST, "BudgetTooSmall"),
        InvalidPromptSet(_) => (StatusCode::BAD_REQUEST, "InvalidPromptSet"),
        Backend { .. } => (StatusCode::BAD_GATEWAY, "BackendError"),
        Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "SummarizerIo"),
    }
}

pub fn session_code(e: &SessionError) -> (StatusCode, &'static str) {
    use SessionError::*;
    match e {
        InvalidConfig(_) => (StatusCode::BAD_REQUEST, "InvalidConfig"),
        AlreadyExists(_) => (StatusCode::CONFLICT, "AlreadyExists"),
        NotASession(_) => (StatusCode::NOT_FOUND, "SessionNotFound"),
        PhaseViolation { .. } => (StatusCode::CONFLICT, "PhaseViolation"),
        NotReady(_) => (StatusCode::CONFLICT, "NotReady"),
        NoEligibleRecords => (StatusCode::CONFLICT, "NoEligibleRecords"),
        UnknownPmid(_) => (StatusCode::CONFLICT, "UnknownPmid"),
        NoSuchIteration(_) => (StatusCode::NOT_FOUND, "NoSuchIteration"),
        TrainingFailure(_) => (StatusCode::INTERNAL_SERVER_ERROR, "TrainingFailure"),
        ClockSkew(_) => (StatusCode::CONFLICT, "ClockSkew"),
        Ruleset(e) => ruleset_code(e),
        Corpus(e) => corpus_code(e),
        Pubmed(e) => pubmed_code(e),
        Prisma(e) => prisma_code(e),
        Concordance(e) => concordance_code(e),
        Summarizer(e) => summarizer_code(e),
        Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "Io"),
        Json { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "Json"),
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = session_code(&e);
        ApiError::new(status, code, e.to_string())
    }
}

impl From<ConcordanceError> for ApiError {
    fn from(e: ConcordanceError) -> Self {
        let (status, code) = concordance_code(&e);
        ApiError::new(status, code, e.to_string())
    }
}

impl From<PrismaError> for ApiError {
    fn from(e: PrismaError) -> Self {
        let (status, code) = prisma_code(&e);
        ApiError::new(status, code, e.to_string())
    }
}
