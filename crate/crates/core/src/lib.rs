//! Core library for assisted systematic literature review screening:
//! PubMed retrieval, corpus management, concept rules, weak supervision,
//! a discriminative screener, agreement metrics, explainability statistics,
//! concordance analysis, PRISMA accounting, persisted review sessions and
//! retrieval-augmented summarization.

pub mod concordance;
pub mod corpus;
pub mod discriminative;
pub mod label_model;
pub mod metrics;
pub mod prisma;
pub mod pubmed;
pub mod ruleset;
pub mod session;
pub mod summarizer;
pub mod text;
pub mod types;
pub mod xai;
