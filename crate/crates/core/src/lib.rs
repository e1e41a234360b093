//! Iterative annotation-guideline moderation.
//!
//! An LLM annotates a development set under the current guideline, is scored
//! against gold by strict span matching, and the dominant discrepancy pattern
//! drives a three-stage refinement of the guideline. The loop stops at a
//! quality threshold, on the first non-improving refinement, or at an
//! iteration cap.

pub mod annotator;
pub mod corpus;
pub mod discrepancy;
pub mod eval;
pub mod exec;
pub mod gateway;
pub mod guideline;
pub mod moderator;
pub mod orchestrator;
pub mod report;
pub mod schema;
pub mod stats;
pub mod template;

pub use corpus::{AnnotationSet, AnnotationSets, Corpus, Document, Entity, Label, Provenance};
pub use discrepancy::{Category, DiscrepancyCase, DiscrepancyReport, GroupKey};
pub use eval::{CorpusEvaluation, MatchCounts, Score};
pub use exec::Exec;
pub use schema::EntitySchema;
pub use guideline::Guideline;
