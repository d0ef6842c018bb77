//! Hybrid PII detection: locale-scoped regular expressions for structured
//! identifiers, a chat model for names, addresses and credentials, and a
//! three-phase refinement pipeline with an exact-span evaluation harness.

pub mod corpus;
pub mod eval;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod registry;

pub use model::{Document, EntitySpan, LabelId, LabelPriorityTable, LocaleId, PhaseId, Source};
pub use registry::{load_registry, match_structured, CompiledRegistry};
