//! Chat-model side of the pipeline: prompt rendering, backends, response
//! parsing and grounding of returned strings back into spans.

mod adapter;
mod ground;
mod parse;
mod prompt;

pub use adapter::{
    complete, AdapterConfig, ChatBackend, ChatResponse, LiveAdapter, MockAdapter, MockMode,
    RecordingAdapter, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL,
};
pub use ground::{ground_spans, Grounding};
pub use parse::{
    parse_extraction, parse_label_choice, parse_verification, LabelChoice, Unparseable, Verdict,
};
pub use prompt::{
    render_prompt, Bindings, ChatRequest, LlmTask, Placeholder, PromptSet, PromptTemplate,
    RequestContext, RequestOptions, TaskKind,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("template {template} uses placeholder {{{name}}} which is not bound")]
    MissingPlaceholder { template: String, name: String },
    #[error("template {template} uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("no prompt template for task {0}")]
    NoTemplate(String),
    #[error("extraction label {0} is not an unstructured label")]
    NotUnstructured(String),
    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("retry budget exhausted after {attempts} attempts: {last}")]
    BudgetExhausted { attempts: u32, last: String },
    #[error("mock fixture has no response for fingerprint {0}")]
    MockMiss(String),
    #[error("adapter configuration: {0}")]
    Config(String),
}
