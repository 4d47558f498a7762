//! Structured extraction of lung-cancer findings from free-text CT reports
//! with a chat language model.
//!
//! The pipeline renders a form-filling prompt per report ([`prompting`]),
//! sends it as a fresh single-message dialogue ([`llm_client`]), recovers the
//! filled form from the reply ([`form_parser`]), normalizes the answers with
//! keyword rules ([`normalize`]) and scores the results against gold labels
//! ([`eval`]). [`synthcorpus`] supplies seeded synthetic reports and a
//! scripted oracle backend for end-to-end checks without clinical data.

pub mod corpus;
pub mod eval;
pub mod form_parser;
pub mod llm_client;
pub mod normalize;
pub mod pipeline;
pub mod prompting;
pub mod schema;
pub mod synthcorpus;

pub use corpus::CorpusEntry;
pub use eval::{ConsistencyReport, MetricsReport, MetricsRow, Scores};
pub use form_parser::{FilledForm, FormParser, RawAnswer};
pub use llm_client::{BackendConfig, BackendMode, Exchange, LlmClient};
pub use normalize::{DensityPriority, Normalizer};
pub use pipeline::Pipeline;
pub use prompting::{BuiltinTemplate, PromptTemplate, PromptText};
pub use schema::{
    AnswerKind, Findings, GoldLabel, LocationCategory, QuestionId, QuestionSpec, Report,
    StructuredRecord, WarningCode,
};
