//! Core model for step-by-step text-to-image prompt crafting.
//!
//! - [`session`]: the pure state machine over sessions, steps, question/answer
//!   history, confirmation and branching revert.
//! - [`prompt`]: deterministic rendering of language-model requests and
//!   parsing of numbered-list replies.
//! - [`store`]: JSON persistence of sessions and the append-only event log.

pub mod digest;
pub mod prompt;
pub mod session;
pub mod store;

pub use digest::stable_digest;
pub use prompt::{
    fallback_image_prompt, parse_numbered_list, Decoding, HistoryContext, LlmRequest, ParseError,
    PromptConstructor, RequestKind,
};
pub use session::{
    AnswerBatch, GenerationResult, ImageFailure, ImageRef, InvariantViolation, PromptSource,
    Provenance, QaPair, QuestionBatch, QuestionSource, SelectedQuestion, Session, SessionError,
    SessionId, StepId, StepNode, StepStatus, BATCH_SIZE, MAX_SELECTED_ANSWERS, SCHEMA_VERSION,
};
pub use store::{EventAction, EventRecord, SessionStore, StoreError};
