//! Provider gateways for the language model and the image model.
//!
//! Both speak the OpenAI-compatible HTTP shapes and both have deterministic
//! offline mocks, selected together by the server's mock flag.

pub mod image;
pub mod llm;
pub mod mock_llm;

pub use image::{
    ImageBatch, ImageError, ImageGenerator, ImageProviderConfig, ImageSink, MockImageGenerator,
    OpenAiImages,
};
pub use llm::{CompletionOutcome, LanguageModel, LlmError, OpenAiChat, ProviderConfig};
pub use mock_llm::{mock_complete, mock_seed, MockLanguageModel};
