//! HTTP service driving the question/answer crafting loop.
//!
//! [`Service`] owns the orchestration and is usable without HTTP;
//! [`routes::router`] exposes it as a JSON API.

pub mod config;
pub mod error;
pub mod jobs;
pub mod routes;
pub mod service;
pub mod views;

use std::sync::Arc;

use promptcrafter_core::{PromptConstructor, SessionStore};
use promptcrafter_gateway::{
    ImageGenerator, LanguageModel, MockImageGenerator, MockLanguageModel, OpenAiChat, OpenAiImages,
};

pub use config::{Args, Providers, Settings};
pub use error::ServiceError;
pub use jobs::{AnswerProgress, Job, JobState};
pub use service::Service;

/// Build the service for `settings`, creating the data directory if needed.
pub fn build_service(settings: &Settings) -> anyhow::Result<Arc<Service>> {
    let store = SessionStore::open(&settings.data_dir)?;
    let images_dir = store.images_dir();
    let (llm, images): (Arc<dyn LanguageModel>, Arc<dyn ImageGenerator>) = match &settings.providers
    {
        Providers::Mock { size, count } => (
            Arc::new(MockLanguageModel::default()),
            Arc::new(MockImageGenerator::new(images_dir, *size, *count)?),
        ),
        Providers::Remote { llm, image } => (
            Arc::new(OpenAiChat::new(llm.clone())?),
            Arc::new(OpenAiImages::new(image.clone(), images_dir)?),
        ),
    };
    Ok(Arc::new(Service::new(
        store,
        llm,
        images,
        PromptConstructor::default(),
    )))
}

pub fn build_app(service: Arc<Service>) -> axum::Router {
    routes::router(service)
}
