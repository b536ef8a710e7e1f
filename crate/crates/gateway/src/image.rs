//! Image gateway: turns a finished image prompt into PNG files under
//! `{data_dir}/images` named `{prompt_digest}-{index}.png`.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use image::{imageops::FilterType, DynamicImage, ImageFormat, Rgb, RgbImage};
use promptcrafter_core::digest::{digest_hex, stable_digest};
use promptcrafter_core::store::write_atomic;
use promptcrafter_core::{ImageFailure, ImageRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::llm::{classify_transport, millis, with_retries, LlmError};

pub const MAX_IMAGES_PER_ANSWER: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("image prompt is empty")]
    EmptyPrompt,
    #[error("every image in the batch failed: {}", summarize(.0))]
    AllImagesFailed(Vec<ImageFailure>),
    #[error("image provider timed out")]
    Timeout,
    #[error("image provider returned {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("invalid image configuration: {0}")]
    InvalidConfig(String),
    #[error("failed to store image: {0}")]
    Io(String),
}

fn summarize(failures: &[ImageFailure]) -> String {
    failures
        .first()
        .map(|f| format!("{} failures, first: {}", failures.len(), f.message))
        .unwrap_or_else(|| "no images requested".into())
}

/// Images produced for one prompt. `refs.len() + errors.len()` equals the
/// configured count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBatch {
    pub refs: Vec<ImageRef>,
    pub errors: Vec<ImageFailure>,
}

#[async_trait]
pub trait ImageGenerator: Send + Sync {
    fn provider_id(&self) -> &str;
    /// Images per answer.
    fn count(&self) -> u32;
    async fn generate(&self, prompt: &str) -> Result<ImageBatch, ImageError>;
}

#[derive(Clone, Serialize, Deserialize)]
pub struct ImageProviderConfig {
    pub base_url: String,
    pub api_key: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_size")]
    pub size: u32,
    #[serde(default = "default_count")]
    pub count: u32,
    #[serde(with = "millis", default = "default_timeout")]
    pub timeout: Duration,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(with = "millis", default = "default_backoff")]
    pub backoff_base: Duration,
}

impl std::fmt::Debug for ImageProviderConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageProviderConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &"<redacted>")
            .field("model", &self.model)
            .field("size", &self.size)
            .field("count", &self.count)
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

fn default_size() -> u32 {
    512
}
fn default_count() -> u32 {
    6
}
fn default_timeout() -> Duration {
    Duration::from_secs(60)
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> Duration {
    Duration::from_millis(500)
}

impl Default for ImageProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key: String::new(),
            model: None,
            size: default_size(),
            count: default_count(),
            timeout: default_timeout(),
            max_retries: default_retries(),
            backoff_base: default_backoff(),
        }
    }
}

impl ImageProviderConfig {
    pub fn validate(&self) -> Result<(), ImageError> {
        if !(1..=MAX_IMAGES_PER_ANSWER).contains(&self.count) {
            return Err(ImageError::InvalidConfig(format!(
                "count must be in 1..={MAX_IMAGES_PER_ANSWER}, got {}",
                self.count
            )));
        }
        if self.size == 0 {
            return Err(ImageError::InvalidConfig("size must be positive".into()));
        }
        if self.timeout.is_zero() {
            return Err(ImageError::InvalidConfig("timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Writes square PNGs of a fixed size into the images directory.
#[derive(Debug, Clone)]
pub struct ImageSink {
    images_dir: PathBuf,
    size: u32,
}

impl ImageSink {
    pub fn new(images_dir: impl Into<PathBuf>, size: u32) -> Self {
        Self {
            images_dir: images_dir.into(),
            size,
        }
    }

    pub fn images_dir(&self) -> &Path {
        &self.images_dir
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// Normalise `img` to the configured size, encode as PNG and store it.
    pub fn store(
        &self,
        prompt: &str,
        index: u32,
        img: DynamicImage,
    ) -> Result<ImageRef, ImageError> {
        let img = if img.width() != self.size || img.height() != self.size {
            img.resize_exact(self.size, self.size, FilterType::Lanczos3)
        } else {
            img
        };
        let mut png = Vec::new();
        DynamicImage::ImageRgb8(img.to_rgb8())
            .write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
            .map_err(|e| ImageError::Io(e.to_string()))?;
        let digest = prompt_digest(prompt);
        let id = format!("{digest}-{index}");
        let file = format!("{id}.png");
        write_atomic(&self.images_dir.join(&file), &png, |_| Ok(()))
            .map_err(|e| ImageError::Io(e.to_string()))?;
        Ok(ImageRef {
            id,
            path: format!("images/{file}"),
            width: self.size,
            height: self.size,
            prompt_digest: digest,
            index,
        })
    }
}

pub fn prompt_digest(prompt: &str) -> String {
    digest_hex(stable_digest(&[prompt.as_bytes()]))
}

/// Pixel content of mock image `index` for `prompt`: an 8x8 grid of colour
/// blocks seeded by `digest(prompt ‖ index)`.
pub fn mock_image(prompt: &str, index: u32, size: u32) -> RgbImage {
    let seed = stable_digest(&[prompt.as_bytes(), index.to_string().as_bytes()]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const GRID: u32 = 8;
    let palette: Vec<[u8; 3]> = (0..GRID * GRID).map(|_| rng.gen()).collect();
    RgbImage::from_fn(size, size, |x, y| {
        let bx = (x * GRID / size).min(GRID - 1);
        let by = (y * GRID / size).min(GRID - 1);
        Rgb(palette[(by * GRID + bx) as usize])
    })
}

/// Offline generator writing seeded colour-block images.
#[derive(Debug, Clone)]
pub struct MockImageGenerator {
    sink: ImageSink,
    count: u32,
}

impl MockImageGenerator {
    pub fn new(images_dir: impl Into<PathBuf>, size: u32, count: u32) -> Result<Self, ImageError> {
        let config = ImageProviderConfig {
            size,
            count,
            ..Default::default()
        };
        config.validate()?;
        Ok(Self {
            sink: ImageSink::new(images_dir, size),
            count,
        })
    }

    pub fn generate_blocking(&self, prompt: &str) -> Result<ImageBatch, ImageError> {
        if prompt.trim().is_empty() {
            return Err(ImageError::EmptyPrompt);
        }
        let refs = (0..self.count)
            .map(|i| {
                let img = mock_image(prompt, i, self.sink.size());
                self.sink.store(prompt, i, DynamicImage::ImageRgb8(img))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ImageBatch {
            refs,
            errors: Vec::new(),
        })
    }
}

#[async_trait]
impl ImageGenerator for MockImageGenerator {
    fn provider_id(&self) -> &str {
        "mock"
    }

    fn count(&self) -> u32 {
        self.count
    }

    async fn generate(&self, prompt: &str) -> Result<ImageBatch, ImageError> {
        self.generate_blocking(prompt)
    }
}

/// Client for `POST {base_url}/images/generations`. Each image is fetched by
/// its own request (n = 1) so that failures are reported per index.
pub struct OpenAiImages {
    config: ImageProviderConfig,
    sink: ImageSink,
    http: reqwest::Client,
}

#[derive(Debug, Deserialize)]
struct ImagesResponse {
    #[serde(default)]
    data: Vec<ImageDatum>,
}

#[derive(Debug, Deserialize)]
struct ImageDatum {
    #[serde(default)]
    b64_json: Option<String>,
    #[serde(default)]
    url: Option<String>,
}

impl OpenAiImages {
    pub fn new(
        config: ImageProviderConfig,
        images_dir: impl Into<PathBuf>,
    ) -> Result<Self, ImageError> {
        config.validate()?;
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ImageError::InvalidConfig(e.to_string()))?;
        let sink = ImageSink::new(images_dir, config.size);
        Ok(Self { config, sink, http })
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        let mut body = json!({
            "prompt": prompt,
            "n": 1,
            "size": format!("{0}x{0}", self.config.size),
            "response_format": "b64_json",
        });
        if let Some(model) = &self.config.model {
            body["model"] = json!(model);
        }
        body
    }

    async fn fetch_one(&self, prompt: &str) -> Result<Vec<u8>, LlmError> {
        let url = format!(
            "{}/images/generations",
            self.config.base_url.trim_end_matches('/')
        );
        let response = self
            .http
            .post(&url)
            .bearer_auth(&self.config.api_key)
            .json(&self.request_body(prompt))
            .send()
            .await
            .map_err(classify_transport)?;
        let status = response.status();
        let text = response.text().await.map_err(classify_transport)?;
        if status.as_u16() == 429 {
            return Err(LlmError::RateLimited);
        }
        if !status.is_success() {
            return Err(LlmError::ProviderError {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: ImagesResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::ProviderError {
                status: status.as_u16(),
                body: format!("unreadable body: {e}"),
            })?;
        let datum = parsed
            .data
            .into_iter()
            .next()
            .ok_or(LlmError::EmptyCompletion)?;
        if let Some(b64) = datum.b64_json {
            return base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| LlmError::ProviderError {
                    status: status.as_u16(),
                    body: e.to_string(),
                });
        }
        let url = datum.url.ok_or(LlmError::EmptyCompletion)?;
        let bytes = self
            .http
            .get(url)
            .send()
            .await
            .map_err(classify_transport)?
            .bytes()
            .await
            .map_err(classify_transport)?;
        Ok(bytes.to_vec())
    }

    async fn one_image(&self, prompt: &str, index: u32) -> Result<ImageRef, LlmError> {
        let (bytes, _) = with_retries(
            self.config.max_retries,
            self.config.backoff_base,
            LlmError::is_retryable,
            || self.fetch_one(prompt),
        )
        .await;
        let img = image::load_from_memory(&bytes?)
            .map_err(|e| LlmError::Transport(format!("undecodable image: {e}")))?;
        self.sink
            .store(prompt, index, img)
            .map_err(|e| LlmError::Transport(e.to_string()))
    }
}

#[async_trait]
impl ImageGenerator for OpenAiImages {
    fn provider_id(&self) -> &str {
        "openai-compatible"
    }

    fn count(&self) -> u32 {
        self.config.count
    }

    async fn generate(&self, prompt: &str) -> Result<ImageBatch, ImageError> {
        if prompt.trim().is_empty() {
            return Err(ImageError::EmptyPrompt);
        }
        let outcomes =
            futures::future::join_all((0..self.config.count).map(|i| self.one_image(prompt, i)))
                .await;
        collect_batch(outcomes)
    }
}

/// Split per-index outcomes into refs and failures; at least one image must
/// have succeeded.
fn collect_batch(outcomes: Vec<Result<ImageRef, LlmError>>) -> Result<ImageBatch, ImageError> {
    let mut refs = Vec::new();
    let mut errors = Vec::new();
    let mut causes = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => refs.push(r),
            Err(e) => {
                errors.push(ImageFailure {
                    index: i as u32,
                    message: e.to_string(),
                });
                causes.push(e);
            }
        }
    }
    if !refs.is_empty() {
        return Ok(ImageBatch { refs, errors });
    }
    if !causes.is_empty() && causes.iter().all(|c| *c == LlmError::Timeout) {
        return Err(ImageError::Timeout);
    }
    if let Some(LlmError::ProviderError { status, body }) = causes.first() {
        if causes
            .iter()
            .all(|c| matches!(c, LlmError::ProviderError { status: s, .. } if s == status))
        {
            return Err(ImageError::ProviderError {
                status: *status,
                body: body.clone(),
            });
        }
    }
    Err(ImageError::AllImagesFailed(errors))
}
