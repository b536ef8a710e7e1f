#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use promptcrafter_core::{LlmRequest, PromptConstructor, RequestKind, SessionStore};
use promptcrafter_gateway::{
    CompletionOutcome, ImageBatch, ImageError, ImageGenerator, LanguageModel, LlmError,
    MockImageGenerator, MockLanguageModel,
};
use promptcrafter_server::{build_app, Service};
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

/// Send one request through `app`; returns status, content type and body.
pub async fn send(
    app: Router,
    method: Method,
    uri: String,
    body: Option<Value>,
) -> (StatusCode, String, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, content_type, bytes)
}

pub struct TestApp {
    pub dir: TempDir,
    pub service: Arc<Service>,
    pub app: Router,
}

impl TestApp {
    pub fn mock() -> Self {
        Self::mock_sized(512)
    }

    pub fn mock_sized(size: u32) -> Self {
        Self::build(|dir| {
            (
                Arc::new(MockLanguageModel::default()),
                Arc::new(MockImageGenerator::new(dir.join("images"), size, 6).unwrap()),
            )
        })
    }

    pub fn build(
        providers: impl FnOnce(&std::path::Path) -> (Arc<dyn LanguageModel>, Arc<dyn ImageGenerator>),
    ) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let (llm, images) = providers(dir.path());
        let service = Arc::new(Service::new(
            store,
            llm,
            images,
            PromptConstructor::default(),
        ));
        let app = build_app(service.clone());
        Self { dir, service, app }
    }

    pub async fn raw(
        &self,
        method: Method,
        uri: &str,
        body: Option<Value>,
    ) -> (StatusCode, String, Vec<u8>) {
        send(self.app.clone(), method, uri.to_string(), body).await
    }

    pub async fn call(
        &self,
        method: Method,
        uri: &str,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let (status, _, bytes) = self.raw(method, uri, body).await;
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        (status, value)
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(body)).await
    }

    pub async fn post_empty(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::POST, uri, None).await
    }

    pub async fn put(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::PUT, uri, Some(body)).await
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    pub async fn create(&self, prompt: &str) -> String {
        let (status, body) = self
            .post(
                "/api/sessions",
                serde_json::json!({"initial_prompt": prompt}),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }

    /// Poll a job until it reaches a terminal state.
    pub async fn wait_job(&self, job_id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            let (status, job) = self.get(&format!("/api/jobs/{job_id}")).await;
            assert_eq!(status, StatusCode::OK, "{job}");
            if matches!(job["state"].as_str(), Some("done" | "failed")) {
                return job;
            }
            assert!(
                Instant::now() < deadline,
                "job {job_id} did not finish: {job}"
            );
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    /// Questions, first question, proposals, the given answer picks,
    /// generation. Returns the finished job.
    pub async fn run_step(&self, sid: &str, picks: &[usize]) -> Value {
        let base = format!("/api/sessions/{sid}/steps/current");
        let (s, questions) = self.post_empty(&format!("{base}/questions")).await;
        assert_eq!(s, StatusCode::OK, "{questions}");
        let q = questions["questions"][0].clone();
        let (s, body) = self
            .put(
                &format!("{base}/question"),
                serde_json::json!({"text": q, "source": "model"}),
            )
            .await;
        assert_eq!(s, StatusCode::OK, "{body}");
        let (s, proposals) = self.post_empty(&format!("{base}/answers/proposals")).await;
        assert_eq!(s, StatusCode::OK, "{proposals}");
        let answers: Vec<Value> = picks
            .iter()
            .map(|i| proposals["answers"][*i].clone())
            .collect();
        let (s, body) = self
            .put(
                &format!("{base}/answers"),
                serde_json::json!({"answers": answers}),
            )
            .await;
        assert_eq!(s, StatusCode::OK, "{body}");
        let (s, accepted) = self.post_empty(&format!("{base}/generate")).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{accepted}");
        self.wait_job(accepted["job_id"].as_str().unwrap()).await
    }

    pub fn session_bytes(&self, sid: &str) -> Vec<u8> {
        self.service
            .store()
            .read_raw(&promptcrafter_core::SessionId(sid.to_string()))
            .unwrap()
    }

    pub fn event_count(&self, sid: &str) -> usize {
        self.service
            .store()
            .read_events(&promptcrafter_core::SessionId(sid.to_string()))
            .unwrap()
            .len()
    }

    /// Names of files in the sessions directory that are not session documents.
    pub fn stray_files(&self) -> BTreeSet<String> {
        std::fs::read_dir(self.service.store().sessions_dir())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| !n.ends_with(".json"))
            .collect()
    }
}

/// Wraps the mock model and fails chosen calls.
pub struct FaultyLlm {
    inner: MockLanguageModel,
    calls: AtomicUsize,
    fail_calls: BTreeSet<usize>,
    fail_kinds: Vec<RequestKind>,
    fail_context: Mutex<Option<String>>,
    short_reply: bool,
}

impl FaultyLlm {
    /// Fail the given 1-based call numbers with a 503.
    pub fn on_calls(calls: impl IntoIterator<Item = usize>) -> Self {
        Self {
            inner: MockLanguageModel::default(),
            calls: AtomicUsize::new(0),
            fail_calls: calls.into_iter().collect(),
            fail_kinds: Vec::new(),
            fail_context: Mutex::new(None),
            short_reply: false,
        }
    }

    /// Fail every request of these kinds.
    pub fn on_kinds(kinds: &[RequestKind]) -> Self {
        Self {
            fail_kinds: kinds.to_vec(),
            ..Self::on_calls([])
        }
    }

    /// Fail image-prompt requests whose context mentions `needle`.
    pub fn on_context(needle: &str) -> Self {
        let me = Self::on_calls([]);
        *me.fail_context.lock().unwrap() = Some(needle.to_string());
        me
    }

    /// Reply to failing calls with a single item instead of an error.
    pub fn short(mut self) -> Self {
        self.short_reply = true;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl LanguageModel for FaultyLlm {
    fn provider_id(&self) -> &str {
        "faulty"
    }

    fn model(&self) -> &str {
        "faulty-mock"
    }

    async fn complete(&self, request: &LlmRequest) -> Result<CompletionOutcome, LlmError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let by_context = request.kind == RequestKind::ImagePrompt
            && self
                .fail_context
                .lock()
                .unwrap()
                .as_deref()
                .is_some_and(|needle| request.context.contains(&format!("A: {needle}\n")));
        if self.fail_calls.contains(&n) || self.fail_kinds.contains(&request.kind) || by_context {
            if self.short_reply {
                return Ok(CompletionOutcome {
                    text: "1. only one".into(),
                    provider_request_id: format!("short-{n}"),
                    latency: Duration::ZERO,
                    attempts: 1,
                });
            }
            return Err(LlmError::ProviderError {
                status: 503,
                body: format!("injected fault on call {n}"),
            });
        }
        self.inner.complete(request).await
    }
}

/// Image provider that always fails.
pub struct BrokenImages;

#[async_trait]
impl ImageGenerator for BrokenImages {
    fn provider_id(&self) -> &str {
        "broken"
    }

    fn count(&self) -> u32 {
        6
    }

    async fn generate(&self, _prompt: &str) -> Result<ImageBatch, ImageError> {
        Err(ImageError::ProviderError {
            status: 500,
            body: "injected".into(),
        })
    }
}
