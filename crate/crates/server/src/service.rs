//! Orchestration of the crafting loop.
//!
//! Every mutation of a session runs under that session's exclusive guard:
//! load, compute the next state with the pure state machine (calling
//! providers where needed), then save and log. Nothing is written unless the
//! whole request succeeds, so a failed provider call leaves the stored
//! document untouched.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use promptcrafter_core::{
    fallback_image_prompt, parse_numbered_list, AnswerBatch, EventAction, EventRecord,
    GenerationResult, HistoryContext, LlmRequest, PromptConstructor, PromptSource, Provenance,
    QaPair, QuestionBatch, QuestionSource, Session, SessionError, SessionId, SessionStore, StepId,
    BATCH_SIZE,
};
use promptcrafter_gateway::{ImageGenerator, LanguageModel};
use serde_json::json;
use tokio::sync::{Mutex as AsyncMutex, OwnedMutexGuard};
use tracing::{info, warn};

use crate::error::ServiceError;
use crate::jobs::{AnswerProgress, Job, JobRegistry, JobState};

pub type Result<T> = std::result::Result<T, ServiceError>;

pub struct Service {
    store: SessionStore,
    llm: Arc<dyn LanguageModel>,
    images: Arc<dyn ImageGenerator>,
    prompts: PromptConstructor,
    guards: Mutex<HashMap<SessionId, Arc<AsyncMutex<()>>>>,
    jobs: JobRegistry,
}

impl Service {
    pub fn new(
        store: SessionStore,
        llm: Arc<dyn LanguageModel>,
        images: Arc<dyn ImageGenerator>,
        prompts: PromptConstructor,
    ) -> Self {
        Self {
            store,
            llm,
            images,
            prompts,
            guards: Mutex::new(HashMap::new()),
            jobs: JobRegistry::default(),
        }
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    async fn lock(&self, id: &SessionId) -> OwnedMutexGuard<()> {
        let guard = {
            let mut guards = self.guards.lock().expect("guard table poisoned");
            guards.entry(id.clone()).or_default().clone()
        };
        guard.lock_owned().await
    }

    fn commit(
        &self,
        next: &Session,
        action: EventAction,
        payload: serde_json::Value,
    ) -> Result<()> {
        self.store.save(next)?;
        self.log(&next.id, action, payload)
    }

    fn log(&self, id: &SessionId, action: EventAction, payload: serde_json::Value) -> Result<()> {
        self.store
            .append_event(&EventRecord::now(id.clone(), action, payload))
            .map_err(ServiceError::Store)
    }

    fn history_context(session: &Session) -> HistoryContext {
        HistoryContext::new(
            session.initial_prompt.clone(),
            session
                .qa_history(session.active_step_id)
                .expect("active step exists"),
        )
    }

    fn provenance(&self, request_id: String) -> Provenance {
        Provenance {
            provider: self.llm.provider_id().to_string(),
            model: self.llm.model().to_string(),
            request_id,
        }
    }

    /// Complete `request` and parse its list, asking once more if the model
    /// under-delivers.
    async fn complete_list(&self, request: &LlmRequest) -> Result<(Vec<String>, String)> {
        let mut last_shortage = None;
        for _ in 0..2 {
            let outcome = self
                .llm
                .complete(request)
                .await
                .map_err(|e| ServiceError::Provider(e.to_string()))?;
            match parse_numbered_list(&outcome.text, request.expected_items) {
                Ok(items) => return Ok((items, outcome.provider_request_id)),
                Err(e) => {
                    warn!(error = %e, "model under-delivered list items");
                    last_shortage = Some(e);
                }
            }
        }
        Err(ServiceError::NotEnoughItems(
            last_shortage.map(|e| e.to_string()).unwrap_or_default(),
        ))
    }

    pub fn get_session(&self, id: &SessionId) -> Result<Session> {
        Ok(self.store.load(id)?)
    }

    pub fn create_session(&self, initial_prompt: &str) -> Result<Session> {
        let session = Session::create(initial_prompt)?;
        self.commit(
            &session,
            EventAction::SessionCreated,
            json!({"initial_prompt": session.initial_prompt, "step_id": session.active_step_id}),
        )?;
        info!(session = %session.id, "session created");
        Ok(session)
    }

    /// Ask the model for another batch of clarifying questions for the
    /// active step, excluding every question already shown there.
    pub async fn request_questions(&self, id: &SessionId) -> Result<QuestionBatch> {
        let _guard = self.lock(id).await;
        let session = self.store.load(id)?;
        let step = session.active_step();
        let request = self.prompts.render_question_request(
            &Self::history_context(&session),
            &step.shown_questions(),
            BATCH_SIZE,
        );
        let (questions, request_id) = self.complete_list(&request).await?;
        let batch = QuestionBatch {
            ordinal: step.question_batches.len() as u32 + 1,
            questions,
            provenance: self.provenance(request_id),
        };
        let next = session.append_question_batch(step.id, batch.clone())?;
        self.commit(
            &next,
            EventAction::QuestionsRequested,
            json!({"step_id": step.id, "batch": batch}),
        )?;
        Ok(batch)
    }

    pub async fn select_question(
        &self,
        id: &SessionId,
        text: &str,
        source: QuestionSource,
    ) -> Result<Session> {
        let _guard = self.lock(id).await;
        let session = self.store.load(id)?;
        let step_id = session.active_step_id;
        let next = session.select_question(step_id, text, source)?;
        let selected = next.active_step().selected_question.clone();
        self.commit(
            &next,
            EventAction::QuestionSelected,
            json!({"step_id": step_id, "question": selected}),
        )?;
        Ok(next)
    }

    pub async fn request_answers(&self, id: &SessionId) -> Result<AnswerBatch> {
        let _guard = self.lock(id).await;
        let session = self.store.load(id)?;
        let step = session.active_step();
        let question = step
            .selected_question
            .as_ref()
            .ok_or(SessionError::NoQuestionSelected)?
            .text
            .clone();
        let request = self.prompts.render_answer_request(
            &Self::history_context(&session),
            &question,
            &step.shown_answers(),
            BATCH_SIZE,
        );
        let (answers, request_id) = self.complete_list(&request).await?;
        let batch = AnswerBatch {
            ordinal: step.answer_batches.len() as u32 + 1,
            answers,
            for_question: question,
            provenance: self.provenance(request_id),
        };
        let next = session.append_answer_batch(step.id, batch.clone())?;
        self.commit(
            &next,
            EventAction::AnswersRequested,
            json!({"step_id": step.id, "batch": batch}),
        )?;
        Ok(batch)
    }

    pub async fn set_answers(&self, id: &SessionId, answers: &[String]) -> Result<Session> {
        if answers.is_empty() {
            return Err(ServiceError::Validation(
                "select between one and four answers".into(),
            ));
        }
        let _guard = self.lock(id).await;
        let session = self.store.load(id)?;
        let step_id = session.active_step_id;
        let next = session.set_selected_answers(step_id, answers)?;
        self.commit(
            &next,
            EventAction::AnswersSelected,
            json!({"step_id": step_id, "answers": next.active_step().selected_answers}),
        )?;
        Ok(next)
    }

    pub async fn confirm(&self, id: &SessionId, answer: &str) -> Result<Session> {
        let _guard = self.lock(id).await;
        let session = self.store.load(id)?;
        let step_id = session.active_step_id;
        let next = session.confirm_step(step_id, answer.trim())?;
        self.commit(
            &next,
            EventAction::StepConfirmed,
            json!({"step_id": step_id, "answer": answer.trim(), "new_step_id": next.active_step_id}),
        )?;
        Ok(next)
    }

    pub async fn revert(&self, id: &SessionId, step_id: StepId) -> Result<Session> {
        let _guard = self.lock(id).await;
        let session = self.store.load(id)?;
        let next = session.revert_to(step_id)?;
        self.commit(
            &next,
            EventAction::Reverted,
            json!({"step_id": step_id, "new_step_id": next.active_step_id}),
        )?;
        Ok(next)
    }

    pub fn job(&self, job_id: &str) -> Result<Job> {
        self.jobs
            .get(job_id)
            .ok_or_else(|| ServiceError::UnknownJob(job_id.to_string()))
    }

    /// Resolve an image id to its file, rejecting anything that is not a
    /// plain `{digest}-{index}` name.
    pub fn image_path(&self, image_id: &str) -> Result<PathBuf> {
        let well_formed = !image_id.is_empty()
            && image_id.len() <= 64
            && image_id
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-');
        let path = self.store.images_dir().join(format!("{image_id}.png"));
        if well_formed && path.is_file() {
            Ok(path)
        } else {
            Err(ServiceError::UnknownImage(image_id.to_string()))
        }
    }

    /// Start generating images for every selected answer of the active step.
    /// Progress is reported through the returned job.
    pub async fn start_generation(self: &Arc<Self>, id: &SessionId) -> Result<Job> {
        let _guard = self.lock(id).await;
        let session = self.store.load(id)?;
        let step = session.active_step();
        if step.selected_answers.is_empty() {
            return Err(SessionError::NoAnswersSelected.into());
        }
        let question = step
            .selected_question
            .clone()
            .ok_or(SessionError::NoQuestionSelected)?
            .text;
        let job = self
            .jobs
            .create(id.clone(), step.id, &step.selected_answers);
        self.log(
            id,
            EventAction::GenerationStarted,
            json!({"job_id": job.id, "step_id": step.id, "answers": step.selected_answers}),
        )?;
        let ctx = Self::history_context(&session);
        let answers = step.selected_answers.clone();
        let service = Arc::clone(self);
        let job_id = job.id.clone();
        let session_id = id.clone();
        let step_id = step.id;
        tokio::spawn(async move {
            service
                .run_generation(job_id, session_id, step_id, ctx, question, answers)
                .await;
        });
        Ok(job)
    }

    async fn run_generation(
        self: Arc<Self>,
        job_id: String,
        session_id: SessionId,
        step_id: StepId,
        ctx: HistoryContext,
        question: String,
        answers: Vec<String>,
    ) {
        self.jobs.advance(&job_id, JobState::Running);
        let work = answers.iter().enumerate().map(|(index, answer)| {
            let service = Arc::clone(&self);
            let (job_id, session_id, ctx, question) = (
                job_id.clone(),
                session_id.clone(),
                ctx.clone(),
                question.clone(),
            );
            async move {
                let progress = match service
                    .generate_for_answer(
                        &job_id,
                        index,
                        &session_id,
                        step_id,
                        &ctx,
                        &question,
                        answer,
                    )
                    .await
                {
                    Ok(()) => AnswerProgress::Done,
                    Err(message) => {
                        warn!(job = %job_id, answer = %answer, %message, "generation failed");
                        AnswerProgress::Failed { message }
                    }
                };
                service.jobs.set_progress(&job_id, index, progress);
            }
        });
        futures::future::join_all(work).await;
        info!(job = %job_id, state = ?self.jobs.get(&job_id).map(|j| j.state), "generation finished");
    }

    #[allow(clippy::too_many_arguments)]
    async fn generate_for_answer(
        &self,
        job_id: &str,
        index: usize,
        session_id: &SessionId,
        step_id: StepId,
        ctx: &HistoryContext,
        question: &str,
        answer: &str,
    ) -> std::result::Result<(), String> {
        self.jobs
            .set_progress(job_id, index, AnswerProgress::Prompting);
        let pair = QaPair::new(question, answer).ok_or("empty question or answer")?;
        let request = self.prompts.render_image_prompt_request(ctx, &pair);
        let model_prompt = match self.llm.complete(&request).await {
            Ok(outcome) => parse_numbered_list(&outcome.text, 1)
                .ok()
                .and_then(|items| items.into_iter().next()),
            Err(e) => {
                warn!(error = %e, "image prompt synthesis failed, using fallback");
                None
            }
        };
        let (image_prompt, prompt_source) = match model_prompt {
            Some(p) => (p, PromptSource::Model),
            None => (fallback_image_prompt(ctx, &pair), PromptSource::Fallback),
        };

        self.jobs
            .set_progress(job_id, index, AnswerProgress::Imaging);
        let batch = self
            .images
            .generate(&image_prompt)
            .await
            .map_err(|e| e.to_string())?;
        let result = GenerationResult {
            answer: answer.to_string(),
            image_prompt,
            prompt_source,
            image_refs: batch.refs,
            errors: batch.errors,
        };

        let _guard = self.lock(session_id).await;
        let session = self.store.load(session_id).map_err(|e| e.to_string())?;
        if session.active_step_id != step_id {
            return Err("step is no longer active".into());
        }
        let next = session
            .attach_generation(step_id, answer, result.clone())
            .map_err(|e| e.to_string())?;
        self.commit(
            &next,
            EventAction::GenerationFinished,
            json!({"job_id": job_id, "step_id": step_id, "answer": answer, "result": result}),
        )
        .map_err(|e| e.to_string())
    }
}
