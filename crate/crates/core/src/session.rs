//! Session state machine.
//!
//! A [`Session`] holds the initial prompt and a tree of [`StepNode`]s. Each
//! step is one question/answer cycle: question batches are proposed, one
//! question is selected, answer batches are proposed, up to four answers are
//! selected, images are generated per answer, and finally one answer is
//! confirmed. Confirming freezes the step and opens a child step. Reverting to
//! a confirmed step clones it into a new open sibling so earlier work is never
//! touched.
//!
//! Every operation takes `&self` and returns a new `Session` or a
//! [`SessionError`]; the input is never partially modified.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current on-disk schema version of a session document.
pub const SCHEMA_VERSION: u32 = 1;
/// Number of items in every question or answer batch.
pub const BATCH_SIZE: usize = 4;
/// Upper bound on answers selected at one step.
pub const MAX_SELECTED_ANSWERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn new_random() -> Self {
        Self(uuid::Uuid::new_v4().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Step identifiers are assigned sequentially from 1 within a session, so the
/// same sequence of operations always produces the same ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepId(pub u32);

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Open,
    Confirmed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionSource {
    Model,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    Model,
    Fallback,
}

/// Where a batch of model output came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider: String,
    pub model: String,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionBatch {
    pub ordinal: u32,
    pub questions: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerBatch {
    pub ordinal: u32,
    pub answers: Vec<String>,
    pub for_question: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedQuestion {
    pub text: String,
    pub source: QuestionSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

impl QaPair {
    /// Both halves must be nonempty after trimming.
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Option<Self> {
        let question = question.into();
        let answer = answer.into();
        if question.trim().is_empty() || answer.trim().is_empty() {
            return None;
        }
        Some(Self { question, answer })
    }
}

/// Reference to one generated image stored under the data directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    /// Path relative to the data directory, e.g. `images/<id>.png`.
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub prompt_digest: String,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub index: u32,
    pub message: String,
}

/// Outcome of generating images for one candidate answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub answer: String,
    pub image_prompt: String,
    pub prompt_source: PromptSource,
    pub image_refs: Vec<ImageRef>,
    pub errors: Vec<ImageFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepNode {
    pub id: StepId,
    pub parent_id: Option<StepId>,
    pub question_batches: Vec<QuestionBatch>,
    pub selected_question: Option<SelectedQuestion>,
    pub answer_batches: Vec<AnswerBatch>,
    pub selected_answers: Vec<String>,
    /// Keyed by index into `selected_answers`.
    pub generations: BTreeMap<usize, GenerationResult>,
    pub status: StepStatus,
    pub confirmed_answer: Option<String>,
}

impl StepNode {
    fn empty(id: StepId, parent_id: Option<StepId>) -> Self {
        Self {
            id,
            parent_id,
            question_batches: Vec::new(),
            selected_question: None,
            answer_batches: Vec::new(),
            selected_answers: Vec::new(),
            generations: BTreeMap::new(),
            status: StepStatus::Open,
            confirmed_answer: None,
        }
    }

    pub fn is_open(&self) -> bool {
        self.status == StepStatus::Open
    }

    pub fn is_confirmed(&self) -> bool {
        self.status == StepStatus::Confirmed
    }

    /// All questions shown at this step, across batches, in display order.
    pub fn shown_questions(&self) -> Vec<String> {
        self.question_batches
            .iter()
            .flat_map(|b| b.questions.iter().cloned())
            .collect()
    }

    /// All proposed answers for the current question, across batches.
    pub fn shown_answers(&self) -> Vec<String> {
        self.answer_batches
            .iter()
            .flat_map(|b| b.answers.iter().cloned())
            .collect()
    }

    pub fn answer_index(&self, answer: &str) -> Option<usize> {
        self.selected_answers.iter().position(|a| a == answer)
    }

    pub fn generation_for(&self, answer: &str) -> Option<&GenerationResult> {
        self.answer_index(answer)
            .and_then(|i| self.generations.get(&i))
    }

    /// The confirmed question/answer pair, if this step is confirmed.
    pub fn confirmed_pair(&self) -> Option<QaPair> {
        match (&self.selected_question, &self.confirmed_answer, self.status) {
            (Some(q), Some(a), StepStatus::Confirmed) => Some(QaPair {
                question: q.text.clone(),
                answer: a.clone(),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("initial prompt is empty")]
    EmptyPrompt,
    #[error("unknown step {0}")]
    UnknownStep(StepId),
    #[error("step {0} is not open")]
    StepNotOpen(StepId),
    #[error("batch must hold exactly {expected} items, got {got}")]
    BadBatchSize { expected: usize, got: usize },
    #[error("batch ordinal must be {expected}, got {got}")]
    BadOrdinal { expected: u32, got: u32 },
    #[error("batch contains an empty item")]
    EmptyBatchItem,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("question {0:?} was not proposed at this step")]
    UnknownQuestion(String),
    #[error("no question selected")]
    NoQuestionSelected,
    #[error("answer batch is for {got:?} but the selected question is {expected:?}")]
    QuestionMismatch { expected: String, got: String },
    #[error("no answers selected")]
    NoAnswersSelected,
    #[error("at most {max} answers may be selected, got {got}")]
    TooManyAnswers { max: usize, got: usize },
    #[error("duplicate answer {0:?}")]
    DuplicateAnswer(String),
    #[error("answer is empty")]
    EmptyAnswer,
    #[error("answer {0:?} is not selected")]
    AnswerNotSelected(String),
    #[error("generation result is for {got:?}, expected {expected:?}")]
    ResultAnswerMismatch { expected: String, got: String },
    #[error("generation result holds no images")]
    EmptyResult,
    #[error("answer {0:?} has no generated images")]
    NoGenerationForAnswer(String),
    #[error("step {0} is open and cannot be reverted to")]
    CannotRevertOpenStep(StepId),
}

/// A broken structural invariant, reported by [`Session::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invariant violated: {0}")]
pub struct InvariantViolation(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub schema_version: u32,
    pub id: SessionId,
    pub initial_prompt: String,
    pub created_at: DateTime<Utc>,
    pub active_step_id: StepId,
    /// Ordered by id; `steps[i].id == i + 1`.
    pub steps: Vec<StepNode>,
}

impl Session {
    /// Start a session with a fresh random id and the current time.
    pub fn create(initial_prompt: &str) -> Result<Self, SessionError> {
        Self::create_with(SessionId::new_random(), Utc::now(), initial_prompt)
    }

    pub fn create_with(
        id: SessionId,
        created_at: DateTime<Utc>,
        initial_prompt: &str,
    ) -> Result<Self, SessionError> {
        let prompt = initial_prompt.trim();
        if prompt.is_empty() {
            return Err(SessionError::EmptyPrompt);
        }
        let root = StepId(1);
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            id,
            initial_prompt: prompt.to_string(),
            created_at,
            active_step_id: root,
            steps: vec![StepNode::empty(root, None)],
        })
    }

    pub fn step(&self, id: StepId) -> Option<&StepNode> {
        let idx = (id.0 as usize).checked_sub(1)?;
        self.steps.get(idx).filter(|s| s.id == id)
    }

    fn step_mut(&mut self, id: StepId) -> Option<&mut StepNode> {
        let idx = (id.0 as usize).checked_sub(1)?;
        self.steps.get_mut(idx).filter(|s| s.id == id)
    }

    pub fn active_step(&self) -> &StepNode {
        self.step(self.active_step_id)
            .expect("active step id always refers to an existing step")
    }

    fn next_step_id(&self) -> StepId {
        StepId(self.steps.len() as u32 + 1)
    }

    /// An open step that is no longer the active one: left behind by a revert.
    pub fn is_abandoned(&self, id: StepId) -> bool {
        self.step(id)
            .map(|s| s.is_open() && id != self.active_step_id)
            .unwrap_or(false)
    }

    /// Step ids from the root down to `id`, inclusive.
    pub fn path_to(&self, id: StepId) -> Result<Vec<StepId>, SessionError> {
        let mut path = Vec::new();
        let mut cursor = Some(id);
        while let Some(current) = cursor {
            let step = self
                .step(current)
                .ok_or(SessionError::UnknownStep(current))?;
            path.push(current);
            cursor = step.parent_id;
            if path.len() > self.steps.len() {
                break;
            }
        }
        path.reverse();
        Ok(path)
    }

    pub fn active_path(&self) -> Vec<StepId> {
        self.path_to(self.active_step_id)
            .expect("active step id always refers to an existing step")
    }

    pub fn children_of(&self, parent: Option<StepId>) -> Vec<StepId> {
        self.steps
            .iter()
            .filter(|s| s.parent_id == parent)
            .map(|s| s.id)
            .collect()
    }

    pub fn confirmed_count(&self) -> usize {
        self.steps.iter().filter(|s| s.is_confirmed()).count()
    }

    /// Confirmed question/answer pairs on the root-to-`step_id` path, in order.
    /// The step itself contributes only when it is confirmed.
    pub fn qa_history(&self, step_id: StepId) -> Result<Vec<QaPair>, SessionError> {
        Ok(self
            .path_to(step_id)?
            .into_iter()
            .filter_map(|id| self.step(id).and_then(StepNode::confirmed_pair))
            .collect())
    }

    /// Clone, check that `step_id` may be edited, then apply `f` to the clone.
    fn edit_open<F>(&self, step_id: StepId, f: F) -> Result<Session, SessionError>
    where
        F: FnOnce(&mut StepNode) -> Result<(), SessionError>,
    {
        let step = self
            .step(step_id)
            .ok_or(SessionError::UnknownStep(step_id))?;
        if !step.is_open() || step_id != self.active_step_id {
            return Err(SessionError::StepNotOpen(step_id));
        }
        let mut next = self.clone();
        let node = next.step_mut(step_id).expect("checked above");
        f(node)?;
        Ok(next)
    }

    pub fn append_question_batch(
        &self,
        step_id: StepId,
        batch: QuestionBatch,
    ) -> Result<Session, SessionError> {
        self.edit_open(step_id, |step| {
            check_batch(&batch.questions)?;
            let expected = step.question_batches.len() as u32 + 1;
            if batch.ordinal != expected {
                return Err(SessionError::BadOrdinal {
                    expected,
                    got: batch.ordinal,
                });
            }
            step.question_batches.push(batch);
            Ok(())
        })
    }

    pub fn select_question(
        &self,
        step_id: StepId,
        question: &str,
        source: QuestionSource,
    ) -> Result<Session, SessionError> {
        self.edit_open(step_id, |step| {
            let text = question.trim();
            if text.is_empty() {
                return Err(SessionError::EmptyQuestion);
            }
            if source == QuestionSource::Model
                && !step
                    .question_batches
                    .iter()
                    .any(|b| b.questions.iter().any(|q| q == text))
            {
                return Err(SessionError::UnknownQuestion(text.to_string()));
            }
            step.selected_question = Some(SelectedQuestion {
                text: text.to_string(),
                source,
            });
            step.answer_batches.clear();
            step.selected_answers.clear();
            step.generations.clear();
            Ok(())
        })
    }

    pub fn append_answer_batch(
        &self,
        step_id: StepId,
        batch: AnswerBatch,
    ) -> Result<Session, SessionError> {
        self.edit_open(step_id, |step| {
            let selected = step
                .selected_question
                .as_ref()
                .ok_or(SessionError::NoQuestionSelected)?;
            if batch.for_question != selected.text {
                return Err(SessionError::QuestionMismatch {
                    expected: selected.text.clone(),
                    got: batch.for_question,
                });
            }
            check_batch(&batch.answers)?;
            let expected = step.answer_batches.len() as u32 + 1;
            if batch.ordinal != expected {
                return Err(SessionError::BadOrdinal {
                    expected,
                    got: batch.ordinal,
                });
            }
            step.answer_batches.push(batch);
            Ok(())
        })
    }

    /// Replace the selected answers. Generations whose answer text survives
    /// the change are kept and re-keyed to the new position.
    pub fn set_selected_answers<S: AsRef<str>>(
        &self,
        step_id: StepId,
        answers: &[S],
    ) -> Result<Session, SessionError> {
        self.edit_open(step_id, |step| {
            if step.selected_question.is_none() {
                return Err(SessionError::NoQuestionSelected);
            }
            if answers.is_empty() {
                return Err(SessionError::NoAnswersSelected);
            }
            if answers.len() > MAX_SELECTED_ANSWERS {
                return Err(SessionError::TooManyAnswers {
                    max: MAX_SELECTED_ANSWERS,
                    got: answers.len(),
                });
            }
            let mut seen = HashSet::new();
            let mut cleaned = Vec::with_capacity(answers.len());
            for answer in answers {
                let text = answer.as_ref().trim();
                if text.is_empty() {
                    return Err(SessionError::EmptyAnswer);
                }
                if !seen.insert(text) {
                    return Err(SessionError::DuplicateAnswer(text.to_string()));
                }
                cleaned.push(text.to_string());
            }
            let mut generations = BTreeMap::new();
            for (new_idx, text) in cleaned.iter().enumerate() {
                if let Some(result) = step.generation_for(text) {
                    generations.insert(new_idx, result.clone());
                }
            }
            step.selected_answers = cleaned;
            step.generations = generations;
            Ok(())
        })
    }

    pub fn attach_generation(
        &self,
        step_id: StepId,
        answer: &str,
        result: GenerationResult,
    ) -> Result<Session, SessionError> {
        self.edit_open(step_id, |step| {
            let idx = step
                .answer_index(answer)
                .ok_or_else(|| SessionError::AnswerNotSelected(answer.to_string()))?;
            if result.answer != answer {
                return Err(SessionError::ResultAnswerMismatch {
                    expected: answer.to_string(),
                    got: result.answer,
                });
            }
            if result.image_refs.is_empty() {
                return Err(SessionError::EmptyResult);
            }
            step.generations.insert(idx, result);
            Ok(())
        })
    }

    /// Freeze the step with `answer` and open a child step that becomes active.
    pub fn confirm_step(&self, step_id: StepId, answer: &str) -> Result<Session, SessionError> {
        let child_id = self.next_step_id();
        let mut next = self.edit_open(step_id, |step| {
            if step.answer_index(answer).is_none() {
                return Err(SessionError::AnswerNotSelected(answer.to_string()));
            }
            if step.generation_for(answer).is_none() {
                return Err(SessionError::NoGenerationForAnswer(answer.to_string()));
            }
            step.status = StepStatus::Confirmed;
            step.confirmed_answer = Some(answer.to_string());
            Ok(())
        })?;
        next.steps.push(StepNode::empty(child_id, Some(step_id)));
        next.active_step_id = child_id;
        Ok(next)
    }

    /// Open a new sibling of the confirmed step `step_id`, carrying over its
    /// questions, answers and generations, and make it active. Existing
    /// nodes are left untouched; the previously active step stays in the tree
    /// as an abandoned branch tip.
    pub fn revert_to(&self, step_id: StepId) -> Result<Session, SessionError> {
        let target = self
            .step(step_id)
            .ok_or(SessionError::UnknownStep(step_id))?;
        if !target.is_confirmed() {
            return Err(SessionError::CannotRevertOpenStep(step_id));
        }
        let clone_id = self.next_step_id();
        let clone = StepNode {
            id: clone_id,
            parent_id: target.parent_id,
            question_batches: target.question_batches.clone(),
            selected_question: target.selected_question.clone(),
            answer_batches: target.answer_batches.clone(),
            selected_answers: target.selected_answers.clone(),
            generations: target.generations.clone(),
            status: StepStatus::Open,
            confirmed_answer: None,
        };
        let mut next = self.clone();
        next.steps.push(clone);
        next.active_step_id = clone_id;
        Ok(next)
    }

    /// Check every structural invariant. Used on load and by property tests.
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        let fail = |msg: String| Err(InvariantViolation(msg));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!("schema_version {}", self.schema_version));
        }
        if self.initial_prompt.trim().is_empty() {
            return fail("initial prompt is blank".into());
        }
        if self.steps.is_empty() {
            return fail("no steps".into());
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.id.0 as usize != i + 1 {
                return fail(format!("step at position {i} has id {}", step.id));
            }
            if let Some(parent) = step.parent_id {
                // Parents precede children, which rules out cycles.
                if parent >= step.id {
                    return fail(format!(
                        "step {} has parent {parent} not before it",
                        step.id
                    ));
                }
                match self.step(parent) {
                    Some(p) if p.is_confirmed() => {}
                    Some(_) => return fail(format!("parent {parent} of {} is open", step.id)),
                    None => return fail(format!("parent {parent} of {} missing", step.id)),
                }
            }
            validate_step(step)?;
        }
        match self.step(self.active_step_id) {
            Some(s) if s.is_open() => {}
            Some(_) => return fail("active step is confirmed".into()),
            None => return fail("active step missing".into()),
        }
        let open_on_path = self
            .active_path()
            .iter()
            .filter(|id| self.step(**id).is_some_and(StepNode::is_open))
            .count();
        if open_on_path != 1 {
            return fail(format!("{open_on_path} open steps on the active path"));
        }
        Ok(())
    }
}

fn check_batch(items: &[String]) -> Result<(), SessionError> {
    if items.len() != BATCH_SIZE {
        return Err(SessionError::BadBatchSize {
            expected: BATCH_SIZE,
            got: items.len(),
        });
    }
    if items.iter().any(|i| i.trim().is_empty()) {
        return Err(SessionError::EmptyBatchItem);
    }
    Ok(())
}

fn validate_step(step: &StepNode) -> Result<(), InvariantViolation> {
    let fail = |msg: String| Err(InvariantViolation(format!("step {}: {msg}", step.id)));
    for (i, batch) in step.question_batches.iter().enumerate() {
        if check_batch(&batch.questions).is_err() || batch.ordinal as usize != i + 1 {
            return fail(format!("malformed question batch {i}"));
        }
    }
    if let Some(q) = &step.selected_question {
        if q.text.trim().is_empty() {
            return fail("selected question is blank".into());
        }
        if q.source == QuestionSource::Model && !step.shown_questions().contains(&q.text) {
            return fail("model question not among proposals".into());
        }
    }
    for (i, batch) in step.answer_batches.iter().enumerate() {
        if check_batch(&batch.answers).is_err() || batch.ordinal as usize != i + 1 {
            return fail(format!("malformed answer batch {i}"));
        }
        if step.selected_question.as_ref().map(|q| &q.text) != Some(&batch.for_question) {
            return fail(format!("answer batch {i} is for another question"));
        }
    }
    if step.selected_answers.len() > MAX_SELECTED_ANSWERS {
        return fail("too many selected answers".into());
    }
    if !step.selected_answers.is_empty() && step.selected_question.is_none() {
        return fail("answers selected without a question".into());
    }
    let distinct: HashSet<_> = step.selected_answers.iter().collect();
    if distinct.len() != step.selected_answers.len()
        || step.selected_answers.iter().any(|a| a.trim().is_empty())
    {
        return fail("selected answers must be distinct and nonempty".into());
    }
    for (idx, result) in &step.generations {
        match step.selected_answers.get(*idx) {
            Some(answer) if *answer == result.answer => {}
            _ => {
                return fail(format!(
                    "generation key {idx} does not match a selected answer"
                ))
            }
        }
        if result.image_refs.is_empty() {
            return fail(format!("generation {idx} holds no images"));
        }
    }
    match (step.status, &step.confirmed_answer) {
        (StepStatus::Open, None) => {}
        (StepStatus::Open, Some(_)) => return fail("open step has a confirmed answer".into()),
        (StepStatus::Confirmed, None) => return fail("confirmed step lacks an answer".into()),
        (StepStatus::Confirmed, Some(answer)) => {
            if step.generation_for(answer).is_none() {
                return fail("confirmed answer has no generation".into());
            }
        }
    }
    Ok(())
}
