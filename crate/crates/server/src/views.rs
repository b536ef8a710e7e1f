//! Response documents.

use chrono::{DateTime, Utc};
use promptcrafter_core::{
    AnswerBatch, GenerationResult, ImageRef, QaPair, QuestionBatch, SelectedQuestion, Session,
    SessionId, StepId, StepStatus,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationView {
    pub answer_index: usize,
    #[serde(flatten)]
    pub result: GenerationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub id: StepId,
    pub parent_id: Option<StepId>,
    pub status: StepStatus,
    pub abandoned: bool,
    pub question_batches: Vec<QuestionBatch>,
    pub selected_question: Option<SelectedQuestion>,
    pub answer_batches: Vec<AnswerBatch>,
    pub selected_answers: Vec<String>,
    pub generations: Vec<GenerationView>,
    pub confirmed_answer: Option<String>,
    /// Confirmed pairs leading to this step.
    pub qa_history: Vec<QaPair>,
}

impl StepView {
    pub fn of(session: &Session, id: StepId) -> Option<Self> {
        let step = session.step(id)?;
        Some(Self {
            id,
            parent_id: step.parent_id,
            status: step.status,
            abandoned: session.is_abandoned(id),
            question_batches: step.question_batches.clone(),
            selected_question: step.selected_question.clone(),
            answer_batches: step.answer_batches.clone(),
            selected_answers: step.selected_answers.clone(),
            generations: step
                .generations
                .iter()
                .map(|(i, r)| GenerationView {
                    answer_index: *i,
                    result: r.clone(),
                })
                .collect(),
            confirmed_answer: step.confirmed_answer.clone(),
            qa_history: session.qa_history(id).unwrap_or_default(),
        })
    }

    pub fn active(session: &Session) -> Self {
        Self::of(session, session.active_step_id).expect("active step exists")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: SessionId,
    pub initial_prompt: String,
    pub created_at: DateTime<Utc>,
    pub confirmed_steps: usize,
    pub active_step: StepView,
}

impl From<&Session> for SessionSummary {
    fn from(s: &Session) -> Self {
        Self {
            session_id: s.id.clone(),
            initial_prompt: s.initial_prompt.clone(),
            created_at: s.created_at,
            confirmed_steps: s.confirmed_count(),
            active_step: StepView::active(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: StepId,
    pub parent_id: Option<StepId>,
    pub children: Vec<StepId>,
    pub status: StepStatus,
    pub abandoned: bool,
    pub on_active_path: bool,
    pub question: Option<String>,
    pub confirmed_answer: Option<String>,
    pub selected_answers: Vec<String>,
    /// First image of the confirmed answer's set.
    pub thumbnail: Option<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryView {
    pub session_id: SessionId,
    pub initial_prompt: String,
    pub active_step_id: StepId,
    /// Root to active step.
    pub active_path: Vec<StepView>,
    pub tree: Vec<TreeNode>,
    /// Parents with more than one child; `null` stands for the root level.
    pub branch_points: Vec<Option<StepId>>,
}

impl From<&Session> for HistoryView {
    fn from(s: &Session) -> Self {
        let path = s.active_path();
        let tree: Vec<TreeNode> = s
            .steps
            .iter()
            .map(|step| TreeNode {
                id: step.id,
                parent_id: step.parent_id,
                children: s.children_of(Some(step.id)),
                status: step.status,
                abandoned: s.is_abandoned(step.id),
                on_active_path: path.contains(&step.id),
                question: step.selected_question.as_ref().map(|q| q.text.clone()),
                confirmed_answer: step.confirmed_answer.clone(),
                selected_answers: step.selected_answers.clone(),
                thumbnail: step
                    .confirmed_answer
                    .as_deref()
                    .and_then(|a| step.generation_for(a))
                    .and_then(|g| g.image_refs.first().cloned()),
            })
            .collect();
        let mut parents: Vec<Option<StepId>> = std::iter::once(None)
            .chain(s.steps.iter().map(|n| Some(n.id)))
            .filter(|p| s.children_of(*p).len() > 1)
            .collect();
        parents.dedup();
        Self {
            session_id: s.id.clone(),
            initial_prompt: s.initial_prompt.clone(),
            active_step_id: s.active_step_id,
            active_path: path.iter().filter_map(|id| StepView::of(s, *id)).collect(),
            tree,
            branch_points: parents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: String,
}
