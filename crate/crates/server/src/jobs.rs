//! Background image-generation jobs, polled by clients.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use promptcrafter_core::{SessionId, StepId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    GenerateImages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running,
    Partial,
    Done,
    Failed,
}

impl JobState {
    fn rank(self) -> u8 {
        match self {
            JobState::Pending => 0,
            JobState::Running => 1,
            JobState::Partial => 2,
            JobState::Done | JobState::Failed => 3,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AnswerProgress {
    Waiting,
    Prompting,
    Imaging,
    Done,
    Failed { message: String },
}

impl AnswerProgress {
    pub fn is_terminal(&self) -> bool {
        matches!(self, AnswerProgress::Done | AnswerProgress::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerEntry {
    pub answer: String,
    #[serde(flatten)]
    pub progress: AnswerProgress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub session_id: SessionId,
    pub step_id: StepId,
    pub kind: JobKind,
    pub state: JobState,
    /// Keyed by index into the step's selected answers at job creation.
    pub answers: BTreeMap<usize, AnswerEntry>,
    pub created_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

/// In-memory job table. Jobs do not survive a restart.
#[derive(Debug, Default)]
pub struct JobRegistry {
    jobs: Mutex<HashMap<String, Job>>,
}

impl JobRegistry {
    pub fn create(&self, session_id: SessionId, step_id: StepId, answers: &[String]) -> Job {
        let job = Job {
            id: uuid::Uuid::new_v4().to_string(),
            session_id,
            step_id,
            kind: JobKind::GenerateImages,
            state: JobState::Pending,
            answers: answers
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    (
                        i,
                        AnswerEntry {
                            answer: a.clone(),
                            progress: AnswerProgress::Waiting,
                        },
                    )
                })
                .collect(),
            created_at: Utc::now(),
            finished_at: None,
        };
        self.jobs
            .lock()
            .unwrap()
            .insert(job.id.clone(), job.clone());
        job
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().unwrap().get(id).cloned()
    }

    /// Move the job forward; backwards or post-terminal moves are ignored.
    pub fn advance(&self, id: &str, state: JobState) {
        if let Some(job) = self.jobs.lock().unwrap().get_mut(id) {
            advance_job(job, state);
        }
    }

    /// Record per-answer progress and derive the job state from it.
    pub fn set_progress(&self, id: &str, index: usize, progress: AnswerProgress) {
        let mut jobs = self.jobs.lock().unwrap();
        let Some(job) = jobs.get_mut(id) else { return };
        if job.state.is_terminal() {
            return;
        }
        if let Some(entry) = job.answers.get_mut(&index) {
            if entry.progress.is_terminal() {
                return;
            }
            entry.progress = progress;
        }
        let done = job
            .answers
            .values()
            .filter(|e| e.progress == AnswerProgress::Done)
            .count();
        let all_terminal = job.answers.values().all(|e| e.progress.is_terminal());
        if all_terminal {
            advance_job(
                job,
                if done > 0 {
                    JobState::Done
                } else {
                    JobState::Failed
                },
            );
        } else if done > 0 {
            advance_job(job, JobState::Partial);
        }
    }
}

fn advance_job(job: &mut Job, state: JobState) {
    if job.state.is_terminal() || state.rank() <= job.state.rank() {
        return;
    }
    job.state = state;
    if state.is_terminal() {
        job.finished_at = Some(Utc::now());
    }
}
