//! Generators and invariant checks shared by the property and acceptance
//! tests.
//!
//! Operations are generated abstractly (indices rather than concrete texts)
//! and interpreted against the current session, so almost every generated
//! sequence is a valid walk through the state machine. Indices that make no
//! sense for the current state either exercise an error path or are skipped.

use chrono::{DateTime, TimeZone, Utc};
use promptcrafter_core::{
    AnswerBatch, GenerationResult, ImageRef, PromptSource, Provenance, QuestionBatch,
    QuestionSource, Session, SessionError, SessionId, StepId, BATCH_SIZE,
};
use proptest::prelude::*;

const USER_QUESTIONS: [&str; 4] = [
    "what mood should it convey?",
    "what is in the background?",
    "which colors dominate?",
    "what lens is used?",
];

const TYPED_ANSWERS: [&str; 6] = [
    "sitting",
    "running",
    "at dusk",
    "in the forest",
    "oil paint",
    "  ",
];

#[derive(Debug, Clone)]
pub enum Op {
    RequestQuestions,
    SelectModelQuestion(usize),
    SelectUserQuestion(usize),
    RequestAnswers,
    /// Indices into proposed answers followed by typed answers.
    SelectAnswers(Vec<usize>),
    Attach {
        answer: usize,
        images: u32,
    },
    Confirm(usize),
    Revert(usize),
    /// Drive the active step from wherever it is to confirmation.
    CompleteStep(usize),
}

pub fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => Just(Op::RequestQuestions),
        3 => any::<usize>().prop_map(Op::SelectModelQuestion),
        1 => (0..USER_QUESTIONS.len()).prop_map(Op::SelectUserQuestion),
        3 => Just(Op::RequestAnswers),
        3 => prop::collection::vec(any::<usize>(), 0..=5).prop_map(Op::SelectAnswers),
        4 => (any::<usize>(), 0u32..=6).prop_map(|(answer, images)| Op::Attach { answer, images }),
        3 => any::<usize>().prop_map(Op::Confirm),
        2 => any::<usize>().prop_map(Op::Revert),
        3 => any::<usize>().prop_map(Op::CompleteStep),
    ]
}

/// Shape bounds for generated trees.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    /// Longest root-to-leaf path, counted in steps.
    pub max_depth: usize,
    /// Most children under one parent (roots count as children of nothing).
    pub max_branching: usize,
}

impl Limits {
    pub const UNBOUNDED: Limits = Limits {
        max_depth: usize::MAX,
        max_branching: usize::MAX,
    };
}

pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

pub fn fresh_session(prompt: &str) -> Session {
    Session::create_with(SessionId("prop-session".into()), epoch(), prompt)
        .expect("nonempty prompt")
}

pub fn provenance(request_id: String) -> Provenance {
    Provenance {
        provider: "testkit".into(),
        model: "scripted".into(),
        request_id,
    }
}

pub fn generation(answer: &str, images: u32) -> GenerationResult {
    let digest = format!("{:016x}", answer.len() as u64 * 7919 + images as u64);
    GenerationResult {
        answer: answer.to_string(),
        image_prompt: format!("scripted, {answer}"),
        prompt_source: PromptSource::Model,
        image_refs: (0..images)
            .map(|index| ImageRef {
                id: format!("{digest}-{index}"),
                path: format!("images/{digest}-{index}.png"),
                width: 512,
                height: 512,
                prompt_digest: digest.clone(),
                index,
            })
            .collect(),
        errors: (images..6)
            .map(|index| promptcrafter_core::ImageFailure {
                index,
                message: "scripted".into(),
            })
            .collect(),
    }
}

/// Interpret `op` against `s`. `None` when the op is not applicable (or would
/// exceed `limits`); otherwise the state machine's verdict.
pub fn apply(s: &Session, op: &Op, limits: Limits) -> Option<Result<Session, SessionError>> {
    let active = s.active_step_id;
    let step = s.active_step();
    let result = match op {
        Op::RequestQuestions => {
            let ordinal = step.question_batches.len() as u32 + 1;
            let questions = (0..BATCH_SIZE)
                .map(|k| format!("Q{}.{ordinal}.{k}?", active.0))
                .collect();
            s.append_question_batch(
                active,
                QuestionBatch {
                    ordinal,
                    questions,
                    provenance: provenance(format!("q{ordinal}")),
                },
            )
        }
        Op::SelectModelQuestion(i) => {
            let shown = step.shown_questions();
            if shown.is_empty() {
                // Exercises the membership check.
                s.select_question(active, "never proposed?", QuestionSource::Model)
            } else {
                s.select_question(active, &shown[i % shown.len()], QuestionSource::Model)
            }
        }
        Op::SelectUserQuestion(i) => s.select_question(
            active,
            USER_QUESTIONS[i % USER_QUESTIONS.len()],
            QuestionSource::User,
        ),
        Op::RequestAnswers => {
            let question = step.selected_question.as_ref()?.text.clone();
            let ordinal = step.answer_batches.len() as u32 + 1;
            let answers = (0..BATCH_SIZE)
                .map(|k| format!("A{}.{ordinal}.{k}", active.0))
                .collect();
            s.append_answer_batch(
                active,
                AnswerBatch {
                    ordinal,
                    answers,
                    for_question: question,
                    provenance: provenance(format!("a{ordinal}")),
                },
            )
        }
        Op::SelectAnswers(picks) => {
            let mut pool = step.shown_answers();
            pool.extend(TYPED_ANSWERS.iter().map(|t| t.to_string()));
            let chosen: Vec<String> = picks.iter().map(|i| pool[i % pool.len()].clone()).collect();
            s.set_selected_answers(active, &chosen)
        }
        Op::Attach { answer, images } => {
            if step.selected_answers.is_empty() {
                return None;
            }
            let text = step.selected_answers[answer % step.selected_answers.len()].clone();
            s.attach_generation(active, &text, generation(&text, *images))
        }
        Op::Confirm(i) => {
            if step.selected_answers.is_empty() {
                return None;
            }
            if s.active_path().len() >= limits.max_depth {
                return None;
            }
            let text = step.selected_answers[i % step.selected_answers.len()].clone();
            s.confirm_step(active, &text)
        }
        Op::CompleteStep(i) => {
            if s.active_path().len() >= limits.max_depth {
                return None;
            }
            let mut next = s.clone();
            if step.selected_question.is_none() {
                next = apply(&next, &Op::RequestQuestions, limits)?.ok()?;
                next = apply(&next, &Op::SelectModelQuestion(*i), limits)?.ok()?;
            }
            if next.active_step().selected_answers.is_empty() {
                next = apply(&next, &Op::SelectAnswers(vec![*i, i / 7 + 1]), limits)?.ok()?;
            }
            let answers = next.active_step().selected_answers.clone();
            let chosen = answers[i % answers.len()].clone();
            if next.active_step().generation_for(&chosen).is_none() {
                next = next
                    .attach_generation(active, &chosen, generation(&chosen, 6))
                    .ok()?;
            }
            next.confirm_step(active, &chosen)
        }
        Op::Revert(i) => {
            let confirmed: Vec<StepId> = s
                .steps
                .iter()
                .filter(|n| n.is_confirmed())
                .map(|n| n.id)
                .collect();
            if confirmed.is_empty() {
                return Some(s.revert_to(active));
            }
            let target = confirmed[i % confirmed.len()];
            let parent = s.step(target)?.parent_id;
            if s.children_of(parent).len() >= limits.max_branching {
                return None;
            }
            s.revert_to(target)
        }
    };
    Some(result)
}

/// Check every state-machine property across one successful transition.
pub fn check_transition(before: &Session, after: &Session, op: &Op) -> Result<(), String> {
    after.validate().map_err(|e| format!("{op:?}: {e}"))?;
    if after.steps.len() < before.steps.len() {
        return Err(format!("{op:?}: node count shrank"));
    }
    for old in &before.steps {
        let new = after
            .step(old.id)
            .ok_or_else(|| format!("{op:?}: step {} vanished", old.id))?;
        if old.is_confirmed() && bytes(old) != bytes(new) {
            return Err(format!("{op:?}: confirmed step {} changed", old.id));
        }
        if matches!(op, Op::Revert(_)) && bytes(old) != bytes(new) {
            return Err(format!("{op:?}: revert modified step {}", old.id));
        }
    }
    if matches!(op, Op::SelectModelQuestion(_) | Op::SelectUserQuestion(_)) {
        let step = after.active_step();
        if !step.selected_answers.is_empty() || !step.generations.is_empty() {
            return Err(format!("{op:?}: answers survived question change"));
        }
    }
    let history = after
        .qa_history(after.active_step_id)
        .map_err(|e| e.to_string())?;
    let confirmed_ancestors = after
        .active_path()
        .iter()
        .filter(|id| after.step(**id).is_some_and(|s| s.is_confirmed()))
        .count();
    if history.len() != confirmed_ancestors {
        return Err(format!(
            "{op:?}: history length {} != {confirmed_ancestors}",
            history.len()
        ));
    }
    Ok(())
}

fn bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("serializable")
}

/// Run `ops` from a fresh session, checking every transition.
pub fn run_checked(ops: &[Op], limits: Limits) -> Result<Session, String> {
    let mut s = fresh_session("a welsh corgi");
    for op in ops {
        match apply(&s, op, limits) {
            None => {}
            Some(Ok(next)) => {
                check_transition(&s, &next, op)?;
                s = next;
            }
            Some(Err(_)) => {
                // Errors are values; the input session is untouched by construction
                // (operations borrow it immutably), but it must still be valid.
                s.validate().map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(s)
}

/// Longest root-to-leaf path, in steps.
pub fn tree_depth(s: &Session) -> usize {
    s.steps
        .iter()
        .map(|n| s.path_to(n.id).map(|p| p.len()).unwrap_or(0))
        .max()
        .unwrap_or(0)
}

pub fn max_branching(s: &Session) -> usize {
    let mut parents: Vec<Option<StepId>> = s.steps.iter().map(|n| n.parent_id).collect();
    parents.sort();
    parents
        .chunk_by(|a, b| a == b)
        .map(<[_]>::len)
        .max()
        .unwrap_or(0)
}

/// Sessions reachable by random walks, within `limits`.
pub fn arb_session(limits: Limits, max_ops: usize) -> impl Strategy<Value = Session> {
    prop::collection::vec(arb_op(), 0..max_ops).prop_map(move |ops| {
        let mut s = fresh_session("a welsh corgi");
        for op in &ops {
            if let Some(Ok(next)) = apply(&s, op, limits) {
                s = next;
            }
        }
        s
    })
}

/// A fixed walk: questions, select, answers, pick two, generate both.
pub fn ready_to_confirm(s: &Session, answers: [&str; 2]) -> Session {
    let active = s.active_step_id;
    let s = apply(s, &Op::RequestQuestions, Limits::UNBOUNDED)
        .unwrap()
        .unwrap();
    let s = apply(&s, &Op::SelectModelQuestion(0), Limits::UNBOUNDED)
        .unwrap()
        .unwrap();
    let s = s.set_selected_answers(active, &answers).unwrap();
    let s = s
        .attach_generation(active, answers[0], generation(answers[0], 6))
        .unwrap();
    s.attach_generation(active, answers[1], generation(answers[1], 6))
        .unwrap()
}

/// Inputs for one golden rendering fixture.
#[derive(Debug, Clone)]
pub struct GoldenFixture {
    pub name: &'static str,
    pub initial_prompt: &'static str,
    pub pairs: Vec<(&'static str, &'static str)>,
    pub prior_questions: Vec<&'static str>,
    pub answer_question: &'static str,
    pub prior_answers: Vec<&'static str>,
    pub candidate: (&'static str, &'static str),
}

pub fn golden_fixtures() -> Vec<GoldenFixture> {
    vec![
        GoldenFixture {
            name: "corgi_fresh",
            initial_prompt: "a welsh corgi",
            pairs: vec![],
            prior_questions: vec![],
            answer_question: "what type of environment is the dog in?",
            prior_answers: vec![],
            candidate: ("what type of environment is the dog in?", "in the forest"),
        },
        GoldenFixture {
            name: "corgi_one_step",
            initial_prompt: "a welsh corgi",
            pairs: vec![("What is the posture of the Welsh Corgi?", "sitting")],
            prior_questions: vec![
                "What type of environment is the dog in?",
                "What art style should the image use?",
                "What kind of lighting should the scene have?",
                "What time of day is it?",
            ],
            answer_question: "What kind of lighting should the scene have?",
            prior_answers: vec!["golden hour sunlight", "neon glow"],
            candidate: (
                "What kind of lighting should the scene have?",
                "soft morning light",
            ),
        },
        GoldenFixture {
            name: "sustainable_two_steps",
            initial_prompt: "sustainable future lifestyle",
            pairs: vec![
                (
                    "What setting shows the lifestyle?",
                    "a rooftop garden in a dense city",
                ),
                ("Who is in the scene?", "a family harvesting vegetables"),
            ],
            prior_questions: vec!["What season is it?"],
            answer_question: "What art style should the image use?",
            prior_answers: vec![],
            candidate: (
                "What art style should the image use?",
                "isometric illustration",
            ),
        },
        GoldenFixture {
            name: "lighthouse_unicode",
            initial_prompt: "a lighthouse on a cliff",
            pairs: vec![
                ("What is the weather like?", "a storm with \"heavy\" rain"),
                ("What time of day is it?", "dusk"),
                ("Is anyone nearby?", "a keeper drinking café au lait"),
            ],
            prior_questions: vec!["What colors dominate?", "What camera angle is used?"],
            answer_question: "What mood should the image convey?",
            prior_answers: vec!["lonely", "defiant"],
            candidate: ("What mood should the image convey?", "serene"),
        },
    ]
}

impl GoldenFixture {
    pub fn context(&self) -> promptcrafter_core::HistoryContext {
        promptcrafter_core::HistoryContext::new(
            self.initial_prompt,
            self.pairs
                .iter()
                .map(|(q, a)| promptcrafter_core::QaPair::new(*q, *a).expect("nonempty"))
                .collect(),
        )
    }

    /// The three rendered requests: (suffix, request).
    pub fn requests(&self) -> Vec<(&'static str, promptcrafter_core::LlmRequest)> {
        let pc = promptcrafter_core::PromptConstructor::default();
        let ctx = self.context();
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let candidate =
            promptcrafter_core::QaPair::new(self.candidate.0, self.candidate.1).expect("nonempty");
        vec![
            (
                "questions",
                pc.render_question_request(&ctx, &own(&self.prior_questions), 4),
            ),
            (
                "answers",
                pc.render_answer_request(&ctx, self.answer_question, &own(&self.prior_answers), 4),
            ),
            (
                "image_prompt",
                pc.render_image_prompt_request(&ctx, &candidate),
            ),
        ]
    }
}

/// Canonical text form of a request, as stored in golden files.
pub fn golden_text(req: &promptcrafter_core::LlmRequest) -> String {
    format!(
        "kind: {}\nexpected_items: {}\ntemperature: {}\nmax_tokens: {}\n\
         --- instruction\n{}\n--- context\n{}--- full text\n{}",
        serde_json::to_value(req.kind).unwrap().as_str().unwrap(),
        req.expected_items,
        req.decoding.temperature,
        req.decoding.max_tokens,
        req.instruction,
        req.context,
        req.full_text(),
    )
}

/// Directory holding the pinned golden renderings.
pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

/// Compare every fixture rendering against its golden file. With
/// `BLESS_GOLDENS=1` in the environment, missing files are written instead.
pub fn check_goldens() -> Result<usize, String> {
    let dir = golden_dir();
    let bless = std::env::var("BLESS_GOLDENS").is_ok_and(|v| v == "1");
    let mut checked = 0;
    for fixture in golden_fixtures() {
        for (suffix, req) in fixture.requests() {
            let path = dir.join(format!("{}.{suffix}.txt", fixture.name));
            let actual = golden_text(&req);
            match std::fs::read_to_string(&path) {
                Ok(expected) if expected == actual => checked += 1,
                Ok(_) => return Err(format!("{} differs from rendering", path.display())),
                Err(_) if bless => {
                    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                    std::fs::write(&path, actual).map_err(|e| e.to_string())?;
                    checked += 1;
                }
                Err(e) => return Err(format!("{}: {e}", path.display())),
            }
        }
    }
    Ok(checked)
}
