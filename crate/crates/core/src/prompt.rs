//! Prompt construction for the language model.
//!
//! Every request shares one layout:
//!
//! ```text
//! You are helping a user craft a text-to-image prompt step by step.
//! Image concept: {initial_prompt}
//! Decisions so far:
//! Q: {question}
//! A: {answer}
//! Do not repeat any of these questions:
//! - {prior question}
//! Task: ...
//! ```
//!
//! Blocks for empty lists are omitted. The first line and the task form the
//! request `instruction` (sent as the system message); the lines between them
//! form the `context` (sent as the user message).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::QaPair;

const PREAMBLE: &str = "You are helping a user craft a text-to-image prompt step by step.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Questions,
    Answers,
    ImagePrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Decoding {
    pub const EXPLORE: Decoding = Decoding {
        temperature: 0.9,
        max_tokens: 256,
    };
    pub const FAITHFUL: Decoding = Decoding {
        temperature: 0.2,
        max_tokens: 256,
    };
}

/// A fully rendered request for the language model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub kind: RequestKind,
    pub instruction: String,
    pub context: String,
    pub expected_items: usize,
    pub decoding: Decoding,
}

impl LlmRequest {
    /// The request as one text, in template order: preamble, context, task.
    pub fn full_text(&self) -> String {
        let task = self
            .instruction
            .strip_prefix(PREAMBLE)
            .map(|t| t.trim_start_matches('\n'))
            .unwrap_or(&self.instruction);
        format!("{PREAMBLE}\n{}{task}\n", self.context)
    }
}

/// What the model knows about the session: the concept plus confirmed pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryContext {
    pub initial_prompt: String,
    pub pairs: Vec<QaPair>,
}

impl HistoryContext {
    pub fn new(initial_prompt: impl Into<String>, pairs: Vec<QaPair>) -> Self {
        Self {
            initial_prompt: initial_prompt.into(),
            pairs,
        }
    }
}

/// Renders requests with configurable decoding parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptConstructor {
    pub question_decoding: Decoding,
    pub answer_decoding: Decoding,
    pub image_prompt_decoding: Decoding,
}

impl Default for PromptConstructor {
    fn default() -> Self {
        Self {
            question_decoding: Decoding::EXPLORE,
            answer_decoding: Decoding::EXPLORE,
            image_prompt_decoding: Decoding::FAITHFUL,
        }
    }
}

impl PromptConstructor {
    pub fn render_question_request(
        &self,
        ctx: &HistoryContext,
        prior_questions: &[String],
        n: usize,
    ) -> LlmRequest {
        let n = n.max(1);
        let mut context = render_history(ctx, &ctx.pairs);
        render_exclusions(&mut context, "questions", prior_questions);
        LlmRequest {
            kind: RequestKind::Questions,
            instruction: format!(
                "{PREAMBLE}\nTask: Ask {n} short clarifying questions, each adding one new visual\n\
                 detail. Reply as a numbered list, one question per line."
            ),
            context,
            expected_items: n,
            decoding: self.question_decoding,
        }
    }

    pub fn render_answer_request(
        &self,
        ctx: &HistoryContext,
        question: &str,
        prior_answers: &[String],
        n: usize,
    ) -> LlmRequest {
        let n = n.max(1);
        let mut context = render_history(ctx, &ctx.pairs);
        render_exclusions(&mut context, "answers", prior_answers);
        LlmRequest {
            kind: RequestKind::Answers,
            instruction: format!(
                "{PREAMBLE}\nTask: Suggest {n} short, concrete answers to the question \"{question}\"\n\
                 that fit the decisions so far. Reply as a numbered list, one answer per line."
            ),
            context,
            expected_items: n,
            decoding: self.answer_decoding,
        }
    }

    /// Request one image-generation prompt for the history plus `pair`.
    pub fn render_image_prompt_request(&self, ctx: &HistoryContext, pair: &QaPair) -> LlmRequest {
        let mut pairs = ctx.pairs.clone();
        pairs.push(pair.clone());
        LlmRequest {
            kind: RequestKind::ImagePrompt,
            instruction: format!(
                "{PREAMBLE}\nTask: Write one text-to-image prompt that combines the image concept\n\
                 with every decision above. Reply with the prompt only, on a single line."
            ),
            context: render_history(ctx, &pairs),
            expected_items: 1,
            decoding: self.image_prompt_decoding,
        }
    }
}

fn render_history(ctx: &HistoryContext, pairs: &[QaPair]) -> String {
    let mut out = format!("Image concept: {}\n", ctx.initial_prompt);
    if !pairs.is_empty() {
        out.push_str("Decisions so far:\n");
        for pair in pairs {
            out.push_str(&format!("Q: {}\nA: {}\n", pair.question, pair.answer));
        }
    }
    out
}

fn render_exclusions(out: &mut String, noun: &str, items: &[String]) {
    if items.is_empty() {
        return;
    }
    out.push_str(&format!("Do not repeat any of these {noun}:\n"));
    for item in items {
        out.push_str(&format!("- {item}\n"));
    }
}

/// Image prompt used when the language model cannot produce one: the concept,
/// every confirmed answer, then the candidate answer, joined by ", ".
pub fn fallback_image_prompt(ctx: &HistoryContext, pair: &QaPair) -> String {
    std::iter::once(ctx.initial_prompt.as_str())
        .chain(ctx.pairs.iter().map(|p| p.answer.as_str()))
        .chain(std::iter::once(pair.answer.as_str()))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("expected {expected} list items, found {found}")]
    NotEnoughItems { expected: usize, found: usize },
}

/// Extract list items from raw model output.
///
/// Recognised markers are `1. `, `1) `, `- ` and `* `. When at least one line
/// carries a marker, lines without one (preambles such as "Here are four
/// questions:") are ignored; otherwise every nonempty line is an item.
/// Surrounding whitespace and one pair of matching quotes are stripped.
/// Only the first `expected_n` items are returned.
pub fn parse_numbered_list(raw: &str, expected_n: usize) -> Result<Vec<String>, ParseError> {
    let lines: Vec<(bool, &str)> = raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| match strip_marker(l) {
            Some(rest) => (true, rest),
            None => (false, l),
        })
        .collect();
    let any_marked = lines.iter().any(|(marked, _)| *marked);
    let items: Vec<String> = lines
        .into_iter()
        .filter(|(marked, _)| *marked || !any_marked)
        .map(|(_, text)| strip_quotes(text.trim()).trim().to_string())
        .filter(|t| !t.is_empty())
        .take(expected_n)
        .collect();
    if items.len() < expected_n {
        return Err(ParseError::NotEnoughItems {
            expected: expected_n,
            found: items.len(),
        });
    }
    Ok(items)
}

fn strip_marker(line: &str) -> Option<&str> {
    let bullet = line.strip_prefix('-').or_else(|| line.strip_prefix('*'));
    let rest = match bullet {
        Some(rest) => rest,
        None => {
            let digits = line.bytes().take_while(u8::is_ascii_digit).count();
            if digits == 0 {
                return None;
            }
            let after = &line[digits..];
            after
                .strip_prefix('.')
                .or_else(|| after.strip_prefix(')'))?
        }
    };
    if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        Some(rest)
    } else {
        None
    }
}

fn strip_quotes(text: &str) -> &str {
    const PAIRS: [(char, char); 4] = [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’')];
    for (open, close) in PAIRS {
        if let Some(inner) = text.strip_prefix(open).and_then(|t| t.strip_suffix(close)) {
            return inner;
        }
    }
    text
}
