//! Deterministic offline language model.
//!
//! Output is a pure function of the request text and a salt: the seed is the
//! stable digest of `instruction ‖ context ‖ salt`, and items are drawn from a
//! built-in word bank by seeded indexing. Questions and answers avoid anything
//! listed in the request's do-not-repeat block while the bank lasts.

use std::time::Instant;

use async_trait::async_trait;
use promptcrafter_core::digest::{digest_hex, stable_digest};
use promptcrafter_core::{LlmRequest, RequestKind};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::llm::{CompletionOutcome, LanguageModel, LlmError};

const QUESTIONS: &[&str] = &[
    "What is the posture of {subject}?",
    "What type of environment is {subject} in?",
    "What art style should the image use?",
    "What kind of lighting should the scene have?",
    "What time of day is it?",
    "What mood should the image convey?",
    "What colors should dominate the image?",
    "What camera angle should be used?",
    "What is {subject} wearing?",
    "What season or weather is shown?",
    "What is in the background?",
    "What is {subject} doing?",
];

/// (keywords matched against the question, answers)
const ANSWER_BANK: &[(&[&str], &[&str])] = &[
    (
        &["posture", "doing", "pose"],
        &[
            "sitting",
            "running",
            "lying down",
            "jumping",
            "stretching",
            "sleeping curled up",
            "standing on hind legs",
            "rolling over",
        ],
    ),
    (
        &["environment", "background", "where", "setting", "place"],
        &[
            "in the forest",
            "on a sandy beach",
            "in a cozy living room",
            "on a snowy mountain",
            "in a flower field",
            "on a busy city street",
            "by a quiet lake",
            "in a walled garden",
        ],
    ),
    (
        &["style", "art", "medium"],
        &[
            "watercolor painting",
            "oil painting",
            "pixel art",
            "photorealistic",
            "anime style",
            "pencil sketch",
            "3D render",
            "impressionist",
        ],
    ),
    (
        &["lighting", "light"],
        &[
            "golden hour sunlight",
            "soft morning light",
            "neon glow",
            "dramatic side lighting",
            "moonlight",
            "overcast diffuse light",
            "candlelight",
            "studio lighting",
        ],
    ),
    (
        &["time", "day"],
        &[
            "at dawn",
            "at noon",
            "at sunset",
            "at night",
            "at dusk",
            "in the early morning",
        ],
    ),
    (
        &["mood", "feel", "convey", "emotion"],
        &[
            "joyful",
            "calm",
            "mysterious",
            "playful",
            "melancholic",
            "heroic",
            "cozy",
            "dreamy",
        ],
    ),
    (
        &["color", "colour", "palette"],
        &[
            "pastel tones",
            "vivid primary colors",
            "monochrome",
            "warm earth tones",
            "cool blues and greens",
            "black and white",
        ],
    ),
    (
        &["angle", "camera", "view", "shot"],
        &[
            "close-up portrait",
            "wide-angle shot",
            "bird's-eye view",
            "low angle",
            "side profile",
            "eye-level shot",
        ],
    ),
    (
        &["wear", "clothing", "outfit", "accessor"],
        &[
            "a red scarf",
            "a tiny crown",
            "a yellow raincoat",
            "sunglasses",
            "a bow tie",
            "a knitted sweater",
        ],
    ),
    (
        &["season", "weather"],
        &[
            "spring blossoms",
            "summer heat",
            "autumn leaves",
            "winter snow",
            "light rain",
            "foggy",
        ],
    ),
];

const FINISHES: &[&str] = &[
    "highly detailed",
    "cinematic composition",
    "soft focus",
    "sharp focus",
    "award-winning photograph",
    "trending on artstation",
];

/// Seed for a mock completion.
pub fn mock_seed(request: &LlmRequest, seed_salt: &str) -> u64 {
    stable_digest(&[
        request.instruction.as_bytes(),
        request.context.as_bytes(),
        seed_salt.as_bytes(),
    ])
}

/// Deterministic completion for `request`: exactly `expected_items` numbered lines.
pub fn mock_complete(request: &LlmRequest, seed_salt: &str) -> CompletionOutcome {
    let started = Instant::now();
    let seed = mock_seed(request, seed_salt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = request.expected_items.max(1);
    let parsed = ParsedContext::from(request);

    let items: Vec<String> = match request.kind {
        RequestKind::Questions => {
            let subject = parsed.subject();
            let pool: Vec<String> = QUESTIONS
                .iter()
                .map(|q| q.replace("{subject}", &subject))
                .collect();
            draw(&mut rng, pool, &parsed.excluded, n)
        }
        RequestKind::Answers => {
            let question = quoted(&request.instruction)
                .unwrap_or_default()
                .to_lowercase();
            let pool: Vec<String> = ANSWER_BANK
                .iter()
                .find(|(keys, _)| keys.iter().any(|k| question.contains(k)))
                .map(|(_, answers)| answers.iter().map(|a| a.to_string()).collect())
                .unwrap_or_else(|| {
                    ANSWER_BANK
                        .iter()
                        .flat_map(|(_, answers)| answers.iter().map(|a| a.to_string()))
                        .collect()
                });
            draw(&mut rng, pool, &parsed.excluded, n)
        }
        RequestKind::ImagePrompt => (0..n)
            .map(|_| {
                let finish = FINISHES.choose(&mut rng).copied().unwrap_or("detailed");
                let mut parts = vec![parsed.concept.clone()];
                parts.extend(parsed.answers.iter().cloned());
                parts.push(finish.to_string());
                parts.join(", ")
            })
            .collect(),
    };

    let text = items
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}. {item}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    CompletionOutcome {
        text,
        provider_request_id: format!("mock-{}", digest_hex(seed)),
        latency: started.elapsed(),
        attempts: 1,
    }
}

/// Pick `n` distinct items not in `excluded`; once the pool runs dry, repeat
/// with a numbered suffix so every line is still distinct.
fn draw(rng: &mut ChaCha8Rng, mut pool: Vec<String>, excluded: &[String], n: usize) -> Vec<String> {
    pool.retain(|p| !excluded.contains(p));
    pool.shuffle(rng);
    let mut out: Vec<String> = pool.into_iter().take(n).collect();
    let mut k = 2;
    while out.len() < n {
        let base = QUESTIONS[out.len() % QUESTIONS.len()].replace("{subject}", "the subject");
        let candidate = format!("{base} (take {k})");
        if !excluded.contains(&candidate) && !out.contains(&candidate) {
            out.push(candidate);
        }
        k += 1;
    }
    out
}

struct ParsedContext {
    concept: String,
    answers: Vec<String>,
    excluded: Vec<String>,
}

impl ParsedContext {
    fn from(request: &LlmRequest) -> Self {
        let mut concept = String::new();
        let mut answers = Vec::new();
        let mut excluded = Vec::new();
        let mut in_exclusions = false;
        for line in request.context.lines() {
            if let Some(c) = line.strip_prefix("Image concept: ") {
                concept = c.to_string();
            } else if let Some(a) = line.strip_prefix("A: ") {
                answers.push(a.to_string());
            } else if line.starts_with("Do not repeat") {
                in_exclusions = true;
            } else if let (true, Some(item)) = (in_exclusions, line.strip_prefix("- ")) {
                excluded.push(item.to_string());
            }
        }
        if concept.is_empty() {
            concept = "the subject".into();
        }
        Self {
            concept,
            answers,
            excluded,
        }
    }

    /// The concept phrased as a definite subject: "a welsh corgi" -> "the welsh corgi".
    fn subject(&self) -> String {
        let c = self.concept.trim();
        for article in ["a ", "an ", "A ", "An "] {
            if let Some(rest) = c.strip_prefix(article) {
                return format!("the {rest}");
            }
        }
        c.to_string()
    }
}

fn quoted(text: &str) -> Option<String> {
    let start = text.find('"')? + 1;
    let end = start + text[start..].find('"')?;
    Some(text[start..end].to_string())
}

/// [`LanguageModel`] backed by [`mock_complete`].
#[derive(Debug, Clone, Default)]
pub struct MockLanguageModel {
    pub seed_salt: String,
}

impl MockLanguageModel {
    pub fn new(seed_salt: impl Into<String>) -> Self {
        Self {
            seed_salt: seed_salt.into(),
        }
    }
}

#[async_trait]
impl LanguageModel for MockLanguageModel {
    fn provider_id(&self) -> &str {
        "mock"
    }

    fn model(&self) -> &str {
        "mock-llm"
    }

    async fn complete(&self, request: &LlmRequest) -> Result<CompletionOutcome, LlmError> {
        Ok(mock_complete(request, &self.seed_salt))
    }
}
