//! Scorer implementations: two baselines and a client for out-of-process
//! models speaking a line-delimited JSON protocol.

mod external;
mod lexical;
mod random_ne;

use serde::{Deserialize, Serialize};

pub use external::{Endpoint, ExternalScorer, PendingScore, ScoreRequest, ScoreResponse};
pub use lexical::{AnswerType, LexicalScorer};
pub use random_ne::RandomNeScorer;

use crate::engine::SpanScores;

/// Saturation magnitude used when a scorer wants to force a decode outcome.
pub const FORCE_MAGNITUDE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedEntityCandidate {
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
}

pub(crate) fn is_capitalized(token: &str) -> bool {
    token.chars().next().is_some_and(char::is_uppercase)
}

/// Maximal runs of capitalized tokens. A run consisting only of the
/// sentence-initial token is skipped, since sentence-initial capitals carry
/// no signal.
pub fn detect_named_entities(sentence: &[String]) -> Vec<NamedEntityCandidate> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < sentence.len() {
        if !is_capitalized(&sentence[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < sentence.len() && is_capitalized(&sentence[i]) {
            i += 1;
        }
        let end = i - 1;
        if start == 0 && end == 0 {
            continue;
        }
        out.push(NamedEntityCandidate {
            token_start: start,
            token_end: end,
            text: sentence[start..=end].join(" "),
        });
    }
    out
}

/// Scores that make `decode` (with bias 0) pick exactly `span`, or the null
/// answer when `span` is `None`.
pub fn forced_scores(n: usize, span: Option<(usize, usize)>) -> SpanScores {
    let mut z_start = vec![-FORCE_MAGNITUDE; n];
    let mut z_end = vec![-FORCE_MAGNITUDE; n];
    if let Some((i, j)) = span {
        z_start[i] = FORCE_MAGNITUDE;
        z_end[j] = FORCE_MAGNITUDE;
    }
    SpanScores::new(z_start, z_end).expect("finite forced scores")
}

pub(crate) fn lowercase_all(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}
