use rand::Rng;

use super::{detect_named_entities, forced_scores, lowercase_all, NamedEntityCandidate};
use crate::corpus::find_subsequence;
use crate::engine::{Scorer, ScorerError, SpanScores};
use crate::seed::rng_for;

/// Picks a named entity from the sentence that does not appear in the
/// question, uniformly at random. The choice is keyed by the seed and the
/// token content, so the same pair always gets the same answer.
#[derive(Debug, Clone, Copy)]
pub struct RandomNeScorer {
    pub seed: u64,
}

impl RandomNeScorer {
    pub fn new(seed: u64) -> Self {
        RandomNeScorer { seed }
    }

    pub fn candidates(question: &[String], sentence: &[String]) -> Vec<NamedEntityCandidate> {
        let q = lowercase_all(question);
        let s = lowercase_all(sentence);
        detect_named_entities(sentence)
            .into_iter()
            .filter(|c| find_subsequence(&q, &s[c.token_start..=c.token_end]).is_none())
            .collect()
    }

    pub fn choose(&self, question: &[String], sentence: &[String]) -> Option<NamedEntityCandidate> {
        let mut cands = Self::candidates(question, sentence);
        if cands.is_empty() {
            return None;
        }
        let q = question.join("\u{1f}");
        let s = sentence.join("\u{1f}");
        let mut rng = rng_for(self.seed, &["random-ne", &q, &s]);
        let k = rng.gen_range(0..cands.len());
        Some(cands.swap_remove(k))
    }
}

impl Scorer for RandomNeScorer {
    fn score(&self, question: &[String], sentence: &[String]) -> Result<SpanScores, ScorerError> {
        if sentence.is_empty() {
            return Err(ScorerError::Other("empty sentence".into()));
        }
        let choice = self
            .choose(question, sentence)
            .map(|c| (c.token_start, c.token_end));
        Ok(forced_scores(sentence.len(), choice))
    }

    fn bias(&self) -> Option<f64> {
        Some(0.0)
    }
}
