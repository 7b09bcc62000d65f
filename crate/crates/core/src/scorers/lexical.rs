//! Lexical-overlap baseline.
//!
//! Candidate answers are chosen by the question's wh-word (capitalized runs
//! for who/where/which, digit-bearing tokens for when/how many, any content
//! token for what). Each candidate is scored by its proximity to sentence
//! tokens that echo the question: relation cue words count fully, words of
//! the entity name (capitalized in the question) count partially. Scores
//! are mapped to logits so that, under bias 0, a candidate decodes to a
//! span only when its evidence clears `offset`.

use super::{is_capitalized, lowercase_all, FORCE_MAGNITUDE};
use crate::engine::{Scorer, ScorerError, SpanScores};

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "from", "by", "with", "as", "into",
    "is", "was", "were", "are", "be", "been", "being", "did", "do", "does", "has", "have", "had",
    "what", "who", "whom", "whose", "which", "when", "where", "why", "how", "and", "or", "'s",
    "his", "her", "its", "their", "he", "she", "it", "they", "this", "that", "these", "those",
    "many", "much", "year", "there", "than", "then", "also", "not",
];

fn is_stopword(lower: &str) -> bool {
    STOPWORDS.contains(&lower)
}

fn is_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

fn has_digit(token: &str) -> bool {
    token.chars().any(|c| c.is_ascii_digit())
}

/// Coarse answer type implied by the question's wh-word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerType {
    Name,
    Number,
    Any,
}

impl AnswerType {
    pub fn of_question(question: &[String]) -> AnswerType {
        let q = lowercase_all(question);
        for (k, w) in q.iter().enumerate() {
            let next = q.get(k + 1).map(String::as_str);
            match w.as_str() {
                "when" => return AnswerType::Number,
                "how" if matches!(next, Some("many" | "much" | "old")) => return AnswerType::Number,
                "what" | "which" if next == Some("year") => return AnswerType::Number,
                "who" | "whom" | "whose" | "where" | "which" => return AnswerType::Name,
                "what" => return AnswerType::Any,
                _ => {}
            }
        }
        AnswerType::Any
    }
}

fn words_match(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    let common = a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count();
    a.chars().count() >= 4 && b.chars().count() >= 4 && common >= 4
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexicalScorer {
    pub cue_weight: f64,
    pub entity_weight: f64,
    /// Added for digit-bearing candidates of number questions.
    pub type_prior: f64,
    pub offset: f64,
    pub scale: f64,
    /// Matches further than this many tokens from a candidate are ignored.
    pub window: usize,
}

impl Default for LexicalScorer {
    fn default() -> Self {
        LexicalScorer {
            cue_weight: 1.0,
            entity_weight: 0.3,
            type_prior: 0.1,
            offset: 0.25,
            scale: 6.0,
            window: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    start: usize,
    end: usize,
}

impl LexicalScorer {
    /// Per-position evidence weight: how strongly each sentence token
    /// echoes a question content word.
    fn evidence(&self, question: &[String], sentence: &[String]) -> Vec<f64> {
        let content: Vec<(String, f64)> = question
            .iter()
            .filter_map(|t| {
                let lower = t.to_lowercase();
                if !is_word(t) || is_stopword(&lower) {
                    return None;
                }
                let w = if is_capitalized(t) { self.entity_weight } else { self.cue_weight };
                Some((lower, w))
            })
            .collect();
        sentence
            .iter()
            .map(|t| {
                let lower = t.to_lowercase();
                if !is_word(t) || is_stopword(&lower) {
                    return 0.0;
                }
                content
                    .iter()
                    .filter(|(q, _)| words_match(q, &lower))
                    .map(|(_, w)| *w)
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    fn candidates(&self, kind: AnswerType, question: &[String], sentence: &[String]) -> Vec<Candidate> {
        let q = lowercase_all(question);
        let in_question = |k: usize| q.contains(&sentence[k].to_lowercase());
        let mut out = Vec::new();

        let name_runs = |out: &mut Vec<Candidate>| {
            let mut i = 0;
            while i < sentence.len() {
                if !is_capitalized(&sentence[i]) {
                    i += 1;
                    continue;
                }
                let start = i;
                let mut end = i;
                i += 1;
                // allow "of" between capitalized words: University of Zürich
                while i < sentence.len() {
                    if is_capitalized(&sentence[i]) {
                        end = i;
                        i += 1;
                    } else if sentence[i] == "of"
                        && sentence.get(i + 1).is_some_and(|t| is_capitalized(t))
                    {
                        i += 1;
                    } else {
                        break;
                    }
                }
                if start == 0 && end == 0 {
                    continue;
                }
                if (start..=end).any(in_question) {
                    continue;
                }
                out.push(Candidate { start, end });
            }
        };

        match kind {
            AnswerType::Name => name_runs(&mut out),
            AnswerType::Number => {
                for k in 0..sentence.len() {
                    if has_digit(&sentence[k]) && !in_question(k) {
                        out.push(Candidate { start: k, end: k });
                    }
                }
            }
            AnswerType::Any => {
                name_runs(&mut out);
                for k in 0..sentence.len() {
                    let t = &sentence[k];
                    let lower = t.to_lowercase();
                    if !is_capitalized(t) && is_word(t) && !is_stopword(&lower) && !in_question(k) {
                        out.push(Candidate { start: k, end: k });
                    }
                }
            }
        }
        out
    }

    fn candidate_score(&self, c: Candidate, kind: AnswerType, evidence: &[f64], sentence: &[String]) -> f64 {
        let mut s = 0.0;
        for (p, &w) in evidence.iter().enumerate() {
            if w == 0.0 || (c.start..=c.end).contains(&p) {
                continue;
            }
            let gap = if p < c.start { c.start - p - 1 } else { p - c.end - 1 };
            if gap <= self.window {
                s += w / (1.0 + gap as f64);
            }
        }
        if kind == AnswerType::Number && has_digit(&sentence[c.start]) {
            s += self.type_prior;
        }
        s
    }
}

impl Scorer for LexicalScorer {
    fn score(&self, question: &[String], sentence: &[String]) -> Result<SpanScores, ScorerError> {
        if sentence.is_empty() {
            return Err(ScorerError::Other("empty sentence".into()));
        }
        let n = sentence.len();
        let mut z_start = vec![-FORCE_MAGNITUDE; n];
        let mut z_end = vec![-FORCE_MAGNITUDE; n];
        let evidence = self.evidence(question, sentence);
        if evidence.iter().any(|&w| w > 0.0) {
            let kind = AnswerType::of_question(question);
            for c in self.candidates(kind, question, sentence) {
                if c.end - c.start >= crate::engine::DEFAULT_MAX_SPAN_LEN {
                    continue;
                }
                let s = self.candidate_score(c, kind, &evidence, sentence);
                let logit = (self.scale * (s - self.offset)).clamp(-FORCE_MAGNITUDE, FORCE_MAGNITUDE);
                z_start[c.start] = z_start[c.start].max(logit);
                z_end[c.end] = z_end[c.end].max(logit);
            }
        }
        Ok(SpanScores::new(z_start, z_end)?)
    }

    fn bias(&self) -> Option<f64> {
        Some(0.0)
    }
}
