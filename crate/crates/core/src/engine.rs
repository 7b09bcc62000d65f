//! Answerability math over scorer confidences.
//!
//! A scorer produces raw start/end confidences over the `N` sentence tokens.
//! A bias `b` is appended to both vectors and each is softmax-normalized over
//! `N + 1` entries; the extra entry is the "no start"/"no end" mass. A span
//! `(i, j)` has probability `p_start[i] * p_end[j]` and the null answer has
//! `p_start[N] * p_end[N]`. Decoding returns the best legal span unless the
//! null answer is at least as likely, or a global threshold rejects it.
//!
//! All token indices are 0-based and inclusive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sentence;
use crate::eval::normalize_answer_tokens;

pub const DEFAULT_MAX_SPAN_LEN: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid scores: {0}")]
    InvalidScores(String),
    #[error("span ({start}, {end}) out of range for {len} tokens")]
    IndexOutOfRange { start: usize, end: usize, len: usize },
    #[error("scores cover {scores} tokens but sentence has {sentence}")]
    LengthMismatch { scores: usize, sentence: usize },
    #[error("invalid decode parameters: {0}")]
    InvalidParams(String),
    #[error("cannot ensemble an empty prediction list")]
    EmptyEnsemble,
}

/// Raw start/end confidences for one (question, sentence) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    z_start: Vec<f64>,
    z_end: Vec<f64>,
}

impl SpanScores {
    pub fn new(z_start: Vec<f64>, z_end: Vec<f64>) -> Result<Self, EngineError> {
        if z_start.is_empty() {
            return Err(EngineError::InvalidScores("no tokens".into()));
        }
        if z_start.len() != z_end.len() {
            return Err(EngineError::InvalidScores(format!(
                "start has {} entries, end has {}",
                z_start.len(),
                z_end.len()
            )));
        }
        if z_start.iter().chain(&z_end).any(|z| !z.is_finite()) {
            return Err(EngineError::InvalidScores("non-finite entry".into()));
        }
        Ok(SpanScores { z_start, z_end })
    }

    /// Same confidence everywhere.
    pub fn constant(n: usize, value: f64) -> Result<Self, EngineError> {
        Self::new(vec![value; n], vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.z_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_start.is_empty()
    }

    pub fn z_start(&self) -> &[f64] {
        &self.z_start
    }

    pub fn z_end(&self) -> &[f64] {
        &self.z_end
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.z_start, self.z_end)
    }
}

/// Softmax over `[z; b]` for start and end; the last entry is the null mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullAwareDistributions {
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
}

impl NullAwareDistributions {
    /// Number of sentence tokens (excludes the null slot).
    pub fn tokens(&self) -> usize {
        self.p_start.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub bias: f64,
    pub p_min: Option<f64>,
    pub max_span_len: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            bias: 0.0,
            p_min: None,
            max_span_len: DEFAULT_MAX_SPAN_LEN,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_span_len == 0 {
            return Err(EngineError::InvalidParams("max_span_len must be >= 1".into()));
        }
        if !self.bias.is_finite() {
            return Err(EngineError::InvalidParams("bias must be finite".into()));
        }
        if let Some(p) = self.p_min {
            if !(0.0..=1.0).contains(&p) {
                return Err(EngineError::InvalidParams(format!("p_min {p} not in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A span or the null answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanChoice {
    Span(usize, usize),
    Null,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Decoder output. `probability` is the confidence of whatever was
/// returned: the span probability for a span, the null probability for a
/// null answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: Option<PredictedSpan>,
    pub probability: f64,
    pub null_probability: f64,
}

impl Prediction {
    pub fn null(null_probability: f64) -> Self {
        Prediction {
            answer: None,
            probability: null_probability,
            null_probability,
        }
    }

    pub fn is_null(&self) -> bool {
        self.answer.is_none()
    }

    pub fn answer_text(&self) -> Option<&str> {
        self.answer.as_ref().map(|a| a.text.as_str())
    }
}

fn softmax_with_bias(z: &[f64], bias: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(bias, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    out.push((bias - max).exp());
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub fn augment_and_normalize(
    scores: &SpanScores,
    bias: f64,
) -> Result<NullAwareDistributions, EngineError> {
    if !bias.is_finite() {
        return Err(EngineError::InvalidScores("non-finite bias".into()));
    }
    Ok(NullAwareDistributions {
        p_start: softmax_with_bias(&scores.z_start, bias),
        p_end: softmax_with_bias(&scores.z_end, bias),
    })
}

pub fn probability(dists: &NullAwareDistributions, choice: SpanChoice) -> Result<f64, EngineError> {
    let n = dists.tokens();
    match choice {
        SpanChoice::Null => Ok(dists.p_start[n] * dists.p_end[n]),
        SpanChoice::Span(i, j) if i <= j && j < n => Ok(dists.p_start[i] * dists.p_end[j]),
        SpanChoice::Span(start, end) => Err(EngineError::IndexOutOfRange { start, end, len: n }),
    }
}

/// Best legal span by probability; ties keep the earliest `(i, j)`.
pub fn best_span(dists: &NullAwareDistributions, max_span_len: usize) -> Option<(usize, usize, f64)> {
    let n = dists.tokens();
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        let ps = dists.p_start[i];
        for j in i..n.min(i + max_span_len) {
            let p = ps * dists.p_end[j];
            if best.is_none_or(|(_, _, b)| p > b) {
                best = Some((i, j, p));
            }
        }
    }
    best
}

pub fn decode(
    scores: &SpanScores,
    sentence: &Sentence,
    params: &DecodeParams,
) -> Result<Prediction, EngineError> {
    params.validate()?;
    if scores.len() != sentence.len() {
        return Err(EngineError::LengthMismatch {
            scores: scores.len(),
            sentence: sentence.len(),
        });
    }
    let dists = augment_and_normalize(scores, params.bias)?;
    let null_probability = probability(&dists, SpanChoice::Null)?;
    let Some((i, j, p)) = best_span(&dists, params.max_span_len) else {
        return Ok(Prediction::null(null_probability));
    };
    // exact ties go to null
    if null_probability >= p || params.p_min.is_some_and(|t| p < t) {
        return Ok(Prediction::null(null_probability));
    }
    let text = sentence.span_text(i, j).expect("span within sentence");
    Ok(Prediction {
        answer: Some(PredictedSpan { start: i, end: j, text }),
        probability: p,
        null_probability,
    })
}

/// Applies a global threshold after the fact: spans below `p_min` become
/// null. Null predictions are left alone.
pub fn apply_threshold(prediction: &Prediction, p_min: f64) -> Prediction {
    if prediction.answer.is_some() && prediction.probability < p_min {
        Prediction::null(prediction.null_probability)
    } else {
        prediction.clone()
    }
}

fn answer_key(text: &str) -> String {
    normalize_answer_tokens(text).into_sorted().join(" ")
}

fn canonical_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

/// Combines predictions for the same sentence asked with different
/// questions. Span answers are grouped by normalized text and their
/// probabilities summed; null answers sum their null probabilities. The
/// group with the largest sum wins (ties: null, then smallest normalized
/// text) and its most confident member is returned.
pub fn ensemble(predictions: &[(String, Prediction)]) -> Result<Prediction, EngineError> {
    if predictions.is_empty() {
        return Err(EngineError::EmptyEnsemble);
    }
    if predictions.len() == 1 {
        return Ok(predictions[0].1.clone());
    }
    // None is the null group and sorts first, which gives it tie priority.
    let mut groups: BTreeMap<Option<String>, Vec<&(String, Prediction)>> = BTreeMap::new();
    for entry in predictions {
        let key = entry.1.answer_text().map(answer_key);
        groups.entry(key).or_default().push(entry);
    }
    let mut winner: Option<(f64, &Option<String>)> = None;
    for (key, members) in &groups {
        let sum = canonical_sum(
            members
                .iter()
                .map(|(_, p)| if p.is_null() { p.null_probability } else { p.probability })
                .collect(),
        );
        if winner.is_none_or(|(best, _)| sum > best) {
            winner = Some((sum, key));
        }
    }
    let (_, key) = winner.expect("non-empty");
    let rep = groups[key]
        .iter()
        .min_by(|(qa, a), (qb, b)| {
            b.probability
                .total_cmp(&a.probability)
                .then_with(|| {
                    let sa = a.answer.as_ref().map(|s| (s.start, s.end));
                    let sb = b.answer.as_ref().map(|s| (s.start, s.end));
                    sa.cmp(&sb)
                })
                .then_with(|| qa.cmp(qb))
        })
        .expect("non-empty group");
    Ok(rep.1.clone())
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("malformed scorer response: {0}")]
    Malformed(String),
    #[error("scorer returned {got} scores for {expected} tokens")]
    LengthMismatch { expected: usize, got: usize },
    #[error("scorer connection failed: {0}")]
    Connection(#[from] std::io::Error),
    #[error("scorer disconnected")]
    Disconnected,
    #[error("invalid scores: {0}")]
    InvalidScores(#[from] EngineError),
    #[error("{0}")]
    Other(String),
}

/// Anything that maps (question tokens, sentence tokens) to span confidences.
///
/// Implementations must be pure given their own state, return exactly one
/// entry per sentence token, and be safe to call from many threads.
pub trait Scorer: Send + Sync {
    fn score(&self, question: &[String], sentence: &[String]) -> Result<SpanScores, ScorerError>;

    /// Bias the scorer was calibrated with, if it has one.
    fn bias(&self) -> Option<f64> {
        None
    }

    /// Whether a single instance may be shared by concurrent workers.
    fn shareable(&self) -> bool {
        true
    }
}

/// Emits the same confidence for every token.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&self, _question: &[String], sentence: &[String]) -> Result<SpanScores, ScorerError> {
        Ok(SpanScores::constant(sentence.len(), self.0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sentence(n: usize) -> Sentence {
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        Sentence::new(words.join(" "), 0)
    }

    // Independent softmax: direct exponentials, no max shift.
    fn naive_softmax(v: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    #[test]
    fn augmentation_examples() {
        let d = augment_and_normalize(&SpanScores::new(vec![0.0], vec![0.0]).unwrap(), 0.0).unwrap();
        assert_eq!(d.p_start, vec![0.5, 0.5]);

        let s = SpanScores::new(vec![2.0, 0.0], vec![0.0, 2.0]).unwrap();
        let d = augment_and_normalize(&s, 0.0).unwrap();
        let oracle = naive_softmax(&[2.0, 0.0, 0.0]);
        for (a, b) in d.p_start.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((d.p_start[0] - 0.7870).abs() < 1e-4);
        assert!((d.p_start[1] - 0.1065).abs() < 1e-4);
        assert!((d.p_start[2] - 0.1065).abs() < 1e-4);

        let shifted = SpanScores::new(vec![-1.0, -3.0], vec![-3.0, -1.0]).unwrap();
        let d2 = augment_and_normalize(&shifted, -3.0).unwrap();
        for (a, b) in d.p_start.iter().zip(&d2.p_start) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(SpanScores::new(vec![f64::NAN], vec![0.0]).is_err());
        assert!(SpanScores::new(vec![0.0], vec![f64::INFINITY]).is_err());
        assert!(SpanScores::new(vec![], vec![]).is_err());
        assert!(SpanScores::new(vec![0.0], vec![0.0, 1.0]).is_err());
        let s = SpanScores::constant(2, 0.0).unwrap();
        assert!(augment_and_normalize(&s, f64::NAN).is_err());
    }

    #[test]
    fn span_and_null_probabilities() {
        let s = SpanScores::new(vec![2.0, 0.0], vec![0.0, 2.0]).unwrap();
        let d = augment_and_normalize(&s, 0.0).unwrap();
        let span = probability(&d, SpanChoice::Span(0, 1)).unwrap();
        assert!((span - 0.6194).abs() < 1e-3);
        let null = probability(&d, SpanChoice::Null).unwrap();
        assert!((null - 0.01134).abs() < 1e-4);
        assert!(probability(&d, SpanChoice::Span(1, 0)).is_err());
        assert!(probability(&d, SpanChoice::Span(0, 2)).is_err());

        let u = augment_and_normalize(&SpanScores::constant(1, 0.0).unwrap(), 0.0).unwrap();
        assert_eq!(probability(&u, SpanChoice::Span(0, 0)).unwrap(), 0.25);
        assert_eq!(probability(&u, SpanChoice::Null).unwrap(), 0.25);
    }

    #[test]
    fn decode_examples() {
        let params = DecodeParams::default();
        let low = SpanScores::constant(2, -5.0).unwrap();
        let p = decode(&low, &sentence(2), &params).unwrap();
        assert!(p.is_null());
        // (1 / (1 + 2e^-5))^2
        let expect = (1.0 / (1.0 + 2.0 * (-5.0f64).exp())).powi(2);
        assert!((p.null_probability - expect).abs() < 1e-12);
        assert!((p.null_probability - 0.97358).abs() < 1e-5);

        let s = SpanScores::new(vec![2.0, 0.0], vec![0.0, 2.0]).unwrap();
        let p = decode(&s, &sentence(2), &params).unwrap();
        let span = p.answer.as_ref().unwrap();
        assert_eq!((span.start, span.end), (0, 1));
        assert_eq!(span.text, "w0 w1");
        assert!((p.probability - 0.6194).abs() < 1e-3);

        let strict = DecodeParams {
            p_min: Some(0.7),
            ..params
        };
        assert!(decode(&s, &sentence(2), &strict).unwrap().is_null());

        assert!(matches!(
            decode(&s, &sentence(3), &params),
            Err(EngineError::LengthMismatch { .. })
        ));
        let bad = DecodeParams {
            max_span_len: 0,
            ..params
        };
        assert!(decode(&s, &sentence(2), &bad).is_err());
    }

    #[test]
    fn constant_scorer_ties_resolve_to_null() {
        let scorer = ConstantScorer(0.0);
        let sent = sentence(3);
        let scores = scorer.score(&[], &sent.token_texts()).unwrap();
        // uniform: every span and the null have (1/4)^2
        let p = decode(&scores, &sent, &DecodeParams::default()).unwrap();
        assert!(p.is_null());
        assert_eq!(p.null_probability, 1.0 / 16.0);
    }

    #[test]
    fn max_span_len_limits_candidates() {
        let s = SpanScores::new(vec![5.0, 0.0, 0.0], vec![0.0, 0.0, 5.0]).unwrap();
        let p = decode(
            &s,
            &sentence(3),
            &DecodeParams {
                max_span_len: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let span = p.answer.unwrap();
        assert!(span.end - span.start < 2);
    }

    fn span_pred(text: &str, start: usize, p: f64) -> Prediction {
        Prediction {
            answer: Some(PredictedSpan {
                start,
                end: start,
                text: text.into(),
            }),
            probability: p,
            null_probability: 0.01,
        }
    }

    #[test]
    fn ensemble_sums_agreeing_answers() {
        let preds = vec![
            ("q1".to_string(), span_pred("Princeton", 4, 0.6)),
            ("q2".to_string(), span_pred("princeton", 4, 0.5)),
            ("q3".to_string(), Prediction::null(0.9)),
        ];
        let out = ensemble(&preds).unwrap();
        assert_eq!(out.answer_text(), Some("Princeton"));
        assert_eq!(out.probability, 0.6);

        assert_eq!(ensemble(&preds[..1]).unwrap(), preds[0].1);
        let nulls: Vec<_> = (0..3)
            .map(|i| (format!("q{i}"), Prediction::null(0.3 + i as f64 / 10.0)))
            .collect();
        assert!(ensemble(&nulls).unwrap().is_null());
        assert_eq!(ensemble(&[]), Err(EngineError::EmptyEnsemble));
    }

    #[test]
    fn ensemble_ties() {
        let preds = vec![
            ("a".to_string(), span_pred("Bern", 1, 0.5)),
            ("b".to_string(), Prediction::null(0.5)),
        ];
        assert!(ensemble(&preds).unwrap().is_null());
        let preds = vec![
            ("a".to_string(), span_pred("Zug", 1, 0.5)),
            ("b".to_string(), span_pred("Bern", 3, 0.5)),
        ];
        assert_eq!(ensemble(&preds).unwrap().answer_text(), Some("Bern"));
    }

    // Brute-force reference: enumerate all legal spans plus null directly
    // from naive softmax products.
    fn oracle(zs: &[f64], ze: &[f64], b: f64, max_len: usize) -> (Option<(usize, usize)>, f64, f64) {
        let mut s = zs.to_vec();
        s.push(b);
        let mut e = ze.to_vec();
        e.push(b);
        let ps = naive_softmax(&s);
        let pe = naive_softmax(&e);
        let n = zs.len();
        let null = ps[n] * pe[n];
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            for j in i..n {
                if j - i + 1 > max_len {
                    continue;
                }
                let p = ps[i] * pe[j];
                if best.is_none_or(|(_, _, q)| p > q) {
                    best = Some((i, j, p));
                }
            }
        }
        let (i, j, p) = best.unwrap();
        if null >= p {
            (None, null, null)
        } else {
            (Some((i, j)), p, null)
        }
    }

    proptest! {
        #[test]
        fn decode_matches_enumeration(
            zs in prop::collection::vec(-6.0f64..6.0, 1..=6),
            ze_seed in prop::collection::vec(-6.0f64..6.0, 6),
            b in -6.0f64..6.0,
            max_len in 1usize..=6,
        ) {
            let n = zs.len();
            let ze = ze_seed[..n].to_vec();
            let scores = SpanScores::new(zs.clone(), ze.clone()).unwrap();
            let params = DecodeParams { bias: b, p_min: None, max_span_len: max_len };
            let got = decode(&scores, &sentence(n), &params).unwrap();
            let (span, p, null) = oracle(&zs, &ze, b, max_len);
            prop_assert_eq!(got.answer.as_ref().map(|s| (s.start, s.end)), span);
            prop_assert!((got.probability - p).abs() < 1e-9);
            prop_assert!((got.null_probability - null).abs() < 1e-9);
        }

        #[test]
        fn distributions_sum_to_one(
            zs in prop::collection::vec(-50.0f64..50.0, 1..20),
            b in -50.0f64..50.0,
        ) {
            let scores = SpanScores::new(zs.clone(), zs.iter().map(|z| -z).collect()).unwrap();
            let d = augment_and_normalize(&scores, b).unwrap();
            prop_assert!((d.p_start.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((d.p_end.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(d.p_start.iter().chain(&d.p_end).all(|p| *p >= 0.0));
        }

        #[test]
        fn raising_p_min_never_creates_spans(
            zs in prop::collection::vec(-4.0f64..4.0, 1..6),
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let scores = SpanScores::new(zs.clone(), zs.clone()).unwrap();
            let sent = sentence(zs.len());
            let at = |t| decode(&scores, &sent, &DecodeParams { p_min: Some(t), ..Default::default() }).unwrap();
            if at(lo).is_null() {
                prop_assert!(at(hi).is_null());
            }
        }

        #[test]
        fn ensemble_is_order_invariant(
            entries in prop::collection::vec((0usize..4, 0.0f64..1.0, prop::bool::ANY), 1..7),
            rot in 0usize..7,
        ) {
            let names = ["Bern", "bern", "Zug", "Basel"];
            let preds: Vec<(String, Prediction)> = entries
                .iter()
                .enumerate()
                .map(|(k, &(w, p, is_null))| {
                    let pred = if is_null { Prediction::null(p) } else { span_pred(names[w], w, p) };
                    (format!("q{k}"), pred)
                })
                .collect();
            let mut rotated = preds.clone();
            rotated.rotate_left(rot % preds.len());
            let mut reversed = preds.clone();
            reversed.reverse();
            let base = ensemble(&preds).unwrap();
            prop_assert_eq!(&ensemble(&rotated).unwrap(), &base);
            prop_assert_eq!(&ensemble(&reversed).unwrap(), &base);
        }
    }
}
