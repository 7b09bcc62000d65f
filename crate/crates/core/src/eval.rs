//! Answer normalization, per-instance judging, corpus metrics and
//! precision/recall curves.
//!
//! Answers are compared as bags of normalized tokens: lowercase, no
//! punctuation, and without `a`, `an`, `the` and `and` (the latter so a
//! single span listing several answers can match their union).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, AnswerSpan};
use crate::engine::Prediction;

const DROPPED: [&str; 4] = ["a", "an", "the", "and"];

/// Unordered multiset of normalized answer tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenBag(Vec<String>);

impl TokenBag {
    pub fn from_tokens<I: IntoIterator<Item = S>, S: Into<String>>(tokens: I) -> Self {
        let mut v: Vec<String> = tokens.into_iter().map(Into::into).collect();
        v.sort();
        TokenBag(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_sorted(self) -> Vec<String> {
        self.0
    }

    /// Multiset sum.
    pub fn union(bags: &[TokenBag]) -> TokenBag {
        TokenBag::from_tokens(bags.iter().flat_map(|b| b.0.iter().cloned()))
    }

    /// Size of the multiset intersection.
    pub fn common(&self, other: &TokenBag) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        n
    }
}

fn is_punctuation(token: &str) -> bool {
    token.chars().all(|c| !c.is_alphanumeric())
}

pub fn normalize_answer_tokens(text: &str) -> TokenBag {
    TokenBag::from_tokens(
        tokenize(text)
            .into_iter()
            .map(|t| t.text.to_lowercase())
            .filter(|t| !is_punctuation(t) && !DROPPED.contains(&t.as_str())),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Token-overlap precision/recall/F1. Two empty bags agree perfectly; one
/// empty side scores zero.
pub fn overlap_prf(predicted: &TokenBag, gold: &TokenBag) -> Prf {
    match (predicted.is_empty(), gold.is_empty()) {
        (true, true) => {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            }
        }
        (true, false) | (false, true) => {
            return Prf {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            }
        }
        _ => {}
    }
    let common = predicted.common(gold) as f64;
    let precision = common / predicted.len() as f64;
    let recall = common / gold.len() as f64;
    Prf {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

/// Best token-overlap F1 of a predicted string against any single gold
/// answer or the union of all of them.
pub fn best_overlap_f1<S: AsRef<str>>(predicted: &str, gold: &[S]) -> f64 {
    let pred = normalize_answer_tokens(predicted);
    let bags: Vec<TokenBag> = gold.iter().map(|g| normalize_answer_tokens(g.as_ref())).collect();
    let union = TokenBag::union(&bags);
    bags.iter()
        .chain(std::iter::once(&union))
        .filter(|b| !b.is_empty())
        .map(|b| overlap_prf(&pred, b).f1)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Tp,
    Fp,
    Fn,
    Tn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceJudgment {
    pub outcome: Outcome,
    pub predicted_text: Option<String>,
    pub confidence: f64,
}

/// Judges a (possibly null) predicted answer string against gold strings.
/// A span is correct when its bag equals the bag of one gold answer or of
/// all gold answers together; anything else, including a span that
/// normalizes to nothing, is a false positive.
pub fn judge_answer<S: AsRef<str>>(predicted: Option<&str>, confidence: f64, gold: &[S]) -> InstanceJudgment {
    let outcome = match predicted {
        None if gold.is_empty() => Outcome::Tn,
        None => Outcome::Fn,
        Some(text) => {
            let pred = normalize_answer_tokens(text);
            let bags: Vec<TokenBag> = gold
                .iter()
                .map(|g| normalize_answer_tokens(g.as_ref()))
                .filter(|b| !b.is_empty())
                .collect();
            let hit = !pred.is_empty()
                && !bags.is_empty()
                && (bags.contains(&pred) || TokenBag::union(&bags) == pred);
            if hit {
                Outcome::Tp
            } else {
                Outcome::Fp
            }
        }
    };
    InstanceJudgment {
        outcome,
        predicted_text: predicted.map(str::to_string),
        confidence,
    }
}

pub fn judge_instance(prediction: &Prediction, gold: &[AnswerSpan]) -> InstanceJudgment {
    let texts: Vec<&str> = gold.iter().map(|a| a.text.as_str()).collect();
    judge_answer(prediction.answer_text(), prediction.probability, &texts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl MetricsReport {
    pub fn from_counts(counts: Counts) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        MetricsReport {
            precision,
            recall,
            f1: harmonic(precision, recall),
            counts,
        }
    }
}

pub fn aggregate_metrics<'a>(judgments: impl IntoIterator<Item = &'a InstanceJudgment>) -> MetricsReport {
    let mut c = Counts::default();
    for j in judgments {
        match j.outcome {
            Outcome::Tp => c.tp += 1,
            Outcome::Fp => c.fp += 1,
            Outcome::Fn => c.fn_ += 1,
            Outcome::Tn => c.tn += 1,
        }
    }
    MetricsReport::from_counts(c)
}

/// A decoded answer paired with its gold answers, as needed for
/// re-thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub predicted: Option<String>,
    pub probability: f64,
    pub gold: Vec<String>,
}

impl ScoredItem {
    pub fn new(prediction: &Prediction, gold: &[AnswerSpan]) -> Self {
        ScoredItem {
            predicted: prediction.answer_text().map(str::to_string),
            probability: prediction.probability,
            gold: gold.iter().map(|a| a.text.clone()).collect(),
        }
    }

    pub fn judge(&self) -> InstanceJudgment {
        judge_answer(self.predicted.as_deref(), self.probability, &self.gold)
    }

    /// Judgment after suppressing spans below `threshold`.
    pub fn judge_at(&self, threshold: f64) -> InstanceJudgment {
        match &self.predicted {
            Some(_) if self.probability < threshold => judge_answer(None, self.probability, &self.gold),
            _ => self.judge(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Thresholds {
    /// Every distinct span probability observed.
    Auto,
    List(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall at each threshold, ascending. Only span predictions are
/// re-thresholded; nulls stay null.
pub fn pr_curve(items: &[ScoredItem], thresholds: &Thresholds) -> Vec<CurvePoint> {
    let mut ts: Vec<f64> = match thresholds {
        Thresholds::Auto => items
            .iter()
            .filter(|i| i.predicted.is_some())
            .map(|i| i.probability)
            .collect(),
        Thresholds::List(v) => v.clone(),
    };
    ts.retain(|t| t.is_finite());
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    // Judging is threshold independent apart from suppression, so judge
    // each item twice up front.
    let kept: Vec<Outcome> = items.iter().map(|i| i.judge().outcome).collect();
    let dropped: Vec<Outcome> = items.iter().map(|i| i.judge_at(f64::INFINITY).outcome).collect();

    ts.into_iter()
        .map(|t| {
            let mut c = Counts::default();
            for (k, item) in items.iter().enumerate() {
                let suppressed = item.predicted.is_some() && item.probability < t;
                match if suppressed { dropped[k] } else { kept[k] } {
                    Outcome::Tp => c.tp += 1,
                    Outcome::Fp => c.fp += 1,
                    Outcome::Fn => c.fn_ += 1,
                    Outcome::Tn => c.tn += 1,
                }
            }
            let m = MetricsReport::from_counts(c);
            CurvePoint {
                threshold: t,
                precision: m.precision,
                recall: m.recall,
            }
        })
        .collect()
}

/// Metrics broken down by a key such as relation id.
pub fn metrics_by<'a, K: Ord + Clone + 'a>(
    entries: impl IntoIterator<Item = (&'a K, &'a InstanceJudgment)>,
) -> BTreeMap<K, MetricsReport> {
    let mut groups: BTreeMap<K, Vec<&InstanceJudgment>> = BTreeMap::new();
    for (k, j) in entries {
        groups.entry(k.clone()).or_default().push(j);
    }
    groups
        .into_iter()
        .map(|(k, js)| (k, aggregate_metrics(js)))
        .collect()
}
