//! Template acceptance: a candidate is verified when a majority of its
//! verification trials recover the gold answer and the answered spans
//! overlap the gold well on average.

use serde::{Deserialize, Serialize};
use slotshot_core::eval::{best_overlap_f1, judge_answer, Outcome};
use slotshot_core::querify::{TemplateStatus, VerificationStats};

pub const DEFAULT_TRIALS: usize = 10;
pub const MIN_MEAN_OVERLAP: f64 = 0.75;

// Means are sums of a handful of f64 divisions; 0.75 itself must pass.
const OVERLAP_SLACK: f64 = 1e-12;

/// Smallest correct count that is at least 60% of `n_trials`, i.e.
/// `ceil(3n / 5)` in integer arithmetic (6 of 10).
pub fn required_correct(n_trials: usize) -> usize {
    (3 * n_trials).div_ceil(5)
}

/// `mean_overlap` is `None` when no trial produced a span; the overlap
/// filter then has nothing to reject.
pub fn verdict(n_trials: usize, n_correct: usize, mean_overlap: Option<f64>) -> TemplateStatus {
    if n_trials == 0 {
        return TemplateStatus::Candidate;
    }
    let majority = n_correct >= required_correct(n_trials);
    let overlap_ok = mean_overlap.is_none_or(|m| m >= MIN_MEAN_OVERLAP - OVERLAP_SLACK);
    if majority && overlap_ok {
        TemplateStatus::Verified
    } else {
        TemplateStatus::Rejected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub correct: bool,
    /// Best token-overlap F1 against the gold answers; `None` for an
    /// unanswerable response.
    pub overlap_f1: Option<f64>,
}

/// A response is correct when it would be judged a true positive. An
/// unanswerable response never is, whatever the gold.
pub fn judge_response<S: AsRef<str>>(answer: Option<&str>, gold: &[S]) -> TrialOutcome {
    let outcome = judge_answer(answer, 1.0, gold).outcome;
    TrialOutcome {
        correct: outcome == Outcome::Tp,
        overlap_f1: answer.map(|a| best_overlap_f1(a, gold)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub status: TemplateStatus,
    pub stats: VerificationStats,
}

pub fn evaluate_trials(trials: &[TrialOutcome]) -> Evaluation {
    let n_correct = trials.iter().filter(|t| t.correct).count();
    let overlaps: Vec<f64> = trials.iter().filter_map(|t| t.overlap_f1).collect();
    let mean = (!overlaps.is_empty()).then(|| overlaps.iter().sum::<f64>() / overlaps.len() as f64);
    Evaluation {
        status: verdict(trials.len(), n_correct, mean),
        stats: VerificationStats {
            n_trials: trials.len(),
            n_correct,
            mean_overlap_f1: mean.unwrap_or(0.0),
        },
    }
}
