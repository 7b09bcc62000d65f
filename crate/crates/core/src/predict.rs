//! Running a scorer over reading-comprehension examples.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Polarity, RCExample, SentenceRef};
use crate::engine::{decode, ensemble, DecodeParams, EngineError, Prediction, Scorer, ScorerError};
use crate::eval::ScoredItem;
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("scorer failed on {example_id}: {source}")]
    Scorer {
        example_id: String,
        #[source]
        source: ScorerError,
    },
    #[error("decode failed on {example_id}: {source}")]
    Decode {
        example_id: String,
        #[source]
        source: EngineError,
    },
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub answer_text: Option<String>,
    pub probability: f64,
    pub null_probability: f64,
}

impl PredictionRecord {
    pub fn new(example_id: impl Into<String>, p: &Prediction) -> Self {
        PredictionRecord {
            example_id: example_id.into(),
            answer_text: p.answer_text().map(str::to_string),
            probability: p.probability,
            null_probability: p.null_probability,
        }
    }

    pub fn scored_item(&self, gold: &[String]) -> ScoredItem {
        ScoredItem {
            predicted: self.answer_text.clone(),
            probability: self.probability,
            gold: gold.to_vec(),
        }
    }
}

/// Scores and decodes a single example.
pub fn predict_example(scorer: &dyn Scorer, example: &RCExample, params: &DecodeParams) -> Result<Prediction, PredictError> {
    let scores = scorer
        .score(&example.question_tokens(), &example.sentence.token_texts())
        .map_err(|source| PredictError::Scorer {
            example_id: example.id.clone(),
            source,
        })?;
    decode(&scores, &example.sentence, params).map_err(|source| PredictError::Decode {
        example_id: example.id.clone(),
        source,
    })
}

/// Results for a batch of examples, in input order. On failure `records`
/// holds the longest prefix that succeeded.
#[derive(Debug)]
pub struct BatchOutcome<T> {
    pub records: Vec<T>,
    pub error: Option<PredictError>,
}

fn run_ordered<T: Send, I: Sync>(
    items: &[I],
    parallel: bool,
    f: impl Fn(&I) -> Result<T, PredictError> + Sync,
) -> BatchOutcome<T> {
    let results: Vec<Result<T, PredictError>> = if parallel {
        items.par_iter().map(&f).collect()
    } else {
        // stop at the first failure rather than hammering a broken scorer
        let mut out = Vec::with_capacity(items.len());
        for it in items {
            let r = f(it);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    };
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(v) => records.push(v),
            Err(e) => {
                return BatchOutcome {
                    records,
                    error: Some(e),
                }
            }
        }
    }
    BatchOutcome { records, error: None }
}

/// One prediction per example. Shareable scorers run in parallel on the
/// current rayon pool.
pub fn predict_all(scorer: &dyn Scorer, examples: &[RCExample], params: &DecodeParams) -> BatchOutcome<PredictionRecord> {
    run_ordered(examples, scorer.shareable(), |ex| {
        predict_example(scorer, ex, params).map(|p| PredictionRecord::new(&ex.id, &p))
    })
}

/// Examples asking about the same fact in the same sentence, differing only
/// in the question template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleGroup {
    pub relation_id: String,
    pub entity_id: String,
    pub sentence: SentenceRef,
    pub polarity: Polarity,
    /// Indices into the example slice, sorted by example id.
    pub members: Vec<usize>,
    /// The sampled subset of `members`, sorted by example id.
    pub sampled: Vec<usize>,
}

/// Groups examples and samples up to `k` questions per group. Groups come
/// back in key order.
pub fn ensemble_groups(examples: &[RCExample], k: usize, seed: u64) -> Vec<EnsembleGroup> {
    type Key = (String, String, SentenceRef, Polarity);
    let mut groups: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        groups
            .entry((ex.relation_id.clone(), ex.entity_id.clone(), ex.sentence_ref(), ex.polarity))
            .or_default()
            .push(i);
    }
    groups
        .into_iter()
        .map(|((relation_id, entity_id, sentence, polarity), mut members)| {
            members.sort_by(|&a, &b| examples[a].id.cmp(&examples[b].id));
            let label = format!(
                "{relation_id}|{entity_id}|{}#{}|{polarity:?}",
                sentence.document_id, sentence.sentence_index
            );
            let mut rng = rng_for(seed, &["ensemble", &label]);
            let mut picks = sample(&mut rng, members.len(), k.min(members.len())).into_vec();
            picks.sort_unstable();
            let sampled = picks.into_iter().map(|p| members[p]).collect();
            EnsembleGroup {
                relation_id,
                entity_id,
                sentence,
                polarity,
                members,
                sampled,
            }
        })
        .collect()
}

/// One record per group, keyed by the smallest sampled example id.
pub fn predict_ensemble(
    scorer: &dyn Scorer,
    examples: &[RCExample],
    k: usize,
    seed: u64,
    params: &DecodeParams,
) -> BatchOutcome<PredictionRecord> {
    let groups = ensemble_groups(examples, k, seed);
    run_ordered(&groups, scorer.shareable(), |g| {
        let mut preds = Vec::with_capacity(g.sampled.len());
        for &i in &g.sampled {
            let ex = &examples[i];
            preds.push((ex.id.clone(), predict_example(scorer, ex, params)?));
        }
        let lead = &examples[g.sampled[0]].id;
        let combined = ensemble(&preds).map_err(|source| PredictError::Decode {
            example_id: lead.clone(),
            source,
        })?;
        Ok(PredictionRecord::new(lead, &combined))
    })
}
