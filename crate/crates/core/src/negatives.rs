//! Unanswerable question/sentence pairs: a question about relation R1 of an
//! entity, asked against a sentence expressing a different relation R2 of
//! the same entity, kept only if the sentence contains none of the entity's
//! R1 answers.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    find_subsequence, normalized_token_texts, Entity, Polarity, RCExample, Sentence,
    SlotFillingInstance,
};
use crate::querify::{instantiate, QuestionTemplate, TemplateStatus};
use crate::seed::rng_for;

/// True iff any answer's lowercased token sequence occurs contiguously in
/// the sentence's lowercased tokens.
pub fn contains_answer<S: AsRef<str>>(sentence: &Sentence, answers: &[S]) -> bool {
    let hay = sentence.normalized_tokens();
    answers
        .iter()
        .any(|a| find_subsequence(&hay, &normalized_token_texts(a.as_ref())).is_some())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NegativeReport {
    pub positives: usize,
    pub requested: usize,
    pub candidates: usize,
    pub rejected_containing_answer: usize,
    pub produced: usize,
}

impl NegativeReport {
    pub fn shortfall(&self) -> usize {
        self.requested.saturating_sub(self.produced)
    }
}

struct Candidate {
    priority: u64,
    example: RCExample,
}

fn negative_id(template_id: &str, entity_id: &str, inst: &SlotFillingInstance, relation: &str) -> String {
    format!(
        "neg|{relation}|{entity_id}|{}#{}|{template_id}",
        inst.document_id, inst.sentence.index
    )
}

/// Samples negatives uniformly from all valid (R1 template, R2 sentence)
/// pairings. `ratio` is positives per negative; the target count is the
/// number of positives `join_schema` would produce divided by `ratio`.
///
/// Each candidate gets a random priority drawn from a stream keyed by
/// `(seed, entity_id)`; the lowest priorities win. This is a uniform sample
/// without replacement and stays deterministic under parallel enumeration.
pub fn generate_negatives(
    instances: &[SlotFillingInstance],
    templates: &[QuestionTemplate],
    entities: &HashMap<String, Entity>,
    ratio: f64,
    seed: u64,
) -> (Vec<RCExample>, NegativeReport) {
    assert!(ratio > 0.0 && ratio.is_finite(), "ratio must be positive");

    let mut templates_by_rel: BTreeMap<&str, Vec<&QuestionTemplate>> = BTreeMap::new();
    for t in templates
        .iter()
        .filter(|t| t.status == TemplateStatus::Verified && t.validate().is_ok())
    {
        templates_by_rel.entry(t.relation_id.as_str()).or_default().push(t);
    }
    for ts in templates_by_rel.values_mut() {
        ts.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let positives: usize = instances
        .iter()
        .map(|i| templates_by_rel.get(i.relation_id.as_str()).map_or(0, Vec::len))
        .sum();
    let requested = (positives as f64 / ratio).round() as usize;

    let mut by_entity: BTreeMap<&str, Vec<&SlotFillingInstance>> = BTreeMap::new();
    for inst in instances {
        by_entity.entry(inst.entity_id.as_str()).or_default().push(inst);
    }

    let per_entity: Vec<(Vec<Candidate>, usize)> = by_entity
        .par_iter()
        .map(|(&entity_id, insts)| {
            let mut out = Vec::new();
            let mut rejected = 0;
            let relations: BTreeSet<&str> = insts.iter().map(|i| i.relation_id.as_str()).collect();
            let Some(entity) = entities.get(entity_id) else {
                return (out, rejected);
            };
            if relations.len() < 2 {
                return (out, rejected);
            }
            let mut sorted = insts.clone();
            sorted.sort_by(|a, b| {
                (&a.relation_id, &a.document_id, a.sentence.index)
                    .cmp(&(&b.relation_id, &b.document_id, b.sentence.index))
            });
            let mut rng = rng_for(seed, &["negatives", entity_id]);
            let mut seen = BTreeSet::new();
            for &r1 in &relations {
                let Some(ts) = templates_by_rel.get(r1) else {
                    continue;
                };
                let gold: Vec<&str> = sorted
                    .iter()
                    .filter(|i| i.relation_id == r1)
                    .flat_map(|i| i.answers.iter().map(|a| a.text.as_str()))
                    .collect();
                for other in sorted.iter().filter(|i| i.relation_id != r1) {
                    if !seen.insert((r1, other.document_id.as_str(), other.sentence.index)) {
                        continue;
                    }
                    if contains_answer(&other.sentence, &gold) {
                        rejected += ts.len();
                        continue;
                    }
                    for t in ts {
                        let question = instantiate(t, entity).expect("validated template");
                        out.push(Candidate {
                            priority: rng.gen(),
                            example: RCExample {
                                id: negative_id(&t.id, entity_id, other, r1),
                                relation_id: r1.to_string(),
                                entity_id: entity_id.to_string(),
                                template_id: Some(t.id.clone()),
                                question,
                                document_id: other.document_id.clone(),
                                sentence: other.sentence.clone(),
                                answers: Vec::new(),
                                polarity: Polarity::Negative,
                            },
                        });
                    }
                }
            }
            (out, rejected)
        })
        .collect();

    let mut report = NegativeReport {
        positives,
        requested,
        ..Default::default()
    };
    let mut all: Vec<Candidate> = Vec::new();
    for (cands, rejected) in per_entity {
        report.rejected_containing_answer += rejected;
        all.extend(cands);
    }
    report.candidates = all.len();
    all.sort_by(|a, b| a.priority.cmp(&b.priority).then_with(|| a.example.id.cmp(&b.example.id)));
    all.truncate(requested);
    let mut chosen: Vec<RCExample> = all.into_iter().map(|c| c.example).collect();
    chosen.sort_by(|a, b| a.id.cmp(&b.id));
    report.produced = chosen.len();
    if report.shortfall() > 0 {
        log::warn!(
            "negatives: requested {} but only {} candidates available",
            report.requested,
            report.produced
        );
    }
    (chosen, report)
}
