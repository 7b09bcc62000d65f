//! Distant-supervision alignment of knowledge-base facts to sentences, and
//! grouping of aligned records into slot-filling instances.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    find_subsequence, normalized_token_texts, AnswerSpan, Document, Entity, Fact, Sentence,
    SlotFillingInstance,
};

/// One fact aligned to a sentence, before grouping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedRecord {
    pub relation_id: String,
    pub entity_id: String,
    pub document_id: String,
    pub sentence: Sentence,
    pub answer: AnswerSpan,
}

/// Finds the lowest-index sentence of `document` mentioning both the entity
/// (name or alias) and the fact's object, matching lowercased token
/// sequences. The answer span is the first object occurrence.
pub fn align_fact(
    document: &Document,
    entity: &Entity,
    object_text: &str,
) -> Option<(Sentence, AnswerSpan)> {
    let object = normalized_token_texts(object_text);
    if object.is_empty() {
        return None;
    }
    let mentions: Vec<Vec<String>> = entity
        .surface_forms()
        .map(normalized_token_texts)
        .filter(|m| !m.is_empty())
        .collect();

    document.sentences.iter().find_map(|sentence| {
        let hay = sentence.normalized_tokens();
        if !mentions.iter().any(|m| find_subsequence(&hay, m).is_some()) {
            return None;
        }
        let start = find_subsequence(&hay, &object)?;
        let span = AnswerSpan::from_tokens(
            document.id(),
            sentence,
            start,
            start + object.len() - 1,
        )?;
        Some((sentence.clone(), span))
    })
}

/// Groups aligned records by (relation, entity, sentence). Answers are the
/// union of the group's spans, deduplicated on token range and sorted.
/// Output is sorted by key, so it does not depend on input order.
pub fn group_instances(aligned: &[AlignedRecord]) -> Vec<SlotFillingInstance> {
    let mut groups: BTreeMap<(&str, &str, &str, usize), SlotFillingInstance> = BTreeMap::new();
    for rec in aligned {
        let key = (
            rec.relation_id.as_str(),
            rec.entity_id.as_str(),
            rec.document_id.as_str(),
            rec.sentence.index,
        );
        let inst = groups.entry(key).or_insert_with(|| SlotFillingInstance {
            relation_id: rec.relation_id.clone(),
            entity_id: rec.entity_id.clone(),
            document_id: rec.document_id.clone(),
            sentence: rec.sentence.clone(),
            answers: Vec::new(),
        });
        let dup = inst
            .answers
            .iter()
            .any(|a| a.token_start == rec.answer.token_start && a.token_end == rec.answer.token_end);
        if !dup {
            inst.answers.push(rec.answer.clone());
        }
    }
    groups
        .into_values()
        .map(|mut inst| {
            inst.answers.sort_by_key(|a| (a.token_start, a.token_end));
            inst
        })
        .collect()
}

/// Alignment diagnostics. Distant supervision is lossy and the drop rate is
/// worth watching.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub documents: usize,
    pub facts_total: usize,
    pub facts_aligned: usize,
    pub facts_dropped_no_match: usize,
    pub facts_dropped_no_document: usize,
    pub facts_dropped_unknown_entity: usize,
    pub instances: usize,
    pub dropped_per_relation: BTreeMap<String, usize>,
}

/// Aligns every fact against its subject's document and groups the result.
/// Alignment runs in parallel over facts; the output is identical for any
/// thread count.
pub fn build_instances(
    documents: &[Document],
    entities: &[Entity],
    facts: &[Fact],
) -> (Vec<SlotFillingInstance>, BuildReport) {
    let docs: HashMap<&str, &Document> = documents.iter().map(|d| (d.id(), d)).collect();
    let ents: HashMap<&str, &Entity> = entities.iter().map(|e| (e.id.as_str(), e)).collect();

    enum Outcome {
        Aligned(AlignedRecord),
        NoMatch,
        NoDocument,
        UnknownEntity,
    }

    let outcomes: Vec<Outcome> = facts
        .par_iter()
        .map(|fact| {
            let Some(entity) = ents.get(fact.subject_entity_id.as_str()) else {
                return Outcome::UnknownEntity;
            };
            let Some(doc) = docs.get(fact.subject_entity_id.as_str()) else {
                return Outcome::NoDocument;
            };
            match align_fact(doc, entity, &fact.object_text) {
                Some((sentence, answer)) => Outcome::Aligned(AlignedRecord {
                    relation_id: fact.relation_id.clone(),
                    entity_id: entity.id.clone(),
                    document_id: doc.id().to_string(),
                    sentence,
                    answer,
                }),
                None => Outcome::NoMatch,
            }
        })
        .collect();

    let mut report = BuildReport {
        documents: documents.len(),
        facts_total: facts.len(),
        ..Default::default()
    };
    let mut aligned = Vec::new();
    for (fact, outcome) in facts.iter().zip(outcomes) {
        let dropped = match outcome {
            Outcome::Aligned(rec) => {
                aligned.push(rec);
                report.facts_aligned += 1;
                false
            }
            Outcome::NoMatch => {
                report.facts_dropped_no_match += 1;
                true
            }
            Outcome::NoDocument => {
                report.facts_dropped_no_document += 1;
                true
            }
            Outcome::UnknownEntity => {
                report.facts_dropped_unknown_entity += 1;
                true
            }
        };
        if dropped {
            *report
                .dropped_per_relation
                .entry(fact.relation_id.clone())
                .or_default() += 1;
        }
    }
    let instances = group_instances(&aligned);
    report.instances = instances.len();
    (instances, report)
}
