//! Collection and verification tasks.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use slotshot_core::corpus::{find_subsequence, normalized_token_texts, AnswerSpan, Entity, Relation, Sentence, SlotFillingInstance};
use slotshot_core::querify::{instantiate, QuestionTemplate, PLACEHOLDER};
use slotshot_core::seed::rng_for;
use thiserror::Error;

pub const EXAMPLE_SETS: usize = 3;
pub const SENTENCES_PER_SET: usize = 4;
pub const SLOTS_PER_SET: usize = 3;
pub const TEMPLATES_PER_RESPONSE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error("relation {relation} has {available} usable instances, need {needed}")]
    InsufficientInstances {
        relation: String,
        available: usize,
        needed: usize,
    },
}

/// Character offsets, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSentence {
    /// Sentence text with every mention of the entity replaced by `{x}`.
    pub text: String,
    /// Answers to underline, as offsets into `text`.
    pub answers: Vec<CharSpan>,
}

/// Token ranges where the entity is mentioned, longest surface form first,
/// non-overlapping.
fn mentions(sentence: &Sentence, entity: &Entity) -> Vec<(usize, usize)> {
    let toks = sentence.normalized_tokens();
    let mut forms: Vec<Vec<String>> = entity
        .surface_forms()
        .map(normalized_token_texts)
        .filter(|f| !f.is_empty())
        .collect();
    forms.sort_by_key(|f| std::cmp::Reverse(f.len()));
    let mut taken = vec![false; toks.len()];
    let mut out = Vec::new();
    for form in &forms {
        let mut from = 0;
        while let Some(k) = find_subsequence(&toks[from..], form) {
            let (s, e) = (from + k, from + k + form.len() - 1);
            if !taken[s..=e].iter().any(|&t| t) {
                taken[s..=e].iter_mut().for_each(|t| *t = true);
                out.push((s, e));
            }
            from = s + 1;
        }
    }
    out.sort_unstable();
    out
}

/// Masks the entity in the sentence and maps answer offsets into the masked
/// text. Returns `None` when the entity is not mentioned or a mention
/// overlaps an answer.
pub fn mask_entity(sentence: &Sentence, entity: &Entity, answers: &[AnswerSpan]) -> Option<MaskedSentence> {
    let ms = mentions(sentence, entity);
    if ms.is_empty() {
        return None;
    }
    let overlaps = |a: &AnswerSpan| ms.iter().any(|&(s, e)| a.token_start <= e && s <= a.token_end);
    if answers.iter().any(overlaps) {
        return None;
    }
    let char_ranges: Vec<(usize, usize)> = ms
        .iter()
        .map(|&(s, e)| (sentence.tokens[s].start, sentence.tokens[e].end))
        .collect();
    let chars: Vec<char> = sentence.text.chars().collect();
    let mut text = String::new();
    let mut pos = 0;
    for &(s, e) in &char_ranges {
        text.extend(&chars[pos..s]);
        text.push_str(PLACEHOLDER);
        pos = e;
    }
    text.extend(&chars[pos..]);

    let placeholder_len = PLACEHOLDER.chars().count();
    let shift = |offset: usize| -> usize {
        let removed: isize = char_ranges
            .iter()
            .filter(|&&(_, e)| e <= offset)
            .map(|&(s, e)| (e - s) as isize - placeholder_len as isize)
            .sum();
        (offset as isize - removed) as usize
    };
    let answers = answers
        .iter()
        .map(|a| CharSpan {
            start: shift(sentence.tokens[a.token_start].start),
            end: shift(sentence.tokens[a.token_end].end),
        })
        .collect();
    Some(MaskedSentence { text, answers })
}

/// Identifies an instance across task kinds.
pub fn instance_key(inst: &SlotFillingInstance) -> String {
    format!("{}|{}#{}", inst.entity_id, inst.document_id, inst.sentence.index)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionTask {
    pub id: String,
    pub relation_id: String,
    pub show_relation_name: bool,
    /// Present only when `show_relation_name` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_name: Option<String>,
    pub set_index: usize,
    pub slot: usize,
    pub example_sentences: Vec<MaskedSentence>,
}

impl CollectionTask {
    /// Tasks sharing a group go to different annotators.
    pub fn group(&self) -> String {
        format!("{}|{}|{}", self.relation_id, self.show_relation_name, self.set_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectionPlan {
    pub tasks: Vec<CollectionTask>,
    /// Instance keys shown to annotators, excluded from verification.
    pub used: BTreeSet<String>,
}

/// Three sets of four example sentences, each issued to three annotator
/// slots, once with the relation name shown and once hidden.
pub fn create_collection_tasks(
    relation: &Relation,
    instances: &[SlotFillingInstance],
    entities: &HashMap<String, Entity>,
    seed: u64,
) -> Result<CollectionPlan, TaskError> {
    let mut eligible: Vec<(String, MaskedSentence)> = instances
        .iter()
        .filter(|i| i.relation_id == relation.id && !i.answers.is_empty())
        .filter_map(|i| {
            let entity = entities.get(&i.entity_id)?;
            let masked = mask_entity(&i.sentence, entity, &i.answers)?;
            Some((instance_key(i), masked))
        })
        .collect();
    eligible.sort_by(|a, b| a.0.cmp(&b.0));
    eligible.dedup_by(|a, b| a.0 == b.0);
    if eligible.len() < SENTENCES_PER_SET {
        return Err(TaskError::InsufficientInstances {
            relation: relation.id.clone(),
            available: eligible.len(),
            needed: SENTENCES_PER_SET,
        });
    }

    let mut rng = rng_for(seed, &["collection", &relation.id]);
    let sets: Vec<Vec<usize>> = if eligible.len() >= EXAMPLE_SETS * SENTENCES_PER_SET {
        let mut order: Vec<usize> = (0..eligible.len()).collect();
        order.shuffle(&mut rng);
        order.chunks(SENTENCES_PER_SET).take(EXAMPLE_SETS).map(<[usize]>::to_vec).collect()
    } else {
        // too few for disjoint sets; sets may share sentences
        (0..EXAMPLE_SETS)
            .map(|_| sample(&mut rng, eligible.len(), SENTENCES_PER_SET).into_vec())
            .collect()
    };

    let mut tasks = Vec::with_capacity(2 * EXAMPLE_SETS * SLOTS_PER_SET);
    let mut used = BTreeSet::new();
    for show in [true, false] {
        let mode = if show { "shown" } else { "hidden" };
        for (set_index, set) in sets.iter().enumerate() {
            for slot in 0..SLOTS_PER_SET {
                tasks.push(CollectionTask {
                    id: format!("col|{}|{mode}|s{set_index}|a{slot}", relation.id),
                    relation_id: relation.id.clone(),
                    show_relation_name: show,
                    relation_name: show.then(|| relation.name.clone()),
                    set_index,
                    slot,
                    example_sentences: set.iter().map(|&k| eligible[k].1.clone()).collect(),
                });
            }
        }
    }
    for set in &sets {
        used.extend(set.iter().map(|&k| eligible[k].0.clone()));
    }
    Ok(CollectionPlan { tasks, used })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationTask {
    pub id: String,
    pub template_id: String,
    pub relation_id: String,
    pub entity_id: String,
    pub question: String,
    pub sentence: Sentence,
    pub gold: Vec<String>,
}

/// What an annotator sees: no gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationView {
    pub id: String,
    pub template_id: String,
    pub question: String,
    pub sentence: String,
    pub tokens: Vec<String>,
}

impl From<&VerificationTask> for VerificationView {
    fn from(t: &VerificationTask) -> Self {
        VerificationView {
            id: t.id.clone(),
            template_id: t.template_id.clone(),
            question: t.question.clone(),
            sentence: t.sentence.text.clone(),
            tokens: t.sentence.token_texts(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialShortfall {
    pub requested: usize,
    pub produced: usize,
}

/// Up to `n_trials` instances of the template's relation that were not
/// shown during collection, each asked with the instantiated template.
pub fn create_verification_tasks(
    template: &QuestionTemplate,
    instances: &[SlotFillingInstance],
    entities: &HashMap<String, Entity>,
    used: &BTreeSet<String>,
    n_trials: usize,
    seed: u64,
) -> (Vec<VerificationTask>, TrialShortfall) {
    let mut fresh: Vec<(&SlotFillingInstance, String)> = instances
        .iter()
        .filter(|i| i.relation_id == template.relation_id && !i.answers.is_empty())
        .filter_map(|i| {
            let entity = entities.get(&i.entity_id)?;
            let key = instance_key(i);
            if used.contains(&key) {
                return None;
            }
            let question = instantiate(template, entity).ok()?;
            Some((i, question))
        })
        .collect();
    fresh.sort_by_key(|(i, _)| instance_key(i));
    fresh.dedup_by_key(|(i, _)| instance_key(i));
    let mut rng = rng_for(seed, &["verification", &template.id]);
    let mut picks = sample(&mut rng, fresh.len(), n_trials.min(fresh.len())).into_vec();
    picks.sort_unstable();
    let tasks: Vec<VerificationTask> = picks
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let (inst, question) = &fresh[p];
            VerificationTask {
                id: format!("ver|{}|{k}", template.id),
                template_id: template.id.clone(),
                relation_id: template.relation_id.clone(),
                entity_id: inst.entity_id.clone(),
                question: question.clone(),
                sentence: inst.sentence.clone(),
                gold: inst.answers.iter().map(|a| a.text.clone()).collect(),
            }
        })
        .collect();
    let report = TrialShortfall {
        requested: n_trials,
        produced: tasks.len(),
    };
    (tasks, report)
}
