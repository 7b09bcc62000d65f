//! Question templates: one natural-language question per relation with a
//! single `{x}` entity placeholder, instantiated for every instance of the
//! relation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Entity, Polarity, RCExample, SlotFillingInstance};

pub const PLACEHOLDER: &str = "{x}";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {text:?} has {count} placeholders, expected exactly one")]
    Malformed { text: String, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSource {
    ShownName,
    HiddenName,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateStatus {
    Candidate,
    Verified,
    Rejected,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationStats {
    pub n_trials: usize,
    pub n_correct: usize,
    pub mean_overlap_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub id: String,
    pub relation_id: String,
    pub text: String,
    pub source: TemplateSource,
    pub status: TemplateStatus,
    #[serde(default)]
    pub verification: VerificationStats,
}

impl QuestionTemplate {
    /// A manually written, already verified template.
    pub fn verified(id: impl Into<String>, relation_id: impl Into<String>, text: impl Into<String>) -> Self {
        QuestionTemplate {
            id: id.into(),
            relation_id: relation_id.into(),
            text: text.into(),
            source: TemplateSource::Manual,
            status: TemplateStatus::Verified,
            verification: VerificationStats::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        check_placeholder(&self.text)?;
        Ok(())
    }
}

pub fn placeholder_count(text: &str) -> usize {
    text.matches(PLACEHOLDER).count()
}

pub fn check_placeholder(text: &str) -> Result<(), TemplateError> {
    match placeholder_count(text) {
        1 => Ok(()),
        count => Err(TemplateError::Malformed {
            text: text.to_string(),
            count,
        }),
    }
}

/// Replaces the placeholder with the entity's canonical name.
pub fn instantiate(template: &QuestionTemplate, entity: &Entity) -> Result<String, TemplateError> {
    instantiate_text(&template.text, &entity.name)
}

pub fn instantiate_text(text: &str, name: &str) -> Result<String, TemplateError> {
    check_placeholder(text)?;
    Ok(text.replacen(PLACEHOLDER, name, 1))
}

/// Id of the positive example for (template, instance).
pub fn example_id(template_id: &str, instance: &SlotFillingInstance) -> String {
    format!(
        "{}|{}|{}#{}|{}",
        instance.relation_id, instance.entity_id, instance.document_id, instance.sentence.index, template_id
    )
}

/// Crosses verified templates with instances of the same relation. Output is
/// sorted by (relation, instance key, template id). Non-verified templates
/// and instances whose entity is unknown are skipped.
pub fn join_schema(
    templates: &[QuestionTemplate],
    instances: &[SlotFillingInstance],
    entities: &HashMap<String, Entity>,
) -> Vec<RCExample> {
    let mut by_relation: BTreeMap<&str, Vec<&QuestionTemplate>> = BTreeMap::new();
    for t in templates
        .iter()
        .filter(|t| t.status == TemplateStatus::Verified && t.validate().is_ok())
    {
        by_relation.entry(t.relation_id.as_str()).or_default().push(t);
    }
    for ts in by_relation.values_mut() {
        ts.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let mut sorted: Vec<&SlotFillingInstance> = instances.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.relation_id, &a.entity_id, &a.document_id, a.sentence.index).cmp(&(
            &b.relation_id,
            &b.entity_id,
            &b.document_id,
            b.sentence.index,
        ))
    });

    let mut out = Vec::new();
    for inst in sorted {
        let Some(ts) = by_relation.get(inst.relation_id.as_str()) else {
            continue;
        };
        let Some(entity) = entities.get(&inst.entity_id) else {
            log::warn!("instance entity {} unknown; skipped", inst.entity_id);
            continue;
        };
        for t in ts {
            let question = instantiate(t, entity).expect("validated above");
            out.push(RCExample {
                id: example_id(&t.id, inst),
                relation_id: inst.relation_id.clone(),
                entity_id: inst.entity_id.clone(),
                template_id: Some(t.id.clone()),
                question,
                document_id: inst.document_id.clone(),
                sentence: inst.sentence.clone(),
                answers: inst.answers.clone(),
                polarity: Polarity::Positive,
            });
        }
    }
    out
}
