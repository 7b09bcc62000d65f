//! Service state and operations, independent of the HTTP layer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use std::path::Path;

use log::{info, warn};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use slotshot_core::corpus::{Entity, Relation, SlotFillingInstance};
use slotshot_core::querify::{check_placeholder, QuestionTemplate, TemplateSource, TemplateStatus, VerificationStats};
use thiserror::Error;

use crate::rules::{evaluate_trials, judge_response, Evaluation, TrialOutcome, DEFAULT_TRIALS};
use crate::store::EventLog;
use crate::tasks::{
    create_collection_tasks, create_verification_tasks, CollectionTask, TrialShortfall, VerificationTask,
    VerificationView, TEMPLATES_PER_RESPONSE,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("storage: {0}")]
    Storage(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub seed: u64,
    pub n_trials: usize,
    /// Write a snapshot after this many events; 0 disables.
    pub snapshot_every: u64,
}

impl ServiceConfig {
    pub fn new(seed: u64) -> Self {
        ServiceConfig {
            seed,
            n_trials: DEFAULT_TRIALS,
            snapshot_every: 100,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub relations: Vec<Relation>,
    pub entities: HashMap<String, Entity>,
    pub instances: Vec<SlotFillingInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionResponse {
    pub task_id: String,
    pub annotator_id: String,
    pub templates: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VerificationAnswer {
    Span { token_start: usize, token_end: usize },
    Unanswerable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationResponse {
    pub task_id: String,
    pub annotator_id: String,
    pub answer: VerificationAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionReceipt {
    pub task_id: String,
    /// Templates created by this submission.
    pub created: Vec<String>,
    /// Existing templates the submission duplicated.
    pub merged: Vec<String>,
}

#[derive(Debug, Clone)]
enum Applied {
    Collection(CollectionReceipt),
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Event {
    Collection(CollectionResponse),
    Verification(VerificationResponse),
    Evaluated { template_id: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Slot<T, R> {
    task: T,
    // Leases are not durable; a restart frees them.
    #[serde(skip)]
    assigned: Option<String>,
    response: Option<R>,
}

impl<T, R> Slot<T, R> {
    fn new(task: T) -> Self {
        Slot {
            task,
            assigned: None,
            response: None,
        }
    }

    fn open_for(&self, annotator: &str) -> bool {
        self.response.is_none() && self.assigned.as_deref().is_none_or(|a| a == annotator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub template: QuestionTemplate,
    pub authors: BTreeSet<String>,
    pub normalized: String,
    pub task_ids: Vec<String>,
    pub trials: TrialShortfall,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct State {
    collection: BTreeMap<String, Slot<CollectionTask, CollectionResponse>>,
    verification: BTreeMap<String, Slot<VerificationTask, VerificationResponse>>,
    templates: BTreeMap<String, TemplateRecord>,
    /// Instance keys shown during collection, per relation.
    used: BTreeMap<String, BTreeSet<String>>,
    next_template: BTreeMap<String, usize>,
    /// Relations without collection tasks, with the reason.
    skipped: BTreeMap<String, String>,
}

/// Lowercased, whitespace-collapsed template text used for deduplication.
pub fn normalize_template(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub struct AnnotationService {
    corpus: Corpus,
    config: ServiceConfig,
    state: RwLock<State>,
    log: Option<Mutex<EventLog>>,
}

fn check_annotator(id: &str) -> Result<(), ServiceError> {
    if id.trim().is_empty() {
        return Err(ServiceError::Invalid("annotator id must not be empty".into()));
    }
    Ok(())
}

impl AnnotationService {
    /// A service that keeps everything in memory.
    pub fn in_memory(corpus: Corpus, config: ServiceConfig) -> Self {
        let state = Self::initial_state(&corpus, &config);
        AnnotationService {
            corpus,
            config,
            state: RwLock::new(state),
            log: None,
        }
    }

    /// A service persisting to `dir`, restoring any earlier state found
    /// there.
    pub fn open(corpus: Corpus, config: ServiceConfig, dir: &Path) -> Result<Self, ServiceError> {
        let (log, snapshot, events) = EventLog::open::<Event, State>(dir)?;
        let mut state = match snapshot {
            Some(s) => s.state,
            None => Self::initial_state(&corpus, &config),
        };
        let replayed = events.len();
        for env in events {
            Self::apply(&corpus, &config, &mut state, env.event).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("replaying event {}: {e}", env.seq))
            })?;
        }
        if replayed > 0 {
            info!("replayed {replayed} events");
        }
        Ok(AnnotationService {
            corpus,
            config,
            state: RwLock::new(state),
            log: Some(Mutex::new(log)),
        })
    }

    fn initial_state(corpus: &Corpus, config: &ServiceConfig) -> State {
        let mut state = State::default();
        for rel in &corpus.relations {
            match create_collection_tasks(rel, &corpus.instances, &corpus.entities, config.seed) {
                Ok(plan) => {
                    for t in plan.tasks {
                        state.collection.insert(t.id.clone(), Slot::new(t));
                    }
                    state.used.insert(rel.id.clone(), plan.used);
                }
                Err(e) => {
                    warn!("no collection tasks for {}: {e}", rel.id);
                    state.skipped.insert(rel.id.clone(), e.to_string());
                }
            }
        }
        state
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn skipped_relations(&self) -> BTreeMap<String, String> {
        self.state.read().skipped.clone()
    }

    /// Logs, applies, and snapshots when due. Callers validate first, so
    /// apply only fails on a corrupted replay.
    fn commit(&self, state: &mut State, event: Event) -> Result<Applied, ServiceError> {
        let mut log = self.log.as_ref().map(|l| l.lock());
        if let Some(log) = log.as_mut() {
            log.append(&event)?;
        }
        let applied = Self::apply(&self.corpus, &self.config, state, event)?;
        if let Some(log) = log {
            let every = self.config.snapshot_every;
            if every > 0 && log.last_seq() % every == 0 {
                log.write_snapshot(&*state)?;
            }
        }
        Ok(applied)
    }

    pub fn write_snapshot(&self) -> Result<(), ServiceError> {
        if let Some(log) = &self.log {
            let state = self.state.read();
            log.lock().write_snapshot(&*state)?;
        }
        Ok(())
    }

    fn apply(corpus: &Corpus, config: &ServiceConfig, state: &mut State, event: Event) -> Result<Applied, ServiceError> {
        let applied = match event {
            Event::Collection(resp) => Applied::Collection(Self::apply_collection(corpus, config, state, resp)?),
            Event::Verification(resp) => {
                let slot = state
                    .verification
                    .get_mut(&resp.task_id)
                    .ok_or_else(|| ServiceError::NotFound(resp.task_id.clone()))?;
                slot.assigned = Some(resp.annotator_id.clone());
                slot.response = Some(resp);
                Applied::Other
            }
            Event::Evaluated { template_id } => {
                Self::apply_evaluation(state, &template_id)?;
                Applied::Other
            }
        };
        Ok(applied)
    }

    fn apply_collection(
        corpus: &Corpus,
        config: &ServiceConfig,
        state: &mut State,
        resp: CollectionResponse,
    ) -> Result<CollectionReceipt, ServiceError> {
        let slot = state
            .collection
            .get(&resp.task_id)
            .ok_or_else(|| ServiceError::NotFound(resp.task_id.clone()))?;
        let relation_id = slot.task.relation_id.clone();
        let source = if slot.task.show_relation_name {
            TemplateSource::ShownName
        } else {
            TemplateSource::HiddenName
        };
        let mut receipt = CollectionReceipt {
            task_id: resp.task_id.clone(),
            created: vec![],
            merged: vec![],
        };
        for text in &resp.templates {
            let normalized = normalize_template(text);
            let existing = state
                .templates
                .values_mut()
                .find(|r| r.template.relation_id == relation_id && r.normalized == normalized);
            if let Some(rec) = existing {
                rec.authors.insert(resp.annotator_id.clone());
                if !receipt.merged.contains(&rec.template.id) && !receipt.created.contains(&rec.template.id) {
                    receipt.merged.push(rec.template.id.clone());
                }
                continue;
            }
            let n = state.next_template.entry(relation_id.clone()).or_insert(0);
            let id = format!("{relation_id}-c{n:03}");
            *n += 1;
            let template = QuestionTemplate {
                id: id.clone(),
                relation_id: relation_id.clone(),
                text: text.trim().to_string(),
                source,
                status: TemplateStatus::Candidate,
                verification: VerificationStats::default(),
            };
            let empty = BTreeSet::new();
            let used = state.used.get(&relation_id).unwrap_or(&empty);
            let (tasks, trials) = create_verification_tasks(
                &template,
                &corpus.instances,
                &corpus.entities,
                used,
                config.n_trials,
                config.seed,
            );
            if trials.produced < trials.requested {
                warn!("template {id}: only {} of {} verification trials", trials.produced, trials.requested);
            }
            let task_ids = tasks.iter().map(|t| t.id.clone()).collect();
            for t in tasks {
                state.verification.insert(t.id.clone(), Slot::new(t));
            }
            state.templates.insert(
                id.clone(),
                TemplateRecord {
                    template,
                    authors: BTreeSet::from([resp.annotator_id.clone()]),
                    normalized,
                    task_ids,
                    trials,
                },
            );
            receipt.created.push(id);
        }
        let slot = state.collection.get_mut(&resp.task_id).expect("checked above");
        slot.assigned = Some(resp.annotator_id.clone());
        slot.response = Some(resp);
        Ok(receipt)
    }

    fn trials_for(state: &State, record: &TemplateRecord) -> Vec<TrialOutcome> {
        record
            .task_ids
            .iter()
            .filter_map(|id| state.verification.get(id))
            .filter_map(|slot| {
                let resp = slot.response.as_ref()?;
                let answer = match resp.answer {
                    VerificationAnswer::Span { token_start, token_end } => {
                        Some(slot.task.sentence.span_text(token_start, token_end)?)
                    }
                    VerificationAnswer::Unanswerable => None,
                };
                Some(judge_response(answer.as_deref(), &slot.task.gold))
            })
            .collect()
    }

    fn apply_evaluation(state: &mut State, template_id: &str) -> Result<Evaluation, ServiceError> {
        let record = state
            .templates
            .get(template_id)
            .ok_or_else(|| ServiceError::NotFound(template_id.to_string()))?;
        let eval = evaluate_trials(&Self::trials_for(state, record));
        let record = state.templates.get_mut(template_id).expect("checked above");
        record.template.status = eval.status;
        record.template.verification = eval.stats;
        Ok(eval)
    }

    pub fn next_collection_task(&self, annotator: &str) -> Result<Option<CollectionTask>, ServiceError> {
        check_annotator(annotator)?;
        let mut state = self.state.write();
        if let Some(slot) = state
            .collection
            .values()
            .find(|s| s.response.is_none() && s.assigned.as_deref() == Some(annotator))
        {
            return Ok(Some(slot.task.clone()));
        }
        // one slot per example set and annotator
        let mine: BTreeSet<String> = state
            .collection
            .values()
            .filter(|s| s.assigned.as_deref() == Some(annotator))
            .map(|s| s.task.group())
            .collect();
        let pick = state
            .collection
            .values_mut()
            .find(|s| s.assigned.is_none() && s.response.is_none() && !mine.contains(&s.task.group()));
        Ok(pick.map(|slot| {
            slot.assigned = Some(annotator.to_string());
            slot.task.clone()
        }))
    }

    pub fn submit_collection(&self, resp: CollectionResponse) -> Result<CollectionReceipt, ServiceError> {
        check_annotator(&resp.annotator_id)?;
        if resp.templates.len() != TEMPLATES_PER_RESPONSE {
            return Err(ServiceError::Invalid(format!(
                "expected {TEMPLATES_PER_RESPONSE} templates, got {}",
                resp.templates.len()
            )));
        }
        for t in &resp.templates {
            check_placeholder(t).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        }
        let mut state = self.state.write();
        let slot = state
            .collection
            .get(&resp.task_id)
            .ok_or_else(|| ServiceError::NotFound(format!("collection task {}", resp.task_id)))?;
        if slot.response.is_some() {
            return Err(ServiceError::Conflict(format!("task {} already answered", resp.task_id)));
        }
        if !slot.open_for(&resp.annotator_id) {
            return Err(ServiceError::Conflict(format!("task {} is assigned to another annotator", resp.task_id)));
        }
        match self.commit(&mut state, Event::Collection(resp))? {
            Applied::Collection(r) => Ok(r),
            other => unreachable!("unexpected {other:?}"),
        }
    }

    pub fn next_verification_task(&self, annotator: &str) -> Result<Option<VerificationView>, ServiceError> {
        check_annotator(annotator)?;
        let mut state = self.state.write();
        if let Some(slot) = state
            .verification
            .values()
            .find(|s| s.response.is_none() && s.assigned.as_deref() == Some(annotator))
        {
            return Ok(Some(VerificationView::from(&slot.task)));
        }
        let blocked: BTreeSet<String> = state
            .templates
            .values()
            .filter(|r| r.template.status != TemplateStatus::Candidate || r.authors.contains(annotator))
            .map(|r| r.template.id.clone())
            .collect();
        let pick = state
            .verification
            .values_mut()
            .find(|s| s.assigned.is_none() && s.response.is_none() && !blocked.contains(&s.task.template_id));
        Ok(pick.map(|slot| {
            slot.assigned = Some(annotator.to_string());
            VerificationView::from(&slot.task)
        }))
    }

    pub fn submit_verification(&self, resp: VerificationResponse) -> Result<(), ServiceError> {
        check_annotator(&resp.annotator_id)?;
        let mut state = self.state.write();
        let slot = state
            .verification
            .get(&resp.task_id)
            .ok_or_else(|| ServiceError::NotFound(format!("verification task {}", resp.task_id)))?;
        if slot.response.is_some() {
            return Err(ServiceError::Conflict(format!("task {} already answered", resp.task_id)));
        }
        if !slot.open_for(&resp.annotator_id) {
            return Err(ServiceError::Conflict(format!("task {} is assigned to another annotator", resp.task_id)));
        }
        if let VerificationAnswer::Span { token_start, token_end } = resp.answer {
            let n = slot.task.sentence.len();
            if token_start > token_end || token_end >= n {
                return Err(ServiceError::Invalid(format!(
                    "span [{token_start}, {token_end}] outside sentence of {n} tokens"
                )));
            }
        }
        self.commit(&mut state, Event::Verification(resp))?;
        Ok(())
    }

    /// Applies the acceptance rules to the template's responses so far. A
    /// template without responses stays a candidate and nothing is logged.
    pub fn evaluate(&self, template_id: &str) -> Result<TemplateRecord, ServiceError> {
        let mut state = self.state.write();
        let record = state
            .templates
            .get(template_id)
            .ok_or_else(|| ServiceError::NotFound(format!("template {template_id}")))?;
        if Self::trials_for(&state, record).is_empty() {
            return Ok(record.clone());
        }
        self.commit(
            &mut state,
            Event::Evaluated {
                template_id: template_id.to_string(),
            },
        )?;
        Ok(state.templates[template_id].clone())
    }

    pub fn templates(&self, relation: Option<&str>, status: Option<TemplateStatus>) -> Vec<TemplateRecord> {
        self.state
            .read()
            .templates
            .values()
            .filter(|r| relation.is_none_or(|rel| r.template.relation_id == rel))
            .filter(|r| status.is_none_or(|s| r.template.status == s))
            .cloned()
            .collect()
    }

    /// Gold-bearing verification tasks of a template, for audits and tests.
    pub fn verification_tasks(&self, template_id: &str) -> Vec<VerificationTask> {
        let state = self.state.read();
        state
            .templates
            .get(template_id)
            .map(|r| {
                r.task_ids
                    .iter()
                    .filter_map(|id| state.verification.get(id).map(|s| s.task.clone()))
                    .collect()
            })
            .unwrap_or_default()
    }
}
