use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use slotshot_annotation::{AnnotationService, Corpus, ServiceConfig};
use slotshot_core::corpus::{ContractError, DocumentRecord, Entity, Fact, Polarity, RCExample, Relation, SlotFillingInstance};
use slotshot_core::dataset::build_instances;
use slotshot_core::engine::{DecodeParams, Scorer};
use slotshot_core::eval::{aggregate_metrics, metrics_by, pr_curve, InstanceJudgment, MetricsReport, Thresholds};
use slotshot_core::experiments::{
    split_unseen_entities, split_unseen_relations, split_unseen_templates, Part, RelationPartition, SizeTargets,
    SplitError, SplitKind, SplitSpec,
};
use slotshot_core::jsonl::{read_jsonl, write_jsonl, JsonlError};
use slotshot_core::negatives::generate_negatives;
use slotshot_core::predict::{predict_all, predict_ensemble, BatchOutcome, PredictionRecord};
use slotshot_core::querify::{join_schema, QuestionTemplate};
use slotshot_core::scorers::{Endpoint, ExternalScorer, LexicalScorer, RandomNeScorer};
use slotshot_core::synthetic::{SyntheticConfig, SyntheticCorpus, MAX_RELATIONS};

use crate::{Cli, CliError, Command, SplitKindArg};

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ContractError> for CliError {
    fn from(e: ContractError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        match e {
            SplitError::InvalidSpec(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn need_seed(cli: &Cli, what: &str) -> Result<u64, CliError> {
    cli.seed
        .ok_or_else(|| CliError::Usage(format!("--seed is required for {what}")))
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    Ok(read_jsonl(path)?)
}

fn save<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(write_jsonl(path, records)?)
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn validated<T>(items: Vec<T>, check: impl Fn(&T) -> Result<(), ContractError>) -> Result<Vec<T>, CliError> {
    for it in &items {
        check(it)?;
    }
    Ok(items)
}

fn load_entities(path: &Path) -> Result<HashMap<String, Entity>, CliError> {
    let entities: Vec<Entity> = validated(load(path)?, Entity::validate)?;
    let mut map = HashMap::with_capacity(entities.len());
    for e in entities {
        let id = e.id.clone();
        if map.insert(id.clone(), e).is_some() {
            return Err(CliError::Data(format!("{}: duplicate entity {id}", path.display())));
        }
    }
    Ok(map)
}

fn load_templates(path: &Path) -> Result<Vec<QuestionTemplate>, CliError> {
    let templates: Vec<QuestionTemplate> = load(path)?;
    for t in &templates {
        t.validate()
            .map_err(|e| CliError::Data(format!("{}: template {}: {e}", path.display(), t.id)))?;
    }
    Ok(templates)
}

fn load_instances(path: &Path, entities: Option<&HashMap<String, Entity>>) -> Result<Vec<SlotFillingInstance>, CliError> {
    let instances: Vec<SlotFillingInstance> = load(path)?;
    for inst in &instances {
        inst.sentence.validate()?;
        if let Some(e) = entities.and_then(|m| m.get(&inst.entity_id)) {
            inst.validate(e)?;
        }
    }
    Ok(instances)
}

fn load_examples(paths: &[PathBuf]) -> Result<Vec<RCExample>, CliError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for p in paths {
        let examples: Vec<RCExample> = validated(load(p)?, RCExample::validate)?;
        for ex in examples {
            if !seen.insert(ex.id.clone()) {
                return Err(CliError::Data(format!("{}: duplicate example id {}", p.display(), ex.id)));
            }
            out.push(ex);
        }
    }
    Ok(out)
}

fn parse_triple(flag: &str, text: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || CliError::Usage(format!("--{flag} expects TRAIN,DEV,TEST, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n = |s: &str| s.parse::<usize>().map_err(|_| bad());
    Ok((n(parts[0])?, n(parts[1])?, n(parts[2])?))
}

pub(crate) fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Build {
            docs,
            entities,
            facts,
            out,
            report,
        } => {
            let records: Vec<DocumentRecord> = load(docs)?;
            let documents = records
                .into_iter()
                .map(|r| {
                    let d = r.into_document()?;
                    d.validate()?;
                    Ok(d)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let entity_map = load_entities(entities)?;
            let mut entity_list: Vec<Entity> = entity_map.into_values().collect();
            entity_list.sort_by(|a, b| a.id.cmp(&b.id));
            let facts: Vec<Fact> = validated(load(facts)?, Fact::validate)?;
            let (instances, rep) = build_instances(&documents, &entity_list, &facts);
            info!(
                "aligned {}/{} facts into {} instances",
                rep.facts_aligned, rep.facts_total, rep.instances
            );
            save(out, &instances)?;
            if let Some(path) = report {
                save_json(path, &rep)?;
            }
            Ok(())
        }

        Command::Querify {
            templates,
            instances,
            entities,
            out,
        } => {
            let templates = load_templates(templates)?;
            let entities = load_entities(entities)?;
            let instances = load_instances(instances, Some(&entities))?;
            let examples = join_schema(&templates, &instances, &entities);
            info!("{} examples", examples.len());
            save(out, &examples)
        }

        Command::Negatives {
            instances,
            templates,
            entities,
            ratio,
            out,
            report,
        } => {
            let seed = need_seed(cli, "negatives")?;
            if !(*ratio > 0.0 && ratio.is_finite()) {
                return Err(CliError::Usage("--ratio must be positive".into()));
            }
            let templates = load_templates(templates)?;
            let entities = load_entities(entities)?;
            let instances = load_instances(instances, Some(&entities))?;
            let (negatives, rep) = generate_negatives(&instances, &templates, &entities, *ratio, seed);
            if rep.shortfall() > 0 {
                warn!("requested {} negatives, produced {}", rep.requested, rep.produced);
            }
            save(out, &negatives)?;
            if let Some(path) = report {
                save_json(path, &rep)?;
            }
            Ok(())
        }

        Command::Split {
            kind,
            folds,
            inputs,
            templates,
            out,
            train,
            dev,
            test,
            per_template,
            relation_partition,
            ratio,
        } => {
            let seed = need_seed(cli, "split")?;
            let kind = match kind {
                SplitKindArg::Entities => SplitKind::UnseenEntities,
                SplitKindArg::Templates => SplitKind::UnseenTemplates,
                SplitKindArg::Relations => SplitKind::UnseenRelations,
            };
            let mut spec = SplitSpec::new(kind, seed, *folds);
            spec.negative_ratio = *ratio;
            spec.targets = SizeTargets {
                train: train.unwrap_or(spec.targets.train),
                dev: dev.unwrap_or(spec.targets.dev),
                test: test.unwrap_or(spec.targets.test),
            };
            if let Some(text) = per_template {
                let (train, dev, test) = parse_triple("per-template", text)?;
                spec.per_template = SizeTargets { train, dev, test };
            }
            if let Some(text) = relation_partition {
                let (train, dev, test) = parse_triple("relation-partition", text)?;
                spec.relation_partition = Some(RelationPartition { train, dev, test });
            }
            let examples = load_examples(inputs)?;
            let outcome = match kind {
                SplitKind::UnseenEntities => split_unseen_entities(&examples, &spec)?,
                SplitKind::UnseenRelations => split_unseen_relations(&examples, &spec)?,
                SplitKind::UnseenTemplates => {
                    let path = templates
                        .as_ref()
                        .ok_or_else(|| CliError::Usage("--templates is required for --kind templates".into()))?;
                    split_unseen_templates(&examples, &load_templates(path)?, &spec)?
                }
            };
            for (rel, why) in &outcome.excluded {
                warn!("relation {rel} excluded: {why}");
            }
            for fold in &outcome.folds {
                let dir = out.join(format!("fold-{}", fold.index));
                for part in Part::ALL {
                    save(&dir.join(format!("{}.jsonl", part.name())), fold.split.part(part))?;
                }
                if let Some(seen) = &fold.seen_test {
                    save(&dir.join("test_seen.jsonl"), seen)?;
                }
                for s in &fold.shortfalls {
                    warn!(
                        "fold {} {}: requested {}, produced {}",
                        fold.index,
                        s.part.name(),
                        s.requested,
                        s.produced
                    );
                }
            }
            save_json(&out.join("manifest.json"), &outcome.manifest(&spec))
        }

        Command::Predict {
            scorer,
            input,
            out,
            bias,
            p_min,
            max_span_len,
            ensemble,
            timeout_ms,
        } => {
            let examples = load_examples(std::slice::from_ref(input))?;
            let scorer = make_scorer(scorer, cli.seed, Duration::from_millis(*timeout_ms))?;
            let params = DecodeParams {
                bias: bias.or(scorer.bias()).unwrap_or(0.0),
                p_min: *p_min,
                max_span_len: *max_span_len,
            };
            params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let outcome: BatchOutcome<PredictionRecord> = match ensemble {
                Some(0) => return Err(CliError::Usage("--ensemble must be positive".into())),
                Some(k) => {
                    let seed = need_seed(cli, "--ensemble")?;
                    predict_ensemble(scorer.as_ref(), &examples, *k, seed, &params)
                }
                None => predict_all(scorer.as_ref(), &examples, &params),
            };
            let marker = partial_marker(out);
            save(out, &outcome.records)?;
            match outcome.error {
                Some(e) => {
                    fs::write(&marker, format!("{e}\n")).map_err(|err| io_err(&marker, err))?;
                    Err(CliError::Scorer(format!(
                        "{e} ({} predictions written, marked partial)",
                        outcome.records.len()
                    )))
                }
                None => {
                    if marker.exists() {
                        fs::remove_file(&marker).map_err(|e| io_err(&marker, e))?;
                    }
                    Ok(())
                }
            }
        }

        Command::Eval { pred, gold, out } => {
            let (judged, unmatched) = judge_files(pred, gold)?;
            let report = EvalReport::new(&judged, unmatched);
            if unmatched > 0 {
                info!("{unmatched} gold examples have no prediction");
            }
            save_json(out, &report)
        }

        Command::Curve {
            pred,
            gold,
            out,
            thresholds,
        } => {
            let (judged, _) = judge_files(pred, gold)?;
            let thresholds = match thresholds {
                None => Thresholds::Auto,
                Some(text) => Thresholds::List(
                    text.split(',')
                        .map(|t| {
                            t.trim()
                                .parse::<f64>()
                                .ok()
                                .filter(|v| v.is_finite())
                                .ok_or_else(|| CliError::Usage(format!("bad threshold {t:?}")))
                        })
                        .collect::<Result<_, _>>()?,
                ),
            };
            let items: Vec<_> = judged.iter().map(|j| j.item.clone()).collect();
            let points = pr_curve(&items, &thresholds);
            let mut w = csv::Writer::from_path(out).map_err(|e| io_err(out, e))?;
            w.write_record(["threshold", "precision", "recall"])
                .map_err(|e| io_err(out, e))?;
            for p in points {
                w.write_record([p.threshold.to_string(), p.precision.to_string(), p.recall.to_string()])
                    .map_err(|e| io_err(out, e))?;
            }
            w.flush().map_err(|e| io_err(out, e))
        }

        Command::Serve {
            port,
            host,
            data,
            relations,
            entities,
            instances,
            trials,
            snapshot_every,
        } => {
            let seed = need_seed(cli, "serve")?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
            let relations: Vec<Relation> = validated(load(relations)?, Relation::validate)?;
            let entities = load_entities(entities)?;
            let instances = load_instances(instances, Some(&entities))?;
            let config = ServiceConfig {
                seed,
                n_trials: *trials,
                snapshot_every: *snapshot_every,
            };
            let corpus = Corpus {
                relations,
                entities,
                instances,
            };
            let service = AnnotationService::open(corpus, config, data).map_err(|e| CliError::Scorer(e.to_string()))?;
            for (rel, why) in service.skipped_relations() {
                warn!("relation {rel}: {why}");
            }
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Scorer(e.to_string()))?;
            runtime
                .block_on(slotshot_annotation::http::serve(Arc::new(service), addr))
                .map_err(|e| CliError::Scorer(e.to_string()))
        }

        Command::Generate {
            out,
            relations,
            entities,
        } => {
            let seed = need_seed(cli, "generate")?;
            if !(1..=MAX_RELATIONS).contains(relations) {
                return Err(CliError::Usage(format!("--relations must be between 1 and {MAX_RELATIONS}")));
            }
            let config = SyntheticConfig {
                relations: *relations,
                entities: *entities,
                ..SyntheticConfig::default()
            };
            let corpus = SyntheticCorpus::generate(&config, seed);
            let docs: Vec<DocumentRecord> = corpus
                .documents
                .iter()
                .map(|d| DocumentRecord {
                    entity_id: d.entity_id.clone(),
                    text: None,
                    sentences: Some(d.sentences.iter().map(|s| s.text.clone()).collect()),
                })
                .collect();
            save(&out.join("relations.jsonl"), &corpus.relations)?;
            save(&out.join("entities.jsonl"), &corpus.entities)?;
            save(&out.join("docs.jsonl"), &docs)?;
            save(&out.join("facts.jsonl"), &corpus.facts)?;
            save(&out.join("templates.jsonl"), &corpus.templates)
        }
    }
}

/// `<out>.partial`, present while a predictions file is incomplete.
pub(crate) fn partial_marker(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    out.with_file_name(name)
}

fn make_scorer(spec: &str, seed: Option<u64>, timeout: Duration) -> Result<Box<dyn Scorer>, CliError> {
    match spec {
        "lexical" => Ok(Box::new(LexicalScorer::default())),
        "random-ne" => {
            let seed = seed.ok_or_else(|| CliError::Usage("--seed is required for the random-ne scorer".into()))?;
            Ok(Box::new(RandomNeScorer::new(seed)))
        }
        other => {
            let address = other
                .strip_prefix("external:")
                .ok_or_else(|| CliError::Usage(format!("unknown scorer {other:?}")))?;
            let endpoint = Endpoint::parse(address).map_err(|e| CliError::Usage(e.to_string()))?;
            let scorer = ExternalScorer::connect(&endpoint, timeout).map_err(|e| CliError::Scorer(e.to_string()))?;
            Ok(Box::new(scorer))
        }
    }
}

struct Judged {
    relation_id: String,
    polarity: Polarity,
    item: slotshot_core::eval::ScoredItem,
    judgment: InstanceJudgment,
}

/// Judges every prediction. Returns the judgments in prediction order and
/// the number of gold examples without a prediction.
fn judge_files(pred: &Path, gold: &Path) -> Result<(Vec<Judged>, usize), CliError> {
    let preds: Vec<PredictionRecord> = load(pred)?;
    let gold = load_examples(&[gold.to_path_buf()])?;
    let by_id: HashMap<&str, &RCExample> = gold.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut seen = HashSet::new();
    for p in &preds {
        if !by_id.contains_key(p.example_id.as_str()) {
            return Err(CliError::Data(format!(
                "{}: prediction for unknown example {}",
                pred.display(),
                p.example_id
            )));
        }
        if !seen.insert(p.example_id.as_str()) {
            return Err(CliError::Data(format!("{}: duplicate prediction {}", pred.display(), p.example_id)));
        }
        if !(0.0..=1.0).contains(&p.probability) || !(0.0..=1.0).contains(&p.null_probability) {
            return Err(CliError::Data(format!("{}: probability out of range for {}", pred.display(), p.example_id)));
        }
    }
    let judged = preds
        .par_iter()
        .map(|p| {
            let ex = by_id[p.example_id.as_str()];
            let answers: Vec<String> = ex.answers.iter().map(|a| a.text.clone()).collect();
            let item = p.scored_item(&answers);
            Judged {
                relation_id: ex.relation_id.clone(),
                polarity: ex.polarity,
                judgment: item.judge(),
                item,
            }
        })
        .collect();
    Ok((judged, gold.len() - preds.len()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricsReport,
    pub by_relation: BTreeMap<String, MetricsReport>,
    pub by_polarity: BTreeMap<String, MetricsReport>,
    pub predictions: usize,
    pub gold_without_prediction: usize,
}

impl EvalReport {
    fn new(judged: &[Judged], unmatched: usize) -> Self {
        let polarity_name = |p: Polarity| match p {
            Polarity::Positive => "positive".to_string(),
            Polarity::Negative => "negative".to_string(),
        };
        let pol: Vec<String> = judged.iter().map(|j| polarity_name(j.polarity)).collect();
        EvalReport {
            overall: aggregate_metrics(judged.iter().map(|j| &j.judgment)),
            by_relation: metrics_by(judged.iter().map(|j| (&j.relation_id, &j.judgment))),
            by_polarity: metrics_by(pol.iter().zip(judged.iter().map(|j| &j.judgment))),
            predictions: judged.len(),
            gold_without_prediction: unmatched,
        }
    }
}
