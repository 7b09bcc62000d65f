//! Zero-shot evaluation splits: unseen entities, unseen question templates
//! and unseen relations, plus positive/negative balancing.
//!
//! Every random choice is keyed by `(seed, fold index, ...)`, so a fold can
//! be regenerated on its own and folds are independent of each other.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Polarity, RCExample, SentenceRef};
use crate::querify::{QuestionTemplate, TemplateStatus};
use crate::seed::rng_for;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("need {needed} relations but only {available} are available")]
    InsufficientRelations { needed: usize, available: usize },
    #[error("cannot balance: no {0} examples")]
    EmptySide(&'static str),
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    UnseenEntities,
    UnseenTemplates,
    UnseenRelations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeTargets {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SizeTargets {
    pub const DESK: SizeTargets = SizeTargets {
        train: 20_000,
        dev: 500,
        test: 2_000,
    };
    pub const PAPER_ENTITIES: SizeTargets = SizeTargets {
        train: 1_000_000,
        dev: 1_000,
        test: 10_000,
    };
    pub const PAPER_RELATIONS: SizeTargets = SizeTargets {
        train: 840_000,
        dev: 600,
        test: 12_000,
    };
    /// Positives sampled per template (train, dev, test).
    pub const PAPER_PER_TEMPLATE: SizeTargets = SizeTargets {
        train: 1_000,
        dev: 10,
        test: 50,
    };

    fn get(&self, part: Part) -> usize {
        match part {
            Part::Train => self.train,
            Part::Dev => self.dev,
            Part::Test => self.test,
        }
    }
}

/// Relation counts for the unseen-relations split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationPartition {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl RelationPartition {
    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }

    /// 84/12/24 proportions scaled to `n` relations, each part non-empty
    /// when `n >= 3`.
    pub fn proportional(n: usize) -> RelationPartition {
        if n < 3 {
            return RelationPartition { train: n, dev: 0, test: 0 };
        }
        let dev = ((n as f64 * 0.1).round() as usize).max(1);
        let test = ((n as f64 * 0.2).round() as usize).max(1);
        RelationPartition {
            train: n - dev - test,
            dev,
            test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub seed: u64,
    pub folds: usize,
    /// Total examples per split (entities and relations kinds).
    pub targets: SizeTargets,
    /// Positives per template per split (templates kind).
    pub per_template: SizeTargets,
    /// Relation counts (relations kind); proportional when absent.
    pub relation_partition: Option<RelationPartition>,
    /// Positives per negative inside every split.
    pub negative_ratio: f64,
}

impl SplitSpec {
    pub fn new(kind: SplitKind, seed: u64, folds: usize) -> Self {
        SplitSpec {
            kind,
            seed,
            folds,
            targets: SizeTargets::DESK,
            per_template: SizeTargets::PAPER_PER_TEMPLATE,
            relation_partition: None,
            negative_ratio: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        let bad = |m: &str| Err(SplitError::InvalidSpec(m.to_string()));
        if self.folds == 0 {
            return bad("fold count must be positive");
        }
        let t = &self.targets;
        let p = &self.per_template;
        if t.train == 0 || t.dev == 0 || t.test == 0 || p.train == 0 || p.dev == 0 || p.test == 0 {
            return bad("size targets must be positive");
        }
        if !(self.negative_ratio > 0.0 && self.negative_ratio.is_finite()) {
            return bad("negative ratio must be positive");
        }
        if let Some(rp) = self.relation_partition {
            if rp.train == 0 || rp.test == 0 {
                return bad("relation partition needs train and test relations");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Dev,
    Test,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Train, Part::Dev, Part::Test];

    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Dev => "dev",
            Part::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<RCExample>,
    pub dev: Vec<RCExample>,
    pub test: Vec<RCExample>,
}

impl Split {
    pub fn part(&self, part: Part) -> &[RCExample] {
        match part {
            Part::Train => &self.train,
            Part::Dev => &self.dev,
            Part::Test => &self.test,
        }
    }

    fn part_mut(&mut self, part: Part) -> &mut Vec<RCExample> {
        match part {
            Part::Train => &mut self.train,
            Part::Dev => &mut self.dev,
            Part::Test => &mut self.test,
        }
    }
}

/// Which keys (entity, template or relation ids) went where.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl Partition {
    fn push(&mut self, part: Part, key: String) {
        match part {
            Part::Train => self.train.push(key),
            Part::Dev => self.dev.push(key),
            Part::Test => self.test.push(key),
        }
    }

    fn sort(&mut self) {
        self.train.sort();
        self.dev.sort();
        self.test.sort();
    }

    fn lookup(&self) -> HashMap<&str, Part> {
        let mut m = HashMap::new();
        for (part, keys) in [(Part::Train, &self.train), (Part::Dev, &self.dev), (Part::Test, &self.test)] {
            for k in keys {
                m.insert(k.as_str(), part);
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub part: Part,
    pub requested: usize,
    pub produced: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub split: Split,
    /// Unseen-templates only: the test set re-asked with training templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen_test: Option<Vec<RCExample>>,
    pub partition: Partition,
    pub shortfalls: Vec<Shortfall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub kind: SplitKind,
    pub folds: Vec<Fold>,
    /// Relations left out (e.g. too few templates), with a reason.
    pub excluded: BTreeMap<String, String>,
}

/// Compact description of an outcome for `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: SplitKind,
    pub spec: SplitSpec,
    pub excluded: BTreeMap<String, String>,
    pub folds: Vec<FoldManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub index: usize,
    pub partition: Partition,
    pub sizes: BTreeMap<String, PartSize>,
    pub shortfalls: Vec<Shortfall>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartSize {
    pub positives: usize,
    pub negatives: usize,
}

impl SplitOutcome {
    pub fn manifest(&self, spec: &SplitSpec) -> Manifest {
        let folds = self
            .folds
            .iter()
            .map(|f| {
                let mut sizes = BTreeMap::new();
                let count = |xs: &[RCExample]| PartSize {
                    positives: xs.iter().filter(|e| e.polarity == Polarity::Positive).count(),
                    negatives: xs.iter().filter(|e| e.polarity == Polarity::Negative).count(),
                };
                for part in Part::ALL {
                    sizes.insert(part.name().to_string(), count(f.split.part(part)));
                }
                if let Some(seen) = &f.seen_test {
                    sizes.insert("test_seen".to_string(), count(seen));
                }
                FoldManifest {
                    index: f.index,
                    partition: f.partition.clone(),
                    sizes,
                    shortfalls: f.shortfalls.clone(),
                }
            })
            .collect();
        Manifest {
            kind: self.kind,
            spec: spec.clone(),
            excluded: self.excluded.clone(),
            folds,
        }
    }
}

fn sample_keep_order<T: Clone>(items: &[T], k: usize, rng: &mut impl Rng) -> Vec<T> {
    if k >= items.len() {
        return items.to_vec();
    }
    let mut idx = sample(rng, items.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

/// Down-samples the over-represented side so that there are `ratio`
/// positives per negative, then shuffles the union deterministically.
pub fn balance(
    positives: &[RCExample],
    negatives: &[RCExample],
    ratio: f64,
    seed: u64,
) -> Result<Vec<RCExample>, SplitError> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(SplitError::InvalidSpec("ratio must be positive".into()));
    }
    if positives.is_empty() {
        return Err(SplitError::EmptySide("positive"));
    }
    if negatives.is_empty() {
        return Err(SplitError::EmptySide("negative"));
    }
    let (p, q) = (positives.len(), negatives.len());
    let (keep_p, keep_q) = if p as f64 > ratio * q as f64 {
        (((ratio * q as f64).floor() as usize).min(p), q)
    } else {
        (p, ((p as f64 / ratio).floor() as usize).min(q))
    };
    let mut rng = rng_for(seed, &["balance"]);
    let mut out = sample_keep_order(positives, keep_p, &mut rng);
    out.extend(sample_keep_order(negatives, keep_q, &mut rng));
    out.shuffle(&mut rng);
    Ok(out)
}

fn split_by_polarity(xs: Vec<RCExample>) -> (Vec<RCExample>, Vec<RCExample>) {
    xs.into_iter().partition(|e| e.polarity == Polarity::Positive)
}

/// Samples `positives` (already chosen) together with negatives at the spec
/// ratio, capped at `total` examples when given.
fn finish_part(
    positives: Vec<RCExample>,
    negatives: Vec<RCExample>,
    total: Option<usize>,
    ratio: f64,
    seed: u64,
    labels: &[&str],
) -> Vec<RCExample> {
    let label = labels.join("/");
    let mut rng = rng_for(seed, &["finish", &label]);
    let pos_cap = match total {
        Some(t) if negatives.is_empty() => t,
        Some(t) => ((t as f64 * ratio / (1.0 + ratio)).floor() as usize).max(1),
        None => usize::MAX,
    };
    let positives = sample_keep_order(&positives, pos_cap, &mut rng);
    if positives.is_empty() || negatives.is_empty() {
        let mut out = positives;
        out.extend(negatives.into_iter().take(if out.is_empty() { usize::MAX } else { 0 }));
        if let Some(t) = total {
            out = sample_keep_order(&out, t, &mut rng);
        }
        out.shuffle(&mut rng);
        return out;
    }
    balance(&positives, &negatives, ratio, rng.gen()).expect("both sides non-empty")
}

fn assign_and_finish(
    examples: &[RCExample],
    key_of: impl Fn(&RCExample) -> Option<&str>,
    partition: &Partition,
    spec: &SplitSpec,
    fold: usize,
) -> (Split, Vec<Shortfall>) {
    let lookup = partition.lookup();
    let mut buckets: BTreeMap<Part, Vec<RCExample>> = BTreeMap::new();
    for ex in examples {
        if let Some(part) = key_of(ex).and_then(|k| lookup.get(k)) {
            buckets.entry(*part).or_default().push(ex.clone());
        }
    }
    let mut split = Split::default();
    let mut shortfalls = Vec::new();
    let fold_label = fold.to_string();
    for part in Part::ALL {
        let (pos, neg) = split_by_polarity(buckets.remove(&part).unwrap_or_default());
        let target = spec.targets.get(part);
        let out = finish_part(
            pos,
            neg,
            Some(target),
            spec.negative_ratio,
            spec.seed,
            &[&fold_label, part.name()],
        );
        if out.len() < target {
            shortfalls.push(Shortfall {
                part,
                requested: target,
                produced: out.len(),
            });
        }
        *split.part_mut(part) = out;
    }
    (split, shortfalls)
}

/// Cuts a shuffled key list into train/dev/test shares proportional to the
/// size targets. With three or more keys every part gets at least one.
fn proportional_cut(keys: &[String], targets: &SizeTargets, rng: &mut impl Rng) -> Partition {
    let mut shuffled = keys.to_vec();
    shuffled.shuffle(rng);
    let n = shuffled.len();
    let total = (targets.train + targets.dev + targets.test) as f64;
    let (mut dev, mut test) = (
        (n as f64 * targets.dev as f64 / total).round() as usize,
        (n as f64 * targets.test as f64 / total).round() as usize,
    );
    if n >= 3 {
        dev = dev.max(1);
        test = test.max(1);
    } else {
        dev = 0;
        test = 0;
    }
    let train = n - dev - test;
    let mut p = Partition::default();
    for (k, key) in shuffled.into_iter().enumerate() {
        let part = if k < train {
            Part::Train
        } else if k < train + dev {
            Part::Dev
        } else {
            Part::Test
        };
        p.push(part, key);
    }
    p.sort();
    p
}

/// Every entity goes to exactly one split; its examples follow it.
pub fn split_unseen_entities(examples: &[RCExample], spec: &SplitSpec) -> Result<SplitOutcome, SplitError> {
    spec.validate()?;
    let entities: Vec<String> = examples
        .iter()
        .map(|e| e.entity_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let folds = (0..spec.folds)
        .map(|fold| {
            let mut rng = rng_for(spec.seed, &["entities", &fold.to_string()]);
            let partition = proportional_cut(&entities, &spec.targets, &mut rng);
            let (split, shortfalls) =
                assign_and_finish(examples, |e| Some(e.entity_id.as_str()), &partition, spec, fold);
            Fold {
                index: fold,
                split,
                seen_test: None,
                partition,
                shortfalls,
            }
        })
        .collect();
    Ok(SplitOutcome {
        kind: SplitKind::UnseenEntities,
        folds,
        excluded: BTreeMap::new(),
    })
}

/// Per fold and relation, one template is held out for test and another
/// for dev; the rest train. Relations with fewer than three verified
/// templates are excluded.
pub fn split_unseen_templates(
    examples: &[RCExample],
    templates: &[QuestionTemplate],
    spec: &SplitSpec,
) -> Result<SplitOutcome, SplitError> {
    spec.validate()?;
    let mut by_relation: BTreeMap<&str, Vec<&QuestionTemplate>> = BTreeMap::new();
    for t in templates.iter().filter(|t| t.status == TemplateStatus::Verified) {
        by_relation.entry(t.relation_id.as_str()).or_default().push(t);
    }
    let mut excluded = BTreeMap::new();
    by_relation.retain(|rel, ts| {
        ts.sort_by(|a, b| a.id.cmp(&b.id));
        if ts.len() < 3 {
            excluded.insert(rel.to_string(), format!("only {} verified templates", ts.len()));
            false
        } else {
            true
        }
    });

    let mut by_template: HashMap<&str, Vec<&RCExample>> = HashMap::new();
    for ex in examples {
        if let Some(t) = ex.template_id.as_deref() {
            by_template.entry(t).or_default().push(ex);
        }
    }

    let folds = (0..spec.folds)
        .map(|fold| {
            let fold_label = fold.to_string();
            let mut partition = Partition::default();
            let mut train_by_relation: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for (rel, ts) in &by_relation {
                let mut rng = rng_for(spec.seed, &["templates", &fold_label, rel]);
                let mut order: Vec<&QuestionTemplate> = ts.clone();
                order.shuffle(&mut rng);
                partition.push(Part::Test, order[0].id.clone());
                partition.push(Part::Dev, order[1].id.clone());
                for t in &order[2..] {
                    partition.push(Part::Train, t.id.clone());
                    train_by_relation.entry(rel).or_default().push(t.id.as_str());
                }
            }
            partition.sort();

            let mut split = Split::default();
            let mut shortfalls = Vec::new();
            for part in Part::ALL {
                let ids = match part {
                    Part::Train => &partition.train,
                    Part::Dev => &partition.dev,
                    Part::Test => &partition.test,
                };
                let per = spec.per_template.get(part);
                let mut pos = Vec::new();
                let mut neg = Vec::new();
                for id in ids {
                    let pool = by_template.get(id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                    let (p, n): (Vec<RCExample>, Vec<RCExample>) =
                        split_by_polarity(pool.iter().map(|e| (*e).clone()).collect());
                    let mut rng = rng_for(spec.seed, &["per-template", &fold_label, id]);
                    pos.extend(sample_keep_order(&p, per, &mut rng));
                    neg.extend(n);
                }
                let requested = per * ids.len();
                let produced_pos = pos.len();
                let out = finish_part(pos, neg, None, spec.negative_ratio, spec.seed, &[&fold_label, part.name()]);
                if produced_pos < requested {
                    shortfalls.push(Shortfall {
                        part,
                        requested,
                        produced: produced_pos,
                    });
                }
                *split.part_mut(part) = out;
            }

            // counterparts go missing unevenly across polarities, so rebalance
            let (p, n) = split_by_polarity(seen_variant(&split.test, examples, &train_by_relation, spec.seed, fold));
            let seen_test = finish_part(p, n, None, spec.negative_ratio, spec.seed, &[&fold_label, "test_seen"]);
            Fold {
                index: fold,
                split,
                seen_test: Some(seen_test),
                partition,
                shortfalls,
            }
        })
        .collect();
    Ok(SplitOutcome {
        kind: SplitKind::UnseenTemplates,
        folds,
        excluded,
    })
}

/// For each test example, the same (entity, sentence) asked with a template
/// seen in training. Examples without such a counterpart are dropped.
fn seen_variant(
    test: &[RCExample],
    pool: &[RCExample],
    train_templates: &BTreeMap<&str, Vec<&str>>,
    seed: u64,
    fold: usize,
) -> Vec<RCExample> {
    type Key<'a> = (&'a str, &'a str, SentenceRef, Polarity);
    let train_ids: BTreeSet<&str> = train_templates.values().flatten().copied().collect();
    let mut index: HashMap<Key, Vec<&RCExample>> = HashMap::new();
    for ex in pool {
        if ex.template_id.as_deref().is_some_and(|t| train_ids.contains(t)) {
            index
                .entry((ex.relation_id.as_str(), ex.entity_id.as_str(), ex.sentence_ref(), ex.polarity))
                .or_default()
                .push(ex);
        }
    }
    let fold_label = fold.to_string();
    test.iter()
        .filter_map(|ex| {
            let key = (ex.relation_id.as_str(), ex.entity_id.as_str(), ex.sentence_ref(), ex.polarity);
            let mut options = index.get(&key)?.clone();
            options.sort_by(|a, b| a.id.cmp(&b.id));
            let mut rng = rng_for(seed, &["seen-variant", &fold_label, &ex.id]);
            options.choose(&mut rng).map(|e| (*e).clone())
        })
        .collect()
}

/// Stratified relation partition for one fold. Relations are ordered by
/// example count, shuffled within strata, then dealt to the part furthest
/// behind its quota.
fn partition_relations(
    counts: &BTreeMap<String, usize>,
    sizes: RelationPartition,
    seed: u64,
    fold: usize,
) -> Partition {
    let mut rng = rng_for(seed, &["relations", &fold.to_string()]);
    let mut rels: Vec<(&String, usize)> = counts.iter().map(|(r, c)| (r, *c)).collect();
    rels.shuffle(&mut rng);
    rels.sort_by_key(|r| std::cmp::Reverse(r.1));
    let smallest = [sizes.train, sizes.dev, sizes.test]
        .into_iter()
        .filter(|&s| s > 0)
        .min()
        .unwrap_or(1);
    let stratum = rels.len().div_ceil(smallest).max(1);
    for chunk in rels.chunks_mut(stratum) {
        chunk.shuffle(&mut rng);
    }
    let n = sizes.total() as f64;
    let quota = [
        (Part::Train, sizes.train),
        (Part::Dev, sizes.dev),
        (Part::Test, sizes.test),
    ];
    let mut assigned = [0usize; 3];
    let mut p = Partition::default();
    for (k, (rel, _)) in rels.into_iter().take(sizes.total()).enumerate() {
        let step = (k + 1) as f64;
        let (slot, _) = quota
            .iter()
            .enumerate()
            .filter(|(i, (_, q))| assigned[*i] < *q)
            .map(|(i, (_, q))| (i, step * *q as f64 / n - assigned[i] as f64))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("capacity left");
        assigned[slot] += 1;
        p.push(quota[slot].0, rel.clone());
    }
    p.sort();
    p
}

/// Relations are partitioned per fold; no relation has examples in more
/// than one part of a fold.
pub fn split_unseen_relations(examples: &[RCExample], spec: &SplitSpec) -> Result<SplitOutcome, SplitError> {
    spec.validate()?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for ex in examples {
        let c = counts.entry(ex.relation_id.clone()).or_default();
        if ex.polarity == Polarity::Positive {
            *c += 1;
        }
    }
    let sizes = spec
        .relation_partition
        .unwrap_or_else(|| RelationPartition::proportional(counts.len()));
    if sizes.total() > counts.len() || counts.len() < 2 {
        return Err(SplitError::InsufficientRelations {
            needed: sizes.total().max(2),
            available: counts.len(),
        });
    }
    let mut excluded = BTreeMap::new();
    let folds = (0..spec.folds)
        .map(|fold| {
            let partition = partition_relations(&counts, sizes, spec.seed, fold);
            let (split, shortfalls) =
                assign_and_finish(examples, |e| Some(e.relation_id.as_str()), &partition, spec, fold);
            Fold {
                index: fold,
                split,
                seen_test: None,
                partition,
                shortfalls,
            }
        })
        .collect::<Vec<_>>();
    if sizes.total() < counts.len() {
        for f in &folds {
            let used: BTreeSet<&String> =
                f.partition.train.iter().chain(&f.partition.dev).chain(&f.partition.test).collect();
            for r in counts.keys().filter(|r| !used.contains(r)) {
                excluded
                    .entry(r.clone())
                    .or_insert_with(|| "not needed by relation partition in some fold".to_string());
            }
        }
    }
    Ok(SplitOutcome {
        kind: SplitKind::UnseenRelations,
        folds,
        excluded,
    })
}
