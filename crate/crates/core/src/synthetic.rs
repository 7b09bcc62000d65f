//! Generated corpora for exercising the pipeline end to end.
//!
//! Each relation has a cue verb that appears both in its fact sentences and
//! in its question templates, so a lexical matcher can find answers while a
//! random named-entity guesser cannot. Documents mix fact sentences with
//! filler that mentions unrelated names, years and places; some fact
//! sentences repeat another relation's answer, which negative sampling must
//! filter out.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Entity, Fact, RCExample, Relation, SlotFillingInstance};
use crate::dataset::{build_instances, BuildReport};
use crate::negatives::{generate_negatives, NegativeReport};
use crate::querify::{join_schema, QuestionTemplate};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Person,
    Place,
    Year,
    Thing,
}

struct Pattern {
    name: &'static str,
    kind: AnswerKind,
    /// `{e}` is the entity, `{a}` the answer.
    sentence: &'static str,
    /// Verb as it appears in questions, after `aux`.
    verb: &'static str,
    aux: &'static str,
}

const fn p(name: &'static str, kind: AnswerKind, sentence: &'static str, verb: &'static str, aux: &'static str) -> Pattern {
    Pattern { name, kind, sentence, verb, aux }
}

use AnswerKind::{Person, Place, Thing, Year};

const PATTERNS: &[Pattern] = &[
    p("spouse", Person, "{e} married {a}", "marry", "did"),
    p("mentor_of", Person, "{e} mentored {a}", "mentor", "did"),
    p("hired", Person, "{e} hired {a}", "hire", "did"),
    p("succeeded", Person, "{e} succeeded {a}", "succeed", "did"),
    p("trainer_of", Person, "{e} trained {a}", "train", "did"),
    p("defeated", Person, "{e} defeated {a}", "defeat", "did"),
    p("interviewed", Person, "{e} interviewed {a}", "interview", "did"),
    p("adopted", Person, "{e} adopted {a}", "adopt", "did"),
    p("replaced", Person, "{e} replaced {a}", "replace", "did"),
    p("coach_of", Person, "{e} coached {a}", "coach", "did"),
    p("educated_at", Place, "{e} graduated from {a}", "graduate", "did"),
    p("residence", Place, "{e} settled in {a}", "settle", "did"),
    p("work_location", Place, "{e} worked in {a}", "work", "did"),
    p("performed_at", Place, "{e} performed at {a}", "perform", "did"),
    p("lectured_at", Place, "{e} lectured at {a}", "lecture", "did"),
    p("birth_year", Year, "{e} was born in {a}", "born", "was"),
    p("retirement_year", Year, "{e} retired in {a}", "retire", "did"),
    p("debut_year", Year, "{e} debuted in {a}", "debut", "did"),
    p("relocation_year", Year, "{e} relocated in {a}", "relocate", "did"),
    p("election_year", Year, "{e} was elected in {a}", "elected", "was"),
    p("memoir_year", Year, "{e} published a memoir in {a}", "publish a memoir", "did"),
    p("enlistment_year", Year, "{e} enlisted in {a}", "enlist", "did"),
    p("field_of_study", Thing, "{e} studied {a}", "study", "did"),
    p("instrument", Thing, "{e} played the {a}", "play", "did"),
    p("collected", Thing, "{e} collected {a}", "collect", "did"),
    p("painted", Thing, "{e} painted {a}", "paint", "did"),
    p("designed", Thing, "{e} designed {a}", "design", "did"),
    p("farmed", Thing, "{e} farmed {a}", "farm", "did"),
    p("practiced", Thing, "{e} practiced {a}", "practice", "did"),
    p("invented", Thing, "{e} invented {a}", "invent", "did"),
    p("brewed", Thing, "{e} brewed {a}", "brew", "did"),
    p("founded_year", Year, "{e} founded a company in {a}", "found a company", "did"),
];

/// Number of distinct relations the generator can produce.
pub const MAX_RELATIONS: usize = PATTERNS.len();

fn question_forms(pat: &Pattern) -> Vec<String> {
    let (aux, v) = (pat.aux, pat.verb);
    match pat.kind {
        Person => vec![
            format!("Who {aux} {{x}} {v}?"),
            format!("Whom {aux} {{x}} {v}?"),
            format!("Which person {aux} {{x}} {v}?"),
            format!("Who is the person that {{x}} {aux} {v}?"),
        ],
        Place => vec![
            format!("Where {aux} {{x}} {v}?"),
            format!("In which place {aux} {{x}} {v}?"),
            format!("Which city {aux} {{x}} {v} in?"),
            format!("Where is the place {{x}} {aux} {v}?"),
        ],
        Year => vec![
            format!("When {aux} {{x}} {v}?"),
            format!("In what year {aux} {{x}} {v}?"),
            format!("What year {aux} {{x}} {v}?"),
            format!("In which year {aux} {{x}} {v}?"),
        ],
        Thing => vec![
            format!("What {aux} {{x}} {v}?"),
            format!("What thing {aux} {{x}} {v}?"),
            format!("What exactly {aux} {{x}} {v}?"),
            format!("What is it that {{x}} {aux} {v}?"),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub relations: usize,
    pub entities: usize,
    /// Facts per entity, drawn uniformly from this inclusive range.
    pub facts_per_entity: (usize, usize),
    /// Templates per relation, at most 4.
    pub templates_per_relation: usize,
    /// Probability of each of two optional distractor phrases on a fact
    /// sentence.
    pub distractor_rate: f64,
    /// Probability that a fact sentence repeats an earlier answer.
    pub leak_rate: f64,
    /// Probability that a fact sentence refers to the entity by pronoun,
    /// which makes the fact unalignable.
    pub pronoun_rate: f64,
    pub filler_sentences: (usize, usize),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            relations: 30,
            entities: 500,
            facts_per_entity: (3, 6),
            templates_per_relation: 4,
            distractor_rate: 0.8,
            leak_rate: 0.1,
            pronoun_rate: 0.03,
            filler_sentences: (1, 3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub relations: Vec<Relation>,
    pub entities: Vec<Entity>,
    pub documents: Vec<Document>,
    pub facts: Vec<Fact>,
    pub templates: Vec<QuestionTemplate>,
}

/// Everything downstream of the raw corpus, as the pipeline stages produce
/// it.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub instances: Vec<SlotFillingInstance>,
    pub build: BuildReport,
    pub positives: Vec<RCExample>,
    pub negatives: Vec<RCExample>,
    pub negative_report: NegativeReport,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kl", "st", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ei", "ou"];
const CODAS: &[&str] = &["", "", "n", "r", "l", "s", "th", "x", "m"];
const THING_SUFFIXES: &[&str] = &["ology", "ite", "wort", "craft", "ware", "ism"];
const PLACE_SUFFIXES: &[&str] = &["", "", " Hall", " Academy", " Harbor"];

fn syllable(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    s.push_str(ONSETS.choose(rng).unwrap());
    s.push_str(VOWELS.choose(rng).unwrap());
    s.push_str(CODAS.choose(rng).unwrap());
    s
}

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables).map(|_| syllable(rng)).collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Names {
    used: BTreeSet<String>,
}

impl Names {
    fn fresh(&mut self, rng: &mut ChaCha8Rng, make: impl Fn(&mut ChaCha8Rng) -> String) -> String {
        loop {
            let n = make(rng);
            if self.used.insert(n.to_lowercase()) {
                return n;
            }
        }
    }

    fn person(&mut self, rng: &mut ChaCha8Rng) -> String {
        self.fresh(rng, |r| {
            let (a, b) = (r.gen_range(1..=2), r.gen_range(2..=3));
            format!("{} {}", capitalize(&word(r, a)), capitalize(&word(r, b)))
        })
    }

    fn place(&mut self, rng: &mut ChaCha8Rng) -> String {
        self.fresh(rng, |r| {
            let n = r.gen_range(2..=3);
            format!("{}{}", capitalize(&word(r, n)), PLACE_SUFFIXES.choose(r).unwrap())
        })
    }

    fn thing(&mut self, rng: &mut ChaCha8Rng) -> String {
        self.fresh(rng, |r| format!("{}{}", word(r, 2), THING_SUFFIXES.choose(r).unwrap()))
    }
}

fn year(rng: &mut ChaCha8Rng) -> String {
    rng.gen_range(1820..=2015).to_string()
}

fn fill(pattern: &str, e: &str, a: &str) -> String {
    pattern.replace("{e}", e).replace("{a}", a)
}

impl SyntheticCorpus {
    pub fn generate(config: &SyntheticConfig, seed: u64) -> SyntheticCorpus {
        assert!(
            (1..=MAX_RELATIONS).contains(&config.relations),
            "relations must be between 1 and {MAX_RELATIONS}"
        );
        assert!((1..=4).contains(&config.templates_per_relation));
        let patterns = &PATTERNS[..config.relations];
        let relations: Vec<Relation> = patterns
            .iter()
            .enumerate()
            .map(|(k, p)| Relation {
                id: format!("R{k:02}"),
                name: p.name.to_string(),
            })
            .collect();
        let templates = patterns
            .iter()
            .zip(&relations)
            .flat_map(|(p, r)| {
                question_forms(p)
                    .into_iter()
                    .take(config.templates_per_relation)
                    .enumerate()
                    .map(|(t, text)| QuestionTemplate::verified(format!("{}-t{t}", r.id), r.id.clone(), text))
            })
            .collect();

        let mut rng = rng_for(seed, &["synthetic"]);
        let mut names = Names { used: BTreeSet::new() };
        let mut entities = Vec::with_capacity(config.entities);
        let mut documents = Vec::with_capacity(config.entities);
        let mut facts = Vec::new();

        for k in 0..config.entities {
            let entity = Entity {
                id: format!("E{k:05}"),
                name: names.person(&mut rng),
                aliases: vec![],
            };
            let (lo, hi) = config.facts_per_entity;
            let n_facts = rng.gen_range(lo..=hi).min(relations.len());
            let chosen = rand::seq::index::sample(&mut rng, relations.len(), n_facts).into_vec();

            let mut sentences: Vec<(Option<usize>, String)> = Vec::new();
            for &r in &chosen {
                let pat = &patterns[r];
                let answer = match pat.kind {
                    Person => names.person(&mut rng),
                    Place => names.place(&mut rng),
                    Year => year(&mut rng),
                    Thing => names.thing(&mut rng),
                };
                facts.push(Fact {
                    relation_id: relations[r].id.clone(),
                    subject_entity_id: entity.id.clone(),
                    object_text: answer.clone(),
                });
                let subject = if rng.gen_bool(config.pronoun_rate) { "They" } else { &entity.name };
                let mut text = fill(pat.sentence, subject, &answer);
                for slot in 0..2 {
                    if !rng.gen_bool(config.distractor_rate) {
                        continue;
                    }
                    let extra = match (slot, rng.gen_range(0..3)) {
                        (0, 0) => format!(" near {}", names.place(&mut rng)),
                        (0, _) => format!(" alongside {}", names.person(&mut rng)),
                        (_, 0) => format!(" before {}", year(&mut rng)),
                        (_, 1) => format!(" under {}", names.person(&mut rng)),
                        _ => format!(" while visiting {}", names.place(&mut rng)),
                    };
                    text.push_str(&extra);
                }
                sentences.push((Some(r), text));
            }
            let (flo, fhi) = config.filler_sentences;
            for _ in 0..rng.gen_range(flo..=fhi) {
                let e = &entity.name;
                let text = match rng.gen_range(0..4) {
                    0 => format!("{e} often visited {}", names.place(&mut rng)),
                    1 => format!("Critics compared {e} with {}", names.person(&mut rng)),
                    2 => format!("A statue of {e} stands in {}", names.place(&mut rng)),
                    _ => format!("Records from {} mention {e} briefly", year(&mut rng)),
                };
                sentences.push((None, text));
            }
            sentences.shuffle(&mut rng);

            // Leaks only repeat answers aligned earlier in the document, so
            // alignment still picks the genuine fact sentence.
            let mut earlier: Vec<String> = Vec::new();
            let answer_of: HashMap<usize, &str> = facts
                .iter()
                .rev()
                .take(n_facts)
                .map(|f| {
                    let r = relations.iter().position(|x| x.id == f.relation_id).unwrap();
                    (r, f.object_text.as_str())
                })
                .collect();
            let mut texts = Vec::with_capacity(sentences.len());
            for (rel, mut text) in sentences {
                if let Some(r) = rel {
                    if !earlier.is_empty() && rng.gen_bool(config.leak_rate) {
                        let leaked = earlier.choose(&mut rng).unwrap();
                        text.push_str(&format!(" with {leaked}"));
                    }
                    if matches!(patterns[r].kind, Person | Place) {
                        earlier.push(answer_of[&r].to_string());
                    }
                }
                text.push('.');
                texts.push(text);
            }
            documents.push(Document::from_sentences(entity.id.clone(), texts));
            entities.push(entity);
        }

        SyntheticCorpus {
            relations,
            entities,
            documents,
            facts,
            templates,
        }
    }

    pub fn entity_map(&self) -> HashMap<String, Entity> {
        self.entities.iter().map(|e| (e.id.clone(), e.clone())).collect()
    }

    /// Runs alignment, schema join and negative generation.
    pub fn pipeline(&self, negative_ratio: f64, seed: u64) -> PipelineOutput {
        let (instances, build) = build_instances(&self.documents, &self.entities, &self.facts);
        let entities = self.entity_map();
        let positives = join_schema(&self.templates, &instances, &entities);
        let (negatives, negative_report) =
            generate_negatives(&instances, &self.templates, &entities, negative_ratio, seed);
        PipelineOutput {
            instances,
            build,
            positives,
            negatives,
            negative_report,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querify::placeholder_count;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            entities: 40,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = SyntheticCorpus::generate(&small(), 5);
        assert_eq!(a, SyntheticCorpus::generate(&small(), 5));
        assert_ne!(a, SyntheticCorpus::generate(&small(), 6));
    }

    #[test]
    fn well_formed() {
        let c = SyntheticCorpus::generate(&small(), 1);
        assert_eq!(c.relations.len(), 30);
        assert_eq!(c.templates.len(), 120);
        for t in &c.templates {
            assert_eq!(placeholder_count(&t.text), 1, "{}", t.text);
        }
        for d in &c.documents {
            d.validate().unwrap();
        }
        for e in &c.entities {
            e.validate().unwrap();
        }
        let rels: BTreeSet<_> = c.relations.iter().map(|r| r.name.clone()).collect();
        assert_eq!(rels.len(), 30);
    }

    #[test]
    fn most_facts_align() {
        let c = SyntheticCorpus::generate(&small(), 2);
        let out = c.pipeline(1.0, 2);
        let r = &out.build;
        assert_eq!(r.facts_total, c.facts.len());
        assert!(r.facts_aligned as f64 >= 0.9 * r.facts_total as f64, "{r:?}");
        assert!(!out.negatives.is_empty());
        assert_eq!(out.positives.len(), out.negative_report.positives);
    }
}
