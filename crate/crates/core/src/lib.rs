//! Slot filling reduced to answerable/unanswerable reading comprehension.
//!
//! The pipeline: align knowledge-base facts to sentences ([`dataset`]),
//! turn relations into question templates and join them with the aligned
//! instances ([`querify`]), add unanswerable pairs ([`negatives`]), split for
//! zero-shot experiments ([`experiments`]), score and decode answers with an
//! explicit null option ([`scorers`], [`engine`]), and evaluate ([`eval`]).

pub mod corpus;
pub mod dataset;
pub mod engine;
pub mod eval;
pub mod experiments;
pub mod jsonl;
pub mod negatives;
pub mod predict;
pub mod querify;
pub mod scorers;
pub mod seed;
pub mod synthetic;

pub use corpus::{
    AnswerSpan, Document, Entity, Fact, Polarity, RCExample, Relation, Sentence, SlotFillingInstance,
    Token,
};
pub use engine::{decode, DecodeParams, Prediction, Scorer, ScorerError, SpanScores};
pub use querify::{QuestionTemplate, TemplateStatus};
