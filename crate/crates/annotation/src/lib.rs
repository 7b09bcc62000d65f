//! Annotation service for writing and vetting question templates.
//!
//! Annotators first see four sentences of a relation with the subject
//! masked as `{x}` and the answer underlined, and write three questions
//! each. Every distinct question becomes a candidate template, which other
//! annotators then try to answer on fresh sentences. Candidates that are
//! answered correctly often enough are verified.

pub mod http;
pub mod rules;
pub mod service;
pub mod store;
pub mod tasks;

pub use service::{
    AnnotationService, CollectionReceipt, CollectionResponse, Corpus, ServiceConfig, ServiceError, TemplateRecord,
    VerificationAnswer, VerificationResponse,
};
