//! Semi-automatic semantic annotation of definite descriptions.
//!
//! The pipeline: a [`lexicon::MappingTable`] maps words to domain properties,
//! [`parser::annotate`] turns a description into a property set split per
//! referent, [`feedback::check`] judges it against the scene it describes,
//! and [`eval`] scores annotations against gold corpora.

pub mod baseline;
pub mod cli;
pub mod corpus;
pub mod domain;
pub mod eval;
pub mod feedback;
pub mod lexicon;
pub mod parser;
pub mod service;
pub mod synth;

pub use domain::{DomainSchema, Property, PropertySet, Scene, SceneObject, TaggedProperty};
pub use feedback::{check, FeedbackVerdict, Status};
pub use lexicon::{induce_lexicon, Language, MappingTable};
pub use parser::{annotate, annotate_text, AnnotationResult, DescriptionInput};
