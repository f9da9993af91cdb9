//! Crowdsourced binary labels with annotator group bias.
//!
//! Each annotator has a sensitivity and specificity whose prior means are
//! tied to the demographic groups they belong to. An EM procedure jointly
//! infers posterior true labels, trains a logistic classifier on the
//! features, and estimates group-level biases. Baselines, a synthetic data
//! generator, direct bias analysis (group positive rates, additive ANOVA),
//! CSV/JSON ingestion and evaluation helpers are included.

pub mod analysis;
pub mod baselines;
pub mod classifier;
pub mod em;
pub mod error;
pub mod eval;
pub mod io;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    Annotation, AnnotationDataset, AnnotatorTable, GroupBiasParams, Instance, Label,
    PosteriorLabels,
};
