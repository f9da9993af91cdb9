//! Shared domain types: the annotation dataset, the annotator demographic
//! table, fitted parameters and posterior labels.
//!
//! Identifiers are opaque strings. Every consumer that needs dense indices
//! goes through [`IndexedDataset`], which numbers annotators by first
//! appearance in instance order so the numbering is reproducible.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A binary label, always 0 or 1 in a valid dataset.
pub type Label = u8;

/// Number of groups per demographic category.
pub const GROUPS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub features: Vec<f64>,
    pub annotations: Vec<Annotation>,
}

/// Instances with feature vectors and the crowd labels attached to each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDataset {
    pub instances: Vec<Instance>,
    pub feature_dim: usize,
}

impl AnnotationDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn num_annotations(&self) -> usize {
        self.instances.iter().map(|i| i.annotations.len()).sum()
    }

    /// Annotator ids in order of first appearance.
    pub fn annotator_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for inst in &self.instances {
            for a in &inst.annotations {
                if seen.insert(a.annotator_id.as_str()) {
                    out.push(a.annotator_id.clone());
                }
            }
        }
        out
    }

    /// Keeps only the instances whose ids are in `ids`, preserving order.
    pub fn subset(&self, ids: &HashSet<&str>) -> AnnotationDataset {
        AnnotationDataset {
            instances: self
                .instances
                .iter()
                .filter(|i| ids.contains(i.instance_id.as_str()))
                .cloned()
                .collect(),
            feature_dim: self.feature_dim,
        }
    }
}

/// Demographic group membership (0 or 1) of every annotator in each of the
/// `P` categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorTable {
    pub categories: Vec<String>,
    pub annotators: BTreeMap<String, Vec<u8>>,
}

impl AnnotatorTable {
    pub fn new(categories: Vec<String>) -> Self {
        AnnotatorTable {
            categories,
            annotators: BTreeMap::new(),
        }
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn groups(&self, annotator_id: &str) -> Option<&[u8]> {
        self.annotators.get(annotator_id).map(Vec::as_slice)
    }

    pub fn insert(&mut self, annotator_id: impl Into<String>, groups: Vec<u8>) {
        self.annotators.insert(annotator_id.into(), groups);
    }
}

/// A single invariant violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyAnnotations {
        instance_id: String,
    },
    DimensionMismatch {
        instance_id: String,
        expected: usize,
        found: usize,
    },
    DuplicateInstance {
        instance_id: String,
    },
    DuplicateAnnotation {
        instance_id: String,
        annotator_id: String,
    },
    LabelOutOfDomain {
        instance_id: String,
        annotator_id: String,
        label: Label,
    },
    UnknownAnnotator {
        instance_id: String,
        annotator_id: String,
    },
    GroupVectorLength {
        annotator_id: String,
        expected: usize,
        found: usize,
    },
    NonBinaryGroup {
        annotator_id: String,
        category: usize,
        value: u8,
    },
    NonFiniteFeature {
        instance_id: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyAnnotations { instance_id } => {
                write!(f, "instance {instance_id:?} has an empty annotation list")
            }
            Violation::DimensionMismatch {
                instance_id,
                expected,
                found,
            } => write!(
                f,
                "instance {instance_id:?} has {found} features, expected {expected}"
            ),
            Violation::DuplicateInstance { instance_id } => {
                write!(f, "instance id {instance_id:?} appears more than once")
            }
            Violation::DuplicateAnnotation {
                instance_id,
                annotator_id,
            } => write!(
                f,
                "annotator {annotator_id:?} labeled instance {instance_id:?} more than once"
            ),
            Violation::LabelOutOfDomain {
                instance_id,
                annotator_id,
                label,
            } => write!(
                f,
                "label {label} from {annotator_id:?} on {instance_id:?} is not 0 or 1"
            ),
            Violation::UnknownAnnotator {
                instance_id,
                annotator_id,
            } => write!(
                f,
                "unknown annotator {annotator_id:?} on instance {instance_id:?}"
            ),
            Violation::GroupVectorLength {
                annotator_id,
                expected,
                found,
            } => write!(
                f,
                "annotator {annotator_id:?} has {found} group values, expected {expected}"
            ),
            Violation::NonBinaryGroup {
                annotator_id,
                category,
                value,
            } => write!(
                f,
                "annotator {annotator_id:?} has group {value} in category {category}"
            ),
            Violation::NonFiniteFeature { instance_id } => {
                write!(f, "instance {instance_id:?} has a non-finite feature")
            }
        }
    }
}

/// Checks every dataset/table invariant and lists what is broken.
///
/// The report is empty iff the pair is usable by the inference code.
pub fn validate_dataset(dataset: &AnnotationDataset, table: &AnnotatorTable) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = table.num_categories();
    for (id, groups) in &table.annotators {
        if groups.len() != p {
            out.push(Violation::GroupVectorLength {
                annotator_id: id.clone(),
                expected: p,
                found: groups.len(),
            });
        }
        for (c, &g) in groups.iter().enumerate() {
            if g > 1 {
                out.push(Violation::NonBinaryGroup {
                    annotator_id: id.clone(),
                    category: c,
                    value: g,
                });
            }
        }
    }

    let mut seen_instances = HashSet::new();
    for inst in &dataset.instances {
        let iid = &inst.instance_id;
        if !seen_instances.insert(iid.as_str()) {
            out.push(Violation::DuplicateInstance {
                instance_id: iid.clone(),
            });
        }
        if inst.features.len() != dataset.feature_dim {
            out.push(Violation::DimensionMismatch {
                instance_id: iid.clone(),
                expected: dataset.feature_dim,
                found: inst.features.len(),
            });
        }
        if inst.features.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFiniteFeature {
                instance_id: iid.clone(),
            });
        }
        if inst.annotations.is_empty() {
            out.push(Violation::EmptyAnnotations {
                instance_id: iid.clone(),
            });
        }
        let mut seen = HashSet::new();
        for a in &inst.annotations {
            if !seen.insert(a.annotator_id.as_str()) {
                out.push(Violation::DuplicateAnnotation {
                    instance_id: iid.clone(),
                    annotator_id: a.annotator_id.clone(),
                });
            }
            if a.label > 1 {
                out.push(Violation::LabelOutOfDomain {
                    instance_id: iid.clone(),
                    annotator_id: a.annotator_id.clone(),
                    label: a.label,
                });
            }
            if !table.annotators.contains_key(&a.annotator_id) {
                out.push(Violation::UnknownAnnotator {
                    instance_id: iid.clone(),
                    annotator_id: a.annotator_id.clone(),
                });
            }
        }
    }
    out
}

/// Validation for callers that do not have demographic data (the baselines):
/// every annotator is accepted.
pub fn validate_annotations(dataset: &AnnotationDataset) -> Vec<Violation> {
    let mut table = AnnotatorTable::new(Vec::new());
    for id in dataset.annotator_ids() {
        table.insert(id, Vec::new());
    }
    validate_dataset(dataset, &table)
}

/// Posterior probability of the positive class for each instance.
///
/// Hard labels are derived, never stored, so `hard[i] == (mu[i] >= 0.5)`
/// always holds; a posterior of exactly 0.5 resolves to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorLabels {
    pub instance_ids: Vec<String>,
    pub mu: Vec<f64>,
}

impl PosteriorLabels {
    pub fn hard_label(mu: f64) -> Label {
        Label::from(mu >= 0.5)
    }

    pub fn hard(&self) -> Vec<Label> {
        self.mu.iter().map(|&m| Self::hard_label(m)).collect()
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn get(&self, instance_id: &str) -> Option<f64> {
        self.instance_ids
            .iter()
            .position(|id| id == instance_id)
            .map(|i| self.mu[i])
    }
}

/// Fitted bias parameters.
///
/// `group_effects_*[p][g]` is the additive effect of group `g` in category
/// `p` on the prior mean of an annotator's sensitivity (or specificity).
/// Per-annotator values live in `annotators`, in dense-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBiasParams {
    pub u_alpha: f64,
    pub u_beta: f64,
    pub group_effects_alpha: Vec<[f64; GROUPS]>,
    pub group_effects_beta: Vec<[f64; GROUPS]>,
    pub annotator_ids: Vec<String>,
    pub annot_alpha: Vec<f64>,
    pub annot_beta: Vec<f64>,
    pub concentration: f64,
}

impl GroupBiasParams {
    /// Prior mean `u + sum_p effect[p][g_p]`, clamped into `[eps, 1 - eps]`.
    pub fn prior_mean(u: f64, effects: &[[f64; GROUPS]], groups: &[u8], eps: f64) -> f64 {
        let raw = u + effects
            .iter()
            .zip(groups)
            .map(|(e, &g)| e[g as usize])
            .sum::<f64>();
        raw.clamp(eps, 1.0 - eps)
    }
}

/// Dense view of a dataset: annotators and instances numbered, annotations
/// grouped both per instance and per annotator.
#[derive(Debug, Clone)]
pub struct IndexedDataset {
    pub instance_ids: Vec<String>,
    pub annotator_ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    /// Per instance: (annotator index, label).
    pub by_instance: Vec<Vec<(usize, Label)>>,
    /// Per annotator: (instance index, label).
    pub by_annotator: Vec<Vec<(usize, Label)>>,
}

impl IndexedDataset {
    pub fn new(dataset: &AnnotationDataset) -> Self {
        let annotator_ids = dataset.annotator_ids();
        let index: HashMap<&str, usize> = annotator_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut by_annotator = vec![Vec::new(); annotator_ids.len()];
        let mut by_instance = Vec::with_capacity(dataset.len());
        for (i, inst) in dataset.instances.iter().enumerate() {
            let row: Vec<(usize, Label)> = inst
                .annotations
                .iter()
                .map(|a| (index[a.annotator_id.as_str()], a.label))
                .collect();
            for &(r, z) in &row {
                by_annotator[r].push((i, z));
            }
            by_instance.push(row);
        }
        IndexedDataset {
            instance_ids: dataset
                .instances
                .iter()
                .map(|i| i.instance_id.clone())
                .collect(),
            annotator_ids,
            features: dataset.instances.iter().map(|i| i.features.clone()).collect(),
            by_instance,
            by_annotator,
        }
    }

    pub fn num_instances(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn num_annotators(&self) -> usize {
        self.annotator_ids.len()
    }

    /// Group vectors in dense annotator order. Fails if an annotator is
    /// missing from the table.
    pub fn groups(&self, table: &AnnotatorTable) -> Result<Vec<Vec<u8>>> {
        self.annotator_ids
            .iter()
            .map(|id| {
                table.groups(id).map(<[u8]>::to_vec).ok_or_else(|| {
                    Error::Validation(vec![Violation::UnknownAnnotator {
                        instance_id: String::new(),
                        annotator_id: id.clone(),
                    }])
                })
            })
            .collect()
    }

    /// Mean annotation per instance (the majority-vote soft label).
    pub fn vote_means(&self) -> Vec<f64> {
        self.by_instance
            .iter()
            .map(|row| {
                let ones = row.iter().filter(|&&(_, z)| z == 1).count();
                ones as f64 / row.len() as f64
            })
            .collect()
    }
}
