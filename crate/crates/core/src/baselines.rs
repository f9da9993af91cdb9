//! Reference truth-inference methods: majority vote, ZenCrowd (one
//! reliability per worker) and LFC-binary (per-annotator sensitivity and
//! specificity with a jointly trained classifier).

use serde::{Deserialize, Serialize};

use crate::classifier::sigmoid;
use crate::em::{EmConfig, EmState, Problem};
use crate::error::{Error, Result};
use crate::types::{validate_annotations, AnnotationDataset, IndexedDataset, PosteriorLabels};

/// Mean annotation per instance; exact ties become label 1.
pub fn majority_vote(dataset: &AnnotationDataset) -> Result<PosteriorLabels> {
    check(dataset)?;
    let idx = IndexedDataset::new(dataset);
    Ok(PosteriorLabels {
        mu: idx.vote_means(),
        instance_ids: idx.instance_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZenCrowdConfig {
    pub epochs: usize,
    /// Prior probability of the positive class.
    pub class_prior: f64,
    pub initial_reliability: f64,
    pub reliability_floor: f64,
    pub reliability_ceiling: f64,
}

impl Default for ZenCrowdConfig {
    fn default() -> Self {
        ZenCrowdConfig {
            epochs: 50,
            class_prior: 0.5,
            initial_reliability: 0.7,
            reliability_floor: 0.01,
            reliability_ceiling: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZenCrowdResult {
    pub posteriors: PosteriorLabels,
    pub annotator_ids: Vec<String>,
    pub reliability: Vec<f64>,
}

/// EM over a single probability of answering correctly per worker.
pub fn zencrowd(dataset: &AnnotationDataset, config: &ZenCrowdConfig) -> Result<ZenCrowdResult> {
    check(dataset)?;
    if config.epochs == 0 || !(0.0 < config.class_prior && config.class_prior < 1.0) {
        return Err(Error::Config(format!("invalid ZenCrowd config {config:?}")));
    }
    let idx = IndexedDataset::new(dataset);
    let (lo, hi) = (config.reliability_floor, config.reliability_ceiling);
    let mut q = vec![config.initial_reliability.clamp(lo, hi); idx.num_annotators()];
    let prior_log_odds = (config.class_prior / (1.0 - config.class_prior)).ln();
    let mut mu = vec![0.0; idx.num_instances()];
    for _ in 0..config.epochs {
        let log_odds: Vec<f64> = q.iter().map(|&r| (r / (1.0 - r)).ln()).collect();
        for (i, row) in idx.by_instance.iter().enumerate() {
            // Votes for and against are summed separately in sorted order so
            // that balanced evidence cancels exactly.
            let mut pos: Vec<f64> = Vec::new();
            let mut neg: Vec<f64> = Vec::new();
            for &(r, z) in row {
                if z == 1 {
                    pos.push(log_odds[r]);
                } else {
                    neg.push(log_odds[r]);
                }
            }
            pos.sort_by(f64::total_cmp);
            neg.sort_by(f64::total_cmp);
            let lp: f64 = pos.iter().sum();
            let ln: f64 = neg.iter().sum();
            mu[i] = sigmoid(prior_log_odds + (lp - ln));
        }
        for (r, row) in idx.by_annotator.iter().enumerate() {
            let correct: f64 = row
                .iter()
                .map(|&(i, z)| if z == 1 { mu[i] } else { 1.0 - mu[i] })
                .sum();
            q[r] = (correct / row.len() as f64).clamp(lo, hi);
        }
    }
    Ok(ZenCrowdResult {
        posteriors: PosteriorLabels {
            instance_ids: idx.instance_ids,
            mu,
        },
        annotator_ids: idx.annotator_ids,
        reliability: q,
    })
}

/// The EM engine with the group prior switched off: free per-annotator
/// sensitivity/specificity and a jointly trained classifier. Needs no
/// demographic data.
pub fn lfc_binary(dataset: &AnnotationDataset, config: &EmConfig) -> Result<EmState> {
    let config = config.without_group_model();
    Problem::new(dataset, None, config.feature_map)?.run(&config)
}

fn check(dataset: &AnnotationDataset) -> Result<()> {
    let v = validate_annotations(dataset);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(v))
    }
}
