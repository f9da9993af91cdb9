//! Joint MAP estimation of annotator bias, group bias, true-label
//! posteriors and classifier weights by an extended EM loop.
//!
//! The generative story: `y_i ~ Bernoulli(p_i)` with `p_i = P_w(y=1|x_i)`;
//! annotator `r` reports `z = 1` with probability `alpha_r` when `y = 1` and
//! `z = 0` with probability `beta_r` when `y = 0`. Each `alpha_r` (and
//! likewise `beta_r`) carries a Beta prior with concentration `s` whose mean
//! is the additive group decomposition
//!
//! ```text
//! m_r = clamp(u + sum_p effect[p][g_r^p], eps, 1 - eps)
//! ```
//!
//! Annotator biases are optimized in logit coordinates and the prior density
//! is taken with respect to those coordinates, so for a fixed `m_r` the
//! prior term peaks exactly at `alpha_r = m_r`.
//!
//! The E-step replaces every posterior `mu_i` by the Bayes posterior under
//! the current parameters. The M-step runs gradient ascent on
//!
//! ```text
//! sum_i mu_i ln(p_i a_i) + (1 - mu_i) ln((1 - p_i) b_i) + H(mu_i)
//!   - l2/2 |w|^2 + ln P(alpha, beta | u, effects)
//! ```
//!
//! where `H` is the binary entropy of the posterior, so the objective equals
//! the log marginal likelihood plus log prior right after an E-step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::classifier::{
    ascend, logit, sigmoid, weighted_loglik_grad, ClassifierGrad, ClassifierParams, FeatureMap,
};
use crate::error::{Error, Result};
use crate::types::{
    validate_annotations, validate_dataset, AnnotationDataset, AnnotatorTable, GroupBiasParams,
    IndexedDataset, PosteriorLabels, GROUPS,
};

/// Clamp applied to posteriors after every E-step.
pub const POSTERIOR_CLAMP: f64 = 1e-12;

/// Annotator logits are kept inside `[-LOGIT_BOUND, LOGIT_BOUND]` so that
/// biases never round to exactly 0 or 1.
const LOGIT_BOUND: f64 = 30.0;

const INITIAL_BIAS: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub epochs: usize,
    /// Rounds of block updates per M-step.
    pub m_steps_per_epoch: usize,
    /// Classifier step size, applied to the per-instance mean gradient.
    pub classifier_rate: f64,
    /// Classifier ascent steps within one M-step round.
    pub classifier_steps: usize,
    /// Annotator step size; the logit gradient of annotator `r` is divided by
    /// `n_r + s` (`n_r` = annotations by `r`, `s` = 0 without a prior).
    pub annotator_rate: f64,
    /// Step size for `u` and the group effects; gradients are divided by
    /// `R * s`.
    pub group_rate: f64,
    /// Ascent steps on `u` and group effects within one M-step round.
    pub group_steps: usize,
    /// Beta prior concentration `s = a_1 + a_2`.
    pub concentration: f64,
    /// Prior means are clamped into `[clamp_eps, 1 - clamp_eps]`.
    pub clamp_eps: f64,
    pub l2_classifier: f64,
    /// When false the Beta prior is dropped and annotator biases are free
    /// maximum-likelihood parameters.
    pub group_model_enabled: bool,
    pub feature_map: FeatureMap,
    /// Stop early once the relative objective change drops below this.
    pub tolerance: Option<f64>,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            epochs: 100,
            m_steps_per_epoch: 1,
            classifier_rate: 0.5,
            classifier_steps: 10,
            annotator_rate: 4.0,
            group_rate: 0.05,
            group_steps: 20,
            concentration: 30.0,
            clamp_eps: 1e-3,
            l2_classifier: 1e-4,
            group_model_enabled: true,
            feature_map: FeatureMap::Identity,
            tolerance: None,
        }
    }
}

impl EmConfig {
    /// The same engine with the group prior switched off.
    pub fn without_group_model(&self) -> Self {
        EmConfig {
            group_model_enabled: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.m_steps_per_epoch > 0
            && self.classifier_rate > 0.0
            && self.annotator_rate > 0.0
            && self.group_rate > 0.0
            && self.concentration > 0.0
            && self.clamp_eps > 0.0
            && self.clamp_eps < 0.1
            && self.l2_classifier >= 0.0
            && self.tolerance.is_none_or(|t| t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid EM config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmState {
    pub classifier: ClassifierParams,
    pub bias: GroupBiasParams,
    pub posteriors: PosteriorLabels,
    pub objective_trace: Vec<f64>,
}

/// The three likelihood factors of one instance. `a` and `b` are kept in
/// log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodTerms {
    pub p: f64,
    pub ln_a: f64,
    pub ln_b: f64,
}

impl LikelihoodTerms {
    pub fn a(&self) -> f64 {
        self.ln_a.exp()
    }

    pub fn b(&self) -> f64 {
        self.ln_b.exp()
    }

    /// `a p / (a p + b (1 - p))`, clamped.
    pub fn posterior(&self) -> f64 {
        let log_odds = self.ln_a + self.p.ln() - self.ln_b - (1.0 - self.p).ln();
        sigmoid(log_odds).clamp(POSTERIOR_CLAMP, 1.0 - POSTERIOR_CLAMP)
    }
}

/// Gradient of the MAP objective with respect to every free parameter.
/// Annotator components are with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGradient {
    pub classifier: ClassifierGrad,
    pub alpha_logit: Vec<f64>,
    pub beta_logit: Vec<f64>,
    pub u_alpha: f64,
    pub u_beta: f64,
    pub effects_alpha: Vec<[f64; GROUPS]>,
    pub effects_beta: Vec<[f64; GROUPS]>,
}

/// A dataset prepared for the EM engine: dense indices, group vectors in
/// annotator order, and expanded classifier inputs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub data: IndexedDataset,
    pub groups: Vec<Vec<u8>>,
    pub num_categories: usize,
    design: Vec<Vec<f64>>,
    feature_map: FeatureMap,
    feature_dim: usize,
}

impl Problem {
    /// Prepares a dataset. `table` may be `None` only for runs without the
    /// group model.
    pub fn new(
        dataset: &AnnotationDataset,
        table: Option<&AnnotatorTable>,
        feature_map: FeatureMap,
    ) -> Result<Self> {
        let violations = match table {
            Some(t) => validate_dataset(dataset, t),
            None => validate_annotations(dataset),
        };
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        let data = IndexedDataset::new(dataset);
        let (groups, num_categories) = match table {
            Some(t) => (data.groups(t)?, t.num_categories()),
            None => (vec![Vec::new(); data.num_annotators()], 0),
        };
        let design = data.features.iter().map(|x| feature_map.expand(x)).collect();
        Ok(Problem {
            data,
            groups,
            num_categories,
            design,
            feature_map,
            feature_dim: dataset.feature_dim,
        })
    }

    /// Posteriors start at the mean annotation, every bias at 0.7, group
    /// effects at 0 and the classifier at zero weights.
    pub fn init_state(&self, config: &EmConfig) -> EmState {
        let r = self.data.num_annotators();
        let p = self.num_categories;
        EmState {
            classifier: ClassifierParams::zeros(self.feature_dim, self.feature_map),
            bias: GroupBiasParams {
                u_alpha: INITIAL_BIAS,
                u_beta: INITIAL_BIAS,
                group_effects_alpha: vec![[0.0; GROUPS]; p],
                group_effects_beta: vec![[0.0; GROUPS]; p],
                annotator_ids: self.data.annotator_ids.clone(),
                annot_alpha: vec![INITIAL_BIAS; r],
                annot_beta: vec![INITIAL_BIAS; r],
                concentration: config.concentration,
            },
            posteriors: PosteriorLabels {
                instance_ids: self.data.instance_ids.clone(),
                mu: self.data.vote_means(),
            },
            objective_trace: Vec::new(),
        }
    }

    pub fn likelihood_terms(&self, state: &EmState, instance: usize) -> Result<LikelihoodTerms> {
        let row = &self.data.by_instance[instance];
        if row.is_empty() {
            return Err(Error::Validation(vec![crate::types::Violation::EmptyAnnotations {
                instance_id: self.data.instance_ids[instance].clone(),
            }]));
        }
        Ok(self.terms_unchecked(state, instance))
    }

    fn terms_unchecked(&self, state: &EmState, i: usize) -> LikelihoodTerms {
        let bias = &state.bias;
        let mut ln_a = 0.0;
        let mut ln_b = 0.0;
        for &(r, z) in &self.data.by_instance[i] {
            let (al, be) = (bias.annot_alpha[r], bias.annot_beta[r]);
            if z == 1 {
                ln_a += al.ln();
                ln_b += (1.0 - be).ln();
            } else {
                ln_a += (1.0 - al).ln();
                ln_b += be.ln();
            }
        }
        LikelihoodTerms {
            p: state.classifier.prob(&self.design[i]),
            ln_a,
            ln_b,
        }
    }

    /// Bayes posterior of every instance under the current parameters.
    pub fn e_step(&self, state: &EmState) -> PosteriorLabels {
        let mu = (0..self.data.num_instances())
            .into_par_iter()
            .map(|i| self.terms_unchecked(state, i).posterior())
            .collect();
        PosteriorLabels {
            instance_ids: self.data.instance_ids.clone(),
            mu,
        }
    }

    fn prior_means(&self, state: &EmState, config: &EmConfig) -> (Vec<f64>, Vec<f64>) {
        let b = &state.bias;
        let eps = config.clamp_eps;
        let ma = self
            .groups
            .iter()
            .map(|g| GroupBiasParams::prior_mean(b.u_alpha, &b.group_effects_alpha, g, eps))
            .collect();
        let mb = self
            .groups
            .iter()
            .map(|g| GroupBiasParams::prior_mean(b.u_beta, &b.group_effects_beta, g, eps))
            .collect();
        (ma, mb)
    }

    /// Lower bound plus log prior; see the module docs.
    pub fn map_objective(&self, state: &EmState, config: &EmConfig) -> Result<f64> {
        let mu = &state.posteriors.mu;
        let mut total = 0.0;
        for (i, &m) in mu.iter().enumerate() {
            let t = self.terms_unchecked(state, i);
            total += m * (t.p.ln() + t.ln_a) + (1.0 - m) * ((1.0 - t.p).ln() + t.ln_b);
            total += binary_entropy(m);
        }
        let w = &state.classifier.weights;
        total -= 0.5 * config.l2_classifier * w.iter().map(|x| x * x).sum::<f64>();
        if config.group_model_enabled {
            let s = config.concentration;
            let (ma, mb) = self.prior_means(state, config);
            for r in 0..self.data.num_annotators() {
                total += ln_logit_beta(state.bias.annot_alpha[r], s, ma[r]);
                total += ln_logit_beta(state.bias.annot_beta[r], s, mb[r]);
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("MAP objective {total}")));
        }
        Ok(total)
    }

    fn classifier_grad(&self, state: &EmState, config: &EmConfig) -> ClassifierGrad {
        weighted_loglik_grad(
            &state.classifier,
            &self.design,
            &state.posteriors.mu,
            config.l2_classifier,
        )
        .1
    }

    fn annotator_grads(&self, state: &EmState, config: &EmConfig) -> (Vec<f64>, Vec<f64>) {
        let mu = &state.posteriors.mu;
        let b = &state.bias;
        let mut ga: Vec<f64> = Vec::with_capacity(self.data.num_annotators());
        let mut gb: Vec<f64> = Vec::with_capacity(self.data.num_annotators());
        for (r, row) in self.data.by_annotator.iter().enumerate() {
            let (al, be) = (b.annot_alpha[r], b.annot_beta[r]);
            let mut sa = 0.0;
            let mut sb = 0.0;
            for &(i, z) in row {
                let z = f64::from(z);
                sa += mu[i] * (z - al);
                sb += (1.0 - mu[i]) * ((1.0 - z) - be);
            }
            ga.push(sa);
            gb.push(sb);
        }
        if config.group_model_enabled {
            let s = config.concentration;
            let (ma, mb) = self.prior_means(state, config);
            for r in 0..ga.len() {
                ga[r] += s * (ma[r] - b.annot_alpha[r]);
                gb[r] += s * (mb[r] - b.annot_beta[r]);
            }
        }
        (ga, gb)
    }

    /// Gradient of the prior with respect to `u` and the group effects, for
    /// either the sensitivity (`alpha = true`) or specificity block.
    fn group_grad(&self, state: &EmState, config: &EmConfig, alpha: bool) -> (f64, Vec<[f64; GROUPS]>) {
        let b = &state.bias;
        let (u, effects, values) = if alpha {
            (b.u_alpha, &b.group_effects_alpha, &b.annot_alpha)
        } else {
            (b.u_beta, &b.group_effects_beta, &b.annot_beta)
        };
        let s = config.concentration;
        let eps = config.clamp_eps;
        let mut gu = 0.0;
        let mut ge = vec![[0.0; GROUPS]; self.num_categories];
        for (r, groups) in self.groups.iter().enumerate() {
            let raw = u + effects
                .iter()
                .zip(groups)
                .map(|(e, &g)| e[g as usize])
                .sum::<f64>();
            if raw <= eps || raw >= 1.0 - eps {
                continue;
            }
            let x = values[r];
            let d = s * (x.ln() - (1.0 - x).ln() - digamma(s * raw) + digamma(s * (1.0 - raw)));
            gu += d;
            for (p, &g) in groups.iter().enumerate() {
                ge[p][g as usize] += d;
            }
        }
        (gu, ge)
    }

    /// Full gradient of [`Problem::map_objective`] at fixed posteriors.
    pub fn gradient(&self, state: &EmState, config: &EmConfig) -> MapGradient {
        let (alpha_logit, beta_logit) = self.annotator_grads(state, config);
        let (u_alpha, effects_alpha, u_beta, effects_beta) = if config.group_model_enabled {
            let (ua, ea) = self.group_grad(state, config, true);
            let (ub, eb) = self.group_grad(state, config, false);
            (ua, ea, ub, eb)
        } else {
            let z = vec![[0.0; GROUPS]; self.num_categories];
            (0.0, z.clone(), 0.0, z)
        };
        MapGradient {
            classifier: self.classifier_grad(state, config),
            alpha_logit,
            beta_logit,
            u_alpha,
            u_beta,
            effects_alpha,
            effects_beta,
        }
    }

    /// Gradient-ascent updates of all parameters with the posteriors held
    /// fixed: classifier, then annotator biases, then `u` and group effects.
    pub fn m_step(&self, state: &mut EmState, config: &EmConfig) -> Result<()> {
        let n = self.data.num_instances();
        for _ in 0..config.m_steps_per_epoch {
            for _ in 0..config.classifier_steps {
                let g = self.classifier_grad(state, config);
                ascend(&mut state.classifier, &g, config.classifier_rate, n);
            }

            let (ga, gb) = self.annotator_grads(state, config);
            let shrink = if config.group_model_enabled {
                config.concentration
            } else {
                0.0
            };
            for (r, row) in self.data.by_annotator.iter().enumerate() {
                let step = config.annotator_rate / (row.len() as f64 + shrink);
                let b = &mut state.bias;
                b.annot_alpha[r] = step_logit(b.annot_alpha[r], step * ga[r]);
                b.annot_beta[r] = step_logit(b.annot_beta[r], step * gb[r]);
            }

            if config.group_model_enabled && self.num_categories > 0 {
                let scale = config.group_rate
                    / (self.data.num_annotators() as f64 * config.concentration);
                for _ in 0..config.group_steps {
                    let (ua, ea) = self.group_grad(state, config, true);
                    let (ub, eb) = self.group_grad(state, config, false);
                    let b = &mut state.bias;
                    b.u_alpha += scale * ua;
                    b.u_beta += scale * ub;
                    for p in 0..self.num_categories {
                        for g in 0..GROUPS {
                            b.group_effects_alpha[p][g] += scale * ea[p][g];
                            b.group_effects_beta[p][g] += scale * eb[p][g];
                        }
                    }
                }
            }

            if !state.classifier.is_finite() || !bias_is_finite(&state.bias) {
                return Err(Error::NonFinite(format!(
                    "parameters after M-step: classifier={:?} bias={:?}",
                    state.classifier, state.bias
                )));
            }
        }
        Ok(())
    }

    /// Initialization followed by `epochs` rounds of E-step and M-step.
    pub fn run(&self, config: &EmConfig) -> Result<EmState> {
        config.validate()?;
        let mut state = self.init_state(config);
        for _ in 0..config.epochs {
            state.posteriors = self.e_step(&state);
            self.m_step(&mut state, config)?;
            let obj = self.map_objective(&state, config)?;
            let prev = state.objective_trace.last().copied();
            state.objective_trace.push(obj);
            if let (Some(tol), Some(prev)) = (config.tolerance, prev) {
                if ((obj - prev) / prev.abs().max(1e-300)).abs() < tol {
                    break;
                }
            }
        }
        Ok(state)
    }
}

/// Validates, prepares and fits in one call.
pub fn run(dataset: &AnnotationDataset, table: &AnnotatorTable, config: &EmConfig) -> Result<EmState> {
    Problem::new(dataset, Some(table), config.feature_map)?.run(config)
}

/// Mean fitted bias per category and group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBiasSummary {
    pub categories: Vec<String>,
    /// `alpha[p][g]`: mean sensitivity of annotators in group `g` of
    /// category `p`; `None` when the group is empty.
    pub alpha: Vec<[Option<f64>; GROUPS]>,
    pub beta: Vec<[Option<f64>; GROUPS]>,
}

/// Averages the fitted per-annotator biases within each demographic group.
pub fn report_group_bias(state: &EmState, table: &AnnotatorTable) -> GroupBiasSummary {
    let p = table.num_categories();
    let mut sum_a = vec![[0.0; GROUPS]; p];
    let mut sum_b = vec![[0.0; GROUPS]; p];
    let mut count = vec![[0usize; GROUPS]; p];
    let b = &state.bias;
    for (r, id) in b.annotator_ids.iter().enumerate() {
        let Some(groups) = table.groups(id) else {
            continue;
        };
        for (c, &g) in groups.iter().enumerate().take(p) {
            let g = g as usize;
            sum_a[c][g] += b.annot_alpha[r];
            sum_b[c][g] += b.annot_beta[r];
            count[c][g] += 1;
        }
    }
    let mean = |sum: &[[f64; GROUPS]]| -> Vec<[Option<f64>; GROUPS]> {
        sum.iter()
            .zip(&count)
            .map(|(s, n)| [0, 1].map(|g| (n[g] > 0).then(|| s[g] / n[g] as f64)))
            .collect()
    };
    GroupBiasSummary {
        categories: table.categories.clone(),
        alpha: mean(&sum_a),
        beta: mean(&sum_b),
    }
}

fn step_logit(value: f64, delta: f64) -> f64 {
    sigmoid((logit(value) + delta).clamp(-LOGIT_BOUND, LOGIT_BOUND))
}

fn bias_is_finite(b: &GroupBiasParams) -> bool {
    b.u_alpha.is_finite()
        && b.u_beta.is_finite()
        && b.group_effects_alpha.iter().flatten().all(|v| v.is_finite())
        && b.group_effects_beta.iter().flatten().all(|v| v.is_finite())
}

pub(crate) fn binary_entropy(m: f64) -> f64 {
    let mut h = 0.0;
    if m > 0.0 {
        h -= m * m.ln();
    }
    if m < 1.0 {
        h -= (1.0 - m) * (1.0 - m).ln();
    }
    h
}

/// Log density of `logit(x)` when `x ~ Beta(s m, s (1 - m))`.
pub fn ln_logit_beta(x: f64, s: f64, m: f64) -> f64 {
    let (a, b) = (s * m, s * (1.0 - m));
    ln_gamma(s) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()
}
