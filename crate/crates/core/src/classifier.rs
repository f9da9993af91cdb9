//! Logistic-regression classifier `P_w(y = 1 | x)`.
//!
//! Used in two places: jointly inside the EM engine, where it supplies the
//! instance prior `p_i` and is updated from the soft posteriors, and as a
//! standalone model trained on labels inferred by the baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper clamp applied to predicted probabilities so logs stay finite.
pub const PROB_CLAMP: f64 = 1e-12;

/// Fixed expansion applied to raw features before the linear model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMap {
    /// Raw features.
    #[default]
    Identity,
    /// Raw features followed by all degree-2 monomials `x_j * x_k`, `j <= k`.
    Quadratic,
}

impl FeatureMap {
    pub fn output_dim(self, input_dim: usize) -> usize {
        match self {
            FeatureMap::Identity => input_dim,
            FeatureMap::Quadratic => input_dim + input_dim * (input_dim + 1) / 2,
        }
    }

    pub fn expand(self, x: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Identity => x.to_vec(),
            FeatureMap::Quadratic => {
                let mut out = Vec::with_capacity(self.output_dim(x.len()));
                out.extend_from_slice(x);
                for j in 0..x.len() {
                    for k in j..x.len() {
                        out.push(x[j] * x[k]);
                    }
                }
                out
            }
        }
    }
}

/// Weights over the (expanded) feature vector plus an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub weights: Vec<f64>,
    pub intercept: f64,
    #[serde(default)]
    pub feature_map: FeatureMap,
}

impl ClassifierParams {
    pub fn zeros(input_dim: usize, feature_map: FeatureMap) -> Self {
        ClassifierParams {
            weights: vec![0.0; feature_map.output_dim(input_dim)],
            intercept: 0.0,
            feature_map,
        }
    }

    /// Expands every raw feature vector once, checking dimensions.
    pub fn design(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        features
            .iter()
            .map(|x| {
                let e = self.feature_map.expand(x);
                if e.len() != self.weights.len() {
                    return Err(Error::Dimension {
                        expected: self.weights.len(),
                        found: e.len(),
                        context: "classifier input".into(),
                    });
                }
                Ok(e)
            })
            .collect()
    }

    /// Linear score `w . x + b` on an already-expanded vector.
    pub fn score(&self, expanded: &[f64]) -> f64 {
        dot(&self.weights, expanded) + self.intercept
    }

    /// Clamped probability on an already-expanded vector.
    pub fn prob(&self, expanded: &[f64]) -> f64 {
        sigmoid(self.score(expanded)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// `logistic(w . phi(x) + b)`, clamped to `[1e-12, 1 - 1e-12]`.
pub fn predict_proba(params: &ClassifierParams, features: &[f64]) -> Result<f64> {
    let e = params.feature_map.expand(features);
    if e.len() != params.weights.len() {
        return Err(Error::Dimension {
            expected: params.weights.len(),
            found: e.len(),
            context: "predict_proba".into(),
        });
    }
    Ok(params.prob(&e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrad {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// Soft-label log-likelihood with an L2 penalty on the weights, and its
/// gradient, on pre-expanded design rows.
///
/// objective = sum_i mu_i ln p_i + (1 - mu_i) ln(1 - p_i) - l2/2 |w|^2
pub fn weighted_loglik_grad(
    params: &ClassifierParams,
    design: &[Vec<f64>],
    mu: &[f64],
    l2: f64,
) -> (f64, ClassifierGrad) {
    let mut objective = 0.0;
    let mut gw = vec![0.0; params.weights.len()];
    let mut gb = 0.0;
    for (x, &m) in design.iter().zip(mu) {
        let p = params.prob(x);
        objective += m * p.ln() + (1.0 - m) * (1.0 - p).ln();
        let r = m - p;
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += r * xi;
        }
        gb += r;
    }
    objective -= 0.5 * l2 * dot(&params.weights, &params.weights);
    for (g, w) in gw.iter_mut().zip(&params.weights) {
        *g -= l2 * w;
    }
    (
        objective,
        ClassifierGrad {
            weights: gw,
            intercept: gb,
        },
    )
}

/// Same as [`weighted_loglik_grad`] on raw features.
pub fn weighted_nll_grad(
    params: &ClassifierParams,
    features: &[Vec<f64>],
    mu: &[f64],
    l2: f64,
) -> Result<(f64, ClassifierGrad)> {
    let design = params.design(features)?;
    Ok(weighted_loglik_grad(params, &design, mu, l2))
}

/// One ascent step scaled by `rate / n`.
pub(crate) fn ascend(params: &mut ClassifierParams, grad: &ClassifierGrad, rate: f64, n: usize) {
    let step = rate / n.max(1) as f64;
    for (w, g) in params.weights.iter_mut().zip(&grad.weights) {
        *w += step * g;
    }
    params.intercept += step * grad.intercept;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Step size applied to the per-instance mean gradient.
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub feature_map: FeatureMap,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 200,
            l2: 1e-4,
            feature_map: FeatureMap::Identity,
        }
    }
}

/// Full-batch gradient ascent from zero weights.
pub fn fit(features: &[Vec<f64>], soft_labels: &[f64], config: &TrainConfig) -> Result<ClassifierParams> {
    if features.is_empty() {
        return Err(Error::Config("cannot fit a classifier on zero instances".into()));
    }
    if features.len() != soft_labels.len() {
        return Err(Error::Dimension {
            expected: features.len(),
            found: soft_labels.len(),
            context: "soft labels".into(),
        });
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 || config.epochs == 0 || config.l2 < 0.0 {
        return Err(Error::Config(format!("invalid training config {config:?}")));
    }
    let dim = features[0].len();
    let mut params = ClassifierParams::zeros(dim, config.feature_map);
    let design = params.design(features)?;
    for epoch in 0..config.epochs {
        let (objective, grad) = weighted_loglik_grad(&params, &design, soft_labels, config.l2);
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!(
                "classifier objective at epoch {epoch}: {objective}"
            )));
        }
        ascend(&mut params, &grad, config.learning_rate, design.len());
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("classifier weights after training".into()));
    }
    Ok(params)
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(sigmoid(t))` without overflow.
pub fn ln_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
