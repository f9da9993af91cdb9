//! Metrics, method dispatch and experiment orchestration.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{lfc_binary, majority_vote, zencrowd, ZenCrowdConfig};
use crate::classifier::{fit, ClassifierParams, TrainConfig};
use crate::em::{self, report_group_bias, EmConfig, EmState};
use crate::error::{Error, Result};
use crate::io::{self, HashingFeaturizer, Tabular};
use crate::synth::{self, realized_group_rates, SynthConfig};
use crate::types::{AnnotationDataset, AnnotatorTable, Label, PosteriorLabels};

const STREAM_SPLIT: u64 = 4;

/// Accuracy and positive-class F1 of hard labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores predictions against gold, positive class 1.
///
/// With no positive predictions and no positive gold, precision, recall
/// and F1 are all 1. With positives on either side but none shared, F1 is
/// 0 (and an empty denominator gives precision or recall 0).
pub fn binary_metrics(pred: &[Label], gold: &[Label]) -> Metrics {
    assert_eq!(pred.len(), gold.len(), "prediction and gold lengths differ");
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    let mut correct = 0usize;
    for (&p, &g) in pred.iter().zip(gold) {
        correct += usize::from(p == g);
        match (p, g) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fneg += 1,
            _ => {}
        }
    }
    let accuracy = if pred.is_empty() {
        1.0
    } else {
        correct as f64 / pred.len() as f64
    };
    if tp + fp + fneg == 0 {
        return Metrics {
            accuracy,
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = ratio(2 * tp, 2 * tp + fp + fneg);
    Metrics {
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// Scores inferred posteriors (thresholded at 0.5) against gold labels.
pub fn evaluate(inferred: &PosteriorLabels, gold: &BTreeMap<String, Label>) -> Result<Metrics> {
    let gold: Vec<Label> = inferred
        .instance_ids
        .iter()
        .map(|id| gold.get(id).copied().ok_or_else(|| Error::Coverage(id.clone())))
        .collect::<Result<_>>()?;
    Ok(binary_metrics(&inferred.hard(), &gold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mv,
    Zencrowd,
    Lfc,
    Groupanno,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mv, Method::Zencrowd, Method::Lfc, Method::Groupanno];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mv => "mv",
            Method::Zencrowd => "zencrowd",
            Method::Lfc => "lfc",
            Method::Groupanno => "groupanno",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected mv, zencrowd, lfc or groupanno)")))
    }
}

/// Hyperparameters for every method.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfigs {
    pub em: EmConfig,
    pub zencrowd: ZenCrowdConfig,
    /// Training of the downstream classifier for methods without one of
    /// their own (hard inferred labels as targets).
    pub train: TrainConfig,
}

/// What a truth-inference run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub method: Method,
    pub posteriors: PosteriorLabels,
    pub classifier: ClassifierParams,
    /// Method-specific bias estimates, ready to serialize.
    pub bias: serde_json::Value,
    /// Objective per epoch; empty for methods without one.
    pub trace: Vec<f64>,
    pub em_state: Option<EmState>,
}

pub fn infer(
    method: Method,
    dataset: &AnnotationDataset,
    table: Option<&AnnotatorTable>,
    configs: &MethodConfigs,
) -> Result<InferenceOutput> {
    let stage = |e: Error| e.in_stage(method.name());
    match method {
        Method::Mv | Method::Zencrowd => {
            let (posteriors, bias) = if method == Method::Mv {
                (majority_vote(dataset).map_err(stage)?, serde_json::Value::Null)
            } else {
                let z = zencrowd(dataset, &configs.zencrowd).map_err(stage)?;
                let rel: BTreeMap<&str, f64> = z
                    .annotator_ids
                    .iter()
                    .map(String::as_str)
                    .zip(z.reliability.iter().copied())
                    .collect();
                (z.posteriors.clone(), serde_json::json!({ "reliability": rel }))
            };
            let features: Vec<Vec<f64>> = dataset.instances.iter().map(|i| i.features.clone()).collect();
            let targets: Vec<f64> = posteriors.hard().iter().map(|&y| f64::from(y)).collect();
            let classifier = fit(&features, &targets, &configs.train)
                .map_err(|e| e.in_stage("downstream classifier"))
                .map_err(stage)?;
            Ok(InferenceOutput {
                method,
                posteriors,
                classifier,
                bias,
                trace: Vec::new(),
                em_state: None,
            })
        }
        Method::Lfc | Method::Groupanno => {
            let state = if method == Method::Lfc {
                lfc_binary(dataset, &configs.em)
            } else {
                let table = table.ok_or_else(|| {
                    Error::Config("groupanno needs an annotator table".into())
                })?;
                em::run(dataset, table, &configs.em)
            }
            .map_err(stage)?;
            let mut bias = serde_json::json!({ "params": state.bias });
            if let Some(t) = table {
                bias["group_bias"] = serde_json::to_value(report_group_bias(&state, t))?;
            }
            Ok(InferenceOutput {
                method,
                posteriors: state.posteriors.clone(),
                classifier: state.classifier.clone(),
                bias,
                trace: state.objective_trace.clone(),
                em_state: Some(state),
            })
        }
    }
}

/// Writes `posteriors.csv`, `bias.json`, `classifier.json` and `trace.csv`.
pub fn write_inference(output: &InferenceOutput, dir: &Path) -> Result<()> {
    io::write_posteriors(&output.posteriors, &dir.join("posteriors.csv"))?;
    io::write_json(&output.bias, &dir.join("bias.json"))?;
    io::write_json(&output.classifier, &dir.join("classifier.json"))?;
    io::write_trace(&output.trace, &dir.join("trace.csv"))
}

/// Sorts instances by id and each instance's annotations by annotator id,
/// so results do not depend on the row order of the input files.
pub fn canonicalize(dataset: &mut AnnotationDataset) {
    dataset.instances.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    for inst in &mut dataset.instances {
        inst.annotations
            .sort_by(|a, b| (&a.annotator_id, a.label).cmp(&(&b.annotator_id, b.label)));
    }
}

/// Where an experiment gets its data: a synthetic generator or files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SynthConfig),
    Files {
        annotations: PathBuf,
        annotators: Option<PathBuf>,
        instances: Option<PathBuf>,
        gold: PathBuf,
        #[serde(default)]
        featurizer: HashingFeaturizer,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataSource,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Fraction of instances held out to score the trained classifiers.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Drives the train/test split and, for synthetic data, the generator.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub methods_config: MethodConfigs,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_test_fraction() -> f64 {
    0.2
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the file ends in `.json`. Relative data
    /// paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let DataSource::Files {
            annotations,
            annotators,
            instances,
            gold,
            ..
        } = &mut cfg.data
        {
            let base = path.parent().unwrap_or(Path::new(""));
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(annotations);
            fix(gold);
            annotators.iter_mut().for_each(fix);
            instances.iter_mut().for_each(fix);
        }
        Ok(cfg)
    }
}

/// Scores of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    /// Inferred labels vs gold on every instance.
    pub truth_accuracy: f64,
    pub truth_f1: f64,
    /// Classifier trained on the training split, scored on the test split.
    pub test_accuracy: Option<f64>,
    pub test_f1: Option<f64>,
    /// Mean absolute error of fitted group biases vs realized group rates.
    pub bias_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub seed: u64,
    pub methods: BTreeMap<String, MethodMetrics>,
}

impl Tabular for MetricsReport {
    fn to_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "method", "acc", "f1", "test_acc", "test_f1", "bias_mae"
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        // Fixed method order rather than alphabetical.
        let order = Method::ALL.iter().map(|m| m.name());
        for name in order {
            if let Some(m) = self.methods.get(name) {
                let _ = writeln!(
                    out,
                    "{:<12} {:>9.4} {:>9.4} {:>9} {:>9} {:>9}",
                    name,
                    m.truth_accuracy,
                    m.truth_f1,
                    opt(m.test_accuracy),
                    opt(m.test_f1),
                    opt(m.bias_mae)
                );
            }
        }
        out
    }
}

/// Loaded or generated experiment data.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub dataset: AnnotationDataset,
    pub table: Option<AnnotatorTable>,
    pub gold: BTreeMap<String, Label>,
}

pub fn load_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    let mut data = match &config.data {
        DataSource::Synthetic(synth) => {
            let synth = SynthConfig {
                seed: config.seed,
                ..synth.clone()
            };
            let b = synth::generate(&synth).map_err(|e| e.in_stage("generate"))?;
            ExperimentData {
                dataset: b.dataset,
                table: Some(b.table),
                gold: b.gold,
            }
        }
        DataSource::Files {
            annotations,
            annotators,
            instances,
            gold,
            featurizer,
        } => {
            let load = || -> Result<ExperimentData> {
                Ok(ExperimentData {
                    dataset: io::load_dataset(annotations, instances.as_deref(), featurizer)?,
                    table: annotators.as_deref().map(io::read_annotators).transpose()?,
                    gold: io::read_gold(gold)?,
                })
            };
            load().map_err(|e| e.in_stage("load"))?
        }
    };
    canonicalize(&mut data.dataset);
    Ok(data)
}

/// Deterministic instance-level split; returns (train ids, test ids).
pub fn split_ids(ids: &[String], test_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut order = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SPLIT);
    order.shuffle(&mut rng);
    let n_test = ((ids.len() as f64) * test_fraction).round() as usize;
    let test = order.split_off(ids.len() - n_test.min(ids.len()));
    (order, test)
}

/// Mean absolute difference over every group cell defined on both sides.
pub fn bias_mae(
    state: &EmState,
    table: &AnnotatorTable,
    dataset: &AnnotationDataset,
    gold: &BTreeMap<String, Label>,
) -> Option<f64> {
    let fitted = report_group_bias(state, table);
    let (ra, rb) = realized_group_rates(dataset, table, gold);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (est, real) in fitted.alpha.iter().chain(&fitted.beta).zip(ra.iter().chain(&rb)) {
        for g in 0..2 {
            if let (Some(e), Some(r)) = (est[g], real[g]) {
                sum += (e - r).abs();
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Runs every configured method on the full data (truth metrics) and on
/// the training split (held-out classifier metrics).
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    if !(0.0..1.0).contains(&config.test_fraction) {
        return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
    }
    let data = load_data(config)?;
    let mut configs = config.methods_config.clone();
    configs.train.feature_map = configs.em.feature_map;

    let ids: Vec<String> = data.dataset.instances.iter().map(|i| i.instance_id.clone()).collect();
    let (train_ids, test_ids) = split_ids(&ids, config.test_fraction, config.seed);
    let train_set: HashSet<&str> = train_ids.iter().map(String::as_str).collect();
    let test_set: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    let train = data.dataset.subset(&train_set);
    let test = data.dataset.subset(&test_set);

    let mut methods = BTreeMap::new();
    for &method in &config.methods {
        let full = infer(method, &data.dataset, data.table.as_ref(), &configs)?;
        let truth = evaluate(&full.posteriors, &data.gold).map_err(|e| e.in_stage("evaluate"))?;
        let bias = match (&full.em_state, &data.table) {
            (Some(s), Some(t)) => bias_mae(s, t, &data.dataset, &data.gold),
            _ => None,
        };
        let (test_accuracy, test_f1) = if test.is_empty() {
            (None, None)
        } else {
            let fitted = infer(method, &train, data.table.as_ref(), &configs)?;
            let mut pred = Vec::with_capacity(test.len());
            let mut gold = Vec::with_capacity(test.len());
            for inst in &test.instances {
                let p = crate::classifier::predict_proba(&fitted.classifier, &inst.features)?;
                pred.push(PosteriorLabels::hard_label(p));
                gold.push(
                    *data
                        .gold
                        .get(&inst.instance_id)
                        .ok_or_else(|| Error::Coverage(inst.instance_id.clone()))?,
                );
            }
            let m = binary_metrics(&pred, &gold);
            (Some(m.accuracy), Some(m.f1))
        };
        methods.insert(
            method.name().to_string(),
            MethodMetrics {
                truth_accuracy: truth.accuracy,
                truth_f1: truth.f1,
                test_accuracy,
                test_f1,
                bias_mae: bias,
            },
        );
    }
    Ok(MetricsReport {
        name: config.name.clone(),
        seed: config.seed,
        methods,
    })
}
