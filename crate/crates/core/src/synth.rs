//! Synthetic 2-D experiments: circle and moon instance clouds, a simulated
//! annotator pool with binary demographic attributes, and annotations drawn
//! from each annotator's sensitivity and specificity.
//!
//! Annotator biases follow a balanced additive model. With `u` the grand
//! mean of the target matrix and `e[p][g] = target[p][g] - mean_g target[p]`,
//! annotator `r` gets `clamp(u + sum_p e[p][g_r^p] + noise_r, 0.01, 0.99)`.
//! When the per-category means differ, the realized group marginals are
//! shifted from the nominal targets; the bundle records the realized values.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Annotation, AnnotationDataset, AnnotatorTable, Instance, Label, GROUPS};

const BIAS_FLOOR: f64 = 0.01;
const BIAS_CEILING: f64 = 0.99;

/// `[category][group]` rates; `None` where a group saw no relevant instance.
pub type GroupRates = Vec<[Option<f64>; GROUPS]>;

const STREAM_INSTANCES: u64 = 1;
const STREAM_ANNOTATORS: u64 = 2;
const STREAM_ANNOTATIONS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Moon,
}

/// Geometry of the two point clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    /// Radius of the class-0 disk.
    pub circle_r0: f64,
    /// Inner and outer radius of the class-1 annulus.
    pub circle_r1: f64,
    pub circle_r2: f64,
    pub circle_jitter: f64,
    pub moon_jitter: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            circle_r0: 1.0,
            circle_r1: 1.0,
            circle_r2: 1.6,
            circle_jitter: 0.15,
            moon_jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub shape: Shape,
    pub instances_per_class: usize,
    pub num_annotators: usize,
    pub annotations_per_instance: usize,
    /// `target_group_alpha[p][g]`, one row per demographic category.
    pub target_group_alpha: Vec<[f64; GROUPS]>,
    pub target_group_beta: Vec<[f64; GROUPS]>,
    pub individual_noise_sd: f64,
    pub seed: u64,
    pub geometry: Geometry,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            shape: Shape::Circle,
            instances_per_class: 400,
            num_annotators: 40,
            annotations_per_instance: 4,
            target_group_alpha: vec![[0.7, 0.5], [0.9, 0.4]],
            target_group_beta: vec![[0.8, 0.3], [0.3, 0.5]],
            individual_noise_sd: 0.02,
            seed: 0,
            geometry: Geometry::default(),
        }
    }
}

impl SynthConfig {
    pub fn num_categories(&self) -> usize {
        self.target_group_alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |m: &[[f64; GROUPS]]| m.iter().flatten().all(|&v| v > 0.0 && v < 1.0);
        let g = &self.geometry;
        let problems = [
            (self.instances_per_class == 0, "instances_per_class must be positive"),
            (self.num_annotators == 0, "num_annotators must be positive"),
            (self.annotations_per_instance == 0, "annotations_per_instance must be positive"),
            (
                self.annotations_per_instance > self.num_annotators,
                "annotations_per_instance exceeds num_annotators",
            ),
            (self.target_group_alpha.is_empty(), "at least one category is required"),
            (
                self.target_group_alpha.len() != self.target_group_beta.len(),
                "alpha and beta targets differ in category count",
            ),
            (
                !in_unit(&self.target_group_alpha) || !in_unit(&self.target_group_beta),
                "targets must lie strictly inside (0, 1)",
            ),
            (
                self.individual_noise_sd.is_nan() || self.individual_noise_sd < 0.0,
                "individual_noise_sd must be nonnegative",
            ),
            (
                !(g.circle_r0 > 0.0 && g.circle_r1 >= 0.0 && g.circle_r2 > g.circle_r1),
                "circle radii must satisfy r0 > 0 and r2 > r1 >= 0",
            ),
            (
                !(g.circle_jitter >= 0.0 && g.moon_jitter >= 0.0),
                "jitter must be nonnegative",
            ),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(Error::Config(msg.to_string())),
            None => Ok(()),
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Everything the generator knows: the observable data plus the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBundle {
    pub dataset: AnnotationDataset,
    pub table: AnnotatorTable,
    pub gold: BTreeMap<String, Label>,
    pub true_annot_alpha: BTreeMap<String, f64>,
    pub true_annot_beta: BTreeMap<String, f64>,
    pub realized_group_alpha: GroupRates,
    pub realized_group_beta: GroupRates,
}

/// True per-annotator biases in annotator order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueBiases {
    pub annotator_ids: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn instance_id(i: usize) -> String {
    format!("x{i:04}")
}

pub fn annotator_id(r: usize) -> String {
    format!("r{r:02}")
}

/// Points of both classes, class 0 first, exactly `instances_per_class`
/// each.
pub fn generate_instances(config: &SynthConfig) -> Result<Vec<(Vec<f64>, Label)>> {
    config.validate()?;
    let mut rng = config.rng(STREAM_INSTANCES);
    let n = config.instances_per_class;
    let g = &config.geometry;
    let mut out = Vec::with_capacity(2 * n);
    match config.shape {
        Shape::Circle => {
            let jitter = normal(g.circle_jitter);
            for label in [0u8, 1] {
                for _ in 0..n {
                    // Uniform over area: radius from the square root of a
                    // uniform draw on [r_in^2, r_out^2].
                    let (r_in, r_out) = if label == 0 {
                        (0.0, g.circle_r0)
                    } else {
                        (g.circle_r1, g.circle_r2)
                    };
                    let r = rng.random_range(r_in * r_in..=r_out * r_out).sqrt();
                    let t = rng.random_range(0.0..2.0 * PI);
                    let x = r * t.cos() + jitter.sample(&mut rng);
                    let y = r * t.sin() + jitter.sample(&mut rng);
                    out.push((vec![x, y], label));
                }
            }
        }
        Shape::Moon => {
            let jitter = normal(g.moon_jitter);
            for label in [0u8, 1] {
                for _ in 0..n {
                    let t = rng.random_range(0.0..=PI);
                    let (x, y) = if label == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    };
                    out.push((
                        vec![x + jitter.sample(&mut rng), y + jitter.sample(&mut rng)],
                        label,
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// Balanced random group assignment per category and additive true biases.
pub fn generate_annotators(config: &SynthConfig) -> Result<(AnnotatorTable, TrueBiases)> {
    config.validate()?;
    let mut rng = config.rng(STREAM_ANNOTATORS);
    let r_count = config.num_annotators;
    let p_count = config.num_categories();

    let mut groups = vec![vec![0u8; p_count]; r_count];
    #[allow(clippy::needless_range_loop)]
    for p in 0..p_count {
        let mut order: Vec<usize> = (0..r_count).collect();
        order.shuffle(&mut rng);
        for &r in &order[r_count / 2..] {
            groups[r][p] = 1;
        }
    }

    let noise = normal(config.individual_noise_sd);
    let (ua, ea) = additive_decomposition(&config.target_group_alpha);
    let (ub, eb) = additive_decomposition(&config.target_group_beta);
    let mut alpha = Vec::with_capacity(r_count);
    let mut beta = Vec::with_capacity(r_count);
    for g in &groups {
        let mean_a = ua + g.iter().enumerate().map(|(p, &k)| ea[p][k as usize]).sum::<f64>();
        let mean_b = ub + g.iter().enumerate().map(|(p, &k)| eb[p][k as usize]).sum::<f64>();
        alpha.push((mean_a + noise.sample(&mut rng)).clamp(BIAS_FLOOR, BIAS_CEILING));
        beta.push((mean_b + noise.sample(&mut rng)).clamp(BIAS_FLOOR, BIAS_CEILING));
    }

    let categories = (0..p_count).map(|p| format!("category_{p}")).collect();
    let mut table = AnnotatorTable::new(categories);
    let ids: Vec<String> = (0..r_count).map(annotator_id).collect();
    for (id, g) in ids.iter().zip(groups) {
        table.insert(id.clone(), g);
    }
    Ok((
        table,
        TrueBiases {
            annotator_ids: ids,
            alpha,
            beta,
        },
    ))
}

/// Draws `annotations_per_instance` distinct annotators per instance and
/// samples their labels.
pub fn generate_annotations(
    instances: &[(Vec<f64>, Label)],
    table: &AnnotatorTable,
    biases: &TrueBiases,
    config: &SynthConfig,
) -> Result<GroundTruthBundle> {
    config.validate()?;
    let r_count = biases.annotator_ids.len();
    if config.annotations_per_instance > r_count {
        return Err(Error::Config("annotations_per_instance exceeds pool size".into()));
    }
    let mut rng = config.rng(STREAM_ANNOTATIONS);
    let mut gold = BTreeMap::new();
    let mut out = Vec::with_capacity(instances.len());
    for (i, (x, y)) in instances.iter().enumerate() {
        let id = instance_id(i);
        let chosen = index::sample(&mut rng, r_count, config.annotations_per_instance);
        let annotations = chosen
            .iter()
            .map(|r| {
                let u: f64 = rng.random();
                let label = if *y == 1 {
                    Label::from(u < biases.alpha[r])
                } else {
                    Label::from(u >= biases.beta[r])
                };
                Annotation {
                    annotator_id: biases.annotator_ids[r].clone(),
                    label,
                }
            })
            .collect();
        gold.insert(id.clone(), *y);
        out.push(Instance {
            instance_id: id,
            features: x.clone(),
            annotations,
        });
    }
    let dataset = AnnotationDataset {
        feature_dim: instances.first().map_or(0, |(x, _)| x.len()),
        instances: out,
    };
    let (realized_group_alpha, realized_group_beta) = realized_group_rates(&dataset, table, &gold);
    let pairs = |v: &[f64]| -> BTreeMap<String, f64> {
        biases.annotator_ids.iter().cloned().zip(v.iter().copied()).collect()
    };
    Ok(GroundTruthBundle {
        true_annot_alpha: pairs(&biases.alpha),
        true_annot_beta: pairs(&biases.beta),
        dataset,
        table: table.clone(),
        gold,
        realized_group_alpha,
        realized_group_beta,
    })
}

/// The full pipeline: instances, annotators, annotations.
pub fn generate(config: &SynthConfig) -> Result<GroundTruthBundle> {
    let instances = generate_instances(config)?;
    let (table, biases) = generate_annotators(config)?;
    generate_annotations(&instances, &table, &biases, config)
}

/// Empirical group sensitivity and specificity against gold labels:
/// the fraction of `z = 1` among annotations on gold positives by members
/// of each group (and of `z = 0` on gold negatives).
pub fn realized_group_rates(
    dataset: &AnnotationDataset,
    table: &AnnotatorTable,
    gold: &BTreeMap<String, Label>,
) -> (GroupRates, GroupRates) {
    let p_count = table.num_categories();
    // [category][group] -> (hits, total)
    let mut pos = vec![[(0usize, 0usize); GROUPS]; p_count];
    let mut neg = vec![[(0usize, 0usize); GROUPS]; p_count];
    for inst in &dataset.instances {
        let Some(&y) = gold.get(&inst.instance_id) else {
            continue;
        };
        for a in &inst.annotations {
            let Some(groups) = table.groups(&a.annotator_id) else {
                continue;
            };
            for (p, &g) in groups.iter().enumerate().take(p_count) {
                let cell = if y == 1 {
                    &mut pos[p][g as usize]
                } else {
                    &mut neg[p][g as usize]
                };
                cell.1 += 1;
                if a.label == y {
                    cell.0 += 1;
                }
            }
        }
    }
    let rate = |m: &[[(usize, usize); GROUPS]]| -> GroupRates {
        m.iter()
            .map(|row| row.map(|(hit, n)| (n > 0).then(|| hit as f64 / n as f64)))
            .collect()
    };
    (rate(&pos), rate(&neg))
}

/// Grand mean and per-category deviations of a `P x 2` target matrix.
pub fn additive_decomposition(targets: &[[f64; GROUPS]]) -> (f64, Vec<[f64; GROUPS]>) {
    let count = (targets.len() * GROUPS) as f64;
    let u = targets.iter().flatten().sum::<f64>() / count;
    let effects = targets
        .iter()
        .map(|row| {
            let m = row.iter().sum::<f64>() / GROUPS as f64;
            row.map(|v| v - m)
        })
        .collect();
    (u, effects)
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("standard deviation validated as finite and nonnegative")
}
