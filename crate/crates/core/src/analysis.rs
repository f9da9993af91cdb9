//! Direct bias analysis without a latent-truth model: positive-label rates
//! per demographic group, per-annotator sensitivity and specificity against
//! a reference labeling, and an additive ANOVA of those biases on the
//! demographic categories.
//!
//! The ANOVA fits `response_r = u + sum_p e_p * c_rp + eps_r` with
//! sum-to-zero coding (`c_rp = +1` for group 0, `-1` for group 1) and reports
//! Type II sums of squares: the increase in residual SS when category `p` is
//! dropped from the full additive model. Group effects are then
//! `effect[p] = [e_p, -e_p]`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::baselines::majority_vote;
use crate::error::{Error, Result};
use crate::io::Tabular;
use crate::types::{
    validate_dataset, AnnotationDataset, AnnotatorTable, Label, PosteriorLabels, GROUPS,
};

/// Positive-label rate of each group, restricted per category to the
/// instances annotated by at least one member of both groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveRates {
    pub categories: Vec<String>,
    /// `rates[p][g]`; `None` when the common instance set is empty.
    pub rates: Vec<[Option<f64>; GROUPS]>,
    /// Size of the common instance set per category.
    pub common_instances: Vec<usize>,
}

pub fn group_positive_rates(
    dataset: &AnnotationDataset,
    table: &AnnotatorTable,
) -> Result<PositiveRates> {
    let violations = validate_dataset(dataset, table);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let p_count = table.num_categories();
    let mut rates = Vec::with_capacity(p_count);
    let mut common_instances = Vec::with_capacity(p_count);
    for p in 0..p_count {
        let group_of = |id: &str| table.groups(id).map(|g| g[p] as usize);
        let mut pos = [0usize; GROUPS];
        let mut total = [0usize; GROUPS];
        let mut common = 0;
        for inst in &dataset.instances {
            let mut seen = [false; GROUPS];
            for a in &inst.annotations {
                if let Some(g) = group_of(&a.annotator_id) {
                    seen[g] = true;
                }
            }
            if !seen.iter().all(|&s| s) {
                continue;
            }
            common += 1;
            for a in &inst.annotations {
                if let Some(g) = group_of(&a.annotator_id) {
                    total[g] += 1;
                    pos[g] += usize::from(a.label);
                }
            }
        }
        rates.push([0, 1].map(|g| (total[g] > 0).then(|| pos[g] as f64 / total[g] as f64)));
        common_instances.push(common);
    }
    Ok(PositiveRates {
        categories: table.categories.clone(),
        rates,
        common_instances,
    })
}

/// Sensitivity and specificity of one annotator against a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorBiasEstimate {
    pub annotator_id: String,
    /// `None` iff `n_pos == 0`.
    pub sensitivity: Option<f64>,
    /// `None` iff `n_neg == 0`.
    pub specificity: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Compares every annotator's labels with the hard reference labels.
/// Annotators are listed in order of first appearance.
pub fn estimate_annotator_bias(
    dataset: &AnnotationDataset,
    reference: &PosteriorLabels,
) -> Result<Vec<AnnotatorBiasEstimate>> {
    let lookup: HashMap<&str, Label> = reference
        .instance_ids
        .iter()
        .map(String::as_str)
        .zip(reference.hard())
        .collect();
    // (true positives, reference positives, true negatives, reference negatives)
    let mut counts: HashMap<&str, [usize; 4]> = HashMap::new();
    for inst in &dataset.instances {
        let &y = lookup
            .get(inst.instance_id.as_str())
            .ok_or_else(|| Error::Coverage(inst.instance_id.clone()))?;
        for a in &inst.annotations {
            let c = counts.entry(a.annotator_id.as_str()).or_default();
            if y == 1 {
                c[1] += 1;
                c[0] += usize::from(a.label == 1);
            } else {
                c[3] += 1;
                c[2] += usize::from(a.label == 0);
            }
        }
    }
    Ok(dataset
        .annotator_ids()
        .into_iter()
        .map(|id| {
            let [tp, n_pos, tn, n_neg] = counts[id.as_str()];
            AnnotatorBiasEstimate {
                sensitivity: (n_pos > 0).then(|| tp as f64 / n_pos as f64),
                specificity: (n_neg > 0).then(|| tn as f64 / n_neg as f64),
                n_pos,
                n_neg,
                annotator_id: id,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    Sensitivity,
    Specificity,
}

impl Response {
    fn of(self, e: &AnnotatorBiasEstimate) -> Option<f64> {
        match self {
            Response::Sensitivity => e.sensitivity,
            Response::Specificity => e.specificity,
        }
    }
}

/// ANOVA statistics for one demographic category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAnova {
    pub category: String,
    /// Type II inter-group sum of squares.
    pub inter_group_ss: Option<f64>,
    pub f_statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Observed mean response of each group.
    pub group_means: [Option<f64>; GROUPS],
    /// Fitted additive effects, `[e, -e]`.
    pub effects: Option<[f64; GROUPS]>,
    /// Set when the category could not be tested (for example every
    /// annotator is in the same group); the other fields are then `None`
    /// except the observed group means.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub response: Response,
    pub grand_mean: f64,
    pub residual_ss: f64,
    pub df_resid: usize,
    pub categories: Vec<CategoryAnova>,
    /// Annotators left out because the response was undefined or they have
    /// no entry in the table.
    pub dropped_annotators: Vec<String>,
    pub num_annotators: usize,
}

pub fn run_anova(
    estimates: &[AnnotatorBiasEstimate],
    table: &AnnotatorTable,
    response: Response,
) -> Result<AnovaResult> {
    let p_count = table.num_categories();
    let mut dropped = Vec::new();
    let mut y = Vec::new();
    let mut groups: Vec<&[u8]> = Vec::new();
    for e in estimates {
        match (response.of(e), table.groups(&e.annotator_id)) {
            (Some(v), Some(g)) if v.is_finite() => {
                y.push(v);
                groups.push(g);
            }
            _ => dropped.push(e.annotator_id.clone()),
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::Config(format!(
            "no annotator has a defined {response:?} response"
        )));
    }

    let mut categories: Vec<CategoryAnova> = (0..p_count)
        .map(|p| {
            let mut sum = [0.0; GROUPS];
            let mut cnt = [0usize; GROUPS];
            for (v, g) in y.iter().zip(&groups) {
                sum[g[p] as usize] += v;
                cnt[g[p] as usize] += 1;
            }
            CategoryAnova {
                category: table.categories[p].clone(),
                inter_group_ss: None,
                f_statistic: None,
                p_value: None,
                group_means: [0, 1].map(|g| (cnt[g] > 0).then(|| sum[g] / cnt[g] as f64)),
                effects: None,
                error: (cnt[0] == 0 || cnt[1] == 0)
                    .then(|| "all annotators fall in one group".to_string()),
            }
        })
        .collect();

    // Categories that can be estimated enter the full model.
    let active: Vec<usize> = (0..p_count).filter(|&p| categories[p].error.is_none()).collect();
    let column = |p: usize, r: usize| if groups[r][p] == 0 { 1.0 } else { -1.0 };
    let design = |cols: &[usize]| {
        DMatrix::from_fn(n, cols.len() + 1, |r, c| {
            if c == 0 {
                1.0
            } else {
                column(cols[c - 1], r)
            }
        })
    };
    let yv = DVector::from_vec(y.clone());
    let scale: f64 = y.iter().map(|v| v * v).sum();

    let full = least_squares(&design(&active), &yv);
    let Some((coef, residual_ss)) = full else {
        for &p in &active {
            categories[p].error = Some("design is rank deficient".into());
        }
        return Ok(AnovaResult {
            response,
            grand_mean: y.iter().sum::<f64>() / n as f64,
            residual_ss: 0.0,
            df_resid: 0,
            categories,
            dropped_annotators: dropped,
            num_annotators: n,
        });
    };
    let df_resid = n.saturating_sub(1 + active.len());

    for (k, &p) in active.iter().enumerate() {
        let cat = &mut categories[p];
        let e = coef[k + 1];
        cat.effects = Some([e, -e]);
        let reduced: Vec<usize> = active.iter().copied().filter(|&q| q != p).collect();
        let Some((_, rss_reduced)) = least_squares(&design(&reduced), &yv) else {
            cat.error = Some("reduced design is rank deficient".into());
            continue;
        };
        let mut ss = (rss_reduced - residual_ss).max(0.0);
        // Differences at rounding level mean no group effect at all.
        if ss <= 1e-12 * scale {
            ss = 0.0;
        }
        cat.inter_group_ss = Some(ss);
        if df_resid == 0 {
            cat.error = Some("no residual degrees of freedom".into());
            continue;
        }
        let (f, pv) = f_test(ss, residual_ss, df_resid);
        cat.f_statistic = Some(f);
        cat.p_value = Some(pv);
    }

    Ok(AnovaResult {
        response,
        grand_mean: coef[0],
        residual_ss,
        df_resid,
        categories,
        dropped_annotators: dropped,
        num_annotators: n,
    })
}

/// Coefficients and residual sum of squares via the normal equations.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let coef = xtx.cholesky()?.solve(&xty);
    let resid = y - x * &coef;
    let rss = resid.iter().map(|r| r * r).sum();
    Some((coef, rss))
}

/// `F = SS / (RSS / df)` with (1, df) degrees of freedom and its upper tail
/// probability.
pub fn f_test(ss: f64, residual_ss: f64, df_resid: usize) -> (f64, f64) {
    if ss == 0.0 {
        return (0.0, 1.0);
    }
    if residual_ss <= 0.0 {
        return (f64::INFINITY, 0.0);
    }
    let df = df_resid as f64;
    let f = ss / (residual_ss / df);
    (f, f_upper_tail(f, 1.0, df))
}

/// `P(F > f)` for an F distribution with `(d1, d2)` degrees of freedom.
pub fn f_upper_tail(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// Full analysis pipeline: positive rates, majority-vote reference,
/// per-annotator biases and both ANOVAs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasAnalysis {
    pub positive_rates: PositiveRates,
    pub annotator_bias: Vec<AnnotatorBiasEstimate>,
    pub sensitivity_anova: AnovaResult,
    pub specificity_anova: AnovaResult,
}

pub fn analyze(dataset: &AnnotationDataset, table: &AnnotatorTable) -> Result<BiasAnalysis> {
    let positive_rates = group_positive_rates(dataset, table).map_err(|e| e.in_stage("positive rates"))?;
    let reference = majority_vote(dataset).map_err(|e| e.in_stage("majority vote"))?;
    let annotator_bias = estimate_annotator_bias(dataset, &reference)?;
    let sensitivity_anova = run_anova(&annotator_bias, table, Response::Sensitivity)
        .map_err(|e| e.in_stage("sensitivity anova"))?;
    let specificity_anova = run_anova(&annotator_bias, table, Response::Specificity)
        .map_err(|e| e.in_stage("specificity anova"))?;
    Ok(BiasAnalysis {
        positive_rates,
        annotator_bias,
        sensitivity_anova,
        specificity_anova,
    })
}

/// `*` at p < 0.05, `**` at p < 0.005.
pub fn significance_stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.005 => "**",
        Some(p) if p < 0.05 => "*",
        _ => "",
    }
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.decimals$}"))
}

impl BiasAnalysis {
    /// Positive rates per category and group, in percent.
    pub fn positive_rate_table(&self) -> String {
        let pr = &self.positive_rates;
        let mut out = format!("{:<20} {:>10} {:>10} {:>8}\n", "category", "group 0", "group 1", "shared");
        for (p, name) in pr.categories.iter().enumerate() {
            let pct = |v: Option<f64>| fmt_opt(v.map(|x| 100.0 * x), 2);
            let _ = writeln!(
                out,
                "{:<20} {:>10} {:>10} {:>8}",
                name,
                pct(pr.rates[p][0]),
                pct(pr.rates[p][1]),
                pr.common_instances[p]
            );
        }
        out
    }

    /// Inter-group sums of squares with significance stars.
    pub fn anova_table(&self) -> String {
        let mut out = format!("{:<20} {:>14} {:>14}\n", "category", "sensitivity", "specificity");
        let cell = |c: &CategoryAnova| match &c.error {
            Some(_) => "n/a".to_string(),
            None => format!(
                "{}{}",
                fmt_opt(c.inter_group_ss, 4),
                significance_stars(c.p_value)
            ),
        };
        for (a, b) in self
            .sensitivity_anova
            .categories
            .iter()
            .zip(&self.specificity_anova.categories)
        {
            let _ = writeln!(out, "{:<20} {:>14} {:>14}", a.category, cell(a), cell(b));
        }
        out.push_str("* p < 0.05, ** p < 0.005\n");
        out
    }
}

impl Tabular for BiasAnalysis {
    fn to_table(&self) -> String {
        format!(
            "Positive rate (%) per group\n{}\nInter-group sum of squares\n{}",
            self.positive_rate_table(),
            self.anova_table()
        )
    }
}

/// Annotators present in a dataset but absent from the table, useful
/// before calling [`analyze`].
pub fn unknown_annotators(dataset: &AnnotationDataset, table: &AnnotatorTable) -> Vec<String> {
    let known: HashSet<&str> = table.annotators.keys().map(String::as_str).collect();
    dataset
        .annotator_ids()
        .into_iter()
        .filter(|id| !known.contains(id.as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Annotation, Instance};
    use approx::assert_relative_eq;

    fn est(id: &str, sens: f64) -> AnnotatorBiasEstimate {
        AnnotatorBiasEstimate {
            annotator_id: id.into(),
            sensitivity: Some(sens),
            specificity: Some(1.0 - sens),
            n_pos: 1,
            n_neg: 1,
        }
    }

    fn one_category(groups: &[u8]) -> AnnotatorTable {
        let mut t = AnnotatorTable::new(vec!["c".into()]);
        for (r, &g) in groups.iter().enumerate() {
            t.insert(format!("a{r}"), vec![g]);
        }
        t
    }

    #[test]
    fn hand_least_squares_on_four_points() {
        let table = one_category(&[0, 0, 1, 1]);
        let e: Vec<_> = [0.2, 0.2, 0.8, 0.8]
            .iter()
            .enumerate()
            .map(|(r, &v)| est(&format!("a{r}"), v))
            .collect();
        let res = run_anova(&e, &table, Response::Sensitivity).unwrap();
        let c = &res.categories[0];
        assert_relative_eq!(c.inter_group_ss.unwrap(), 0.36, epsilon = 1e-12);
        assert!(res.residual_ss < 1e-20);
        assert_relative_eq!(res.grand_mean, 0.5, epsilon = 1e-12);
        assert_relative_eq!(c.effects.unwrap()[0], -0.3, epsilon = 1e-12);
    }

    #[test]
    fn identical_responses_have_no_effect() {
        let table = one_category(&[0, 1, 0, 1, 1]);
        let e: Vec<_> = (0..5).map(|r| est(&format!("a{r}"), 0.3)).collect();
        let res = run_anova(&e, &table, Response::Sensitivity).unwrap();
        assert_eq!(res.categories[0].inter_group_ss, Some(0.0));
        assert_eq!(res.categories[0].p_value, Some(1.0));
    }

    #[test]
    fn single_category_matches_two_group_f() {
        let vals = [0.61, 0.7, 0.66, 0.52, 0.45, 0.58, 0.49];
        let groups = [0, 0, 0, 1, 1, 1, 1];
        let table = one_category(&groups);
        let e: Vec<_> = vals.iter().enumerate().map(|(r, &v)| est(&format!("a{r}"), v)).collect();
        let res = run_anova(&e, &table, Response::Sensitivity).unwrap();

        // Classic one-way ANOVA on two groups.
        let mean = |g: u8| {
            let xs: Vec<f64> = vals.iter().zip(&groups).filter(|(_, &k)| k == g).map(|(v, _)| *v).collect();
            (xs.iter().sum::<f64>() / xs.len() as f64, xs)
        };
        let (m0, x0) = mean(0);
        let (m1, x1) = mean(1);
        let grand = vals.iter().sum::<f64>() / vals.len() as f64;
        let ssb = x0.len() as f64 * (m0 - grand).powi(2) + x1.len() as f64 * (m1 - grand).powi(2);
        let ssw: f64 = x0.iter().map(|v| (v - m0).powi(2)).sum::<f64>()
            + x1.iter().map(|v| (v - m1).powi(2)).sum::<f64>();
        let f = ssb / (ssw / (vals.len() - 2) as f64);
        assert_relative_eq!(res.categories[0].f_statistic.unwrap(), f, max_relative = 1e-10);
        assert_relative_eq!(res.categories[0].inter_group_ss.unwrap(), ssb, max_relative = 1e-10);
    }

    #[test]
    fn constant_shift_moves_only_the_grand_mean() {
        let table = one_category(&[0, 1, 0, 1, 0, 1]);
        let vals = [0.3, 0.5, 0.35, 0.6, 0.28, 0.55];
        let mk = |shift: f64| -> Vec<_> {
            vals.iter().enumerate().map(|(r, &v)| est(&format!("a{r}"), v + shift)).collect()
        };
        let a = run_anova(&mk(0.0), &table, Response::Sensitivity).unwrap();
        let b = run_anova(&mk(0.25), &table, Response::Sensitivity).unwrap();
        assert_relative_eq!(b.grand_mean - a.grand_mean, 0.25, epsilon = 1e-12);
        let (ca, cb) = (&a.categories[0], &b.categories[0]);
        assert_relative_eq!(ca.inter_group_ss.unwrap(), cb.inter_group_ss.unwrap(), max_relative = 1e-9);
        assert_relative_eq!(ca.p_value.unwrap(), cb.p_value.unwrap(), max_relative = 1e-8);
    }

    #[test]
    fn single_group_category_reports_error_and_keeps_others() {
        let mut t = AnnotatorTable::new(vec!["flat".into(), "split".into()]);
        let vals = [0.3, 0.5, 0.35, 0.6, 0.28];
        for r in 0..5 {
            t.insert(format!("a{r}"), vec![0, (r % 2) as u8]);
        }
        let e: Vec<_> = vals.iter().enumerate().map(|(r, &v)| est(&format!("a{r}"), v)).collect();
        let res = run_anova(&e, &t, Response::Sensitivity).unwrap();
        assert!(res.categories[0].error.is_some());
        assert!(res.categories[1].p_value.is_some());
    }

    #[test]
    fn undefined_responses_are_dropped() {
        let table = one_category(&[0, 1, 0]);
        let mut e: Vec<_> = (0..3).map(|r| est(&format!("a{r}"), 0.4 + 0.1 * r as f64)).collect();
        e[2].sensitivity = None;
        let res = run_anova(&e, &table, Response::Sensitivity).unwrap();
        assert_eq!(res.dropped_annotators, vec!["a2".to_string()]);
        assert_eq!(res.num_annotators, 2);
    }

    #[test]
    fn p_value_decreases_with_f() {
        let mut prev = 1.0;
        for k in 1..50 {
            let p = f_upper_tail(k as f64 * 0.5, 1.0, 12.0);
            assert!(p < prev);
            prev = p;
        }
        // P(F(1, 10) > 4.964603) = 0.05 from standard tables.
        assert_relative_eq!(f_upper_tail(4.964603, 1.0, 10.0), 0.05, epsilon = 1e-6);
    }

    fn dataset(rows: &[&[(&str, u8)]]) -> AnnotationDataset {
        AnnotationDataset {
            feature_dim: 0,
            instances: rows
                .iter()
                .enumerate()
                .map(|(i, r)| Instance {
                    instance_id: format!("i{i}"),
                    features: vec![],
                    annotations: r
                        .iter()
                        .map(|(a, z)| Annotation {
                            annotator_id: a.to_string(),
                            label: *z,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn direct_count_bias_estimate() {
        let rows: Vec<Vec<(&str, u8)>> = [(1, 1), (0, 1), (0, 0), (0, 0), (1, 0)]
            .iter()
            .map(|&(z, _)| vec![("x", z)])
            .collect();
        let refs: Vec<&[(&str, u8)]> = rows.iter().map(Vec::as_slice).collect();
        let d = dataset(&refs);
        let reference = PosteriorLabels {
            instance_ids: (0..5).map(|i| format!("i{i}")).collect(),
            mu: vec![1.0, 1.0, 0.0, 0.0, 0.0],
        };
        let e = estimate_annotator_bias(&d, &reference).unwrap();
        assert_eq!(e[0].sensitivity, Some(0.5));
        assert_relative_eq!(e[0].specificity.unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn only_positive_reference_leaves_specificity_undefined() {
        let d = dataset(&[&[("x", 1)], &[("x", 0)]]);
        let reference = PosteriorLabels {
            instance_ids: vec!["i0".into(), "i1".into()],
            mu: vec![1.0, 0.9],
        };
        let e = estimate_annotator_bias(&d, &reference).unwrap();
        assert_eq!(e[0].specificity, None);
        assert_eq!(e[0].n_pos, 2);
    }

    #[test]
    fn missing_reference_is_a_coverage_error() {
        let d = dataset(&[&[("x", 1)]]);
        let reference = PosteriorLabels {
            instance_ids: vec![],
            mu: vec![],
        };
        assert!(matches!(
            estimate_annotator_bias(&d, &reference),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn positive_rates_use_shared_instances() {
        let mut t = AnnotatorTable::new(vec!["c".into()]);
        t.insert("a", vec![0]);
        t.insert("b", vec![1]);
        // Only i0 and i1 are seen by both groups.
        let d = dataset(&[
            &[("a", 1), ("b", 0)],
            &[("a", 1), ("b", 1)],
            &[("a", 0)],
        ]);
        let pr = group_positive_rates(&d, &t).unwrap();
        assert_eq!(pr.common_instances, vec![2]);
        assert_eq!(pr.rates[0], [Some(1.0), Some(0.5)]);

        let lonely = dataset(&[&[("a", 1)]]);
        assert_eq!(group_positive_rates(&lonely, &t).unwrap().rates[0], [None, None]);
    }
}
