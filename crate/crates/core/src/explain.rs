//! Shapley attributions by exact enumeration and by Kernel SHAP.
//!
//! The value of a coalition `S` is the mean model output over the background
//! rows with the columns in `S` replaced by the explained sample's values.
//! Columns on which the sample agrees with every background row cannot change
//! any coalition value; they get zero attribution and are left out of the
//! coalition space.
//!
//! Kernel SHAP follows the usual sampling scheme: coalition sizes are visited
//! from the outside in (size `s` paired with `M - s`) and fully enumerated
//! while the remaining budget covers them; the rest of the budget is drawn at
//! random from the remaining sizes in complementary pairs, with repeated draws
//! adding to the weight of the coalition already drawn. The weighted least
//! squares problem is solved with the last column eliminated so that the
//! attributions sum exactly to `f(x) - base`.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::models::TrainedModel;
use crate::preprocess::DesignMatrix;
use crate::rng::{child_seed, rng_from_seed};
use crate::scalar::Scalar;

/// Largest column count accepted by [`exact_shapley`].
pub const MAX_EXACT_COLUMNS: usize = 15;
/// Background rows kept by [`sample_background`] by default.
pub const DEFAULT_BACKGROUND: usize = 100;

/// Default coalition budget for `m` columns.
pub fn default_coalitions(m: usize) -> usize {
    2 * m + 2048
}

/// Model output over a row-major batch: `f(values, n_cols)` returns one value per row.
pub type OutputFn<'a, T> = dyn Fn(&[T], usize) -> Vec<f64> + Sync + 'a;

/// Lifts a per-row function to a batch function.
pub fn per_row<T>(g: impl Fn(&[T]) -> f64 + Sync) -> impl Fn(&[T], usize) -> Vec<f64> + Sync {
    move |values: &[T], n_cols: usize| values.chunks_exact(n_cols).map(&g).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    /// One attribution per input column.
    pub values: Vec<f64>,
    /// Mean output over the background rows.
    pub base_value: f64,
    /// Output on the explained sample.
    pub output_value: f64,
    /// Which output was attributed, e.g. `proba[H]`.
    pub explained: String,
}

impl ShapExplanation {
    /// `|base + sum(values) - output|`.
    pub fn local_accuracy_gap(&self) -> f64 {
        (self.base_value + self.values.iter().sum::<f64>() - self.output_value).abs()
    }

    /// Sums attributions over column groups, e.g. one-hot columns of one feature.
    pub fn fold_groups(&self, groups: &[(String, Vec<usize>)]) -> ShapExplanation {
        ShapExplanation {
            values: groups
                .iter()
                .map(|(_, cols)| cols.iter().map(|&c| self.values[c]).sum())
                .collect(),
            base_value: self.base_value,
            output_value: self.output_value,
            explained: self.explained.clone(),
        }
    }
}

/// Coalition values `v(S)` for a list of masks over the varying columns.
struct ValueFn<'a, T> {
    f: &'a OutputFn<'a, T>,
    background: &'a DesignMatrix<T>,
    x: &'a [T],
    varying: Vec<usize>,
}

impl<'a, T: Scalar> ValueFn<'a, T> {
    fn new(f: &'a OutputFn<'a, T>, background: &'a DesignMatrix<T>, x: &'a [T]) -> Result<Self> {
        if background.n_rows() == 0 {
            return Err(Error::invalid("background set is empty"));
        }
        if x.len() != background.n_cols() {
            return Err(Error::Shape {
                expected: background.n_cols(),
                got: x.len(),
            });
        }
        let varying = (0..x.len())
            .filter(|&j| background.rows().any(|r| r[j] != x[j]))
            .collect();
        Ok(ValueFn {
            f,
            background,
            x,
            varying,
        })
    }

    fn values(&self, masks: &[Vec<bool>]) -> Vec<f64> {
        const CHUNK: usize = 64;
        let n_bg = self.background.n_rows();
        let d = self.x.len();
        let mut out = Vec::with_capacity(masks.len());
        let mut batch: Vec<T> = Vec::with_capacity(CHUNK * n_bg * d);
        for chunk in masks.chunks(CHUNK) {
            batch.clear();
            for mask in chunk {
                for row in self.background.rows() {
                    let start = batch.len();
                    batch.extend_from_slice(row);
                    for (k, &j) in self.varying.iter().enumerate() {
                        if mask[k] {
                            batch[start + j] = self.x[j];
                        }
                    }
                }
            }
            let y = (self.f)(&batch, d);
            for block in y.chunks_exact(n_bg) {
                out.push(block.iter().sum::<f64>() / n_bg as f64);
            }
        }
        out
    }

    fn output(&self) -> f64 {
        (self.f)(self.x, self.x.len())[0]
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact Shapley values by enumerating all `2^M` coalitions of the varying columns.
pub fn exact_shapley<T: Scalar>(
    f: &OutputFn<'_, T>,
    background: &DesignMatrix<T>,
    x: &[T],
) -> Result<ShapExplanation> {
    if x.len() > MAX_EXACT_COLUMNS {
        return Err(Error::invalid(format!(
            "exact Shapley enumeration supports at most {MAX_EXACT_COLUMNS} columns, got {}",
            x.len()
        )));
    }
    let vf = ValueFn::new(f, background, x)?;
    let m = vf.varying.len();
    let masks: Vec<Vec<bool>> = (0..1usize << m)
        .map(|bits| (0..m).map(|k| bits >> k & 1 == 1).collect())
        .collect();
    let v = vf.values(&masks);
    let mut fact = vec![1.0f64; m + 1];
    for i in 1..=m {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut values = vec![0.0; x.len()];
    for (k, &col) in vf.varying.iter().enumerate() {
        let mut phi = 0.0;
        for bits in 0..1usize << m {
            if bits >> k & 1 == 1 {
                continue;
            }
            let s = bits.count_ones() as usize;
            let w = fact[s] * fact[m - s - 1] / fact[m];
            phi += w * (v[bits | 1 << k] - v[bits]);
        }
        values[col] = phi;
    }
    Ok(ShapExplanation {
        values,
        base_value: v[0],
        output_value: vf.output(),
        explained: String::new(),
    })
}

/// Kernel SHAP with a budget of `n_coalitions` coalitions (excluding the
/// empty and full ones, which enter as constraints).
pub fn kernel_shap<T: Scalar>(
    f: &OutputFn<'_, T>,
    background: &DesignMatrix<T>,
    x: &[T],
    n_coalitions: usize,
    seed: u64,
) -> Result<ShapExplanation> {
    if n_coalitions < x.len() + 2 {
        return Err(Error::invalid(format!(
            "kernel SHAP needs at least M + 2 = {} coalitions, got {n_coalitions}",
            x.len() + 2
        )));
    }
    let vf = ValueFn::new(f, background, x)?;
    let m = vf.varying.len();
    let base = vf.values(&[vec![false; m]])[0];
    let fx = vf.output();
    let mut values = vec![0.0; x.len()];
    let explanation = |values| ShapExplanation {
        values,
        base_value: base,
        output_value: fx,
        explained: String::new(),
    };
    match m {
        0 => return Ok(explanation(values)),
        1 => {
            values[vf.varying[0]] = fx - base;
            return Ok(explanation(values));
        }
        _ => {}
    }
    let (masks, weights) = sample_coalitions(m, n_coalitions, seed);
    let ey: Vec<f64> = vf.values(&masks).into_iter().map(|v| v - base).collect();
    let total = fx - base;

    // Eliminate the last column: phi_last = total - sum(others).
    let p = m - 1;
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for ((mask, &w), &y) in masks.iter().zip(&weights).zip(&ey) {
        let last = if mask[p] { 1.0 } else { 0.0 };
        for k in 0..p {
            row[k] = (if mask[k] { 1.0 } else { 0.0 }) - last;
        }
        let target = y - last * total;
        for a in 0..p {
            if row[a] == 0.0 {
                continue;
            }
            xtwy[a] += w * row[a] * target;
            for b in 0..p {
                xtwx[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    let phi = xtwx
        .clone()
        .cholesky()
        .map(|c| c.solve(&xtwy))
        .or_else(|| xtwx.lu().solve(&xtwy))
        .ok_or_else(|| Error::Degenerate("kernel SHAP design is singular".into()))?;
    let mut sum = 0.0;
    for k in 0..p {
        values[vf.varying[k]] = phi[k];
        sum += phi[k];
    }
    values[vf.varying[p]] = total - sum;
    Ok(explanation(values))
}

/// Coalition masks and their kernel weights for `m` players.
fn sample_coalitions(m: usize, budget: usize, seed: u64) -> (Vec<Vec<bool>>, Vec<f64>) {
    let budget = if m <= 30 { budget.min((1usize << m) - 2) } else { budget };
    let n_sizes = (m - 1).div_ceil(2);
    let n_paired = (m - 1) / 2;
    let mut weight_vector: Vec<f64> = (1..=n_sizes)
        .map(|s| (m - 1) as f64 / (s * (m - s)) as f64)
        .collect();
    for w in weight_vector.iter_mut().take(n_paired) {
        *w *= 2.0;
    }
    let wsum: f64 = weight_vector.iter().sum();
    weight_vector.iter_mut().for_each(|w| *w /= wsum);

    let mut masks: Vec<Vec<bool>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut n_full = 0;
    let mut left = budget as f64;
    let mut remaining = weight_vector.clone();
    for s in 1..=n_sizes {
        let paired = s <= n_paired;
        let n_subsets = binomial(m, s) * if paired { 2.0 } else { 1.0 };
        if left * remaining[s - 1] / n_subsets < 1.0 - 1e-8 {
            break;
        }
        n_full += 1;
        left -= n_subsets;
        if remaining[s - 1] < 1.0 {
            let scale = 1.0 - remaining[s - 1];
            remaining.iter_mut().for_each(|w| *w /= scale);
        }
        let mut w = weight_vector[s - 1] / binomial(m, s);
        if paired {
            w /= 2.0;
        }
        for_each_combination(m, s, |mask| {
            masks.push(mask.to_vec());
            weights.push(w);
            if paired {
                masks.push(mask.iter().map(|b| !b).collect());
                weights.push(w);
            }
        });
    }
    let n_fixed = masks.len();
    let mut samples_left = budget.saturating_sub(n_fixed);
    if n_full != n_sizes && samples_left > 0 {
        let mut rw: Vec<f64> = weight_vector.clone();
        for w in rw.iter_mut().take(n_paired) {
            *w /= 2.0;
        }
        let rw: Vec<f64> = rw[n_full..].to_vec();
        let dist = WeightedIndex::new(&rw).expect("positive weights");
        let mut rng = rng_from_seed(seed);
        let mut used: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut draws = 0;
        while samples_left > 0 && draws < 4 * budget {
            draws += 1;
            let size = dist.sample(&mut rng) + n_full + 1;
            let mut mask = vec![false; m];
            for j in rand::seq::index::sample(&mut rng, m, size) {
                mask[j] = true;
            }
            let paired = size <= n_paired;
            match used.get(&mask) {
                Some(&at) => {
                    weights[at] += 1.0;
                    if paired && samples_left > 0 {
                        weights[at + 1] += 1.0;
                    }
                }
                None => {
                    used.insert(mask.clone(), masks.len());
                    samples_left -= 1;
                    let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
                    masks.push(mask);
                    weights.push(1.0);
                    if paired && samples_left > 0 {
                        samples_left -= 1;
                        masks.push(complement);
                        weights.push(1.0);
                    }
                }
            }
        }
        let weight_left: f64 = weight_vector[n_full..].iter().sum();
        let drawn: f64 = weights[n_fixed..].iter().sum();
        if drawn > 0.0 {
            weights[n_fixed..].iter_mut().for_each(|w| *w *= weight_left / drawn);
        }
    }
    (masks, weights)
}

/// Calls `f` with every size-`k` subset of `0..n` as a mask, in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[bool])) {
    let mut idx: Vec<usize> = (0..k).collect();
    let mut mask = vec![false; n];
    loop {
        mask.iter_mut().for_each(|b| *b = false);
        for &i in &idx {
            mask[i] = true;
        }
        f(&mask);
        let Some(i) = (0..k).rev().find(|&i| idx[i] < i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Keeps at most `cap` rows, chosen with the seeded generator, in their original order.
pub fn sample_background<T: Scalar>(train: &DesignMatrix<T>, cap: usize, seed: u64) -> DesignMatrix<T> {
    if train.n_rows() <= cap {
        return train.clone();
    }
    let mut rng = rng_from_seed(seed);
    let mut rows = rand::seq::index::sample(&mut rng, train.n_rows(), cap).into_vec();
    rows.sort_unstable();
    train.select_rows(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTarget {
    /// Probability (or surrogate score) of the class the model predicts for the sample.
    PredictedClass,
    Class(ClassLabel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapMethod {
    Kernel,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapOptions {
    pub method: ShapMethod,
    pub target: OutputTarget,
    /// `None` uses [`default_coalitions`].
    pub n_coalitions: Option<usize>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ShapOptions {
    fn default() -> Self {
        ShapOptions {
            method: ShapMethod::Kernel,
            target: OutputTarget::PredictedClass,
            n_coalitions: None,
            seed: 0,
            workers: 0,
        }
    }
}

/// Explains each row of `samples`; sample `i` uses seed `child_seed(seed, i)`.
pub fn explain_model<T: Scalar>(
    model: &TrainedModel<T>,
    background: &DesignMatrix<T>,
    samples: &DesignMatrix<T>,
    opts: &ShapOptions,
) -> Result<Vec<ShapExplanation>> {
    let run = || -> Result<Vec<ShapExplanation>> {
        (0..samples.n_rows())
            .into_par_iter()
            .map(|i| {
                let x = samples.row(i);
                let class = match opts.target {
                    OutputTarget::PredictedClass => model.predict_row(x)?,
                    OutputTarget::Class(c) => c,
                };
                let k = class.index();
                let f = |values: &[T], n_cols: usize| -> Vec<f64> {
                    model
                        .predict_proba_batch(values, n_cols)
                        .expect("width checked")
                        .into_iter()
                        .map(|p| p[k].as_f64())
                        .collect()
                };
                let mut e = match opts.method {
                    ShapMethod::Exact => exact_shapley(&f, background, x)?,
                    ShapMethod::Kernel => kernel_shap(
                        &f,
                        background,
                        x,
                        opts.n_coalitions.unwrap_or_else(|| default_coalitions(x.len())),
                        child_seed(opts.seed, i as u64),
                    )?,
                };
                e.explained = format!("proba[{class}]");
                Ok(e)
            })
            .collect()
    };
    crate::evaluate::in_pool(opts.workers, run)?
}

/// Value shown next to a grouped attribution: the raw value for single-column
/// features, the active category index for one-hot groups.
pub fn group_feature_values<T: Scalar>(raw_row: &[T], groups: &[(String, Vec<usize>)]) -> Vec<f64> {
    groups
        .iter()
        .map(|(_, cols)| {
            if cols.len() == 1 {
                raw_row[cols[0]].as_f64()
            } else {
                cols.iter()
                    .position(|&c| raw_row[c] != T::zero())
                    .map_or(-1.0, |p| p as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAttribution {
    pub rank: usize,
    pub feature: String,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmPoint {
    pub sample: usize,
    pub feature: String,
    pub attribution: f64,
    pub feature_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub n_samples: usize,
    /// Mean |attribution| per feature in input order.
    pub mean_abs: Vec<(String, f64)>,
    /// Top features, descending mean |attribution|, ties by input order.
    pub ranking: Vec<RankedAttribution>,
    pub points: Vec<BeeswarmPoint>,
}

/// Summarizes explanations sharing the column set `names`. `feature_values`
/// holds one row per explanation for the beeswarm points.
pub fn shap_summary(
    expls: &[ShapExplanation],
    names: &[String],
    feature_values: &[Vec<f64>],
    k: usize,
) -> Result<ShapSummary> {
    if expls.is_empty() {
        return Err(Error::invalid("SHAP summary needs at least one explanation"));
    }
    if let Some(e) = expls.iter().find(|e| e.values.len() != names.len()) {
        return Err(Error::Shape {
            expected: names.len(),
            got: e.values.len(),
        });
    }
    if feature_values.len() != expls.len() {
        return Err(Error::Shape {
            expected: expls.len(),
            got: feature_values.len(),
        });
    }
    let n = expls.len() as f64;
    let mean_abs: Vec<f64> = (0..names.len())
        .map(|j| expls.iter().map(|e| e.values[j].abs()).sum::<f64>() / n)
        .collect();
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    let ranking = order
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, &j)| RankedAttribution {
            rank: r + 1,
            feature: names[j].clone(),
            mean_abs: mean_abs[j],
        })
        .collect();
    let mut points = Vec::with_capacity(expls.len() * names.len());
    for (s, (e, fv)) in expls.iter().zip(feature_values).enumerate() {
        for j in 0..names.len() {
            points.push(BeeswarmPoint {
                sample: s,
                feature: names[j].clone(),
                attribution: e.values[j],
                feature_value: fv.get(j).copied().unwrap_or(0.0),
            });
        }
    }
    Ok(ShapSummary {
        n_samples: expls.len(),
        mean_abs: names.iter().cloned().zip(mean_abs).collect(),
        ranking,
        points,
    })
}

impl ShapSummary {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.ranking.iter().find(|r| r.feature == feature).map(|r| r.rank)
    }

    pub fn write_ranking_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["rank", "feature", "mean_abs_attribution"])?;
        for r in &self.ranking {
            out.write_record([r.rank.to_string(), r.feature.clone(), r.mean_abs.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn write_points_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample", "feature", "attribution", "feature_value"])?;
        for p in &self.points {
            out.write_record([
                p.sample.to_string(),
                p.feature.clone(),
                p.attribution.to_string(),
                p.feature_value.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }
}
