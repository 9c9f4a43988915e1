//! CART classification tree.
//!
//! Features are visited in a seeded random order and a candidate replaces the
//! incumbent only on strictly lower weighted child impurity. The `best`
//! splitter scans every midpoint between consecutive distinct values; the
//! `random` splitter draws one threshold per feature uniformly between the
//! node's minimum and maximum for that feature. A node becomes a leaf when it
//! is pure, at `max_depth`, has fewer than `min_samples_split` rows, or no
//! split leaves `min_samples_leaf` rows on both sides.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;
use crate::rng::{rng_from_seed, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Splitter {
    Best,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtParams {
    pub criterion: Criterion,
    pub splitter: Splitter,
    #[serde(default)]
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for DtParams {
    fn default() -> Self {
        DtParams {
            criterion: Criterion::Gini,
            splitter: Splitter::Best,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

impl DtParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == Some(0) {
            return Err(Error::invalid("DT max_depth must be positive"));
        }
        if self.min_samples_split < 2 {
            return Err(Error::invalid(format!(
                "DT min_samples_split must be >= 2, got {}",
                self.min_samples_split
            )));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::invalid("DT min_samples_leaf must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Split<T> {
    pub feature: usize,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: T,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Node<T> {
    pub counts: [usize; 3],
    pub impurity: f64,
    pub split: Option<Split<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TreeModel<T> {
    /// Root is node 0.
    pub nodes: Vec<Node<T>>,
}

pub fn impurity(criterion: Criterion, counts: &[usize; 3]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    match criterion {
        Criterion::Gini => 1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>(),
        Criterion::Entropy => -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.log2()
            })
            .sum::<f64>(),
    }
}

fn count(y: &[ClassLabel], rows: &[usize]) -> [usize; 3] {
    let mut c = [0; 3];
    for &i in rows {
        c[y[i].index()] += 1;
    }
    c
}

/// Weighted child impurity `(n_l I_l + n_r I_r) / n`.
fn children_score(criterion: Criterion, left: &[usize; 3], right: &[usize; 3]) -> f64 {
    let nl: usize = left.iter().sum();
    let nr: usize = right.iter().sum();
    (nl as f64 * impurity(criterion, left) + nr as f64 * impurity(criterion, right)) / (nl + nr) as f64
}

struct Candidate<T> {
    feature: usize,
    threshold: T,
    score: f64,
}

struct Builder<'a, T> {
    params: &'a DtParams,
    x: &'a DesignMatrix<T>,
    y: &'a [ClassLabel],
    rng: Rng,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Builder<'_, T> {
    fn best_split_for_feature(&self, rows: &[usize], feature: usize, total: &[usize; 3]) -> Option<(T, f64)> {
        let min_leaf = self.params.min_samples_leaf;
        let mut sorted: Vec<(T, ClassLabel)> = rows.iter().map(|&i| (self.x.get(i, feature), self.y[i])).collect();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut left = [0usize; 3];
        let mut best: Option<(T, f64)> = None;
        for k in 0..sorted.len() - 1 {
            left[sorted[k].1.index()] += 1;
            if sorted[k].0 == sorted[k + 1].0 {
                continue;
            }
            let nl = k + 1;
            if nl < min_leaf || sorted.len() - nl < min_leaf {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1], total[2] - left[2]];
            let score = children_score(self.params.criterion, &left, &right);
            if best.is_none_or(|(_, s)| score < s) {
                let mut thr = (sorted[k].0 + sorted[k + 1].0) * T::of(0.5);
                // Midpoint can round up to the upper value.
                if thr >= sorted[k + 1].0 {
                    thr = sorted[k].0;
                }
                best = Some((thr, score));
            }
        }
        best
    }

    fn random_split_for_feature(&mut self, rows: &[usize], feature: usize) -> Option<(T, f64)> {
        let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
        for &i in rows {
            let v = self.x.get(i, feature);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !(hi > lo) {
            return None;
        }
        let u: f64 = self.rng.random();
        let mut thr = lo + (hi - lo) * T::of(u);
        if thr >= hi {
            thr = lo;
        }
        let mut left = [0usize; 3];
        let mut right = [0usize; 3];
        for &i in rows {
            if self.x.get(i, feature) <= thr {
                left[self.y[i].index()] += 1;
            } else {
                right[self.y[i].index()] += 1;
            }
        }
        let (nl, nr): (usize, usize) = (left.iter().sum(), right.iter().sum());
        if nl < self.params.min_samples_leaf || nr < self.params.min_samples_leaf {
            return None;
        }
        Some((thr, children_score(self.params.criterion, &left, &right)))
    }

    fn find_split(&mut self, rows: &[usize], counts: &[usize; 3]) -> Option<Candidate<T>> {
        let mut features: Vec<usize> = (0..self.x.n_cols()).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<Candidate<T>> = None;
        for f in features {
            let found = match self.params.splitter {
                Splitter::Best => self.best_split_for_feature(rows, f, counts),
                Splitter::Random => self.random_split_for_feature(rows, f),
            };
            if let Some((threshold, score)) = found {
                if best.as_ref().is_none_or(|b| score < b.score) {
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = count(self.y, &rows);
        let imp = impurity(self.params.criterion, &counts);
        let id = self.nodes.len();
        self.nodes.push(Node {
            counts,
            impurity: imp,
            split: None,
        });
        let stop = imp <= 1e-12
            || self.params.max_depth.is_some_and(|d| depth >= d)
            || rows.len() < self.params.min_samples_split
            || rows.len() < 2 * self.params.min_samples_leaf;
        if stop {
            return id;
        }
        let Some(cand) = self.find_split(&rows, &counts) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x.get(i, cand.feature) <= cand.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id].split = Some(Split {
            feature: cand.feature,
            threshold: cand.threshold,
            left,
            right,
        });
        id
    }
}

pub fn fit<T: Scalar>(params: &DtParams, x: &DesignMatrix<T>, y: &[ClassLabel], seed: u64) -> Result<TreeModel<T>> {
    let mut b = Builder {
        params,
        x,
        y,
        rng: rng_from_seed(seed),
        nodes: Vec::new(),
    };
    b.build((0..x.n_rows()).collect(), 0);
    Ok(TreeModel { nodes: b.nodes })
}

impl<T: Scalar> TreeModel<T> {
    pub fn leaf(&self, x: &[T]) -> &Node<T> {
        let mut node = &self.nodes[0];
        while let Some(s) = &node.split {
            node = &self.nodes[if x[s.feature] <= s.threshold { s.left } else { s.right }];
        }
        node
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], id: usize) -> usize {
            match &nodes[id].split {
                None => 0,
                Some(s) => 1 + walk(nodes, s.left).max(walk(nodes, s.right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }
}

impl<T: Scalar> Classifier<T> for TreeModel<T> {
    fn proba_row(&self, x: &[T]) -> [T; 3] {
        let counts = self.leaf(x).counts;
        let n = T::of_usize(counts.iter().sum());
        counts.map(|c| T::of_usize(c) / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::*;

    #[test]
    fn impurity_values() {
        assert!((impurity(Criterion::Gini, &[2, 2, 0]) - 0.5).abs() < 1e-15);
        assert!((impurity(Criterion::Entropy, &[2, 2, 0]) - 1.0).abs() < 1e-15);
        assert_eq!(impurity(Criterion::Gini, &[0, 5, 0]), 0.0);
    }

    #[test]
    fn one_dimensional_threshold() {
        let x = DesignMatrix::from_nested(&[vec![1.0_f64], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let m = fit(&DtParams::default(), &x, &[L, L, H, H], 0).unwrap();
        let s = m.nodes[0].split.as_ref().unwrap();
        assert_eq!(s.threshold, 2.5);
        assert_eq!(m.n_leaves(), 2);
    }

    #[test]
    fn memorizes_conflict_free_data() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i * 7 % 11) as f64, (i * 3 % 5) as f64, i as f64]).collect();
        let y: Vec<ClassLabel> = (0..30).map(|i| ClassLabel::ALL[(i * i + 1) % 3]).collect();
        let x = DesignMatrix::from_nested(&rows).unwrap();
        for splitter in [Splitter::Best, Splitter::Random] {
            let p = DtParams {
                splitter,
                ..DtParams::default()
            };
            let m = fit(&p, &x, &y, 3).unwrap();
            for (i, row) in x.rows().enumerate() {
                assert_eq!(m.predict_row(row), y[i]);
            }
        }
    }

    #[test]
    fn limits_are_respected() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, ((i * 13) % 7) as f64]).collect();
        let y: Vec<ClassLabel> = (0..40).map(|i| ClassLabel::ALL[(i / 3) % 3]).collect();
        let x = DesignMatrix::from_nested(&rows).unwrap();
        let p = DtParams {
            max_depth: Some(3),
            min_samples_leaf: 4,
            ..DtParams::default()
        };
        let m = fit(&p, &x, &y, 1).unwrap();
        assert!(m.depth() <= 3);
        for n in &m.nodes {
            assert!(n.counts.iter().sum::<usize>() >= 4);
        }
    }
}
