use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{class_counts, Classifier};
use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    /// Neighbour count; odd.
    pub k: usize,
    /// Minkowski order, at least 1.
    pub p: f64,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 5, p: 2.0 }
    }
}

impl KnnParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k % 2 == 0 {
            return Err(Error::invalid(format!("k-NN k must be odd and positive, got {}", self.k)));
        }
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::invalid(format!("Minkowski order must be >= 1, got {}", self.p)));
        }
        Ok(())
    }
}

/// Stores the training set. Neighbour ties go to the lower training row;
/// vote ties go to the class with more training rows, then to L < M < H.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KnnModel<T> {
    pub k: usize,
    pub p: f64,
    x: Vec<T>,
    n_cols: usize,
    y: Vec<ClassLabel>,
    class_freq: [usize; 3],
}

pub fn fit<T: Scalar>(params: &KnnParams, x: &DesignMatrix<T>, y: &[ClassLabel]) -> Result<KnnModel<T>> {
    if x.n_rows() < params.k {
        return Err(Error::Fit(format!(
            "k-NN needs at least k = {} training rows, got {}",
            params.k,
            x.n_rows()
        )));
    }
    Ok(KnnModel {
        k: params.k,
        p: params.p,
        x: x.values().to_vec(),
        n_cols: x.n_cols(),
        y: y.to_vec(),
        class_freq: class_counts(y),
    })
}

impl<T: Scalar> KnnModel<T> {
    /// Minkowski distance raised to the power `p` (monotone in the distance).
    fn powered_distance(&self, a: &[T], b: &[T]) -> T {
        if self.p == 1.0 {
            a.iter().zip(b).fold(T::zero(), |s, (&u, &v)| s + (u - v).abs())
        } else if self.p == 2.0 {
            a.iter().zip(b).fold(T::zero(), |s, (&u, &v)| s + (u - v) * (u - v))
        } else if self.p.fract() == 0.0 && self.p <= 16.0 {
            let e = self.p as i32;
            a.iter().zip(b).fold(T::zero(), |s, (&u, &v)| s + (u - v).abs().powi(e))
        } else {
            let e = T::of(self.p);
            a.iter().zip(b).fold(T::zero(), |s, (&u, &v)| s + (u - v).abs().powf(e))
        }
    }

    /// Training-row indices of the k nearest neighbours, nearest first.
    pub fn neighbors(&self, x: &[T]) -> Vec<usize> {
        let mut d: Vec<(T, usize)> = self
            .x
            .chunks_exact(self.n_cols)
            .enumerate()
            .map(|(i, row)| (self.powered_distance(row, x), i))
            .collect();
        let cmp = |a: &(T, usize), b: &(T, usize)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    fn votes(&self, x: &[T]) -> [usize; 3] {
        let mut votes = [0usize; 3];
        for i in self.neighbors(x) {
            votes[self.y[i].index()] += 1;
        }
        votes
    }
}

impl<T: Scalar> Classifier<T> for KnnModel<T> {
    fn proba_row(&self, x: &[T]) -> [T; 3] {
        let votes = self.votes(x);
        let k = T::of_usize(self.k);
        votes.map(|v| T::of_usize(v) / k)
    }

    fn predict_row(&self, x: &[T]) -> ClassLabel {
        let votes = self.votes(x);
        let mut best = 0;
        for c in 1..3 {
            let key = (votes[c], self.class_freq[c]);
            let best_key = (votes[best], self.class_freq[best]);
            if key > best_key {
                best = c;
            }
        }
        ClassLabel::ALL[best]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit as fit_model, predict, ModelParams, ModelSpec};
    use ClassLabel::*;

    #[test]
    fn one_nn_memorizes() {
        let x = DesignMatrix::from_nested(&[
            vec![0.0_f64, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![5.0, 5.0],
        ])
        .unwrap();
        let y = [L, M, H, M];
        let spec = ModelSpec::new(ModelParams::Knn(KnnParams { k: 1, p: 2.0 }), 0);
        let m = fit_model(&spec, &x, &y).unwrap();
        assert_eq!(predict(&m, &x).unwrap(), y);
    }

    #[test]
    fn distance_ties_take_lower_index() {
        let x = DesignMatrix::from_nested(&[vec![-1.0_f64], vec![1.0], vec![3.0]]).unwrap();
        let m = fit(&KnnParams { k: 1, p: 1.0 }, &x, &[L, H, H]).unwrap();
        assert_eq!(m.neighbors(&[0.0]), vec![0]);
        assert_eq!(m.predict_row(&[0.0]), L);
    }

    #[test]
    fn vote_ties_go_to_frequent_class() {
        // k = 3 with neighbours L, H and a far M: 1-1-1 tie; M has the most rows.
        let x = DesignMatrix::from_nested(&[
            vec![0.0_f64],
            vec![0.1],
            vec![0.2],
            vec![10.0],
            vec![11.0],
        ])
        .unwrap();
        let m = fit(&KnnParams { k: 3, p: 2.0 }, &x, &[L, H, M, M, M]).unwrap();
        assert_eq!(m.predict_row(&[0.05]), M);
        let p = m.proba_row(&[0.05]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_too_few_rows_and_even_k() {
        let x = DesignMatrix::from_nested(&[vec![0.0_f64], vec![1.0]]).unwrap();
        assert!(fit(&KnnParams { k: 3, p: 2.0 }, &x, &[L, H]).is_err());
        assert!(KnnParams { k: 4, p: 2.0 }.validate().is_err());
        assert!(KnnParams { k: 3, p: 0.5 }.validate().is_err());
    }
}
