//! Multinomial naive Bayes over non-negative count-like features.

use serde::{Deserialize, Serialize};

use super::{class_counts, Classifier};
use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;
use crate::scalar::{softmax_in_place, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbParams {
    /// Additive (Laplace / Lidstone) smoothing.
    pub alpha: f64,
}

impl Default for NbParams {
    fn default() -> Self {
        NbParams { alpha: 1.0 }
    }
}

impl NbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("NB alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NbModel<T> {
    /// ln P(class); `None` for classes absent from training.
    pub class_log_prior: [Option<T>; 3],
    /// ln P(feature j | class), `[class][j]`; rows of absent classes are unused.
    pub feature_log_prob: Vec<Vec<T>>,
}

pub fn fit<T: Scalar>(params: &NbParams, x: &DesignMatrix<T>, y: &[ClassLabel]) -> Result<NbModel<T>> {
    if let Some(v) = x.values().iter().find(|v| **v < T::zero()) {
        return Err(Error::Fit(format!(
            "multinomial NB needs non-negative features, found {v}"
        )));
    }
    let d = x.n_cols();
    let counts = class_counts(y);
    let mut feature_count = vec![vec![T::zero(); d]; 3];
    for (row, label) in x.rows().zip(y) {
        for (acc, &v) in feature_count[label.index()].iter_mut().zip(row) {
            *acc += v;
        }
    }
    let alpha = T::of(params.alpha);
    let n = T::of_usize(y.len());
    let mut class_log_prior = [None; 3];
    let mut feature_log_prob = vec![vec![T::zero(); d]; 3];
    for c in 0..3 {
        if counts[c] == 0 {
            continue;
        }
        class_log_prior[c] = Some((T::of_usize(counts[c]) / n).ln());
        let total = feature_count[c].iter().fold(T::zero(), |s, &v| s + v) + alpha * T::of_usize(d);
        for j in 0..d {
            // ln 0 is stored as the most negative finite value so the model stays serializable.
            feature_log_prob[c][j] = ((feature_count[c][j] + alpha) / total).ln().max(T::min_value());
        }
    }
    Ok(NbModel {
        class_log_prior,
        feature_log_prob,
    })
}

impl<T: Scalar> NbModel<T> {
    /// Joint log-likelihood ln P(c) + sum_j x_j ln P(j | c); `-inf` for absent classes.
    pub fn joint_log_likelihood(&self, x: &[T]) -> [T; 3] {
        let mut out = [T::neg_infinity(); 3];
        for c in 0..3 {
            let Some(prior) = self.class_log_prior[c] else {
                continue;
            };
            let mut s = prior;
            for (&v, &lp) in x.iter().zip(&self.feature_log_prob[c]) {
                // 0 * ln 0 contributes nothing.
                if v != T::zero() {
                    s += v * lp;
                }
            }
            out[c] = s;
        }
        out
    }
}

impl<T: Scalar> Classifier<T> for NbModel<T> {
    fn proba_row(&self, x: &[T]) -> [T; 3] {
        let mut jll = self.joint_log_likelihood(x);
        if jll.iter().all(|v| *v == T::neg_infinity()) {
            // Every class assigns zero likelihood (alpha = 0); fall back to priors.
            for c in 0..3 {
                jll[c] = self.class_log_prior[c].unwrap_or(T::neg_infinity());
            }
        }
        softmax_in_place(&mut jll);
        jll
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::*;

    #[test]
    fn laplace_smoothing_by_hand() {
        // class L sees counts (2, 0): P(f0 | L) = (2 + 1) / (2 + 2) = 0.75
        let x = DesignMatrix::from_nested(&[vec![2.0_f64, 0.0], vec![0.0, 2.0]]).unwrap();
        let m = fit(&NbParams { alpha: 1.0 }, &x, &[L, M]).unwrap();
        assert!((m.feature_log_prob[0][0].exp() - 0.75).abs() < 1e-12);
        assert!((m.feature_log_prob[0][1].exp() - 0.25).abs() < 1e-12);
        assert!((m.feature_log_prob[1][1].exp() - 0.75).abs() < 1e-12);
        assert!(m.class_log_prior[2].is_none());
    }

    #[test]
    fn single_training_point_dominates() {
        let x = DesignMatrix::from_nested(&[vec![3.0_f64, 0.0], vec![0.0, 3.0]]).unwrap();
        let m = fit(&NbParams { alpha: 1.0 }, &x, &[H, L]).unwrap();
        let p = m.proba_row(&[3.0, 0.0]);
        assert!(p[2] > 0.9);
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.predict_row(&[3.0, 0.0]), H);
    }

    #[test]
    fn negative_features_rejected() {
        let x = DesignMatrix::from_nested(&[vec![-1.0_f64], vec![1.0]]).unwrap();
        assert!(fit(&NbParams { alpha: 1.0 }, &x, &[L, M]).is_err());
    }

    #[test]
    fn zero_alpha_handles_unseen_features() {
        let x = DesignMatrix::from_nested(&[vec![1.0_f64, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = fit(&NbParams { alpha: 0.0 }, &x, &[L, H]).unwrap();
        assert_eq!(m.predict_row(&[1.0, 0.0]), L);
        let p = m.proba_row(&[1.0, 1.0]);
        assert!(p.iter().all(|v| v.is_finite()));
    }
}
