//! Soft-margin kernel SVM trained by SMO.
//!
//! The dual `min 1/2 a'Qa - e'a` subject to `0 <= a_i <= C`, `y'a = 0`,
//! `Q_ij = y_i y_j K(x_i, x_j)` is solved two variables at a time. The working
//! pair uses second-order selection: `i` maximizes `-y_t G_t` over the upper
//! set, `j` minimizes `-b^2 / a` over the lower set with `b > 0`. Optimization
//! stops when the maximal violating pair gap drops below `tol`. The offset is
//! the mean of `y_i G_i` over free variables, or the midpoint of the feasible
//! interval if there are none.

use serde::{Deserialize, Serialize};

use super::ovo::{fit_pairs, BinaryDecision, OvoModel};
use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    #[serde(rename = "rbf", alias = "RBF")]
    Rbf,
    #[serde(rename = "linear")]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    #[serde(default = "default_kernel")]
    pub kernel: Kernel,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_kernel() -> Kernel {
    Kernel::Rbf
}

fn default_tol() -> f64 {
    1e-3
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            kernel: Kernel::Rbf,
            tol: default_tol(),
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::invalid(format!("SVM C must be > 0, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("SVM tol must be > 0"));
        }
        Ok(())
    }
}

/// `1 / (n_features * var(X))` over every entry of `x`; 1 when the variance is zero.
pub fn scale_gamma<T: Scalar>(x: &DesignMatrix<T>) -> T {
    let v = x.values();
    if v.is_empty() {
        return T::one();
    }
    let n = T::of_usize(v.len());
    let mean = v.iter().fold(T::zero(), |s, &a| s + a) / n;
    let var = v.iter().fold(T::zero(), |s, &a| s + (a - mean) * (a - mean)) / n;
    if var > T::zero() {
        T::one() / (T::of_usize(x.n_cols()) * var)
    } else {
        T::one()
    }
}

fn kernel_value<T: Scalar>(kernel: Kernel, gamma: T, a: &[T], b: &[T]) -> T {
    match kernel {
        Kernel::Linear => a.iter().zip(b).fold(T::zero(), |s, (&u, &v)| s + u * v),
        Kernel::Rbf => {
            let d2 = a.iter().zip(b).fold(T::zero(), |s, (&u, &v)| s + (u - v) * (u - v));
            (-gamma * d2).exp()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SvmBinary<T> {
    pub kernel: Kernel,
    pub gamma: T,
    /// Support vectors, row-major.
    pub support_vectors: Vec<T>,
    pub n_cols: usize,
    /// Row indices of the support vectors in the pair's training matrix.
    pub support: Vec<usize>,
    /// `alpha_i * y_i` per support vector.
    pub dual_coef: Vec<T>,
    pub rho: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> BinaryDecision<T> for SvmBinary<T> {
    fn decision(&self, x: &[T]) -> T {
        self.support_vectors
            .chunks_exact(self.n_cols.max(1))
            .zip(&self.dual_coef)
            .fold(-self.rho, |s, (sv, &c)| s + c * kernel_value(self.kernel, self.gamma, sv, x))
    }
}

impl<T: Scalar> SvmBinary<T> {
    /// Primal weights; only meaningful for the linear kernel.
    pub fn linear_weights(&self) -> Vec<T> {
        let mut w = vec![T::zero(); self.n_cols];
        for (sv, &c) in self.support_vectors.chunks_exact(self.n_cols.max(1)).zip(&self.dual_coef) {
            for (wj, &v) in w.iter_mut().zip(sv) {
                *wj += c * v;
            }
        }
        w
    }
}

/// Solves the dual for targets `y` in {+1, -1}; returns `(alpha, rho, iterations, converged)`.
pub fn solve_dual<T: Scalar>(kmat: &[T], y: &[T], c: T, tol: T) -> (Vec<T>, T, usize, bool) {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * kmat[i * n + j];
    let tau = T::of(1e-12);
    let mut alpha = vec![T::zero(); n];
    let mut grad = vec![-T::one(); n];
    let max_iter = (100 * n).max(10_000_000);
    let pos = |t: usize| y[t] > T::zero();
    let in_up = |a: &[T], t: usize| (pos(t) && a[t] < c) || (!pos(t) && a[t] > T::zero());
    let in_low = |a: &[T], t: usize| (pos(t) && a[t] > T::zero()) || (!pos(t) && a[t] < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // i: maximal -y G over the upper set.
        let mut gmax = T::neg_infinity();
        let mut i_sel = None;
        for t in 0..n {
            if in_up(&alpha, t) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let mut gmax2 = T::neg_infinity();
        let mut j_sel = None;
        let mut obj_min = T::infinity();
        if let Some(i) = i_sel {
            for t in 0..n {
                if !in_low(&alpha, t) {
                    continue;
                }
                let yg = y[t] * grad[t];
                if yg > gmax2 {
                    gmax2 = yg;
                }
                let b = gmax + yg;
                if b > T::zero() {
                    let mut a = kmat[i * n + i] + kmat[t * n + t] - T::of(2.0) * kmat[i * n + t];
                    if a <= T::zero() {
                        a = tau;
                    }
                    let obj = -(b * b) / a;
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        if gmax + gmax2 < tol || i_sel.is_none() || j_sel.is_none() {
            converged = true;
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel.unwrap(), j_sel.unwrap());
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + T::of(2.0) * q(i, j);
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > T::zero() {
                if alpha[j] < T::zero() {
                    alpha[j] = T::zero();
                    alpha[i] = diff;
                }
            } else if alpha[i] < T::zero() {
                alpha[i] = T::zero();
                alpha[j] = -diff;
            }
            if diff > T::zero() {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - T::of(2.0) * q(i, j);
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < T::zero() {
                alpha[j] = T::zero();
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < T::zero() {
                alpha[i] = T::zero();
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // Offset.
    let mut ub = T::infinity();
    let mut lb = T::neg_infinity();
    let mut sum_free = T::zero();
    let mut n_free = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if pos(t) {
                lb = lb.max(yg);
            } else {
                ub = ub.min(yg);
            }
        } else if alpha[t] <= T::zero() {
            if pos(t) {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / T::of_usize(n_free)
    } else {
        (ub + lb) * T::of(0.5)
    };
    (alpha, rho, iterations, converged)
}

pub fn fit_binary<T: Scalar>(params: &SvmParams, gamma: T, x: &DesignMatrix<T>, y: &[T]) -> Result<SvmBinary<T>> {
    let n = x.n_rows();
    let mut kmat = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = kernel_value(params.kernel, gamma, x.row(i), x.row(j));
            kmat[i * n + j] = k;
            kmat[j * n + i] = k;
        }
    }
    let (alpha, rho, iterations, converged) = solve_dual(&kmat, y, T::of(params.c), T::of(params.tol));
    let support: Vec<usize> = (0..n).filter(|&i| alpha[i] > T::zero()).collect();
    let mut support_vectors = Vec::with_capacity(support.len() * x.n_cols());
    for &i in &support {
        support_vectors.extend_from_slice(x.row(i));
    }
    Ok(SvmBinary {
        kernel: params.kernel,
        gamma,
        support_vectors,
        n_cols: x.n_cols(),
        dual_coef: support.iter().map(|&i| alpha[i] * y[i]).collect(),
        support,
        rho,
        iterations,
        converged,
    })
}

/// One binary SVM per class pair; gamma is computed once on the full training matrix.
pub fn fit_ovo<T: Scalar>(params: &SvmParams, x: &DesignMatrix<T>, y: &[ClassLabel]) -> Result<OvoModel<SvmBinary<T>>> {
    let gamma = scale_gamma(x);
    fit_pairs(x, y, |sub, target| fit_binary(params, gamma, sub, target))
}
