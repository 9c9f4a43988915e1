//! Binary logistic regression with L1 or L2 penalty.
//!
//! Minimizes `C * sum_i ln(1 + exp(-y_i (w.x_i + b))) + R(w)` with
//! `R = ||w||^2 / 2` (L2) or `R = ||w||_1` (L1); the intercept is not
//! penalized. The solver is full-batch accelerated proximal gradient descent
//! (FISTA) with backtracking line search and gradient-based restart. The L2
//! term is part of the smooth objective; the L1 term is handled by its
//! proximal map, soft-thresholding.

use serde::{Deserialize, Serialize};

use super::ovo::{fit_pairs, BinaryDecision, OvoModel};
use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrParams {
    pub penalty: Penalty,
    /// Inverse regularization strength.
    pub c: f64,
    /// Stop when the gradient-mapping norm drops below this.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    20_000
}

impl Default for LrParams {
    fn default() -> Self {
        LrParams {
            penalty: Penalty::L2,
            c: 1.0,
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

impl LrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::invalid(format!("LR C must be > 0, got {}", self.c)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::invalid("LR tol must be > 0 and max_iter >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearBinary<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> LinearBinary<T> {
    pub fn weight_norm(&self) -> T {
        self.weights.iter().fold(T::zero(), |s, &w| s + w * w).sqrt()
    }
}

impl<T: Scalar> BinaryDecision<T> for LinearBinary<T> {
    fn decision(&self, x: &[T]) -> T {
        self.weights
            .iter()
            .zip(x)
            .fold(self.bias, |s, (&w, &v)| s + w * v)
    }
}

struct Problem<'a, T> {
    x: &'a DesignMatrix<T>,
    y: &'a [T],
    c: T,
    penalty: Penalty,
}

impl<T: Scalar> Problem<'_, T> {
    /// Smooth part of the objective and its gradient; parameters are `[w..., b]`.
    fn smooth(&self, theta: &[T], grad: Option<&mut [T]>) -> T {
        let d = self.x.n_cols();
        let (w, b) = (&theta[..d], theta[d]);
        let mut loss = T::zero();
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
        for (row, &yi) in self.x.rows().zip(self.y) {
            let z = row.iter().zip(w).fold(b, |s, (&xv, &wv)| s + xv * wv);
            let m = yi * z;
            loss += softplus(-m);
            if let Some(g) = g.as_deref_mut() {
                // d/dz ln(1 + e^{-yz}) = -y * sigmoid(-yz)
                let coef = -yi * sigmoid(-m) * self.c;
                for (gj, &xv) in g[..d].iter_mut().zip(row) {
                    *gj += coef * xv;
                }
                g[d] += coef;
            }
        }
        let mut f = self.c * loss;
        if self.penalty == Penalty::L2 {
            let half = T::of(0.5);
            f += half * w.iter().fold(T::zero(), |s, &v| s + v * v);
            if let Some(g) = g {
                for (gj, &wj) in g[..d].iter_mut().zip(w) {
                    *gj += wj;
                }
            }
        }
        f
    }

    fn nonsmooth(&self, theta: &[T]) -> T {
        match self.penalty {
            Penalty::L2 => T::zero(),
            Penalty::L1 => theta[..self.x.n_cols()]
                .iter()
                .fold(T::zero(), |s, &v| s + v.abs()),
        }
    }

    /// prox_{step * R}(v), in place; only weights are shrunk.
    fn prox(&self, v: &mut [T], step: T) {
        if self.penalty == Penalty::L1 {
            for w in v[..self.x.n_cols()].iter_mut() {
                let a = w.abs() - step;
                *w = if a > T::zero() { w.signum() * a } else { T::zero() };
            }
        }
    }
}

pub fn fit_binary<T: Scalar>(params: &LrParams, x: &DesignMatrix<T>, y: &[T]) -> Result<LinearBinary<T>> {
    let d = x.n_cols();
    let p = d + 1;
    let problem = Problem {
        x,
        y,
        c: T::of(params.c),
        penalty: params.penalty,
    };
    let tol = T::of(params.tol);
    let mut theta = vec![T::zero(); p];
    let mut prev = theta.clone();
    let mut yk = theta.clone();
    let mut grad = vec![T::zero(); p];
    let mut cand = vec![T::zero(); p];
    let mut grad_c = vec![T::zero(); p];
    let mut momentum = T::one();
    let mut step = T::one();
    let half = T::of(0.5);
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..params.max_iter {
        iterations = it + 1;
        let f_y = problem.smooth(&yk, Some(&mut grad));
        // Backtracking on the local curvature along the step. When the
        // objective difference is lost in rounding, the curvature is measured
        // from the gradient difference instead.
        loop {
            for j in 0..p {
                cand[j] = yk[j] - step * grad[j];
            }
            problem.prox(&mut cand, step);
            let f_c = problem.smooth(&cand, Some(&mut grad_c));
            let mut lin = T::zero();
            let mut sq = T::zero();
            let mut gdot = T::zero();
            for j in 0..p {
                let diff = cand[j] - yk[j];
                lin += grad[j] * diff;
                sq += diff * diff;
                gdot += (grad_c[j] - grad[j]) * diff;
            }
            if sq == T::zero() || step < T::of(1e-20) {
                break;
            }
            let local = if (f_c - f_y).abs() >= T::of(1e-10) * f_y.abs().max(T::one()) {
                T::of(2.0) * (f_c - f_y - lin) / sq
            } else {
                gdot / sq
            };
            if step * local <= T::one() {
                break;
            }
            step *= half;
        }
        // Gradient-mapping norm ||y - cand|| / step.
        let gm = cand
            .iter()
            .zip(&yk)
            .fold(T::zero(), |s, (&a, &b)| s + (a - b) * (a - b))
            .sqrt()
            / step;
        prev.copy_from_slice(&theta);
        theta.copy_from_slice(&cand);
        if gm < tol {
            converged = true;
            break;
        }
        // Restart momentum when it points uphill.
        let uphill = (0..p).fold(T::zero(), |s, j| s + (yk[j] - theta[j]) * (theta[j] - prev[j]));
        if uphill > T::zero() {
            momentum = T::one();
        }
        let next = (T::one() + (T::one() + T::of(4.0) * momentum * momentum).sqrt()) * half;
        let beta = (momentum - T::one()) / next;
        momentum = next;
        for j in 0..p {
            yk[j] = theta[j] + beta * (theta[j] - prev[j]);
        }
        // Let the step grow again slowly.
        step *= T::of(1.25);
    }
    Ok(LinearBinary {
        weights: theta[..d].to_vec(),
        bias: theta[d],
        iterations,
        converged,
    })
}

/// Total objective value for a fitted binary model.
pub fn objective<T: Scalar>(params: &LrParams, x: &DesignMatrix<T>, y: &[T], m: &LinearBinary<T>) -> T {
    let problem = Problem {
        x,
        y,
        c: T::of(params.c),
        penalty: params.penalty,
    };
    let mut theta = m.weights.clone();
    theta.push(m.bias);
    problem.smooth(&theta, None) + problem.nonsmooth(&theta)
}

pub fn fit_ovo<T: Scalar>(
    params: &LrParams,
    x: &DesignMatrix<T>,
    y: &[ClassLabel],
) -> Result<OvoModel<LinearBinary<T>>> {
    fit_pairs(x, y, |sub, target| fit_binary(params, sub, target))
}
