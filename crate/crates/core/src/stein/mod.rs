//! Kernelized Stein discrepancy for weighted particle sets.
//!
//! For a discrete distribution `q = Σ_m w_m δ(θ − θ_m)` the squared Stein
//! discrepancy to a target `p` is the quadratic form `wᵀKw`, where
//! `K_ij = K_p(θ_i, θ_j)` is the Stein kernel built from a base kernel and
//! the score `∇_θ log p`. Only the unnormalized target is needed. Choosing
//! the weights is then a convex QP over the simplex.

mod kernel;
mod qp;

pub use kernel::{base_kernel, kernel_matrix, stein_kernel, KernelEval, KernelParams};
pub use qp::{project_to_simplex, solve_weights, QpSolution};

use nalgebra::{DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::{max_abs, Matrix};
use crate::nmf::Factorization;

/// Symmetric `M × M` matrix of pairwise Stein kernel values.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinMatrix {
    k: Matrix,
}

impl SteinMatrix {
    pub fn new(k: Matrix) -> Self {
        Self { k }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.k
    }

    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let sym = (&self.k + self.k.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }

    /// `λ_min ≥ −tol·λ_max`.
    pub fn is_psd(&self, tol: f64) -> bool {
        let ev = self.eigenvalues();
        match (ev.first(), ev.last()) {
            (Some(&lo), Some(&hi)) => lo >= -tol * hi.max(0.0),
            _ => true,
        }
    }
}

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights {
    w: Vec<f64>,
}

pub const SIMPLEX_SUM_TOL: f64 = 1e-9;

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Argument("weights must be non-empty".into()));
        }
        if let Some(v) = w.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Argument(format!("weight {v} is negative")));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::Argument(format!("weights sum to {s}, not 1")));
        }
        Ok(Self { w })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Argument("weights must be non-empty".into()));
        }
        Ok(Self {
            w: vec![1.0 / m as f64; m],
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// `wᵀKw`. Slightly negative values caused by rounding are clipped to zero;
/// anything below `−1e-8·max(1, max|K|)` means `K` is not PSD and is an error.
pub fn stein_discrepancy(k: &SteinMatrix, w: &SimplexWeights) -> Result<f64> {
    if k.len() != w.len() {
        return Err(Error::Conformance(format!(
            "{} weights for a {}x{} kernel matrix",
            w.len(),
            k.len(),
            k.len()
        )));
    }
    let wv = DVector::from_column_slice(w.as_slice());
    let v = wv.dot(&(k.matrix() * &wv));
    let tol = 1e-8 * max_abs(k.matrix()).max(1.0);
    if v >= 0.0 {
        Ok(v)
    } else if v >= -tol {
        Ok(0.0)
    } else {
        Err(Error::numeric(format!(
            "negative discrepancy {v:e}; kernel matrix is not PSD"
        )))
    }
}

/// A weighted particle approximation to the posterior.
#[derive(Debug, Clone)]
pub struct DiscretePosterior {
    pub particles: Vec<Factorization>,
    pub weights: SimplexWeights,
    pub kernel: SteinMatrix,
    pub discrepancy: f64,
}
