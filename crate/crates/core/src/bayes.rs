//! Threshold-based Bayesian NMF model.
//!
//! The likelihood is flat over every factorization whose objective lies
//! below an insensitivity threshold `ε` and decays exponentially above it:
//!
//! ```text
//! log p(X | A, W) = −C · SILF_{ε,β}(f_X(A, W)) + const
//! ```
//!
//! where `f_X` is the (optionally masked) squared Frobenius objective and the
//! soft insensitive loss is
//!
//! ```text
//! SILF(y) = 0                          0 ≤ y ≤ (1−β)ε
//!         = (y − (1−β)ε)² / (4βε)      (1−β)ε ≤ y ≤ (1+β)ε
//!         = y − ε                      y ≥ (1+β)ε
//! ```
//!
//! Each column of `A` has a flat Dirichlet(1) prior, which fixes the scale of
//! the factorization (columns of `A` sum to one) and contributes nothing to
//! the log density on its support. Entries of `W` are exponential with rate
//! `λ`. All normalizing constants are dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{derive_seed, ensure_shape, Matrix, ObservationMask};
use crate::nmf::{frobenius_objective, nmf_solve, random_init, Factorization, NmfConfig};

/// Maximum deviation of an `A` column sum from one accepted as on-support.
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilfParams {
    epsilon: f64,
    beta: f64,
    c: f64,
}

impl SilfParams {
    pub fn new(epsilon: f64, beta: f64, c: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Argument(format!(
                "epsilon must be > 0, got {epsilon}"
            )));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Argument(format!(
                "beta must lie in (0, 1], got {beta}"
            )));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Argument(format!("C must be > 0, got {c}")));
        }
        Ok(Self { epsilon, beta, c })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    fn lower(&self) -> f64 {
        (1.0 - self.beta) * self.epsilon
    }

    fn upper(&self) -> f64 {
        (1.0 + self.beta) * self.epsilon
    }
}

fn check_domain(y: f64) -> Result<()> {
    if !(y >= 0.0) || !y.is_finite() {
        return Err(Error::Domain(y));
    }
    Ok(())
}

/// Soft insensitive loss on `y ≥ 0`.
pub fn silf(y: f64, p: &SilfParams) -> Result<f64> {
    check_domain(y)?;
    Ok(if y <= p.lower() {
        0.0
    } else if y <= p.upper() {
        let t = y - p.lower();
        t * t / (4.0 * p.beta * p.epsilon)
    } else {
        y - p.epsilon
    })
}

/// Derivative of [`silf`]. At the breakpoints the quadratic branch is used.
pub fn silf_grad(y: f64, p: &SilfParams) -> Result<f64> {
    check_domain(y)?;
    Ok(if y < p.lower() {
        0.0
    } else if y <= p.upper() {
        (y - p.lower()) / (2.0 * p.beta * p.epsilon)
    } else {
        1.0
    })
}

/// Exponential prior rates for `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lambda {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Scalar(1.0)
    }
}

impl Lambda {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Lambda::Scalar(v) => *v > 0.0 && v.is_finite(),
            Lambda::Matrix(rows) => rows.iter().flatten().all(|v| *v > 0.0 && v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument("exponential rates must be > 0".into()))
        }
    }

    /// Broadcasts to an `R × N` rate matrix.
    pub fn to_matrix(&self, rank: usize, cols: usize) -> Result<Matrix> {
        match self {
            Lambda::Scalar(v) => Ok(Matrix::from_element(rank, cols, *v)),
            Lambda::Matrix(rows) => {
                if rows.len() != rank || rows.iter().any(|r| r.len() != cols) {
                    return Err(Error::Conformance(format!(
                        "lambda must be {rank}x{cols} to match W"
                    )));
                }
                Ok(Matrix::from_fn(rank, cols, |r, n| rows[r][n]))
            }
        }
    }
}

/// NMF objective placed inside the SILF likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    SquaredFrobenius,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesModel {
    pub silf: SilfParams,
    pub lambda: Lambda,
    pub objective: Objective,
}

impl BayesModel {
    pub fn new(silf: SilfParams, lambda: Lambda) -> Result<Self> {
        lambda.validate()?;
        Ok(Self {
            silf,
            lambda,
            objective: Objective::SquaredFrobenius,
        })
    }

    /// `β = 0.1`, `C = 2`, `λ = 1` with the given threshold.
    pub fn with_epsilon(epsilon: f64) -> Result<Self> {
        Self::new(SilfParams::new(epsilon, 0.1, 2.0)?, Lambda::default())
    }
}

/// Gradient of the unnormalized log joint with respect to `A` and `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePair {
    pub grad_a: Matrix,
    pub grad_w: Matrix,
}

impl ScorePair {
    pub fn dot(&self, other: &ScorePair) -> f64 {
        self.grad_a.dot(&other.grad_a) + self.grad_w.dot(&other.grad_w)
    }

    pub fn is_finite(&self) -> bool {
        self.grad_a
            .iter()
            .chain(self.grad_w.iter())
            .all(|v| v.is_finite())
    }
}

/// Rejects factorizations outside the prior support: any negative entry, or
/// an `A` column whose sum is off by more than [`SIMPLEX_TOL`].
pub fn check_support(f: &Factorization) -> Result<()> {
    if let Some(v) = f.a.iter().chain(f.w.iter()).find(|v| !(**v >= 0.0)) {
        return Err(Error::Support(format!("entry {v} is negative or NaN")));
    }
    for (r, col) in f.a.column_iter().enumerate() {
        let s = col.sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Support(format!(
                "column {r} of A sums to {s}, not 1"
            )));
        }
    }
    Ok(())
}

fn objective_value(
    x: &Matrix,
    f: &Factorization,
    m: &BayesModel,
    mask: Option<&ObservationMask>,
) -> Result<f64> {
    match m.objective {
        Objective::SquaredFrobenius => frobenius_objective(x, f, mask),
    }
}

/// `−C·SILF(f_X(A, W)) − Σ λ_{rn} W_{rn}`, up to an additive constant.
pub fn log_joint(
    x: &Matrix,
    f: &Factorization,
    m: &BayesModel,
    mask: Option<&ObservationMask>,
) -> Result<f64> {
    check_support(f)?;
    let obj = objective_value(x, f, m, mask)?;
    let lambda = m.lambda.to_matrix(f.rank(), f.observations())?;
    Ok(-m.silf.c * silf(obj, &m.silf)? - lambda.dot(&f.w))
}

/// Ambient Euclidean gradient of [`log_joint`]:
///
/// ```text
/// ∇_A = −C·SILF'(f)·2 (M∘(AW − X)) Wᵀ
/// ∇_W = −C·SILF'(f)·2 Aᵀ (M∘(AW − X)) − λ
/// ```
pub fn score(
    x: &Matrix,
    f: &Factorization,
    m: &BayesModel,
    mask: Option<&ObservationMask>,
) -> Result<ScorePair> {
    check_support(f)?;
    let obj = objective_value(x, f, m, mask)?;
    let lambda = m.lambda.to_matrix(f.rank(), f.observations())?;
    let g = silf_grad(obj, &m.silf)?;
    if g == 0.0 {
        return Ok(ScorePair {
            grad_a: Matrix::zeros(f.dims(), f.rank()),
            grad_w: -lambda,
        });
    }
    let mut residual = f.product() - x;
    if let Some(mask) = mask {
        residual.component_mul_assign(mask.indicator());
    }
    let coef = -2.0 * m.silf.c * g;
    let grad_a = (&residual * f.w.transpose()) * coef;
    let grad_w = (f.a.transpose() * &residual) * coef - lambda;
    ensure_shape(&grad_w, f.rank(), f.observations(), "score")?;
    let s = ScorePair { grad_a, grad_w };
    if !s.is_finite() {
        return Err(Error::numeric("non-finite score"));
    }
    Ok(s)
}

/// Result of [`calibrate_epsilon`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub epsilon: f64,
    /// Objectives of the successful runs, in run order.
    pub objectives: Vec<f64>,
    pub failures: usize,
}

/// `ε = 1.2 · max_i f_i` over `n_runs` randomly initialized solves.
pub fn calibrate_epsilon(
    x: &Matrix,
    rank: usize,
    n_runs: usize,
    seed: u64,
    cfg: &NmfConfig,
    mask: Option<&ObservationMask>,
) -> Result<Calibration> {
    use rayon::prelude::*;
    if n_runs < 1 {
        return Err(Error::Argument("calibration needs n_runs >= 1".into()));
    }
    let results: Vec<Result<f64>> = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let init = random_init(x, rank, derive_seed(seed, i as u64))?;
            Ok(nmf_solve(x, &init, cfg, mask)?.objective)
        })
        .collect();
    let objectives: Vec<f64> = results
        .iter()
        .filter_map(|r| r.as_ref().ok().copied())
        .collect();
    let failures = n_runs - objectives.len();
    let max = objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if objectives.is_empty() {
        let first = results.into_iter().find_map(|r| r.err());
        return Err(Error::Calibration(format!(
            "all {n_runs} runs failed{}",
            first.map(|e| format!(" (first: {e})")).unwrap_or_default()
        )));
    }
    if !(max > 0.0) {
        return Err(Error::Calibration(
            "every run reached zero objective; ε would be 0".into(),
        ));
    }
    Ok(Calibration {
        epsilon: 1.2 * max,
        objectives,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> SilfParams {
        SilfParams::new(0.5, 0.1, 2.0).unwrap()
    }

    #[test]
    fn silf_branches() {
        assert_eq!(silf(0.2, &p()).unwrap(), 0.0);
        assert_eq!(silf(1.0, &p()).unwrap(), 0.5);
        assert!((silf(0.5, &p()).unwrap() - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn silf_grad_branches() {
        assert_eq!(silf_grad(0.2, &p()).unwrap(), 0.0);
        assert_eq!(silf_grad(1.0, &p()).unwrap(), 1.0);
        assert!((silf_grad(0.55, &p()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silf_rejects_negative() {
        assert!(matches!(silf(-0.1, &p()), Err(Error::Domain(_))));
        assert!(matches!(silf_grad(f64::NAN, &p()), Err(Error::Domain(_))));
    }

    #[test]
    fn params_validation() {
        assert!(SilfParams::new(0.0, 0.1, 1.0).is_err());
        assert!(SilfParams::new(1.0, 0.0, 1.0).is_err());
        assert!(SilfParams::new(1.0, 1.5, 1.0).is_err());
        assert!(SilfParams::new(1.0, 1.0, 0.0).is_err());
        assert!(SilfParams::new(1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn lambda_broadcast_and_shape_check() {
        let l = Lambda::Matrix(vec![vec![1.0, 2.0]]);
        assert_eq!(l.to_matrix(1, 2).unwrap()[(0, 1)], 2.0);
        assert!(l.to_matrix(2, 2).is_err());
        assert!(BayesModel::new(p(), Lambda::Scalar(-1.0)).is_err());
    }

    #[test]
    fn support_gate() {
        let a = Matrix::from_row_slice(2, 1, &[0.5, 0.6]);
        let w = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let f = Factorization::new(a, w).unwrap();
        let m = BayesModel::with_epsilon(1.0).unwrap();
        let x = Matrix::zeros(2, 2);
        assert!(matches!(
            log_joint(&x, &f, &m, None),
            Err(Error::Support(_))
        ));
        assert!(matches!(score(&x, &f, &m, None), Err(Error::Support(_))));
    }

    #[test]
    fn flat_region_log_joint_and_score() {
        let a = Matrix::from_row_slice(2, 1, &[0.25, 0.75]);
        let w = Matrix::from_row_slice(1, 3, &[1.0, 2.0, 4.0]);
        let f = Factorization::new(a, w).unwrap();
        let x = f.product();
        let m = BayesModel::with_epsilon(1.0).unwrap();
        assert_eq!(log_joint(&x, &f, &m, None).unwrap(), -7.0);
        let s = score(&x, &f, &m, None).unwrap();
        assert!(s.grad_a.iter().all(|&v| v == 0.0));
        assert!(s.grad_w.iter().all(|&v| v == -1.0));
    }

    #[test]
    fn lambda_serializes_as_number_or_rows() {
        assert_eq!(serde_json::to_string(&Lambda::Scalar(1.0)).unwrap(), "1.0");
        let m: Lambda = serde_json::from_str("[[1.0, 2.0]]").unwrap();
        assert_eq!(m, Lambda::Matrix(vec![vec![1.0, 2.0]]));
    }
}
