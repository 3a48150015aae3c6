//! Two-block IMQ base kernel and the Stein kernel built on top of it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::ScorePair;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nmf::Factorization;

use super::SteinMatrix;

/// IMQ offsets and exponents for the basis (`A`) and weight (`W`) blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    pub c_a: f64,
    pub c_w: f64,
    pub b_a: f64,
    pub b_w: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            c_a: 1e-2,
            c_w: 1e3,
            b_a: -0.5,
            b_w: -0.5,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("c_a", self.c_a), ("c_w", self.c_w)] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Argument(format!("{name} must be > 0, got {c}")));
            }
        }
        for (name, b) in [("b_a", self.b_a), ("b_w", self.b_w)] {
            if !(b > -1.0 && b < 0.0) {
                return Err(Error::Argument(format!(
                    "{name} must lie in (-1, 0), got {b}"
                )));
            }
        }
        Ok(())
    }

    /// `γ_A = (c_A²)^{b_A}`.
    pub fn gamma_a(&self) -> f64 {
        (self.c_a * self.c_a).powf(self.b_a)
    }

    /// `γ_W = (c_W²)^{b_W}`.
    pub fn gamma_w(&self) -> f64 {
        (self.c_w * self.c_w).powf(self.b_w)
    }
}

/// Base kernel value with its gradients in both arguments and the trace of
/// the mixed second derivative `Σᵢ ∂²k/∂θᵢ∂θ'ᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    /// `∇_θ k(θ, θ')`, shaped like `(A, W)`.
    pub grad_first: ScorePair,
    /// `∇_θ' k(θ, θ')`.
    pub grad_second: ScorePair,
    pub trace: f64,
}

struct BlockEval {
    value: f64,
    grad_first: Matrix,
    trace: f64,
}

/// `k(x, y) = (1/2γ)(‖x − y‖² + c²)^b` for one parameter block.
fn imq_block(x: &Matrix, y: &Matrix, c: f64, b: f64) -> BlockEval {
    let diff = x - y;
    let r2 = diff.norm_squared();
    let c2 = c * c;
    let u = r2 + c2;
    let gamma = c2.powf(b);
    let dim = diff.len() as f64;
    let u_b1 = u.powf(b - 1.0);
    let value = u.powf(b) / (2.0 * gamma);
    let grad_first = diff * (b / gamma * u_b1);
    let trace = -(b / gamma) * (dim * u_b1 + 2.0 * (b - 1.0) * r2 * u.powf(b - 2.0));
    BlockEval {
        value,
        grad_first,
        trace,
    }
}

fn ensure_same_shape(f1: &Factorization, f2: &Factorization) -> Result<()> {
    if f1.a.shape() != f2.a.shape() || f1.w.shape() != f2.w.shape() {
        return Err(Error::Conformance(format!(
            "particles have shapes ({:?}, {:?}) and ({:?}, {:?})",
            f1.a.shape(),
            f1.w.shape(),
            f2.a.shape(),
            f2.w.shape()
        )));
    }
    Ok(())
}

/// Sum of two IMQ kernels, one over `A` and one over `W`, each scaled so it
/// contributes `1/2` at zero displacement.
pub fn base_kernel(f1: &Factorization, f2: &Factorization, p: &KernelParams) -> Result<KernelEval> {
    ensure_same_shape(f1, f2)?;
    let a = imq_block(&f1.a, &f2.a, p.c_a, p.b_a);
    let w = imq_block(&f1.w, &f2.w, p.c_w, p.b_w);
    let grad_second = ScorePair {
        grad_a: -&a.grad_first,
        grad_w: -&w.grad_first,
    };
    Ok(KernelEval {
        value: a.value + w.value,
        grad_first: ScorePair {
            grad_a: a.grad_first,
            grad_w: w.grad_first,
        },
        grad_second,
        trace: a.trace + w.trace,
    })
}

/// Stein kernel
///
/// ```text
/// K_p(θ, θ') = s(θ)ᵀs(θ') k + s(θ)ᵀ∇_θ' k + s(θ')ᵀ∇_θ k + Σᵢ ∂²k/∂θᵢ∂θ'ᵢ
/// ```
///
/// where `s1 = s(θ)` and `s2 = s(θ')` are score functions of the target.
pub fn stein_kernel(
    f1: &Factorization,
    f2: &Factorization,
    s1: &ScorePair,
    s2: &ScorePair,
    p: &KernelParams,
) -> Result<f64> {
    if !s1.is_finite() || !s2.is_finite() {
        return Err(Error::numeric("non-finite score in Stein kernel"));
    }
    if s1.grad_a.shape() != f1.a.shape()
        || s1.grad_w.shape() != f1.w.shape()
        || s2.grad_a.shape() != f2.a.shape()
        || s2.grad_w.shape() != f2.w.shape()
    {
        return Err(Error::Conformance(
            "score shape does not match its particle".into(),
        ));
    }
    let k = base_kernel(f1, f2, p)?;
    let value = s1.dot(s2) * k.value + s1.dot(&k.grad_second) + s2.dot(&k.grad_first) + k.trace;
    if !value.is_finite() {
        return Err(Error::numeric("non-finite Stein kernel value"));
    }
    Ok(value)
}

/// Pairwise Stein kernel matrix over a particle set.
///
/// The upper triangle is evaluated in parallel and mirrored.
pub fn kernel_matrix(
    particles: &[Factorization],
    scores: &[ScorePair],
    p: &KernelParams,
) -> Result<SteinMatrix> {
    p.validate()?;
    let m = particles.len();
    if m == 0 {
        return Err(Error::Argument(
            "kernel matrix needs at least one particle".into(),
        ));
    }
    if scores.len() != m {
        return Err(Error::Conformance(format!(
            "{m} particles but {} scores",
            scores.len()
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| {
            stein_kernel(&particles[i], &particles[j], &scores[i], &scores[j], p).map_err(|e| {
                match e {
                    Error::Numeric { message, .. } => {
                        Error::numeric(format!("{message} at entry ({i}, {j})"))
                    }
                    Error::Conformance(msg) => {
                        Error::Conformance(format!("{msg} at entry ({i}, {j})"))
                    }
                    other => other,
                }
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut k = Matrix::zeros(m, m);
    for (&(i, j), v) in pairs.iter().zip(values) {
        k[(i, j)] = v;
        k[(j, i)] = v;
    }
    Ok(SteinMatrix::new(k))
}
