//! Minimizing `wᵀKw` over the probability simplex.
//!
//! Projected gradient with a fixed `1/(2‖K‖₂)` step does the bulk of the
//! work. When the fixed step leaves the KKT conditions unmet (badly scaled
//! `K`), a primal active-set refinement finishes the job from the projected
//! gradient iterate. The refined point is kept when it lowers the objective,
//! or ties it within round-off with a smaller KKT gap.

use nalgebra::{DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::{max_abs, Matrix};

use super::{SimplexWeights, SteinMatrix};

pub const REL_TOL: f64 = 1e-10;
pub const MAX_ITER: usize = 100_000;
/// Allowed asymmetry `max|K − Kᵀ|`, relative to `max(1, max|K|)`.
pub const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub weights: SimplexWeights,
    pub objective: f64,
    /// Projected-gradient iterations.
    pub iterations: usize,
    /// Active-set refinement steps (0 when projected gradient sufficed).
    pub refinement_steps: usize,
    /// Whether the final point satisfies the KKT conditions to tolerance.
    pub converged: bool,
}

/// Euclidean projection onto `{w ≥ 0, Σw = 1}` (sort-and-threshold).
pub fn project_to_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

fn quad(k: &Matrix, w: &DVector<f64>) -> f64 {
    w.dot(&(k * w))
}

/// Frank–Wolfe gap `∇fᵀw − minᵢ ∇fᵢ` and the tolerance it is judged against.
fn kkt_gap(k: &Matrix, w: &DVector<f64>) -> (f64, f64) {
    let g = k * w * 2.0;
    let min_g = g.iter().copied().fold(f64::INFINITY, f64::min);
    let gap = g.dot(w) - min_g;
    let scale = (k.abs() * w.abs()).amax() * 2.0;
    (gap, 1e-9 * scale + f64::MIN_POSITIVE)
}

/// Primal active-set method for `min wᵀKw` on the simplex, warm-started at
/// `w` (which must be feasible).
fn active_set(k: &Matrix, mut w: DVector<f64>, max_steps: usize) -> (DVector<f64>, usize) {
    let m = w.len();
    let h = k * 2.0;
    let mut free: Vec<bool> = w.iter().map(|&v| v > 0.0).collect();
    let scale = max_abs(&h).max(f64::MIN_POSITIVE);
    // After an unblocked step `w` minimizes over the free face, up to
    // round-off in the KKT solve.
    let mut face_min = false;

    for step in 1..=max_steps {
        let g = &h * &w;
        let idx: Vec<usize> = (0..m).filter(|&i| free[i]).collect();
        let nf = idx.len();
        // KKT system [H_FF s1; s1ᵀ 0][p; ν/s] = [−g_F; 0], with the constraint
        // row scaled by s = max|H| to keep the system well conditioned.
        let mut kkt = Matrix::zeros(nf + 1, nf + 1);
        let mut rhs = DVector::zeros(nf + 1);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                kkt[(a, b)] = h[(i, j)];
            }
            kkt[(a, nf)] = scale;
            kkt[(nf, a)] = scale;
            rhs[a] = -g[i];
        }
        let svd = kkt.clone().svd(true, true);
        let mut sol = match svd.solve(&rhs, 1e-13 * scale) {
            Ok(s) => s,
            Err(_) => return (w, step),
        };
        // Mixed scales in H leave a relative error near cond(KKT)·ε, so
        // polish with a couple of residual corrections.
        for _ in 0..2 {
            let r = &rhs - &kkt * &sol;
            match svd.solve(&r, 1e-13 * scale) {
                Ok(d) => sol += d,
                Err(_) => break,
            }
        }
        let mut p = DVector::zeros(m);
        for (a, &i) in idx.iter().enumerate() {
            p[i] = sol[a];
        }

        if face_min || p.amax() <= 1e-14 {
            // Stationary on the free face: ν = −μ, multipliers λ_i = g_i − μ.
            let mu = -sol[nf] * scale;
            let worst = (0..m)
                .filter(|&i| !free[i])
                .map(|i| (i, g[i] - mu))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            match worst {
                Some((i, lam)) if lam < -1e-12 * scale => free[i] = true,
                _ => return (w, step),
            }
            face_min = false;
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for &i in &idx {
            if p[i] < 0.0 {
                let ratio = -w[i] / p[i];
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(i);
                }
            }
        }
        w += &p * alpha;
        face_min = blocking.is_none();
        if let Some(i) = blocking {
            w[i] = 0.0;
            free[i] = false;
        }
        w.iter_mut().for_each(|v| *v = v.max(0.0));
        let s = w.sum();
        w /= s;
    }
    (w, max_steps)
}

/// `argmin wᵀKw` over the simplex.
pub fn solve_weights(stein: &SteinMatrix) -> Result<QpSolution> {
    let k_raw = stein.matrix();
    let m = k_raw.nrows();
    if m == 0 || k_raw.ncols() != m {
        return Err(Error::Argument(
            "kernel matrix must be square and non-empty".into(),
        ));
    }
    if k_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite kernel matrix entry"));
    }
    let asym = (k_raw - k_raw.transpose()).amax();
    if asym > SYMMETRY_TOL * max_abs(k_raw).max(1.0) {
        return Err(Error::Argument(format!(
            "kernel matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let k = (k_raw + k_raw.transpose()) * 0.5;

    if m == 1 {
        return Ok(QpSolution {
            weights: SimplexWeights::new(vec![1.0])?,
            objective: k[(0, 0)],
            iterations: 0,
            refinement_steps: 0,
            converged: true,
        });
    }

    let norm2 = SymmetricEigen::new(k.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mut w = DVector::from_element(m, 1.0 / m as f64);
    let mut obj = quad(&k, &w);
    let mut iterations = 0;

    if norm2 > 0.0 {
        let step = 1.0 / (2.0 * norm2);
        for it in 1..=MAX_ITER {
            let g = &k * &w * 2.0;
            let next = project_to_simplex(&(&w - g * step));
            let next_obj = quad(&k, &next);
            iterations = it;
            let change = (obj - next_obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
            w = next;
            obj = next_obj;
            if change < REL_TOL {
                break;
            }
        }
    }

    let (gap, tol) = kkt_gap(&k, &w);
    let mut refinement_steps = 0;
    if gap > tol {
        let (refined, steps) = active_set(&k, w.clone(), 10 * m + 100);
        refinement_steps = steps;
        let refined_obj = quad(&k, &refined);
        let (refined_gap, _) = kkt_gap(&k, &refined);
        // Ties within round-off go to the point with the smaller KKT gap.
        if refined_obj < obj || (refined_obj <= obj + 1e-12 * obj.abs() && refined_gap < gap) {
            w = refined;
            obj = refined_obj;
        }
    }
    let (gap, tol) = kkt_gap(&k, &w);

    Ok(QpSolution {
        weights: SimplexWeights::new(w.iter().copied().collect())?,
        objective: obj,
        iterations,
        refinement_steps,
        converged: gap <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(k: Matrix) -> QpSolution {
        solve_weights(&SteinMatrix::new(k)).unwrap()
    }

    #[test]
    fn single_particle() {
        let s = solve(Matrix::from_element(1, 1, 3.5));
        assert_eq!(s.weights.as_slice(), &[1.0]);
        assert_eq!(s.objective, 3.5);
    }

    #[test]
    fn identity_two() {
        let s = solve(Matrix::identity(2, 2));
        assert!((s.weights.as_slice()[0] - 0.5).abs() < 1e-6);
        assert!((s.objective - 0.5).abs() < 1e-6);
        assert!(s.converged);
    }

    #[test]
    fn projection_basics() {
        let p = project_to_simplex(&DVector::from_vec(vec![2.0, 0.0]));
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
        let p = project_to_simplex(&DVector::from_vec(vec![0.3, 0.3, 0.4]));
        assert!((p - DVector::from_vec(vec![0.3, 0.3, 0.4])).amax() < 1e-15);
    }

    #[test]
    fn badly_scaled_diagonal_needs_refinement() {
        let k = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 1e9]));
        let s = solve(k);
        let w = s.weights.as_slice();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-9);
        assert!(s.converged);
    }

    #[test]
    fn rejects_asymmetric() {
        let k = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            solve_weights(&SteinMatrix::new(k)),
            Err(Error::Argument(_))
        ));
    }
}
