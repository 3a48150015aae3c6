//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's numerics; only its data types are reused.
#![allow(dead_code, clippy::too_many_arguments)]

use particle_nmf::matrix::{rng, Matrix, Rng};
use particle_nmf::{Factorization, ObservationMask};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn half_normal(r: &mut Rng) -> f64 {
    let z: f64 = StandardNormal.sample(r);
    z.abs()
}

pub fn normal(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

pub fn random_nonneg(rows: usize, cols: usize, r: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| half_normal(r) + 0.05)
}

/// Random factorization on the prior support: column-stochastic `A`.
pub fn random_support_point(d: usize, n: usize, rank: usize, r: &mut Rng) -> Factorization {
    let mut a = random_nonneg(d, rank, r);
    for mut col in a.column_iter_mut() {
        let s = col.sum();
        col /= s;
    }
    let w = random_nonneg(rank, n, r) * 2.0;
    Factorization::new(a, w).unwrap()
}

/// Mask with a random missing fraction in `[0.1, 0.4]`.
pub fn random_mask(d: usize, n: usize, r: &mut Rng) -> ObservationMask {
    let frac = r.random_range(0.1..0.4);
    ObservationMask::random(d, n, frac, r.random()).unwrap()
}

/// `Σ_{d,n} m_{dn} (x_{dn} − Σ_r a_{dr} w_{rn})²` with explicit loops.
pub fn objective_loops(x: &Matrix, a: &Matrix, w: &Matrix, mask: Option<&Matrix>) -> f64 {
    let mut total = 0.0;
    for d in 0..x.nrows() {
        for n in 0..x.ncols() {
            let mut p = 0.0;
            for k in 0..a.ncols() {
                p += a[(d, k)] * w[(k, n)];
            }
            let m = mask.map_or(1.0, |m| m[(d, n)]);
            total += m * (x[(d, n)] - p).powi(2);
        }
    }
    total
}

/// Piecewise SILF written directly from its definition.
pub fn silf_oracle(y: f64, eps: f64, beta: f64) -> f64 {
    let lo = (1.0 - beta) * eps;
    let hi = (1.0 + beta) * eps;
    if y <= lo {
        0.0
    } else if y >= hi {
        y - eps
    } else {
        (y - lo).powi(2) / (4.0 * beta * eps)
    }
}

/// Unnormalized log density without the support gate, so it can be
/// differentiated in any ambient direction.
pub fn log_joint_oracle(
    x: &Matrix,
    a: &Matrix,
    w: &Matrix,
    mask: Option<&Matrix>,
    eps: f64,
    beta: f64,
    c: f64,
    lambda: f64,
) -> f64 {
    -c * silf_oracle(objective_loops(x, a, w, mask), eps, beta) - lambda * w.sum()
}

/// Central differences of `f` with respect to every entry of `m`.
pub fn fd_gradient(m: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(m.nrows(), m.ncols());
    let mut probe = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let up = f(&probe);
            probe[(i, j)] = orig - h;
            let down = f(&probe);
            probe[(i, j)] = orig;
            g[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    g
}

/// IMQ block kernel `(1/2γ)(‖x − y‖² + c²)^b`, `γ = c^{2b}`.
pub fn imq_oracle(x: &Matrix, y: &Matrix, c: f64, b: f64) -> f64 {
    let r2: f64 = x.iter().zip(y.iter()).map(|(p, q)| (p - q).powi(2)).sum();
    (r2 + c * c).powf(b) / (2.0 * (c * c).powf(b))
}

pub fn base_kernel_oracle(
    a1: &Matrix,
    w1: &Matrix,
    a2: &Matrix,
    w2: &Matrix,
    c_a: f64,
    c_w: f64,
    b_a: f64,
    b_w: f64,
) -> f64 {
    imq_oracle(a1, a2, c_a, b_a) + imq_oracle(w1, w2, c_w, b_w)
}

/// `Σᵢ ∂²k/∂xᵢ∂yᵢ` for one block by central mixed differences.
pub fn fd_mixed_trace(x: &Matrix, y: &Matrix, h: f64, k: impl Fn(&Matrix, &Matrix) -> f64) -> f64 {
    let mut xp = x.clone();
    let mut yp = y.clone();
    let mut total = 0.0;
    for i in 0..x.len() {
        let (x0, y0) = (x[i], y[i]);
        let mut eval = |dx: f64, dy: f64| {
            xp[i] = x0 + dx;
            yp[i] = y0 + dy;
            let v = k(&xp, &yp);
            xp[i] = x0;
            yp[i] = y0;
            v
        };
        total += (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
    }
    total
}

/// Richardson extrapolation of [`fd_mixed_trace`] from steps `h` and `2h`,
/// cancelling the O(h²) truncation term.
pub fn fd_mixed_trace_extrapolated(
    x: &Matrix,
    y: &Matrix,
    h: f64,
    k: impl Fn(&Matrix, &Matrix) -> f64,
) -> f64 {
    (4.0 * fd_mixed_trace(x, y, h, &k) - fd_mixed_trace(x, y, 2.0 * h, &k)) / 3.0
}

pub fn rel_err(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs().max(1e-300)
}

pub fn frob_rel_err(actual: &[&Matrix], expected: &[&Matrix]) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (a, e) in actual.iter().zip(expected) {
        diff += (*a - *e).norm_squared();
        norm += e.norm_squared();
    }
    (diff / norm.max(1e-300)).sqrt()
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            p.swap(j, k - 1);
        }
    }
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut p, &mut out);
    out
}

/// Minimum-cost assignment by exhaustive search.
pub fn brute_force_assignment(cost: &Matrix) -> f64 {
    permutations(cost.nrows())
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &j)| cost[(i, j)])
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Angle via the clamped arccos of the cosine similarity.
pub fn arccos_angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Minimum of `wᵀKw` over a regular simplex grid with `steps` divisions.
pub fn grid_min(k: &Matrix, steps: usize) -> f64 {
    let m = k.nrows();
    let quad = |w: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += w[i] * k[(i, j)] * w[j];
            }
        }
        s
    };
    let h = 1.0 / steps as f64;
    let mut best = f64::INFINITY;
    match m {
        2 => {
            for i in 0..=steps {
                let w0 = i as f64 * h;
                best = best.min(quad(&[w0, 1.0 - w0]));
            }
        }
        3 => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let (w0, w1) = (i as f64 * h, j as f64 * h);
                    best = best.min(quad(&[w0, w1, (1.0 - w0 - w1).max(0.0)]));
                }
            }
        }
        _ => panic!("grid search only for M = 2 or 3"),
    }
    best
}

/// Random PSD matrix `BᵀB` rescaled to unit largest eigenvalue.
pub fn random_psd(m: usize, rank: usize, r: &mut Rng) -> Matrix {
    let b = Matrix::from_fn(rank, m, |_, _| normal(r));
    let k = b.transpose() * b;
    let top = k.clone().symmetric_eigen().eigenvalues.max();
    k / top
}

/// Uniform draw from the probability simplex.
pub fn random_simplex(m: usize, r: &mut Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..m)
        .map(|_| -r.random::<f64>().max(1e-300).ln())
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn quad_form(k: &Matrix, w: &[f64]) -> f64 {
    let m = w.len();
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            s += w[i] * k[(i, j)] * w[j];
        }
    }
    s
}

pub fn seeded(seed: u64) -> Rng {
    rng(seed)
}
