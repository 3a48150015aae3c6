//! Transfer-learned NMF initialization.
//!
//! A pair of small matrices `(Q_A, Q_W)` relates the top singular subspace of
//! a dataset to a non-negative factorization of it: `A ≈ A_SVD·Q_A` and
//! `W ≈ Q_W·W_SVD`. Because `Q_A` and `Q_W` only act on the inner (rank)
//! dimension, a pair learned on a tiny synthetic matrix can be applied to the
//! SVD of any other matrix, whatever its `D` and `N`. After taking absolute
//! values and adjusting the rank, the result is a good starting point for
//! [`nmf_solve`](crate::nmf::nmf_solve).
//!
//! Singular vectors are only defined up to sign, so every SVD here fixes the
//! sign of each left singular vector to make its largest-magnitude entry
//! positive. The same rule must be used when learning and when applying a
//! pair.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{derive_seed, ensure_shape, max_abs, rng, Matrix};
use crate::nmf::{nmf_solve, random_init, Factorization, NmfConfig};

/// Relative size of the random padding added when the NMF rank exceeds the
/// transfer rank.
pub const PADDING_SCALE: f64 = 1e-6;

/// Matrices with `min(D, N)` above this use the randomized SVD.
pub const EXACT_SVD_LIMIT: usize = 600;

/// Parameters of a synthetic NMF dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Standard deviation of the Gaussian noise added before truncation at 0.
    pub noise: f64,
    pub seed: u64,
}

/// `X_s = max(A_s W_s + noise·Z, 0)` with `A_s`, `W_s` entrywise `|N(0,1)|`
/// and `Z` standard normal.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Matrix> {
    if spec.rank < 1 || spec.rank > spec.rows.min(spec.cols) {
        return Err(Error::Argument(format!(
            "synthetic rank {} must lie in 1..={}",
            spec.rank,
            spec.rows.min(spec.cols)
        )));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::Argument("noise scale must be >= 0".into()));
    }
    let mut r = rng(spec.seed);
    let mut half_normal = || {
        let z: f64 = StandardNormal.sample(&mut r);
        z.abs()
    };
    let a = Matrix::from_fn(spec.rows, spec.rank, |_, _| half_normal());
    let w = Matrix::from_fn(spec.rank, spec.cols, |_, _| half_normal());
    let mut x = &a * &w;
    if spec.noise > 0.0 {
        let mut r = rng(derive_seed(spec.seed, u64::MAX));
        for v in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut r);
            *v = (*v + spec.noise * z).max(0.0);
        }
    }
    Ok(x)
}

/// Top-`R` SVD with singular values folded into the weights:
/// `A_SVD = U_R` (orthonormal columns), `W_SVD = Σ_R V_Rᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub a: Matrix,
    pub w: Matrix,
    pub singular_values: Vec<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn product(&self) -> Matrix {
        &self.a * &self.w
    }
}

/// Flips column `k` of `u` (and row `k` of `w`) so the largest-magnitude
/// entry of the column is positive; ties go to the lowest row index.
fn fix_signs(u: &mut Matrix, w: &mut Matrix) {
    for k in 0..u.ncols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for (i, v) in u.column(k).iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if u[(best, k)] < 0.0 {
            u.column_mut(k).neg_mut();
            w.row_mut(k).neg_mut();
        }
    }
}

fn check_svd_args(x: &Matrix, rank: usize) -> Result<()> {
    if rank < 1 || rank > x.nrows().min(x.ncols()) {
        return Err(Error::Argument(format!(
            "SVD rank {rank} must lie in 1..={}",
            x.nrows().min(x.ncols())
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite entry in SVD input"));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("SVD of the zero matrix".into()));
    }
    Ok(())
}

fn exact_svd(x: &Matrix, rank: usize) -> Result<SvdFactors> {
    let svd = x.clone().svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::numeric("SVD did not return left vectors"))?;
    let vt = svd
        .v_t
        .ok_or_else(|| Error::numeric("SVD did not return right vectors"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let order = &order[..rank];
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut a = Matrix::from_fn(x.nrows(), rank, |d, k| u[(d, order[k])]);
    let mut w = Matrix::from_fn(rank, x.ncols(), |k, n| {
        singular_values[k] * vt[(order[k], n)]
    });
    fix_signs(&mut a, &mut w);
    Ok(SvdFactors {
        a,
        w,
        singular_values,
    })
}

/// Randomized range finder followed by an exact SVD of the projected matrix.
pub fn randomized_svd_signed(
    x: &Matrix,
    rank: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SvdFactors> {
    check_svd_args(x, rank)?;
    let k = (rank + oversample).min(x.nrows().min(x.ncols()));
    let mut r = rng(seed);
    let omega = Matrix::from_fn(x.ncols(), k, |_, _| StandardNormal.sample(&mut r));
    let mut q = (x * omega).qr().q();
    for _ in 0..power_iters {
        let z = (x.transpose() * &q).qr().q();
        q = (x * z).qr().q();
    }
    let b = q.transpose() * x;
    let small = exact_svd(&b, rank)?;
    let mut a = &q * small.a;
    let mut w = small.w;
    // The projected vectors inherit the sign rule from B's frame, not X's.
    fix_signs(&mut a, &mut w);
    Ok(SvdFactors {
        a,
        w,
        singular_values: small.singular_values,
    })
}

/// Sign-consistent truncated SVD of `x`.
///
/// Uses a full SVD for matrices with `min(D, N) <= EXACT_SVD_LIMIT` and a
/// randomized SVD with four power iterations above that.
pub fn truncated_svd_signed(x: &Matrix, rank: usize) -> Result<SvdFactors> {
    check_svd_args(x, rank)?;
    if x.nrows().min(x.ncols()) <= EXACT_SVD_LIMIT {
        exact_svd(x, rank)
    } else {
        randomized_svd_signed(x, rank, 10, 4, 0)
    }
}

/// Learned transfer matrices `Q_A: R_SVD×R_T` and `Q_W: R_T×R_SVD`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTransformPair {
    pub q_a: Matrix,
    pub q_w: Matrix,
    /// Seed of the synthetic dataset the pair was learned on.
    pub seed: u64,
    /// Restart index of the NMF run on that dataset.
    pub restart: usize,
}

impl QTransformPair {
    pub fn new(q_a: Matrix, q_w: Matrix, seed: u64, restart: usize) -> Result<Self> {
        if q_w.shape() != (q_a.ncols(), q_a.nrows()) {
            return Err(Error::Conformance(format!(
                "Q_A is {}x{} but Q_W is {}x{}",
                q_a.nrows(),
                q_a.ncols(),
                q_w.nrows(),
                q_w.ncols()
            )));
        }
        if q_a.iter().chain(q_w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite entry in transform pair"));
        }
        Ok(Self {
            q_a,
            q_w,
            seed,
            restart,
        })
    }

    pub fn r_svd(&self) -> usize {
        self.q_a.nrows()
    }

    pub fn r_t(&self) -> usize {
        self.q_a.ncols()
    }
}

#[derive(Serialize, Deserialize)]
struct PairWire {
    r_svd: usize,
    r_t: usize,
    q_a: Vec<f64>,
    q_w: Vec<f64>,
    seed: u64,
    restart: usize,
}

fn row_major(m: &Matrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl Serialize for QTransformPair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PairWire {
            r_svd: self.r_svd(),
            r_t: self.r_t(),
            q_a: row_major(&self.q_a),
            q_w: row_major(&self.q_w),
            seed: self.seed,
            restart: self.restart,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for QTransformPair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let wire = PairWire::deserialize(d)?;
        let expected = wire.r_svd * wire.r_t;
        if wire.q_a.len() != expected || wire.q_w.len() != expected {
            return Err(D::Error::custom(format!(
                "q_a/q_w must hold r_svd*r_t = {expected} entries"
            )));
        }
        let q_a = Matrix::from_row_slice(wire.r_svd, wire.r_t, &wire.q_a);
        let q_w = Matrix::from_row_slice(wire.r_t, wire.r_svd, &wire.q_w);
        QTransformPair::new(q_a, q_w, wire.seed, wire.restart).map_err(D::Error::custom)
    }
}

/// Learns one transform pair from `x_s`: a rank-`r_t` NMF from a random start
/// is regressed onto the top-`r_svd` SVD factors by least squares.
pub fn generate_q(
    x_s: &Matrix,
    r_svd: usize,
    r_t: usize,
    seed: u64,
    cfg: &NmfConfig,
) -> Result<QTransformPair> {
    let svd = truncated_svd_signed(x_s, r_svd)?;
    let init = random_init(x_s, r_t, seed)?;
    let nmf = nmf_solve(x_s, &init, cfg, None)?.factorization;
    let (q_a, q_w) = fit_transforms(&svd, &nmf)?;
    QTransformPair::new(q_a, q_w, seed, 0)
}

/// Least-squares transforms relating SVD factors to an NMF of the same data.
///
/// `A_SVD` has orthonormal columns, so `argmin ‖A − A_SVD·Q‖` is `A_SVDᵀA`.
/// `Q_W` solves `W_SVDᵀ Q_Wᵀ ≈ Wᵀ` through an SVD-based pseudo-inverse.
pub fn fit_transforms(svd: &SvdFactors, nmf: &Factorization) -> Result<(Matrix, Matrix)> {
    ensure_shape(&nmf.a, svd.a.nrows(), nmf.rank(), "NMF basis")?;
    ensure_shape(&nmf.w, nmf.rank(), svd.w.ncols(), "NMF weights")?;
    let q_a = svd.a.transpose() * &nmf.a;
    let design = svd.w.transpose();
    let sigma_max = svd.singular_values.first().copied().unwrap_or(0.0);
    let q_wt = design
        .svd(true, true)
        .solve(&nmf.w.transpose(), 1e-12 * sigma_max)
        .map_err(|e| Error::numeric(format!("least squares for Q_W failed: {e}")))?;
    Ok((q_a, q_wt.transpose()))
}

/// Turns transferred factors into a valid rank-`r_nmf` NMF initialization:
/// absolute values, then random padding (`r_nmf > r_t`) or truncation
/// (`r_nmf < r_t`).
pub fn init_adjust(a_q: &Matrix, w_q: &Matrix, r_nmf: usize, seed: u64) -> Result<Factorization> {
    if r_nmf < 1 {
        return Err(Error::Argument("NMF rank must be >= 1".into()));
    }
    if a_q.ncols() != w_q.nrows() {
        return Err(Error::Conformance(format!(
            "A_Q has {} columns but W_Q has {} rows",
            a_q.ncols(),
            w_q.nrows()
        )));
    }
    let r_t = a_q.ncols();
    let a_abs = a_q.abs();
    let w_abs = w_q.abs();
    let (d, n) = (a_q.nrows(), w_q.ncols());

    if r_nmf == r_t {
        return Factorization::new(a_abs, w_abs);
    }
    if r_nmf < r_t {
        return Factorization::new(
            a_abs.columns(0, r_nmf).into_owned(),
            w_abs.rows(0, r_nmf).into_owned(),
        );
    }

    let a_hi = PADDING_SCALE * max_abs(a_q);
    let w_hi = PADDING_SCALE * max_abs(w_q);
    let mut r = rng(seed);
    let a = Matrix::from_fn(d, r_nmf, |i, k| {
        if k < r_t {
            a_abs[(i, k)]
        } else {
            a_hi * r.random::<f64>()
        }
    });
    let w = Matrix::from_fn(r_nmf, n, |k, j| {
        if k < r_t {
            w_abs[(k, j)]
        } else {
            w_hi * r.random::<f64>()
        }
    });
    Factorization::new(a, w)
}

/// Applies a pair to precomputed SVD factors of the target data.
pub fn apply_q_with_svd(
    svd: &SvdFactors,
    pair: &QTransformPair,
    r_nmf: usize,
    seed: u64,
) -> Result<Factorization> {
    if pair.r_svd() != svd.rank() {
        return Err(Error::Conformance(format!(
            "transform pair expects R_SVD = {} but SVD has rank {}",
            pair.r_svd(),
            svd.rank()
        )));
    }
    let a_q = &svd.a * &pair.q_a;
    let w_q = &pair.q_w * &svd.w;
    init_adjust(&a_q, &w_q, r_nmf, seed)
}

/// Q-Transform initialization of `x` from one transform pair.
pub fn apply_q(
    x: &Matrix,
    pair: &QTransformPair,
    r_svd: usize,
    r_nmf: usize,
    seed: u64,
) -> Result<Factorization> {
    if pair.r_svd() != r_svd {
        return Err(Error::Conformance(format!(
            "transform pair expects R_SVD = {} but {r_svd} was requested",
            pair.r_svd()
        )));
    }
    let svd = truncated_svd_signed(x, r_svd)?;
    apply_q_with_svd(&svd, pair, r_nmf, seed)
}

/// Recipe for a transform library: `datasets` synthetic matrices of size
/// `dim × dim`, each factorized `restarts` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibrarySpec {
    pub datasets: usize,
    pub restarts: usize,
    pub dim: usize,
    pub r_svd: usize,
    pub r_t: usize,
    pub noise: f64,
    pub seed: u64,
    pub nmf: NmfConfig,
}

impl Default for LibrarySpec {
    fn default() -> Self {
        Self {
            datasets: 20,
            restarts: 5,
            dim: 12,
            r_svd: 3,
            r_t: 3,
            noise: 0.1,
            seed: 0,
            nmf: NmfConfig {
                max_iter: 2000,
                rel_tol: 1e-6,
                ..NmfConfig::default()
            },
        }
    }
}

/// An ordered collection of transform pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransformLibrary {
    pub pairs: Vec<QTransformPair>,
}

impl TransformLibrary {
    /// Builds `datasets × restarts` pairs; pair order is dataset-major.
    pub fn build(spec: &LibrarySpec) -> Result<Self> {
        if spec.datasets < 1 || spec.restarts < 1 {
            return Err(Error::Argument(
                "library needs at least one dataset and one restart".into(),
            ));
        }
        if spec.r_svd > spec.dim || spec.r_t > spec.dim {
            return Err(Error::Argument(format!(
                "ranks ({}, {}) exceed synthetic size {}",
                spec.r_svd, spec.r_t, spec.dim
            )));
        }
        let jobs: Vec<(usize, usize)> = (0..spec.datasets)
            .flat_map(|i| (0..spec.restarts).map(move |j| (i, j)))
            .collect();
        let pairs = jobs
            .par_iter()
            .map(|&(i, j)| {
                let data_seed = derive_seed(spec.seed, i as u64);
                let x_s = generate_synthetic(&SyntheticSpec {
                    rows: spec.dim,
                    cols: spec.dim,
                    rank: spec.r_t,
                    noise: spec.noise,
                    seed: data_seed,
                })?;
                let mut pair = generate_q(
                    &x_s,
                    spec.r_svd,
                    spec.r_t,
                    derive_seed(data_seed, j as u64),
                    &spec.nmf,
                )?;
                pair.seed = data_seed;
                pair.restart = j;
                Ok(pair)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}
