//! Non-Bayesian NMF machinery: the squared Frobenius objective, Lee–Seung
//! multiplicative updates (optionally restricted to observed entries), the
//! half-normal random initialization, and canonical scaling.

use std::time::{Duration, Instant};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{ensure_shape, rng, Matrix, ObservationMask};

/// A rank-`R` factorization `X ≈ A W` with `A: D×R` and `W: R×N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub a: Matrix,
    pub w: Matrix,
}

impl Factorization {
    pub fn new(a: Matrix, w: Matrix) -> Result<Self> {
        if a.ncols() != w.nrows() {
            return Err(Error::Conformance(format!(
                "basis has {} columns but weights have {} rows",
                a.ncols(),
                w.nrows()
            )));
        }
        if a.ncols() == 0 {
            return Err(Error::Argument("factorization rank must be >= 1".into()));
        }
        Ok(Self { a, w })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn dims(&self) -> usize {
        self.a.nrows()
    }

    pub fn observations(&self) -> usize {
        self.w.ncols()
    }

    pub fn product(&self) -> Matrix {
        &self.a * &self.w
    }

    /// Checks that the factor shapes conform to a `D × N` data matrix.
    pub fn ensure_conforms(&self, x: &Matrix) -> Result<()> {
        if self.a.nrows() != x.nrows() || self.w.ncols() != x.ncols() {
            return Err(Error::Conformance(format!(
                "factorization is ({}x{})·({}x{}) but data is {}x{}",
                self.a.nrows(),
                self.a.ncols(),
                self.w.nrows(),
                self.w.ncols(),
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn has_nan(&self) -> bool {
        self.a.iter().chain(self.w.iter()).any(|v| v.is_nan())
    }
}

/// Solver settings for [`nmf_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmfConfig {
    pub max_iter: usize,
    /// Stop once `|f_prev − f| / f_prev` drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Positivity floor applied to every factor entry after each update.
    pub floor: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-4,
            seed: 0,
            floor: 1e-12,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::Config("nmf.max_iter must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("nmf.rel_tol must be > 0".into()));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config("nmf.floor must be > 0".into()));
        }
        Ok(())
    }
}

/// `Σ_{observed (d,n)} (X − AW)²_{dn}`.
pub fn frobenius_objective(
    x: &Matrix,
    f: &Factorization,
    mask: Option<&ObservationMask>,
) -> Result<f64> {
    f.ensure_conforms(x)?;
    let mut residual = x - f.product();
    if let Some(m) = mask {
        m.ensure_matches(x)?;
        residual.component_mul_assign(m.indicator());
    }
    Ok(residual.norm_squared())
}

fn floored_ratio_update(current: &Matrix, numer: &Matrix, denom: &Matrix, floor: f64) -> Matrix {
    Matrix::from_fn(current.nrows(), current.ncols(), |i, j| {
        let d = denom[(i, j)].max(floor);
        (current[(i, j)] * numer[(i, j)] / d).max(floor)
    })
}

/// One multiplicative update, `W` first and then `A` using the new `W`.
///
/// Entries below `floor` are lifted to `floor` before the update.
pub fn multiplicative_step(
    x: &Matrix,
    f: &Factorization,
    mask: Option<&ObservationMask>,
    floor: f64,
) -> Result<Factorization> {
    f.ensure_conforms(x)?;
    if f.has_nan() || x.iter().any(|v| v.is_nan()) {
        return Err(Error::numeric("NaN in multiplicative update input"));
    }
    let a = f.a.map(|v| v.max(floor));
    let w = f.w.map(|v| v.max(floor));

    match mask {
        None => {
            let at = a.transpose();
            let num_w = &at * x;
            let den_w = (&at * &a) * &w;
            let w = floored_ratio_update(&w, &num_w, &den_w, floor);

            let wt = w.transpose();
            let num_a = x * &wt;
            let den_a = &a * (&w * &wt);
            let a = floored_ratio_update(&a, &num_a, &den_a, floor);
            Ok(Factorization { a, w })
        }
        Some(m) => {
            m.ensure_matches(x)?;
            let mx = m.apply(x);
            let at = a.transpose();
            let num_w = &at * &mx;
            let den_w = &at * m.apply(&(&a * &w));
            let w = floored_ratio_update(&w, &num_w, &den_w, floor);

            let wt = w.transpose();
            let num_a = &mx * &wt;
            let den_a = m.apply(&(&a * &w)) * &wt;
            let a = floored_ratio_update(&a, &num_a, &den_a, floor);
            Ok(Factorization { a, w })
        }
    }
}

/// Preallocated buffers for [`nmf_solve`]. Performs the same arithmetic as
/// [`multiplicative_step`] without allocating, and keeps the (masked) product
/// `AW` from the objective evaluation for the next `W` update.
struct Workspace<'a> {
    x: std::borrow::Cow<'a, Matrix>,
    mask: Option<&'a Matrix>,
    floor: f64,
    a: Matrix,
    w: Matrix,
    wt: Matrix,
    /// `M ∘ (AW)` for the current factors.
    prod: Matrix,
    num_w: Matrix,
    den_w: Matrix,
    num_a: Matrix,
    den_a: Matrix,
    gram: Matrix,
}

impl<'a> Workspace<'a> {
    fn new(
        x: &'a Matrix,
        init: &Factorization,
        mask: Option<&'a ObservationMask>,
        floor: f64,
    ) -> Self {
        let (d, n, r) = (x.nrows(), x.ncols(), init.rank());
        let mask = mask.map(|m| m.indicator());
        let x = match mask {
            Some(m) => std::borrow::Cow::Owned(m.component_mul(x)),
            None => std::borrow::Cow::Borrowed(x),
        };
        let mut ws = Self {
            x,
            mask,
            floor,
            a: init.a.map(|v| v.max(floor)),
            w: init.w.map(|v| v.max(floor)),
            wt: Matrix::zeros(n, r),
            prod: Matrix::zeros(d, n),
            num_w: Matrix::zeros(r, n),
            den_w: Matrix::zeros(r, n),
            num_a: Matrix::zeros(d, r),
            den_a: Matrix::zeros(d, r),
            gram: Matrix::zeros(r, r),
        };
        ws.refresh_product();
        ws
    }

    fn refresh_product(&mut self) {
        self.a.mul_to(&self.w, &mut self.prod);
        if let Some(m) = self.mask {
            self.prod.component_mul_assign(m);
        }
    }

    fn objective(&self) -> f64 {
        self.x
            .iter()
            .zip(self.prod.iter())
            .map(|(x, p)| (x - p) * (x - p))
            .sum()
    }

    fn ratio_update(current: &mut Matrix, numer: &Matrix, denom: &Matrix, floor: f64) {
        for ((c, n), d) in current.iter_mut().zip(numer.iter()).zip(denom.iter()) {
            *c = (*c * n / d.max(floor)).max(floor);
        }
    }

    fn step(&mut self) {
        let x = self.x.as_ref();
        self.a.tr_mul_to(x, &mut self.num_w);
        match self.mask {
            None => {
                self.a.tr_mul_to(&self.a, &mut self.gram);
                self.gram.mul_to(&self.w, &mut self.den_w);
            }
            Some(_) => self.a.tr_mul_to(&self.prod, &mut self.den_w),
        }
        Self::ratio_update(&mut self.w, &self.num_w, &self.den_w, self.floor);

        self.w.transpose_to(&mut self.wt);
        x.mul_to(&self.wt, &mut self.num_a);
        match self.mask {
            None => {
                self.w.mul_to(&self.wt, &mut self.gram);
                self.a.mul_to(&self.gram, &mut self.den_a);
            }
            Some(_) => {
                self.refresh_product();
                self.prod.mul_to(&self.wt, &mut self.den_a);
            }
        }
        Self::ratio_update(&mut self.a, &self.num_a, &self.den_a, self.floor);
        self.refresh_product();
    }
}

/// Result of a full [`nmf_solve`] run.
#[derive(Debug, Clone)]
pub struct NmfOutcome {
    /// Canonically scaled factorization.
    pub factorization: Factorization,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub elapsed: Duration,
}

/// Iterates [`multiplicative_step`] until the relative objective change falls
/// below `cfg.rel_tol` or `cfg.max_iter` steps have run, then canonicalizes.
pub fn nmf_solve(
    x: &Matrix,
    init: &Factorization,
    cfg: &NmfConfig,
    mask: Option<&ObservationMask>,
) -> Result<NmfOutcome> {
    cfg.validate()?;
    init.ensure_conforms(x)?;
    let start = Instant::now();

    if let Some(m) = mask {
        m.ensure_matches(x)?;
    }
    if init.has_nan() || x.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric {
            message: "NaN in multiplicative update input".into(),
            iteration: Some(1),
        });
    }
    let mut ws = Workspace::new(x, init, mask, cfg.floor);
    let mut prev = ws.objective();
    if !prev.is_finite() {
        return Err(Error::Numeric {
            message: "non-finite objective at initialization".into(),
            iteration: Some(0),
        });
    }

    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=cfg.max_iter {
        ws.step();
        let obj = ws.objective();
        if !obj.is_finite() {
            return Err(Error::Numeric {
                message: "non-finite objective".into(),
                iteration: Some(it),
            });
        }
        iterations = it;
        let change = if prev > 0.0 {
            (prev - obj).abs() / prev
        } else {
            0.0
        };
        prev = obj;
        if change < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    let current = Factorization { a: ws.a, w: ws.w };

    let factorization = normalize_scaling(&current)?;
    let objective = frobenius_objective(x, &factorization, mask)?;
    Ok(NmfOutcome {
        factorization,
        objective,
        iterations,
        converged,
        elapsed: start.elapsed(),
    })
}

/// Half-normal initialization: every entry is `η·|z|` with
/// `η = sqrt(mean(X) / R)` and `z` standard normal.
///
/// `A` is drawn first (column-major), then `W`.
pub fn random_init(x: &Matrix, rank: usize, seed: u64) -> Result<Factorization> {
    if rank < 1 {
        return Err(Error::Argument("rank must be >= 1".into()));
    }
    if x.is_empty() {
        return Err(Error::Conformance("data matrix is empty".into()));
    }
    let eta = (x.mean().max(0.0) / rank as f64).sqrt();
    let mut r = rng(seed);
    let mut draw = || {
        let z: f64 = StandardNormal.sample(&mut r);
        eta * z.abs()
    };
    let a = Matrix::from_fn(x.nrows(), rank, |_, _| draw());
    let w = Matrix::from_fn(rank, x.ncols(), |_, _| draw());
    Ok(Factorization { a, w })
}

/// Rescales so every column of `A` sums to one, moving the scale into the
/// matching row of `W`. Columns already summing to one (to rounding) are left
/// untouched, which makes the map bitwise idempotent.
pub fn normalize_scaling(f: &Factorization) -> Result<Factorization> {
    ensure_shape(&f.w, f.rank(), f.observations(), "weights")?;
    let tol = 4.0 * f.dims() as f64 * f64::EPSILON;
    let mut a = f.a.clone();
    let mut w = f.w.clone();
    for r in 0..f.rank() {
        let s: f64 = a.column(r).sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegenerateComponent(r));
        }
        if (s - 1.0).abs() <= tol {
            continue;
        }
        a.column_mut(r).iter_mut().for_each(|v| *v /= s);
        w.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    Ok(Factorization { a, w })
}
