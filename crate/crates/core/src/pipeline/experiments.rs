//! Synthetic experiments on Q-Transform initialization quality.
//!
//! Both harnesses are deterministic given their seed apart from the measured
//! wall-clock times. Solves run sequentially so the timings are comparable.

use serde::{Deserialize, Serialize};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::{derive_seed, rng, Matrix};
use crate::nmf::{nmf_solve, random_init, Factorization, NmfConfig};
use crate::qtransform::{apply_q_with_svd, truncated_svd_signed, LibrarySpec, TransformLibrary};

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn init_error(x: &Matrix, f: &Factorization) -> f64 {
    (x - f.product()).norm()
}

fn half_normal_factors(d: usize, n: usize, rank: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let mut draw = || {
        let z: f64 = StandardNormal.sample(&mut r);
        z.abs()
    };
    let a = Matrix::from_fn(d, rank, |_, _| draw());
    let w = Matrix::from_fn(rank, n, |_, _| draw());
    a * w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseExperiment {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub noise_grid: Vec<f64>,
    pub n_pairs: usize,
    pub seed: u64,
    pub nmf: NmfConfig,
    /// Library recipe; only the first `n_pairs` pairs are used.
    pub library: LibrarySpec,
}

impl Default for NoiseExperiment {
    fn default() -> Self {
        Self {
            rows: 200,
            cols: 200,
            rank: 10,
            noise_grid: vec![0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0],
            n_pairs: 20,
            seed: 0,
            nmf: NmfConfig::default(),
            library: LibrarySpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub noise: f64,
    /// Median over pairs of Q-Transform init error / random init error.
    pub error_ratio: f64,
    /// Median over pairs of Q-Transform solve time / random solve time.
    pub time_ratio: f64,
    /// Median over pairs of the iteration-count ratio.
    pub iteration_ratio: f64,
    /// Median over pairs of the final-objective ratio.
    pub objective_ratio: f64,
}

/// `X = max(AW + ε·N_o, 0)` with Gaussian `N_o` rescaled so `‖N_o‖ = ‖AW‖`.
pub fn noisy_low_rank(rows: usize, cols: usize, rank: usize, noise: f64, seed: u64) -> Matrix {
    let clean = half_normal_factors(rows, cols, rank, seed);
    let mut r = rng(derive_seed(seed, 1));
    let raw = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r));
    let scale = clean.norm() / raw.norm();
    (clean + raw * (noise * scale)).map(|v| v.max(0.0))
}

/// Compares Q-Transform and random initializations as the noise grows.
pub fn noise_experiment(
    exp: &NoiseExperiment,
    library: Option<&TransformLibrary>,
) -> Result<Vec<NoiseRow>> {
    if exp.noise_grid.is_empty() {
        return Err(Error::Argument("noise grid must not be empty".into()));
    }
    if exp.n_pairs < 1 {
        return Err(Error::Argument(
            "noise experiment needs n_pairs >= 1".into(),
        ));
    }
    let built;
    let library = match library {
        Some(l) => l,
        None => {
            built = TransformLibrary::build(&LibrarySpec {
                datasets: exp.n_pairs.div_ceil(exp.library.restarts.max(1)),
                ..exp.library
            })?;
            &built
        }
    };
    if library.len() < exp.n_pairs {
        return Err(Error::Argument(format!(
            "library has {} pairs, need {}",
            library.len(),
            exp.n_pairs
        )));
    }
    let r_svd = library.pairs[0].r_svd();

    let mut rows = Vec::with_capacity(exp.noise_grid.len());
    for &noise in &exp.noise_grid {
        let x = noisy_low_rank(exp.rows, exp.cols, exp.rank, noise, exp.seed);
        let svd = truncated_svd_signed(&x, r_svd)?;
        let mut err_ratios = Vec::new();
        let mut time_ratios = Vec::new();
        let mut iter_ratios = Vec::new();
        let mut obj_ratios = Vec::new();
        for (p, pair) in library.pairs[..exp.n_pairs].iter().enumerate() {
            let seed = derive_seed(exp.seed, p as u64);
            let q_init = apply_q_with_svd(&svd, pair, exp.rank, seed)?;
            let r_init = random_init(&x, exp.rank, seed)?;
            let q_out = nmf_solve(&x, &q_init, &exp.nmf, None)?;
            let r_out = nmf_solve(&x, &r_init, &exp.nmf, None)?;
            err_ratios.push(init_error(&x, &q_init) / init_error(&x, &r_init));
            time_ratios.push(
                q_out.elapsed.as_secs_f64() / r_out.elapsed.as_secs_f64().max(f64::MIN_POSITIVE),
            );
            iter_ratios.push(q_out.iterations as f64 / r_out.iterations.max(1) as f64);
            obj_ratios.push(q_out.objective / r_out.objective);
        }
        rows.push(NoiseRow {
            noise,
            error_ratio: median(&err_ratios),
            time_ratio: median(&time_ratios),
            iteration_ratio: median(&iter_ratios),
            objective_ratio: median(&obj_ratios),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankSweep {
    pub rows: usize,
    pub cols: usize,
    /// Rank of the test matrix (also the NMF rank).
    pub rank: usize,
    pub grid: Vec<usize>,
    pub n_pairs: usize,
    /// Side of the square synthetic matrices the transforms are learned on.
    pub synthetic_dim: usize,
    pub synthetic_noise: f64,
    /// Noise scale of the test matrix, relative to its norm.
    pub test_noise: f64,
    pub seed: u64,
    pub nmf: NmfConfig,
}

impl Default for RankSweep {
    fn default() -> Self {
        Self {
            rows: 200,
            cols: 200,
            rank: 10,
            grid: (1..=10).collect(),
            n_pairs: 100,
            synthetic_dim: 15,
            synthetic_noise: 0.1,
            test_noise: 0.0,
            seed: 0,
            nmf: NmfConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSweepRow {
    pub r_t: usize,
    /// Median of `‖X − A₀W₀‖_F / ‖X‖_F` over transform pairs.
    pub median_init_error: f64,
    pub min_init_error: f64,
    pub max_init_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSweepReport {
    pub rows: Vec<RankSweepRow>,
    /// Best normalized init error among `n_pairs` random initializations.
    pub best_random_init_error: f64,
    /// Worst normalized error among NMF solutions converged from them.
    pub worst_converged_error: f64,
}

/// Learns transform libraries at each `R_T = R_SVD` in the grid and measures
/// the initialization error they produce on a larger test matrix.
pub fn rank_sweep_experiment(exp: &RankSweep) -> Result<RankSweepReport> {
    if exp.grid.is_empty() || exp.n_pairs < 1 {
        return Err(Error::Argument(
            "rank sweep needs a grid and n_pairs >= 1".into(),
        ));
    }
    let limit = exp.rows.min(exp.cols).min(exp.synthetic_dim);
    if let Some(&bad) = exp.grid.iter().find(|&&r| r < 1 || r > limit) {
        return Err(Error::Argument(format!(
            "grid value {bad} must lie in 1..={limit}"
        )));
    }
    let x = noisy_low_rank(exp.rows, exp.cols, exp.rank, exp.test_noise, exp.seed);
    let norm = x.norm();

    let mut rows = Vec::with_capacity(exp.grid.len());
    for (g, &r_t) in exp.grid.iter().enumerate() {
        let restarts = 5;
        let library = TransformLibrary::build(&LibrarySpec {
            datasets: exp.n_pairs.div_ceil(restarts),
            restarts,
            dim: exp.synthetic_dim,
            r_svd: r_t,
            r_t,
            noise: exp.synthetic_noise,
            seed: derive_seed(exp.seed, 1000 + g as u64),
            ..LibrarySpec::default()
        })?;
        let svd = truncated_svd_signed(&x, r_t)?;
        let errors = library.pairs[..exp.n_pairs]
            .iter()
            .enumerate()
            .map(|(p, pair)| {
                let init = apply_q_with_svd(&svd, pair, exp.rank, derive_seed(exp.seed, p as u64))?;
                Ok(init_error(&x, &init) / norm)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(RankSweepRow {
            r_t,
            median_init_error: median(&errors),
            min_init_error: errors.iter().copied().fold(f64::INFINITY, f64::min),
            max_init_error: errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }

    let mut best_random = f64::INFINITY;
    let mut worst_converged = 0.0_f64;
    for p in 0..exp.n_pairs {
        let init = random_init(&x, exp.rank, derive_seed(exp.seed, (1 << 20) + p as u64))?;
        best_random = best_random.min(init_error(&x, &init) / norm);
        let out = nmf_solve(&x, &init, &exp.nmf, None)?;
        worst_converged = worst_converged.max(out.objective.sqrt() / norm);
    }
    Ok(RankSweepReport {
        rows,
        best_random_init_error: best_random,
        worst_converged_error: worst_converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_spearman() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn noise_is_normalized() {
        let x0 = noisy_low_rank(20, 15, 3, 0.0, 4);
        assert!(x0.iter().all(|&v| v >= 0.0));
        let x1 = noisy_low_rank(20, 15, 3, 1.0, 4);
        assert!(x1.iter().all(|&v| v >= 0.0));
        assert_ne!(x0, x1);
    }

    #[test]
    fn empty_grid_rejected() {
        let exp = NoiseExperiment {
            noise_grid: vec![],
            ..NoiseExperiment::default()
        };
        assert!(noise_experiment(&exp, None).is_err());
    }
}
