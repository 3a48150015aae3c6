//! End-to-end construction of a discrete posterior.
//!
//! 1. Load (or build) `M` transform pairs.
//! 2. Turn each into an initialization of `X` (or draw random ones).
//! 3. Refine every initialization with the NMF solver and canonicalize.
//! 4. Score the particles, build the Stein matrix, and solve for weights.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{calibrate_epsilon, log_joint, score, BayesModel, ScorePair};
use crate::error::{Error, Result};
use crate::matrix::{derive_seed, validate_data, Matrix, ObservationMask};
use crate::nmf::{nmf_solve, random_init, Factorization};
use crate::qtransform::{
    apply_q_with_svd, truncated_svd_signed, LibrarySpec, QTransformPair, SvdFactors,
    TransformLibrary,
};
use crate::stein::{
    kernel_matrix, solve_weights, stein_discrepancy, DiscretePosterior, SimplexWeights, SteinMatrix,
};

use super::config::{InitStrategy, RunConfig};
use super::io::{
    read_mask_csv, read_matrix_csv, read_vector_csv, write_matrix_csv, write_vector_csv,
};

/// Stream index reserved for the calibration seed.
const CALIBRATION_STREAM: u64 = 1 << 40;
/// Stream index reserved for the missing-data completion seed.
const COMPLETION_STREAM: u64 = (1 << 40) + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleReport {
    /// Position among the requested particles (and the transform pair used).
    pub index: usize,
    pub objective: f64,
    pub log_joint: f64,
    pub iterations: usize,
    pub converged: bool,
    pub init_seconds: f64,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedParticle {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpReport {
    pub iterations: usize,
    pub refinement_steps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: RunConfig,
    pub epsilon: f64,
    pub epsilon_calibrated: bool,
    pub requested_particles: usize,
    pub particles: Vec<ParticleReport>,
    pub dropped: Vec<DroppedParticle>,
    pub weights: Vec<f64>,
    pub discrepancy: f64,
    pub uniform_discrepancy: f64,
    pub qp: QpReport,
    pub svd_seconds: f64,
    pub completion_seconds: f64,
    pub calibration_seconds: f64,
    pub warnings: Vec<String>,
}

impl RunReport {
    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.svd_seconds = 0.0;
        r.completion_seconds = 0.0;
        r.calibration_seconds = 0.0;
        for p in &mut r.particles {
            p.init_seconds = 0.0;
            p.solve_seconds = 0.0;
        }
        r
    }
}

/// Loads the configured library, or builds one with at least `cfg.m` pairs
/// of the requested ranks (saving it if a path was given).
pub fn load_or_build_library(cfg: &RunConfig) -> Result<TransformLibrary> {
    let usable = |lib: &TransformLibrary| {
        lib.len() >= cfg.m
            && lib
                .pairs
                .iter()
                .all(|p| p.r_svd() == cfg.r_svd && p.r_t() == cfg.r_t)
    };
    if let Some(path) = &cfg.library_path {
        if path.exists() {
            let lib = TransformLibrary::load(path)?;
            if usable(&lib) {
                return Ok(lib);
            }
        }
    }
    let spec = LibrarySpec {
        r_svd: cfg.r_svd,
        r_t: cfg.r_t,
        datasets: cfg
            .m
            .div_ceil(cfg.library.restarts.max(1))
            .max(cfg.library.datasets),
        ..cfg.library
    };
    let lib = TransformLibrary::build(&spec)?;
    if let Some(path) = &cfg.library_path {
        lib.save(path)?;
    }
    Ok(lib)
}

/// Missing entries replaced by the mean of the observed ones.
fn mean_filled(x: &Matrix, mask: &ObservationMask) -> Matrix {
    let ind = mask.indicator();
    let observed = mask.observed_count().max(1) as f64;
    let mean = x.component_mul(ind).sum() / observed;
    Matrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        if ind[(i, j)] == 1.0 {
            x[(i, j)]
        } else {
            mean
        }
    })
}

/// Completion used for the SVD step of masked runs: observed entries are
/// kept, missing ones come from one masked NMF solve at rank `r_nmf`.
pub fn complete_matrix(
    x: &Matrix,
    mask: &ObservationMask,
    r_nmf: usize,
    seed: u64,
    cfg: &crate::nmf::NmfConfig,
) -> Result<Matrix> {
    let init = random_init(&mean_filled(x, mask), r_nmf, seed)?;
    let fit = nmf_solve(x, &init, cfg, Some(mask))?
        .factorization
        .product();
    let ind = mask.indicator();
    Ok(Matrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        if ind[(i, j)] == 1.0 {
            x[(i, j)]
        } else {
            fit[(i, j)]
        }
    }))
}

struct Solved {
    index: usize,
    factorization: Factorization,
    objective: f64,
    iterations: usize,
    converged: bool,
    init_seconds: f64,
    solve_seconds: f64,
}

/// Runs the pipeline on in-memory data.
///
/// `library` is required for [`InitStrategy::Qtransform`] and must hold at
/// least `cfg.m` pairs; it is ignored for random initialization.
pub fn run_posterior_on(
    x: &Matrix,
    mask: Option<&ObservationMask>,
    cfg: &RunConfig,
    library: Option<&TransformLibrary>,
) -> Result<(DiscretePosterior, RunReport)> {
    cfg.validate()?;
    validate_data(x)?;
    if let Some(m) = mask {
        m.ensure_matches(x)?;
    }
    if cfg.r_nmf > x.nrows().min(x.ncols()) {
        return Err(Error::Config(format!(
            "r_nmf = {} exceeds min(D, N) = {}",
            cfg.r_nmf,
            x.nrows().min(x.ncols())
        )));
    }
    let mut warnings = Vec::new();

    // Steps 1-2 inputs: the transform pairs and the SVD of (completed) data.
    let mut completion_seconds = 0.0;
    let mut svd_seconds = 0.0;
    let init_data = match mask {
        Some(m) => mean_filled(x, m),
        None => x.clone(),
    };
    let (pairs, svd): (Vec<QTransformPair>, Option<SvdFactors>) = match cfg.init {
        InitStrategy::Qtransform => {
            let lib = library.ok_or_else(|| {
                Error::Config("Q-Transform initialization needs a transform library".into())
            })?;
            if lib.len() < cfg.m {
                return Err(Error::Config(format!(
                    "library has {} pairs but m = {}",
                    lib.len(),
                    cfg.m
                )));
            }
            if cfg.r_svd > x.nrows().min(x.ncols()) {
                return Err(Error::Config(format!(
                    "r_svd = {} exceeds min(D, N)",
                    cfg.r_svd
                )));
            }
            let svd_input = match mask {
                Some(m) => {
                    let t = Instant::now();
                    let c = complete_matrix(
                        x,
                        m,
                        cfg.r_nmf,
                        derive_seed(cfg.seed, COMPLETION_STREAM),
                        &cfg.nmf,
                    )?;
                    completion_seconds = t.elapsed().as_secs_f64();
                    c
                }
                None => x.clone(),
            };
            let t = Instant::now();
            let svd = truncated_svd_signed(&svd_input, cfg.r_svd)?;
            svd_seconds = t.elapsed().as_secs_f64();
            (lib.pairs[..cfg.m].to_vec(), Some(svd))
        }
        InitStrategy::Random => (Vec::new(), None),
    };

    // Steps 2-3, one task per particle.
    let outcomes: Vec<std::result::Result<Solved, DroppedParticle>> = (0..cfg.m)
        .into_par_iter()
        .map(|index| {
            let seed = derive_seed(cfg.seed, index as u64);
            let drop = |e: Error| DroppedParticle {
                index,
                reason: e.to_string(),
            };
            let t = Instant::now();
            let init = match (&svd, cfg.init) {
                (Some(svd), InitStrategy::Qtransform) => {
                    apply_q_with_svd(svd, &pairs[index], cfg.r_nmf, seed)
                }
                _ => random_init(&init_data, cfg.r_nmf, seed),
            }
            .map_err(drop)?;
            let init_seconds = t.elapsed().as_secs_f64();
            let out = nmf_solve(x, &init, &cfg.nmf, mask).map_err(drop)?;
            Ok(Solved {
                index,
                factorization: out.factorization,
                objective: out.objective,
                iterations: out.iterations,
                converged: out.converged,
                init_seconds,
                solve_seconds: out.elapsed.as_secs_f64(),
            })
        })
        .collect();

    // Step 4 inputs: the model, calibrated if no threshold was given.
    let t = Instant::now();
    let (epsilon, epsilon_calibrated) = match cfg.model.epsilon {
        Some(e) => (e, false),
        None => {
            let cal = calibrate_epsilon(
                x,
                cfg.r_nmf,
                cfg.calibration_runs,
                derive_seed(cfg.seed, CALIBRATION_STREAM),
                &cfg.nmf,
                mask,
            )?;
            if cal.failures > 0 {
                warnings.push(format!("{} calibration runs failed", cal.failures));
            }
            (cal.epsilon, true)
        }
    };
    let calibration_seconds = t.elapsed().as_secs_f64();
    let model = cfg.model.build(epsilon)?;

    let mut dropped = Vec::new();
    let mut survivors = Vec::new();
    let mut scores: Vec<ScorePair> = Vec::new();
    let mut particle_reports = Vec::new();
    for outcome in outcomes {
        let solved = match outcome {
            Ok(s) => s,
            Err(d) => {
                dropped.push(d);
                continue;
            }
        };
        match score_particle(x, &solved.factorization, &model, mask) {
            Ok((lj, s)) => {
                particle_reports.push(ParticleReport {
                    index: solved.index,
                    objective: solved.objective,
                    log_joint: lj,
                    iterations: solved.iterations,
                    converged: solved.converged,
                    init_seconds: solved.init_seconds,
                    solve_seconds: solved.solve_seconds,
                });
                scores.push(s);
                survivors.push(solved.factorization);
            }
            Err(e) => dropped.push(DroppedParticle {
                index: solved.index,
                reason: e.to_string(),
            }),
        }
    }
    let needed = cfg.m.min(2);
    if survivors.len() < needed {
        return Err(Error::DegenerateRun(format!(
            "only {} of {} particles survived; first drop: {}",
            survivors.len(),
            cfg.m,
            dropped.first().map(|d| d.reason.as_str()).unwrap_or("none")
        )));
    }

    let kernel = kernel_matrix(&survivors, &scores, &cfg.kernel)?;
    let qp = solve_weights(&kernel)?;
    if !qp.converged {
        warnings.push("weight optimization did not reach the KKT tolerance".into());
    }
    let discrepancy = stein_discrepancy(&kernel, &qp.weights)?;
    let uniform_discrepancy =
        stein_discrepancy(&kernel, &SimplexWeights::uniform(survivors.len())?)?;

    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        epsilon,
        epsilon_calibrated,
        requested_particles: cfg.m,
        particles: particle_reports,
        dropped,
        weights: qp.weights.as_slice().to_vec(),
        discrepancy,
        uniform_discrepancy,
        qp: QpReport {
            iterations: qp.iterations,
            refinement_steps: qp.refinement_steps,
            converged: qp.converged,
        },
        svd_seconds,
        completion_seconds,
        calibration_seconds,
        warnings,
    };
    let posterior = DiscretePosterior {
        particles: survivors,
        weights: qp.weights,
        kernel,
        discrepancy,
    };
    Ok((posterior, report))
}

fn score_particle(
    x: &Matrix,
    f: &Factorization,
    model: &BayesModel,
    mask: Option<&ObservationMask>,
) -> Result<(f64, ScorePair)> {
    Ok((log_joint(x, f, model, mask)?, score(x, f, model, mask)?))
}

fn load_inputs(cfg: &RunConfig) -> Result<(Matrix, Option<ObservationMask>)> {
    let data_path = cfg
        .data_path
        .as_ref()
        .ok_or_else(|| Error::Config("data_path is required".into()))?;
    let x = read_matrix_csv(data_path)?;
    let mask = cfg
        .model
        .mask_path
        .as_ref()
        .map(|p| read_mask_csv(p))
        .transpose()?;
    Ok((x, mask))
}

/// Loads data (and mask) from the configured paths and runs the full
/// pipeline with the configured initialization strategy. Writes the output
/// directory when one is configured.
pub fn run_posterior(cfg: &RunConfig) -> Result<(DiscretePosterior, RunReport)> {
    cfg.validate()?;
    let (x, mask) = load_inputs(cfg)?;
    let library = match cfg.init {
        InitStrategy::Qtransform => Some(load_or_build_library(cfg)?),
        InitStrategy::Random => None,
    };
    let (posterior, report) = run_posterior_on(&x, mask.as_ref(), cfg, library.as_ref())?;
    if let Some(dir) = &cfg.output_dir {
        write_posterior(dir, &posterior, &report)?;
    }
    Ok((posterior, report))
}

/// Same as [`run_posterior`] with random initializations in Step 2.
pub fn run_posterior_baseline(cfg: &RunConfig) -> Result<(DiscretePosterior, RunReport)> {
    let cfg = RunConfig {
        init: InitStrategy::Random,
        ..cfg.clone()
    };
    run_posterior(&cfg)
}

/// Writes `weights.csv`, `K.csv`, `A_<m>.csv`, `W_<m>.csv` (particles in
/// surviving order) and `report.json`.
pub fn write_posterior(
    dir: &Path,
    posterior: &DiscretePosterior,
    report: &RunReport,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_vector_csv(&dir.join("weights.csv"), posterior.weights.as_slice())?;
    write_matrix_csv(&dir.join("K.csv"), posterior.kernel.matrix())?;
    for (m, f) in posterior.particles.iter().enumerate() {
        write_matrix_csv(&dir.join(format!("A_{m}.csv")), &f.a)?;
        write_matrix_csv(&dir.join(format!("W_{m}.csv")), &f.w)?;
    }
    let path = dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(report)?).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads back a directory written by [`write_posterior`], recomputing the
/// discrepancy from the exported `K` and weights.
pub fn read_posterior(dir: &Path) -> Result<(DiscretePosterior, RunReport)> {
    let report_path = dir.join("report.json");
    let text = std::fs::read_to_string(&report_path).map_err(|source| Error::Io {
        path: report_path.display().to_string(),
        source,
    })?;
    let report: RunReport = serde_json::from_str(&text)?;
    let weights = SimplexWeights::new(read_vector_csv(&dir.join("weights.csv"))?)?;
    let kernel = SteinMatrix::new(read_matrix_csv(&dir.join("K.csv"))?);
    let particles = (0..weights.len())
        .map(|m| {
            Factorization::new(
                read_matrix_csv(&dir.join(format!("A_{m}.csv")))?,
                read_matrix_csv(&dir.join(format!("W_{m}.csv")))?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let discrepancy = stein_discrepancy(&kernel, &weights)?;
    Ok((
        DiscretePosterior {
            particles,
            weights,
            kernel,
            discrepancy,
        },
        report,
    ))
}
