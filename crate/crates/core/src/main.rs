use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use particle_nmf::bayes::{calibrate_epsilon, Lambda};
use particle_nmf::error::{Error, Result};
use particle_nmf::nmf::NmfConfig;
use particle_nmf::pipeline::experiments::{
    noise_experiment, rank_sweep_experiment, NoiseExperiment, RankSweep,
};
use particle_nmf::pipeline::io::{read_mask_csv, read_matrix_csv};
use particle_nmf::pipeline::{align_bases, run_posterior, InitStrategy, RunConfig};
use particle_nmf::qtransform::{LibrarySpec, TransformLibrary};

#[derive(Parser)]
#[command(
    name = "particle-nmf",
    version,
    about = "Particle posteriors for Bayesian NMF"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a library of transform pairs from synthetic data.
    GenQ(GenQArgs),
    /// Run the particle pipeline and write the posterior.
    Posterior(PosteriorArgs),
    /// Calibrate the SILF threshold from randomly initialized solves.
    CalibrateEps(CalibrateArgs),
    /// Match the columns of two basis matrices.
    Align(AlignArgs),
    /// Synthetic experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Init-error and solve-time ratios as the noise level grows.
    Noise(NoiseArgs),
    /// Init quality as a function of the transfer rank.
    RankSweep(RankSweepArgs),
}

#[derive(Args)]
struct Common {
    /// Master seed; every random draw derives from it.
    #[arg(long)]
    seed: u64,
    /// JSON config file. Flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct NmfFlags {
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
}

impl NmfFlags {
    fn apply(&self, cfg: &mut NmfConfig) {
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.rel_tol {
            cfg.rel_tol = v;
        }
    }
}

#[derive(Args)]
struct GenQArgs {
    #[command(flatten)]
    common: Common,
    /// Where to write the library (JSON).
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    datasets: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Side of the square synthetic matrices.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    r_svd: Option<usize>,
    #[arg(long)]
    r_t: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[command(flatten)]
    nmf: NmfFlags,
}

#[derive(Args)]
struct PosteriorArgs {
    #[command(flatten)]
    common: Common,
    /// Data matrix, headerless CSV (rows are dimensions).
    #[arg(long)]
    data: Option<PathBuf>,
    /// 0/1 observation mask of the same shape as the data.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    r_nmf: Option<usize>,
    #[arg(long)]
    r_svd: Option<usize>,
    #[arg(long)]
    r_t: Option<usize>,
    /// Number of particles.
    #[arg(long)]
    m: Option<usize>,
    /// SILF threshold; calibrated when neither this nor the config sets it.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// SILF scale `C`.
    #[arg(long = "silf-c")]
    silf_c: Option<f64>,
    /// Scalar exponential-prior rate.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    c_a: Option<f64>,
    #[arg(long)]
    c_w: Option<f64>,
    #[arg(long)]
    b_a: Option<f64>,
    #[arg(long)]
    b_w: Option<f64>,
    #[command(flatten)]
    nmf: NmfFlags,
    /// Transform library; generated (and saved here) if missing or too small.
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// `qtransform` or `random`.
    #[arg(long)]
    init: Option<InitStrategy>,
    #[arg(long)]
    calibration_runs: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    r_nmf: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[command(flatten)]
    nmf: NmfFlags,
}

#[derive(Args)]
struct AlignArgs {
    /// Accepted for uniformity; alignment is deterministic.
    #[command(flatten)]
    common: Common,
    /// Reference basis matrix (CSV, D × R).
    #[arg(long)]
    reference: PathBuf,
    /// Basis matrix to align (CSV, D × R).
    #[arg(long)]
    other: PathBuf,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    noise_grid: Option<Vec<f64>>,
    #[arg(long)]
    pairs: Option<usize>,
    /// Pre-built library to draw the pairs from.
    #[arg(long)]
    library: Option<PathBuf>,
    #[command(flatten)]
    nmf: NmfFlags,
}

#[derive(Args)]
struct RankSweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    /// Comma-separated transfer ranks.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    pairs: Option<usize>,
    #[command(flatten)]
    nmf: NmfFlags,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.display().to_string(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gen_q(args: GenQArgs) -> Result<()> {
    let mut spec: LibrarySpec = load_config(args.common.config.as_deref())?;
    spec.seed = args.common.seed;
    set(&mut spec.datasets, args.datasets);
    set(&mut spec.restarts, args.restarts);
    set(&mut spec.dim, args.dim);
    set(&mut spec.r_svd, args.r_svd);
    set(&mut spec.r_t, args.r_t);
    set(&mut spec.noise, args.noise);
    args.nmf.apply(&mut spec.nmf);
    let library = TransformLibrary::build(&spec)?;
    library.save(&args.output)?;
    eprintln!("wrote {} pairs to {}", library.len(), args.output.display());
    Ok(())
}

fn posterior(args: PosteriorArgs) -> Result<()> {
    let mut cfg = match &args.common.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    cfg.seed = args.common.seed;
    if args.data.is_some() {
        cfg.data_path = args.data;
    }
    if args.mask.is_some() {
        cfg.model.mask_path = args.mask;
    }
    set(&mut cfg.r_nmf, args.r_nmf);
    set(&mut cfg.r_svd, args.r_svd);
    set(&mut cfg.r_t, args.r_t);
    set(&mut cfg.m, args.m);
    if args.epsilon.is_some() {
        cfg.model.epsilon = args.epsilon;
    }
    set(&mut cfg.model.beta, args.beta);
    set(&mut cfg.model.c, args.silf_c);
    set(&mut cfg.model.lambda, args.lambda.map(Lambda::Scalar));
    set(&mut cfg.kernel.c_a, args.c_a);
    set(&mut cfg.kernel.c_w, args.c_w);
    set(&mut cfg.kernel.b_a, args.b_a);
    set(&mut cfg.kernel.b_w, args.b_w);
    args.nmf.apply(&mut cfg.nmf);
    if args.library.is_some() {
        cfg.library_path = args.library;
    }
    if args.output.is_some() {
        cfg.output_dir = args.output;
    }
    set(&mut cfg.init, args.init);
    set(&mut cfg.calibration_runs, args.calibration_runs);

    let (posterior, report) = run_posterior(&cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for d in &report.dropped {
        eprintln!("dropped particle {}: {}", d.index, d.reason);
    }
    print_json(&serde_json::json!({
        "particles": posterior.particles.len(),
        "dropped": report.dropped.len(),
        "epsilon": report.epsilon,
        "discrepancy": report.discrepancy,
        "uniform_discrepancy": report.uniform_discrepancy,
        "weights": report.weights,
    }))
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let mut cfg = match &args.common.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    if args.data.is_some() {
        cfg.data_path = args.data;
    }
    if args.mask.is_some() {
        cfg.model.mask_path = args.mask;
    }
    set(&mut cfg.r_nmf, args.r_nmf);
    set(&mut cfg.calibration_runs, args.runs);
    args.nmf.apply(&mut cfg.nmf);
    if cfg.r_nmf < 1 {
        return Err(Error::Config("r_nmf must be >= 1".into()));
    }
    cfg.nmf.validate()?;
    let data = cfg
        .data_path
        .as_ref()
        .ok_or_else(|| Error::Config("--data is required".into()))?;
    let x = read_matrix_csv(data)?;
    let mask = cfg
        .model
        .mask_path
        .as_ref()
        .map(|p| read_mask_csv(p))
        .transpose()?;
    let cal = calibrate_epsilon(
        &x,
        cfg.r_nmf,
        cfg.calibration_runs,
        args.common.seed,
        &cfg.nmf,
        mask.as_ref(),
    )?;
    print_json(&cal)
}

fn align(args: AlignArgs) -> Result<()> {
    if let Some(p) = &args.common.config {
        load_config::<serde_json::Value>(Some(p))?;
    }
    let reference = read_matrix_csv(&args.reference)?;
    let other = read_matrix_csv(&args.other)?;
    print_json(&align_bases(&reference, &other)?)
}

fn noise(args: NoiseArgs) -> Result<()> {
    let mut exp: NoiseExperiment = load_config(args.common.config.as_deref())?;
    exp.seed = args.common.seed;
    set(&mut exp.rows, args.rows);
    set(&mut exp.cols, args.cols);
    set(&mut exp.rank, args.rank);
    set(&mut exp.noise_grid, args.noise_grid);
    set(&mut exp.n_pairs, args.pairs);
    args.nmf.apply(&mut exp.nmf);
    let library = args
        .library
        .as_deref()
        .map(TransformLibrary::load)
        .transpose()?;
    let rows = noise_experiment(&exp, library.as_ref())?;
    println!("noise,error_ratio,time_ratio,iteration_ratio,objective_ratio");
    for r in rows {
        println!(
            "{},{},{},{},{}",
            r.noise, r.error_ratio, r.time_ratio, r.iteration_ratio, r.objective_ratio
        );
    }
    Ok(())
}

fn rank_sweep(args: RankSweepArgs) -> Result<()> {
    let mut exp: RankSweep = load_config(args.common.config.as_deref())?;
    exp.seed = args.common.seed;
    set(&mut exp.rows, args.rows);
    set(&mut exp.cols, args.cols);
    set(&mut exp.rank, args.rank);
    set(&mut exp.grid, args.grid);
    set(&mut exp.n_pairs, args.pairs);
    args.nmf.apply(&mut exp.nmf);
    let report = rank_sweep_experiment(&exp)?;
    println!("r_t,median_init_error,min_init_error,max_init_error");
    for r in &report.rows {
        println!(
            "{},{},{},{}",
            r.r_t, r.median_init_error, r.min_init_error, r.max_init_error
        );
    }
    println!("# best_random_init_error,{}", report.best_random_init_error);
    println!("# worst_converged_error,{}", report.worst_converged_error);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenQ(a) => gen_q(a),
        Command::Posterior(a) => posterior(a),
        Command::CalibrateEps(a) => calibrate(a),
        Command::Align(a) => align(a),
        Command::Experiment(ExperimentCommand::Noise(a)) => noise(a),
        Command::Experiment(ExperimentCommand::RankSweep(a)) => rank_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
