//! Config handling, file IO, the end-to-end posterior run, component
//! alignment and the synthetic experiments behind the CLI.

pub mod align;
pub mod config;
pub mod experiments;
pub mod io;
pub mod run;

pub use align::{align_bases, align_factorizations, apply_alignment, hungarian, Alignment};
pub use config::{InitStrategy, ModelConfig, RunConfig};
pub use run::{
    read_posterior, run_posterior, run_posterior_baseline, run_posterior_on, write_posterior,
    RunReport,
};
