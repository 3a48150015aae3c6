//! Particle-based variational inference for Bayesian non-negative matrix
//! factorization.
//!
//! The posterior over factorizations `(A, W)` of a non-negative matrix `X` is
//! approximated by a small weighted set of factorizations:
//!
//! 1. [`qtransform`] turns the truncated SVD of `X` into many diverse NMF
//!    initializations using transfer matrices learned on tiny synthetic
//!    problems.
//! 2. [`nmf`] refines each initialization with multiplicative updates.
//! 3. [`bayes`] scores every factorization under a likelihood that is flat
//!    over all factorizations better than a threshold.
//! 4. [`stein`] weights the particles by minimizing the kernelized Stein
//!    discrepancy over the probability simplex.
//!
//! [`pipeline`] wires these together and hosts the experiment harnesses used
//! by the `particle-nmf` command-line tool.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod error;
pub mod matrix;
pub mod nmf;
pub mod pipeline;
pub mod qtransform;
pub mod stein;

pub use error::{Error, Result};
pub use matrix::{Matrix, ObservationMask};
pub use nmf::{Factorization, NmfConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/nmf.md")]
    mod nmf {}
    #[doc = include_str!("../../../book/src/qtransform.md")]
    mod qtransform {}
    #[doc = include_str!("../../../book/src/bayes.md")]
    mod bayes {}
    #[doc = include_str!("../../../book/src/stein.md")]
    mod stein {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
