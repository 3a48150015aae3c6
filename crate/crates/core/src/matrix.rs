//! Dense matrix aliases, observation masks, and seeding helpers shared by
//! every stage of the pipeline.
//!
//! Data matrices are `D × N`: rows are data dimensions, columns are
//! observations.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type Matrix = DMatrix<f64>;

/// Deterministic generator used for every random draw in the crate.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from a parent seed and a stream index.
///
/// SplitMix64 finalizer over `parent ^ (index * golden)`; distinct indices
/// give well-separated seeds so per-particle streams never overlap.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    let mut z = parent ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Checks that every entry is finite and non-negative.
pub fn validate_data(x: &Matrix) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Conformance("data matrix is empty".into()));
    }
    for (idx, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite data entry at ({}, {})",
                idx % x.nrows(),
                idx / x.nrows()
            )));
        }
        if v < 0.0 {
            return Err(Error::Argument(format!(
                "negative data entry {v} at ({}, {})",
                idx % x.nrows(),
                idx / x.nrows()
            )));
        }
    }
    Ok(())
}

pub(crate) fn ensure_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Conformance(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Indicator matrix of observed entries (1 = observed, 0 = missing).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    indicator: Matrix,
}

impl ObservationMask {
    /// Validates a 0/1 matrix with at least one observed entry per row and
    /// per column.
    pub fn new(indicator: Matrix) -> Result<Self> {
        for &v in indicator.iter() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Argument(format!("mask entry {v} is not 0 or 1")));
            }
        }
        for (r, row) in indicator.row_iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::Argument(format!(
                    "mask row {r} has no observed entry"
                )));
            }
        }
        for (c, col) in indicator.column_iter().enumerate() {
            if col.iter().all(|&v| v == 0.0) {
                return Err(Error::Argument(format!(
                    "mask column {c} has no observed entry"
                )));
            }
        }
        Ok(Self { indicator })
    }

    /// Builds a mask without the per-row/per-column coverage check. Used for
    /// degenerate inputs such as the all-missing mask in objective tests.
    pub fn new_unchecked(indicator: Matrix) -> Self {
        Self { indicator }
    }

    pub fn all_observed(rows: usize, cols: usize) -> Self {
        Self {
            indicator: Matrix::from_element(rows, cols, 1.0),
        }
    }

    /// Random mask hiding roughly `missing_fraction` of the entries, resampled
    /// until every row and column keeps at least one observation.
    pub fn random(rows: usize, cols: usize, missing_fraction: f64, seed: u64) -> Result<Self> {
        use rand::Rng as _;
        if !(0.0..1.0).contains(&missing_fraction) {
            return Err(Error::Argument(format!(
                "missing fraction {missing_fraction} must lie in [0, 1)"
            )));
        }
        for attempt in 0..100 {
            let mut r = rng(derive_seed(seed, attempt));
            let m = Matrix::from_fn(rows, cols, |_, _| {
                if r.random::<f64>() < missing_fraction {
                    0.0
                } else {
                    1.0
                }
            });
            if let Ok(mask) = Self::new(m) {
                return Ok(mask);
            }
        }
        Err(Error::Argument(
            "could not draw a mask covering every row and column".into(),
        ))
    }

    pub fn indicator(&self) -> &Matrix {
        &self.indicator
    }

    pub fn shape(&self) -> (usize, usize) {
        self.indicator.shape()
    }

    pub fn observed_count(&self) -> usize {
        self.indicator.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn ensure_matches(&self, x: &Matrix) -> Result<()> {
        ensure_shape(&self.indicator, x.nrows(), x.ncols(), "mask")
    }

    /// Entrywise product `M ∘ m`.
    pub fn apply(&self, m: &Matrix) -> Matrix {
        self.indicator.component_mul(m)
    }
}
