//! Matching the components of two factorizations.
//!
//! Columns of `A` are only identified up to permutation, so comparing two
//! factorizations first solves the assignment problem whose cost is the angle
//! between basis columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nmf::Factorization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `permutation[i]` is the column of `other` matched to column `i` of the
    /// reference.
    pub permutation: Vec<usize>,
    /// Sum of matched angles, in radians.
    pub cost: f64,
}

/// Angle between two vectors via `2·atan2(‖â − b̂‖, ‖â + b̂‖)`, which stays
/// accurate for nearly parallel vectors and is exactly 0 for equal ones.
pub fn column_angle(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return None;
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

/// `R × R` matrix of angles between reference column `i` and other column `j`.
pub fn angle_costs(reference: &Matrix, other: &Matrix) -> Result<Matrix> {
    if reference.shape() != other.shape() {
        return Err(Error::Conformance(format!(
            "bases are {:?} and {:?}",
            reference.shape(),
            other.shape()
        )));
    }
    let r = reference.ncols();
    let cols_ref: Vec<Vec<f64>> = reference
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let cols_oth: Vec<Vec<f64>> = other
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let mut cost = Matrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            cost[(i, j)] = column_angle(&cols_ref[i], &cols_oth[j]).ok_or_else(|| {
                let which = if cols_ref[i].iter().all(|&v| v == 0.0) {
                    format!("reference column {i}")
                } else {
                    format!("other column {j}")
                };
                Error::Degenerate(format!("{which} is zero; angle undefined"))
            })?;
        }
    }
    Ok(cost)
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with row/column potentials, `O(n³)`). Returns `assignment[row] = col`.
pub fn hungarian(cost: &Matrix) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::Conformance(
            "assignment cost matrix must be square".into(),
        ));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite assignment cost"));
    }
    // 1-based arrays; index 0 is a sentinel column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Aligns the basis columns of `other` to those of `reference`.
pub fn align_factorizations(reference: &Factorization, other: &Factorization) -> Result<Alignment> {
    if reference.rank() != other.rank() {
        return Err(Error::Conformance(format!(
            "ranks differ: {} vs {}",
            reference.rank(),
            other.rank()
        )));
    }
    align_bases(&reference.a, &other.a)
}

/// Aligns the columns of `other` to those of `reference`.
pub fn align_bases(reference: &Matrix, other: &Matrix) -> Result<Alignment> {
    let cost = angle_costs(reference, other)?;
    let permutation = hungarian(&cost)?;
    let total = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum();
    Ok(Alignment {
        permutation,
        cost: total,
    })
}

/// Reorders the components of `f` by `permutation` (as returned in
/// [`Alignment`]) so they line up with the reference.
pub fn apply_alignment(f: &Factorization, permutation: &[usize]) -> Result<Factorization> {
    if permutation.len() != f.rank() {
        return Err(Error::Conformance(
            "permutation length differs from rank".into(),
        ));
    }
    let a = Matrix::from_fn(f.dims(), f.rank(), |d, i| f.a[(d, permutation[i])]);
    let w = Matrix::from_fn(f.rank(), f.observations(), |i, n| f.w[(permutation[i], n)]);
    Factorization::new(a, w)
}
