//! Intrinsic-dimension estimation with the two-nearest-neighbor method.
//!
//! For each point the ratio μ_i = r_2(i)/r_1(i) of its second- to
//! first-nearest-neighbor distance follows a Pareto law with shape equal to
//! the intrinsic dimension. The estimate fits that law to the empirical CDF
//! of the ratios (a through-the-origin regression of −log(1−F̂) on log μ),
//! discarding the largest 10% of ratios where the law is least reliable.

use nalgebra::DMatrix;

use crate::error::{FsmlError, Result};
use crate::fda::{pairwise_l2, Curve};

/// Smallest dataset the estimator accepts.
pub const MIN_POINTS: usize = 20;
/// Minimum number of points with two positive neighbor distances.
pub const MIN_VALID: usize = 10;

/// Result of the two-NN estimate, with diagnostics.
#[derive(Clone, Debug)]
pub struct DimensionEstimate {
    /// round(d̂) clamped to [1, 10].
    pub dim: usize,
    /// Raw regression estimate before rounding.
    pub d_hat: f64,
    /// Per-point ratio μ_i = r₂/r₁, `None` where fewer than two positive
    /// neighbor distances exist.
    pub ratios: Vec<Option<f64>>,
    /// Valid points n′ (entries of `ratios` that are `Some`).
    pub valid: usize,
    /// Points kept after discarding the top 10% largest ratios.
    pub used: usize,
}

/// Estimates intrinsic dimension from curves (pairwise L2 computed here).
pub fn estimate_intrinsic_dim(curves: &[Curve]) -> Result<DimensionEstimate> {
    let dist = pairwise_l2(curves)?;
    estimate_intrinsic_dim_from_dists(&dist)
}

/// Estimates intrinsic dimension from a precomputed distance matrix.
pub fn estimate_intrinsic_dim_from_dists(dist: &DMatrix<f64>) -> Result<DimensionEstimate> {
    let n = dist.nrows();
    if dist.ncols() != n {
        return Err(FsmlError::parameter("distance matrix must be square"));
    }
    if n < MIN_POINTS {
        return Err(FsmlError::InsufficientData {
            needed: MIN_POINTS,
            got: n,
        });
    }

    let ratios: Vec<Option<f64>> = (0..n)
        .map(|i| {
            // Two smallest positive distances from i (zero distances are
            // duplicates and excluded).
            let mut r1 = f64::INFINITY;
            let mut r2 = f64::INFINITY;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = dist[(i, j)];
                if d <= 0.0 {
                    continue;
                }
                if d < r1 {
                    r2 = r1;
                    r1 = d;
                } else if d < r2 {
                    r2 = d;
                }
            }
            if r2.is_finite() {
                Some(r2 / r1)
            } else {
                None
            }
        })
        .collect();

    let mut mu: Vec<f64> = ratios.iter().flatten().copied().collect();
    let valid = mu.len();
    if valid < MIN_VALID {
        return Err(FsmlError::InsufficientData {
            needed: MIN_VALID,
            got: valid,
        });
    }
    mu.sort_by(f64::total_cmp);
    let used = valid - valid / 10;

    // Under the two-NN law, P(μ > x) = x^{−d}, so −log(1−F(μ)) = d·log μ;
    // fit d by least squares through the origin on the empirical CDF
    // F̂(μ_(i)) = i/n′.
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &m) in mu.iter().take(used).enumerate() {
        let x = m.ln();
        let y = -(1.0 - (i + 1) as f64 / valid as f64).ln();
        sxy += x * y;
        sxx += x * x;
    }
    if sxx <= 0.0 {
        return Err(FsmlError::InvalidState(
            "all neighbor-distance ratios equal one; dimension is undefined".into(),
        ));
    }
    let d_hat = sxy / sxx;
    let dim = (d_hat.round() as i64).clamp(1, 10) as usize;
    Ok(DimensionEstimate {
        dim,
        d_hat,
        ratios,
        valid,
        used,
    })
}
