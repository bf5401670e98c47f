//! Shared evaluation grids with precomputed trapezoid quadrature weights.
//!
//! All smooth curves in a dataset live on one [`Grid`]; grids are cheap to
//! clone (the point and weight vectors sit behind an `Arc`) and two curves
//! interoperate iff their grids are identical, checked by pointer first and
//! by value as a fallback.

use std::sync::Arc;

use crate::error::{FsmlError, Result};

/// Minimum number of evaluation points for a usable grid.
pub const MIN_GRID_LEN: usize = 16;

#[derive(Debug)]
struct GridData {
    points: Vec<f64>,
    /// Trapezoid-rule weights: w_0 = (t_1-t_0)/2, w_i = (t_{i+1}-t_{i-1})/2,
    /// w_{G-1} = (t_{G-1}-t_{G-2})/2, so that Σ w_i f_i telescopes to the
    /// composite trapezoid rule.
    weights: Vec<f64>,
}

/// An ordered vector of evaluation points spanning the observation interval,
/// shared by every curve of a dataset.
#[derive(Clone, Debug)]
pub struct Grid {
    data: Arc<GridData>,
}

impl Grid {
    /// Builds a grid from strictly increasing, finite evaluation points.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < MIN_GRID_LEN {
            return Err(FsmlError::parameter(format!(
                "grid needs at least {MIN_GRID_LEN} points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(FsmlError::parameter("grid points must be finite"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FsmlError::parameter(
                "grid points must be strictly increasing",
            ));
        }
        let g = points.len();
        let mut weights = vec![0.0; g];
        weights[0] = (points[1] - points[0]) / 2.0;
        weights[g - 1] = (points[g - 1] - points[g - 2]) / 2.0;
        for i in 1..g - 1 {
            weights[i] = (points[i + 1] - points[i - 1]) / 2.0;
        }
        Ok(Grid {
            data: Arc::new(GridData { points, weights }),
        })
    }

    /// Uniform grid of `len` points on `[min, max]`.
    pub fn uniform(min: f64, max: f64, len: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(FsmlError::parameter(format!(
                "grid interval [{min}, {max}] is not a finite nonempty interval"
            )));
        }
        if len < MIN_GRID_LEN {
            return Err(FsmlError::parameter(format!(
                "grid needs at least {MIN_GRID_LEN} points, got {len}"
            )));
        }
        let step = (max - min) / (len - 1) as f64;
        let points = (0..len)
            .map(|i| {
                if i + 1 == len {
                    max
                } else {
                    min + step * i as f64
                }
            })
            .collect();
        Grid::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.data.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.data.weights
    }

    pub fn len(&self) -> usize {
        self.data.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a grid always holds at least MIN_GRID_LEN points
    }

    /// Length of the observation interval, t_{G-1} - t_0.
    pub fn span(&self) -> f64 {
        self.data.points[self.len() - 1] - self.data.points[0]
    }

    pub fn min(&self) -> f64 {
        self.data.points[0]
    }

    pub fn max(&self) -> f64 {
        self.data.points[self.len() - 1]
    }

    /// Largest spacing between consecutive points.
    pub fn max_spacing(&self) -> f64 {
        self.data
            .points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// True when both grids hold bitwise-identical points. Shared-`Arc`
    /// grids short-circuit on pointer identity, so the common case is O(1).
    pub fn same_as(&self, other: &Grid) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
            || (self.len() == other.len()
                && self
                    .points()
                    .iter()
                    .zip(other.points())
                    .all(|(a, b)| a.to_bits() == b.to_bits()))
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.same_as(other)
    }
}

impl Eq for Grid {}
