//! Out-of-sample interpolation of the coordinate map μ̂.
//!
//! A query curve gets its own tangent frame (local PCA around x), the
//! training curves are expressed in that frame, and a kernel-weighted local
//! linear regression of the embedding onto those tangent coordinates is
//! solved; the intercept is μ̂(x). A small ridge (λ_n = n⁻³ by default)
//! engages only when the unridged normal equations are ill-conditioned.

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;

use crate::error::{FsmlError, Result};
use crate::fda::{l2_distance, Curve, Kernel};
use crate::geometry::{local_pca_from_dists, Anchor};

/// Smallest usable total kernel weight; below this the query is treated as
/// outside the training support.
const WEIGHT_FLOOR: f64 = 1e-300;

/// Fitted local-linear coordinate map from curve space to embedding space.
#[derive(Clone, Debug)]
pub struct CoordinateMapModel {
    curves: Vec<Curve>,
    embedding: DMatrix<f64>,
    kernel: Kernel,
    h_reg: f64,
    k_pca: usize,
    lambda: f64,
}

impl CoordinateMapModel {
    /// Builds the map from training curves and their embedding rows.
    /// `ridge` of `None` selects the default λ_n = n⁻³.
    pub fn new(
        curves: Vec<Curve>,
        embedding: DMatrix<f64>,
        kernel: Kernel,
        h_reg: f64,
        k_pca: usize,
        ridge: Option<f64>,
    ) -> Result<Self> {
        let n = curves.len();
        if n == 0 {
            return Err(FsmlError::InsufficientData { needed: 1, got: 0 });
        }
        let grid = curves[0].grid();
        if curves.iter().any(|c| !c.grid().same_as(grid)) {
            return Err(FsmlError::GridMismatch);
        }
        if embedding.nrows() != n {
            return Err(FsmlError::parameter(format!(
                "embedding has {} rows for {n} curves",
                embedding.nrows()
            )));
        }
        let d = embedding.ncols();
        if d < 1 {
            return Err(FsmlError::parameter("embedding dimension must be ≥ 1"));
        }
        if !(h_reg.is_finite() && h_reg > 0.0) {
            return Err(FsmlError::parameter(format!(
                "regression bandwidth must be positive, got {h_reg}"
            )));
        }
        if k_pca < d + 1 || k_pca > n {
            return Err(FsmlError::parameter(format!(
                "k_pca = {k_pca} must lie in [d+1, n] = [{}, {n}]",
                d + 1
            )));
        }
        let lambda = match ridge {
            Some(l) if l.is_finite() && l >= 0.0 => l,
            Some(l) => {
                return Err(FsmlError::parameter(format!(
                    "ridge must be ≥ 0, got {l}"
                )))
            }
            None => (n as f64).powi(-3),
        };
        Ok(CoordinateMapModel {
            curves,
            embedding,
            kernel,
            h_reg,
            k_pca,
            lambda,
        })
    }

    pub fn n(&self) -> usize {
        self.curves.len()
    }

    pub fn d(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn h_reg(&self) -> f64 {
        self.h_reg
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn k_pca(&self) -> usize {
        self.k_pca
    }

    pub fn ridge(&self) -> f64 {
        self.lambda
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn embedding(&self) -> &DMatrix<f64> {
        &self.embedding
    }

    /// μ̂(x): the embedding coordinates interpolated at a query curve.
    pub fn interpolate_mu(&self, x: &Curve) -> Result<DVector<f64>> {
        let design = local_design(&self.curves, x, self.k_pca, self.d())?;
        weighted_intercept(
            &design,
            &self.embedding,
            self.kernel,
            self.h_reg,
            self.lambda,
        )
    }

    /// Batch μ̂ over many queries (parallel, order-preserving).
    pub fn interpolate_batch(&self, xs: &[Curve]) -> Result<Vec<DVector<f64>>> {
        xs.par_iter().map(|x| self.interpolate_mu(x)).collect()
    }
}

/// Bandwidth-independent geometry of one query against a training set: the
/// tangent coordinates χ̂_i of every training curve in the query's frame and
/// the L2 distances used for kernel weights. Computing this once lets a
/// bandwidth search reuse it across candidates.
pub(crate) struct LocalDesign {
    /// n×d tangent coordinates, row i = χ̂_i.
    pub chi: DMatrix<f64>,
    /// ‖X̂_i − x‖ for every training curve.
    pub dists: Vec<f64>,
}

pub(crate) fn local_design(
    curves: &[Curve],
    x: &Curve,
    k_pca: usize,
    d: usize,
) -> Result<LocalDesign> {
    let dists = curves
        .iter()
        .map(|c| l2_distance(c, x))
        .collect::<Result<Vec<f64>>>()?;
    let frame = local_pca_from_dists(curves, Anchor::Point(x.clone()), &dists, k_pca, d)?;
    let n = curves.len();
    let mut chi = DMatrix::zeros(n, d);
    for (i, c) in curves.iter().enumerate() {
        let diff = c.minus(x)?;
        let coords = frame.project(&diff)?;
        for k in 0..d {
            chi[(i, k)] = coords[k];
        }
    }
    Ok(LocalDesign { chi, dists })
}

/// Solves the weighted local-linear system and returns the intercept row
/// e₁ᵀ(𝕏ᵀW𝕏 [+ λI])⁻¹𝕏ᵀWẐ.
pub(crate) fn weighted_intercept(
    design: &LocalDesign,
    z: &DMatrix<f64>,
    kernel: Kernel,
    h: f64,
    lambda: f64,
) -> Result<DVector<f64>> {
    let n = design.chi.nrows();
    let d = design.chi.ncols();
    let norm = h.powi(d as i32);
    let weights: Vec<f64> = design
        .dists
        .iter()
        .map(|&dist| kernel.eval(dist / h) / norm)
        .collect();
    if weights.iter().all(|&w| w < WEIGHT_FLOOR) {
        let nearest = design.dists.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(FsmlError::Extrapolation { nearest });
    }

    // Normal equations over the design u_i = (1, χ̂_iᵀ).
    let p = d + 1;
    let mut a = DMatrix::zeros(p, p);
    let mut rhs = DMatrix::zeros(p, d);
    let mut u = DVector::zeros(p);
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        u[0] = 1.0;
        for k in 0..d {
            u[k + 1] = design.chi[(i, k)];
        }
        for r in 0..p {
            let wu = w * u[r];
            for c in r..p {
                a[(r, c)] += wu * u[c];
            }
            for c in 0..d {
                rhs[(r, c)] += wu * z[(i, c)];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            a[(r, c)] = a[(c, r)];
        }
    }

    // Ridge engages only when the unridged system is ill-conditioned.
    let sigma_min = SVD::new(a.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if sigma_min < lambda {
        for r in 0..p {
            a[(r, r)] += lambda;
        }
    }
    let solution = SVD::new(a, true, true)
        .solve(&rhs, 0.0)
        .map_err(|e| FsmlError::InvalidState(format!("local linear solve failed: {e}")))?;
    Ok(solution.row(0).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fda::Grid;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Random orthonormal pair plus curves on the spanned affine plane,
    /// returning the generating plane coordinates as the "embedding".
    fn flat_model(
        seed: u64,
        n: usize,
        h: f64,
    ) -> (CoordinateMapModel, Vec<Curve>, Vec<[f64; 2]>, Grid) {
        let grid = Grid::uniform(0.0, 1.0, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis =
            crate::geometry::tangent::tests::random_orthonormal_basis(&mut rng, &grid, 2);
        let make = |a1: f64, a2: f64| {
            let vals: Vec<f64> = (0..grid.len())
                .map(|gi| 0.5 + a1 * basis[(gi, 0)] + a2 * basis[(gi, 1)])
                .collect();
            Curve::new(grid.clone(), vals).unwrap()
        };
        let mut curves = Vec::new();
        let mut z = DMatrix::zeros(n, 2);
        for i in 0..n {
            let (a1, a2): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            curves.push(make(a1, a2));
            z[(i, 0)] = a1;
            z[(i, 1)] = a2;
        }
        let mut held = Vec::new();
        let mut held_coords = Vec::new();
        for _ in 0..10 {
            let (a1, a2): (f64, f64) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            held.push(make(a1, a2));
            held_coords.push([a1, a2]);
        }
        let model =
            CoordinateMapModel::new(curves, z, Kernel::Gaussian, h, 10, None).unwrap();
        (model, held, held_coords, grid)
    }

    #[test]
    fn flat_oracle_recovers_exact_coordinates() {
        let (model, held, coords, _) = flat_model(11, 60, 0.8);
        for (x, truth) in held.iter().zip(&coords) {
            let mu = model.interpolate_mu(x).unwrap();
            // The true coordinate map is affine here, so the local-linear
            // fit reproduces it almost exactly.
            let err = ((mu[0] - truth[0]).powi(2) + (mu[1] - truth[1]).powi(2)).sqrt();
            let scale = (truth[0].powi(2) + truth[1].powi(2)).sqrt().max(1.0);
            assert!(err / scale < 1e-4, "error {err} at {truth:?}");
        }
    }

    #[test]
    fn affine_embedding_is_reproduced_at_chi_zero() {
        let (model, held, _, _) = flat_model(13, 50, 0.7);
        // Rebuild the embedding as an exact affine function of the tangent
        // coordinates at one query and check the intercept comes back.
        let x = &held[0];
        let design = local_design(model.curves(), x, model.k_pca(), 2).unwrap();
        let alpha = [0.37, -1.21];
        let beta = [[1.5, -0.3], [0.2, 2.0]];
        let n = model.n();
        let mut z = DMatrix::zeros(n, 2);
        for i in 0..n {
            for c in 0..2 {
                z[(i, c)] =
                    alpha[c] + beta[0][c] * design.chi[(i, 0)] + beta[1][c] * design.chi[(i, 1)];
            }
        }
        let mu = weighted_intercept(&design, &z, Kernel::Gaussian, 0.7, model.ridge()).unwrap();
        assert_abs_diff_eq!(mu[0], alpha[0], epsilon = 1e-8);
        assert_abs_diff_eq!(mu[1], alpha[1], epsilon = 1e-8);
    }

    #[test]
    fn constant_embedding_returns_the_constant() {
        let (model, held, _, _) = flat_model(17, 40, 0.5);
        let z = DMatrix::from_fn(model.n(), 2, |_, c| if c == 0 { 4.5 } else { -2.0 });
        let model = CoordinateMapModel::new(
            model.curves().to_vec(),
            z,
            Kernel::Gaussian,
            0.5,
            10,
            None,
        )
        .unwrap();
        for x in &held {
            let mu = model.interpolate_mu(x).unwrap();
            assert_abs_diff_eq!(mu[0], 4.5, epsilon = 1e-9);
            assert_abs_diff_eq!(mu[1], -2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn query_at_training_point_returns_its_embedding() {
        let (model, _, _, _) = flat_model(19, 40, 0.5);
        // Epanechnikov with a bandwidth below the nearest other training
        // point leaves exactly one positive weight.
        let x = model.curves()[7].clone();
        let mut nearest_other = f64::INFINITY;
        for (i, c) in model.curves().iter().enumerate() {
            if i != 7 {
                nearest_other = nearest_other.min(l2_distance(c, &x).unwrap());
            }
        }
        let tight = CoordinateMapModel::new(
            model.curves().to_vec(),
            model.embedding().clone(),
            Kernel::Epanechnikov,
            nearest_other * 0.9,
            10,
            None,
        )
        .unwrap();
        let mu = tight.interpolate_mu(&x).unwrap();
        // A single effective neighbor makes the system rank one, so the
        // default n⁻³ ridge engages and shifts μ̂ by O(λ/w); the tolerance
        // leaves room for that while still pinning down the right point.
        assert_abs_diff_eq!(mu[0], model.embedding()[(7, 0)], epsilon = 1e-3);
        assert_abs_diff_eq!(mu[1], model.embedding()[(7, 1)], epsilon = 1e-3);
    }

    #[test]
    fn far_query_is_an_extrapolation_error() {
        let (model, _, _, grid) = flat_model(23, 30, 0.5);
        let far = Curve::from_fn(grid, |_| 1e6).unwrap();
        match model.interpolate_mu(&far) {
            Err(FsmlError::Extrapolation { nearest }) => assert!(nearest > 1e5),
            other => panic!("expected extrapolation error, got {other:?}"),
        }
    }

    #[test]
    fn translation_equivariance() {
        let (model, held, _, grid) = flat_model(29, 40, 0.6);
        let base = model.interpolate_mu(&held[0]).unwrap();
        let shift = 3.25;
        let shifted_curves: Vec<Curve> = model
            .curves()
            .iter()
            .map(|c| {
                let vals: Vec<f64> = c.values().iter().map(|v| v + shift).collect();
                Curve::new(grid.clone(), vals).unwrap()
            })
            .collect();
        let shifted_model = CoordinateMapModel::new(
            shifted_curves,
            model.embedding().clone(),
            Kernel::Gaussian,
            0.6,
            10,
            None,
        )
        .unwrap();
        let shifted_x = Curve::new(
            grid.clone(),
            held[0].values().iter().map(|v| v + shift).collect(),
        )
        .unwrap();
        let moved = shifted_model.interpolate_mu(&shifted_x).unwrap();
        assert_abs_diff_eq!(base[0], moved[0], epsilon = 1e-10);
        assert_abs_diff_eq!(base[1], moved[1], epsilon = 1e-10);
    }

    #[test]
    fn weight_scaling_leaves_the_estimate_unchanged() {
        let (model, held, _, _) = flat_model(31, 40, 0.6);
        let design = local_design(model.curves(), &held[1], model.k_pca(), 2).unwrap();
        let base =
            weighted_intercept(&design, model.embedding(), Kernel::Gaussian, 0.6, 0.0).unwrap();
        // Reference solve with every weight multiplied by a constant.
        let scale = 7.3;
        let n = model.n();
        let mut a = DMatrix::zeros(3, 3);
        let mut rhs = DMatrix::zeros(3, 2);
        for i in 0..n {
            let w = scale * Kernel::Gaussian.eval(design.dists[i] / 0.6) / (0.6f64 * 0.6);
            let u = [1.0, design.chi[(i, 0)], design.chi[(i, 1)]];
            for r in 0..3 {
                for c in 0..3 {
                    a[(r, c)] += w * u[r] * u[c];
                }
                for c in 0..2 {
                    rhs[(r, c)] += w * u[r] * model.embedding()[(i, c)];
                }
            }
        }
        let sol = SVD::new(a, true, true).solve(&rhs, 0.0).unwrap();
        assert_abs_diff_eq!(base[0], sol[(0, 0)], epsilon = 1e-10);
        assert_abs_diff_eq!(base[1], sol[(0, 1)], epsilon = 1e-10);
    }

    #[test]
    fn ridge_engagement_never_produces_nan() {
        let grid = Grid::uniform(0.0, 1.0, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for case in 0..200 {
            let n = rng.gen_range(8..20);
            let mut curves: Vec<Curve> = (0..n)
                .map(|_| {
                    let a: f64 = rng.gen_range(-1.0..1.0);
                    let b: f64 = rng.gen_range(-1.0..1.0);
                    Curve::from_fn(grid.clone(), |t| a * t + b * (3.0 * t).sin()).unwrap()
                })
                .collect();
            // Inject near-duplicates to stress conditioning.
            if n > 2 {
                curves[1] = curves[0].clone();
            }
            let z = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-2.0..2.0));
            let mut min_gap = f64::INFINITY;
            for i in 0..n {
                for j in i + 1..n {
                    let d = l2_distance(&curves[i], &curves[j]).unwrap();
                    if d > 0.0 {
                        min_gap = min_gap.min(d);
                    }
                }
            }
            let h = min_gap.max(1e-6) * rng.gen_range(1.0..50.0);
            let kernel = if case % 2 == 0 {
                Kernel::Gaussian
            } else {
                Kernel::Epanechnikov
            };
            let model =
                CoordinateMapModel::new(curves.clone(), z, kernel, h, n.min(6), None).unwrap();
            match model.interpolate_mu(&curves[0]) {
                Ok(mu) => assert!(mu.iter().all(|v| v.is_finite()), "case {case}"),
                Err(FsmlError::Extrapolation { .. }) => {}
                Err(other) => panic!("case {case}: unexpected error {other:?}"),
            }
        }
    }

    #[test]
    fn constructor_validates_parameters() {
        let (model, _, _, grid) = flat_model(41, 20, 0.5);
        let curves = model.curves().to_vec();
        let z = model.embedding().clone();
        assert!(
            CoordinateMapModel::new(curves.clone(), z.clone(), Kernel::Gaussian, 0.0, 10, None)
                .is_err()
        );
        assert!(
            CoordinateMapModel::new(curves.clone(), z.clone(), Kernel::Gaussian, 0.5, 2, None)
                .is_err()
        );
        assert!(CoordinateMapModel::new(
            curves.clone(),
            z.clone(),
            Kernel::Gaussian,
            0.5,
            21,
            None
        )
        .is_err());
        assert!(
            CoordinateMapModel::new(curves, z, Kernel::Gaussian, 0.5, 10, Some(-1.0)).is_err()
        );
        let _ = grid;
    }
}
