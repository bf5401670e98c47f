//! Label-penalized proximity and classical multidimensional scaling.
//!
//! The proximity matrix inflates geodesic distances between differently
//! labeled pairs by ξ/(d̂+√ξ) — a bounded, rank-preserving penalty — and
//! classical MDS turns the result into d-dimensional coordinates, clipping
//! the negative eigenvalues a non-Euclidean proximity inevitably produces.

use nalgebra::DMatrix;

use crate::error::{FsmlError, Result};
use crate::geometry::GeodesicDistances;

/// Geodesic distances with the label penalty applied.
#[derive(Clone, Debug)]
pub struct ProximityMatrix {
    matrix: DMatrix<f64>,
    xi: f64,
}

impl ProximityMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Applies the penalty 𝔻ξ(i,j) = d̂(i,j) + ξ·𝟙{Y_i≠Y_j}/(d̂(i,j)+√ξ).
pub fn penalized_proximity(
    distances: &GeodesicDistances,
    labels: &[usize],
    xi: f64,
) -> Result<ProximityMatrix> {
    let n = distances.n();
    if labels.len() != n {
        return Err(FsmlError::parameter(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if !(xi.is_finite() && xi >= 0.0) {
        return Err(FsmlError::parameter(format!("ξ must be ≥ 0, got {xi}")));
    }
    // ξ = 0 leaves the distances untouched (and avoids 0/0 at duplicates).
    if xi == 0.0 {
        return Ok(ProximityMatrix {
            matrix: distances.matrix().clone(),
            xi,
        });
    }
    let sqrt_xi = xi.sqrt();
    let mut matrix = distances.matrix().clone();
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] != labels[j] {
                let d = matrix[(i, j)];
                let penalized = d + xi / (d + sqrt_xi);
                matrix[(i, j)] = penalized;
                matrix[(j, i)] = penalized;
            }
        }
    }
    Ok(ProximityMatrix { matrix, xi })
}

/// Low-dimensional coordinates recovered by classical MDS.
#[derive(Clone, Debug)]
pub struct Embedding {
    /// n×d coordinates, one row per curve, columns by descending eigenvalue.
    pub coords: DMatrix<f64>,
    /// All n MDS eigenvalues, descending (negatives kept for diagnostics).
    pub eigenvalues: Vec<f64>,
    /// max over pairs of |𝔻ξ(i,j) − ‖Ẑ_i−Ẑ_j‖|.
    pub epsilon_mds: f64,
    /// Total mass of negative eigenvalues (how non-Euclidean 𝔻ξ was).
    pub clipped_mass: f64,
}

impl Embedding {
    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn d(&self) -> usize {
        self.coords.ncols()
    }
}

/// Classical (Torgerson) MDS: double-centers the squared proximities,
/// eigendecomposes, and scales the top-d eigenvectors by √λ (negative
/// retained eigenvalues are clipped to zero).
pub fn classical_mds(prox: &ProximityMatrix, d: usize) -> Result<Embedding> {
    mds_of_matrix(prox.matrix(), d)
}

pub(crate) fn mds_of_matrix(proximities: &DMatrix<f64>, d: usize) -> Result<Embedding> {
    let n = proximities.nrows();
    if d < 1 || d > n.saturating_sub(1) {
        return Err(FsmlError::parameter(format!(
            "embedding dimension d = {d} must satisfy 1 ≤ d ≤ n−1 = {}",
            n.saturating_sub(1)
        )));
    }

    // B = −½·J·D²·J, filled from the closed form
    // b_ij = −½(D²_ij − m_i − m_j + m); mirrored so B is exactly symmetric.
    let d2 = proximities.map(|v| v * v);
    let row_means: Vec<f64> = (0..n).map(|i| d2.row(i).sum() / n as f64).collect();
    let grand_mean = row_means.iter().sum::<f64>() / n as f64;
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand_mean);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }

    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let clipped_mass = eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();

    let mut coords = DMatrix::zeros(n, d);
    for (col, &k) in order.iter().take(d).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        let scale = lambda.sqrt();
        let vec = eig.eigenvectors.column(k);
        // Deterministic sign: the entry with largest |value| comes out
        // positive.
        let mut arg = 0;
        for i in 1..n {
            if vec[i].abs() > vec[arg].abs() {
                arg = i;
            }
        }
        let sign = if vec[arg] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[(i, col)] = sign * scale * vec[i];
        }
    }

    let mut epsilon_mds: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let mut dist2 = 0.0;
            for k in 0..d {
                let diff = coords[(i, k)] - coords[(j, k)];
                dist2 += diff * diff;
            }
            let gap = (proximities[(i, j)] - dist2.sqrt()).abs();
            if gap > epsilon_mds {
                epsilon_mds = gap;
            }
        }
    }

    Ok(Embedding {
        coords,
        eigenvalues,
        epsilon_mds,
        clipped_mass,
    })
}

/// Per-point RMS residual after optimally translating, rotating
/// (reflections allowed), and — when `allow_scale` — uniformly scaling
/// `source` onto `target`. Zero iff the clouds match up to that family.
pub fn procrustes_error(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
    allow_scale: bool,
) -> Result<f64> {
    if source.nrows() != target.nrows() || source.ncols() != target.ncols() {
        return Err(FsmlError::parameter(format!(
            "point sets are {}×{} vs {}×{}",
            source.nrows(),
            source.ncols(),
            target.nrows(),
            target.ncols()
        )));
    }
    let n = source.nrows();
    if n == 0 || source.ncols() == 0 {
        return Err(FsmlError::parameter("point sets must be nonempty"));
    }
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for j in 0..m.ncols() {
            let mean = m.column(j).sum() / n as f64;
            for i in 0..n {
                c[(i, j)] -= mean;
            }
        }
        c
    };
    let a = center(source);
    let b = center(target);

    let svd = (a.transpose() * &b).svd(true, true);
    let (u, v_t) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(FsmlError::InvalidState("SVD factors unavailable".into())),
    };
    let rotation = u * v_t;
    let scale = if allow_scale {
        let norm2 = a.iter().map(|v| v * v).sum::<f64>();
        if norm2 == 0.0 {
            return Err(FsmlError::parameter("source cloud is a single point"));
        }
        svd.singular_values.iter().sum::<f64>() / norm2
    } else {
        1.0
    };
    let residual = a * rotation * scale - b;
    Ok((residual.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn geo(matrix: DMatrix<f64>) -> GeodesicDistances {
        GeodesicDistances::from_matrix(matrix).unwrap()
    }

    fn two_points(dist: f64) -> GeodesicDistances {
        geo(DMatrix::from_row_slice(2, 2, &[0.0, dist, dist, 0.0]))
    }

    #[test]
    fn penalty_formula_spot_values() {
        // Same labels: indicator off, any ξ.
        let p = penalized_proximity(&two_points(2.0), &[1, 1], 9.0).unwrap();
        assert_eq!(p.matrix()[(0, 1)], 2.0);
        // Different labels, d=2, ξ=4 → 2 + 4/(2+2) = 3.
        let p = penalized_proximity(&two_points(2.0), &[0, 1], 4.0).unwrap();
        assert_abs_diff_eq!(p.matrix()[(0, 1)], 3.0, epsilon = 1e-15);
        // Duplicates at distance 0, different labels, ξ=4 → 4/(0+2) = 2.
        let p = penalized_proximity(&two_points(0.0), &[0, 1], 4.0).unwrap();
        assert_abs_diff_eq!(p.matrix()[(0, 1)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_xi_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 12;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.gen_range(0.1..3.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let p = penalized_proximity(&geo(m.clone()), &labels, 0.0).unwrap();
        assert_eq!(p.matrix(), &m);
    }

    #[test]
    fn negative_xi_is_rejected() {
        assert!(penalized_proximity(&two_points(1.0), &[0, 1], -0.5).is_err());
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (GeodesicDistances, Vec<usize>, f64) {
        let n = rng.gen_range(5..20);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                // Includes exact duplicates with positive probability.
                let v = if rng.gen_bool(0.1) {
                    0.0
                } else {
                    rng.gen_range(0.0..5.0)
                };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let xi = if rng.gen_bool(0.2) {
            0.0
        } else {
            rng.gen_range(0.0..50.0)
        };
        (geo(m), labels, xi)
    }

    #[test]
    fn penalty_is_bounded_by_sqrt_xi() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let (g, labels, xi) = random_instance(&mut rng);
            let p = penalized_proximity(&g, &labels, xi).unwrap();
            for i in 0..g.n() {
                for j in 0..g.n() {
                    let bump = p.matrix()[(i, j)] - g.matrix()[(i, j)];
                    assert!(bump >= 0.0);
                    assert!(bump <= xi.sqrt() + 1e-12, "bump {bump} vs √ξ {}", xi.sqrt());
                }
            }
        }
    }

    #[test]
    fn cross_class_proximity_rank_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let (g, labels, xi) = random_instance(&mut rng);
            let p = penalized_proximity(&g, &labels, xi).unwrap();
            let n = g.n();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        if labels[i] == labels[j] || labels[i] == labels[k] {
                            continue;
                        }
                        if g.matrix()[(i, j)] < g.matrix()[(i, k)] {
                            assert!(
                                p.matrix()[(i, j)] < p.matrix()[(i, k)],
                                "rank flipped at ({i},{j},{k})"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mds_recovers_points_on_a_line() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0]);
        let p = penalized_proximity(&geo(m), &[0, 0, 0], 0.0).unwrap();
        let e = classical_mds(&p, 1).unwrap();
        let zs: Vec<f64> = e.coords.column(0).iter().copied().collect();
        // {−1, 0, 1} up to a global sign.
        let sign = if zs[2] >= 0.0 { 1.0 } else { -1.0 };
        assert_abs_diff_eq!(sign * zs[0], -1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(zs[1], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sign * zs[2], 1.0, epsilon = 1e-10);
        assert!(e.epsilon_mds < 1e-10);
    }

    #[test]
    fn mds_of_zero_matrix_is_zero() {
        let p = penalized_proximity(&geo(DMatrix::zeros(4, 4)), &[0, 0, 0, 0], 0.0).unwrap();
        let e = classical_mds(&p, 2).unwrap();
        assert!(e.coords.iter().all(|&v| v == 0.0));
        assert_eq!(e.epsilon_mds, 0.0);
    }

    #[test]
    fn mds_reproduces_euclidean_clouds_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let n = 50;
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])
                .collect();
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i + 1..n {
                    let v = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2))
                        .sqrt();
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            let p = penalized_proximity(&geo(m), &vec![0; n], 0.0).unwrap();
            let e = classical_mds(&p, 2).unwrap();
            assert!(e.epsilon_mds < 1e-8, "epsilon_mds = {}", e.epsilon_mds);
            // Centering invariant.
            for k in 0..2 {
                assert!(e.coords.column(k).sum().abs() / n as f64 <= 1e-9);
            }
        }
    }

    #[test]
    fn non_euclidean_input_is_clipped_not_nan() {
        // A hub at distance 1 from three points that are pairwise 2 apart
        // cannot be embedded in any Euclidean space.
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 1.0, 1.0, //
                1.0, 0.0, 2.0, 2.0, //
                1.0, 2.0, 0.0, 2.0, //
                1.0, 2.0, 2.0, 0.0,
            ],
        );
        let p = penalized_proximity(&geo(m), &[0; 4], 0.0).unwrap();
        let e = classical_mds(&p, 3).unwrap();
        assert!(e.clipped_mass > 0.0);
        assert!(e.coords.iter().all(|v| v.is_finite()));
        assert!(e.epsilon_mds > 0.0);
        assert_eq!(e.eigenvalues.len(), 4);
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mds_dimension_bounds() {
        let p = penalized_proximity(&two_points(1.0), &[0, 0], 0.0).unwrap();
        assert!(classical_mds(&p, 0).is_err());
        assert!(classical_mds(&p, 2).is_err());
        assert!(classical_mds(&p, 1).is_ok());
    }

    #[test]
    fn procrustes_zeroes_out_rigid_motions() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let a = DMatrix::from_fn(30, 2, |_, _| rng.gen_range(-2.0..2.0));
        // Rotate by θ, reflect, scale by 1.7, and translate.
        let theta: f64 = 0.83;
        let rot = DMatrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        );
        let reflect = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let mut b = &a * rot * reflect * 1.7;
        for i in 0..b.nrows() {
            b[(i, 0)] += 5.0;
            b[(i, 1)] -= 3.0;
        }
        let with_scale = procrustes_error(&a, &b, true).unwrap();
        assert!(with_scale < 1e-10, "residual {with_scale}");
        // Without scaling the 1.7 factor must show up.
        let rigid_only = procrustes_error(&a, &b, false).unwrap();
        assert!(rigid_only > 0.5, "residual {rigid_only}");
    }

    #[test]
    fn procrustes_rejects_mismatched_clouds() {
        let a = DMatrix::zeros(4, 2);
        let b = DMatrix::zeros(5, 2);
        assert!(procrustes_error(&a, &b, false).is_err());
        let c = DMatrix::zeros(4, 3);
        assert!(procrustes_error(&a, &c, false).is_err());
    }
}
