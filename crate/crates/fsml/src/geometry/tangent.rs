//! Local-PCA tangent frames and parallel-transport operators.
//!
//! A tangent frame at an anchor point is the top-d eigenbasis of the local
//! empirical covariance over the anchor's k_pca nearest neighbors, computed
//! through the k_pca×k_pca Gram matrix (kernel trick on quadrature inner
//! products) so cost never scales with the square of the grid size. Frames
//! are orthonormal under the trapezoid inner product, with a deterministic
//! sign convention so repeated runs produce identical bases.

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;

use crate::error::{FsmlError, Result};
use crate::fda::{l2_distance, Curve, Grid};

/// Where a tangent frame is anchored.
#[derive(Clone, Debug)]
pub enum Anchor {
    /// A dataset vertex (index into the training curves).
    Vertex(usize),
    /// An arbitrary query curve, e.g. an out-of-sample point.
    Point(Curve),
    /// No dataset anchor (frames constructed directly from a basis).
    External,
}

/// Orthonormal basis of an estimated tangent space T̂ℳ at one anchor.
#[derive(Clone, Debug)]
pub struct TangentFrame {
    anchor: Anchor,
    grid: Grid,
    /// G×d; column k holds the grid values of basis function φ̂_k.
    basis: DMatrix<f64>,
    /// Local mean μ̂ over the neighborhood (zeros for external frames).
    local_mean: DVector<f64>,
    /// Local covariance eigenvalues, descending (one per neighbor).
    eigenvalues: Vec<f64>,
}

impl TangentFrame {
    /// Wraps an explicit basis (columns must be quadrature-orthonormal
    /// within 1e−6). Intended for synthetic frames in tests and tooling.
    pub fn from_basis(grid: Grid, basis: DMatrix<f64>) -> Result<Self> {
        let g = grid.len();
        let d = basis.ncols();
        if basis.nrows() != g {
            return Err(FsmlError::parameter(
                "basis rows must match the grid length",
            ));
        }
        if d == 0 || d > g {
            return Err(FsmlError::parameter("basis must have 1..=G columns"));
        }
        let w = grid.weights();
        for k in 0..d {
            for l in k..d {
                let mut dot = 0.0;
                for gi in 0..g {
                    dot += w[gi] * (basis[(gi, k)] * basis[(gi, l)]);
                }
                let target = if k == l { 1.0 } else { 0.0 };
                if (dot - target).abs() > 1e-6 {
                    return Err(FsmlError::InvalidState(format!(
                        "basis columns {k} and {l} are not orthonormal (inner product {dot})"
                    )));
                }
            }
        }
        Ok(TangentFrame {
            anchor: Anchor::External,
            local_mean: DVector::zeros(g),
            eigenvalues: Vec::new(),
            grid,
            basis,
        })
    }

    pub fn anchor(&self) -> &Anchor {
        &self.anchor
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Tangent dimension d.
    pub fn d(&self) -> usize {
        self.basis.ncols()
    }

    /// G×d matrix of basis values; column k is φ̂_k.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Basis functions as curves, in order.
    pub fn basis_curves(&self) -> Vec<Curve> {
        (0..self.d())
            .map(|k| {
                Curve::new(self.grid.clone(), self.basis.column(k).iter().copied().collect())
                    .expect("frame basis values are finite by construction")
            })
            .collect()
    }

    /// Local mean curve μ̂ of the neighborhood the frame was fit on.
    pub fn local_mean(&self) -> Curve {
        Curve::new(self.grid.clone(), self.local_mean.iter().copied().collect())
            .expect("local mean values are finite by construction")
    }

    /// Local covariance eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Tangent coordinates of a difference curve: (⟨V, φ̂_1⟩, …, ⟨V, φ̂_d⟩)ᵀ.
    pub fn project(&self, diff: &Curve) -> Result<DVector<f64>> {
        if !self.grid.same_as(diff.grid()) {
            return Err(FsmlError::GridMismatch);
        }
        Ok(self.project_values(diff.values()))
    }

    /// Projection without the grid check, for hot paths that already
    /// validated the dataset grid.
    pub(crate) fn project_values(&self, values: &[f64]) -> DVector<f64> {
        let w = self.grid.weights();
        let d = self.d();
        let mut coords = DVector::zeros(d);
        for k in 0..d {
            let mut acc = 0.0;
            for (gi, &v) in values.iter().enumerate() {
                acc += w[gi] * (self.basis[(gi, k)] * v);
            }
            coords[k] = acc;
        }
        coords
    }
}

/// Local PCA around an anchor: fits the tangent frame from the k_pca nearest
/// neighbors of the anchor under L2, centering on their local mean.
pub fn local_pca(curves: &[Curve], anchor: Anchor, k_pca: usize, d: usize) -> Result<TangentFrame> {
    let dists = match &anchor {
        Anchor::Vertex(i) => {
            let i = *i;
            if i >= curves.len() {
                return Err(FsmlError::parameter(format!(
                    "anchor vertex {i} out of range for {} curves",
                    curves.len()
                )));
            }
            curves
                .iter()
                .map(|c| l2_distance(&curves[i], c))
                .collect::<Result<Vec<f64>>>()?
        }
        Anchor::Point(x) => curves
            .iter()
            .map(|c| l2_distance(x, c))
            .collect::<Result<Vec<f64>>>()?,
        Anchor::External => {
            return Err(FsmlError::parameter(
                "local_pca needs a vertex or point anchor",
            ))
        }
    };
    local_pca_from_dists(curves, anchor, &dists, k_pca, d)
}

/// Local PCA with anchor-to-dataset distances already computed.
pub(crate) fn local_pca_from_dists(
    curves: &[Curve],
    anchor: Anchor,
    dists: &[f64],
    k_pca: usize,
    d: usize,
) -> Result<TangentFrame> {
    let n = curves.len();
    if d < 1 {
        return Err(FsmlError::parameter("tangent dimension d must be ≥ 1"));
    }
    if k_pca < d + 1 {
        return Err(FsmlError::parameter(format!(
            "k_pca = {k_pca} must be at least d+1 = {}",
            d + 1
        )));
    }
    if k_pca > n {
        return Err(FsmlError::InsufficientData {
            needed: k_pca,
            got: n,
        });
    }
    let grid = curves[0].grid().clone();
    let g = grid.len();
    if d > g {
        return Err(FsmlError::parameter(
            "tangent dimension cannot exceed the grid length",
        ));
    }

    // Deterministic neighborhood: k_pca nearest by (distance, index).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    let hood = &order[..k_pca];

    let mut local_mean = DVector::zeros(g);
    for &j in hood {
        for (gi, &v) in curves[j].values().iter().enumerate() {
            local_mean[gi] += v;
        }
    }
    local_mean /= k_pca as f64;

    // Centered neighborhood, G×k.
    let mut centered = DMatrix::zeros(g, k_pca);
    for (col, &j) in hood.iter().enumerate() {
        for (gi, &v) in curves[j].values().iter().enumerate() {
            centered[(gi, col)] = v - local_mean[gi];
        }
    }

    // Gram trick: the covariance operator shares its nonzero spectrum with
    // (1/k)·CᵀWC, and eigenfunctions are C·u for Gram eigenvectors u.
    let w = grid.weights();
    let mut weighted = centered.clone();
    for gi in 0..g {
        for col in 0..k_pca {
            weighted[(gi, col)] *= w[gi];
        }
    }
    let gram = centered.transpose() * &weighted;
    let eig = gram.symmetric_eigen();
    let mut idx: Vec<usize> = (0..k_pca).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<f64> = idx
        .iter()
        .map(|&j| eig.eigenvalues[j] / k_pca as f64)
        .collect();

    if k_pca > d && (eigenvalues[d - 1] - eigenvalues[d]).abs() <= 1e-12 {
        log::warn!(
            "local PCA eigenvalues {d} and {} coincide within 1e-12; tangent frame is not unique",
            d + 1
        );
    }

    // Candidate directions in eigenvalue order, re-orthonormalized by
    // modified Gram–Schmidt; canonical grid directions fill in whenever the
    // neighborhood does not span d directions (e.g. identical neighbors).
    let scale = eigenvalues[0].max(0.0).sqrt();
    let tol = (scale * 1e-10).max(1e-300);
    let eigen_candidates = idx.iter().map(|&j| &centered * eig.eigenvectors.column(j));
    let canonical = (0..g).map(|gi| {
        let mut e = DVector::zeros(g);
        e[gi] = 1.0;
        e
    });
    let mut basis = DMatrix::zeros(g, d);
    let mut accepted = 0;
    for mut cand in eigen_candidates.chain(canonical) {
        if accepted == d {
            break;
        }
        for k in 0..accepted {
            let mut dot = 0.0;
            for gi in 0..g {
                dot += w[gi] * (basis[(gi, k)] * cand[gi]);
            }
            for gi in 0..g {
                cand[gi] -= dot * basis[(gi, k)];
            }
        }
        let norm2: f64 = (0..g).map(|gi| w[gi] * cand[gi] * cand[gi]).sum();
        let norm = norm2.max(0.0).sqrt();
        if norm <= tol {
            continue;
        }
        // Sign convention: the component with largest absolute grid value
        // comes out positive.
        let mut arg = 0;
        for gi in 1..g {
            if cand[gi].abs() > cand[arg].abs() {
                arg = gi;
            }
        }
        let sign = if cand[arg] < 0.0 { -1.0 } else { 1.0 };
        for gi in 0..g {
            basis[(gi, accepted)] = sign * cand[gi] / norm;
        }
        accepted += 1;
    }
    if accepted < d {
        return Err(FsmlError::InvalidState(
            "could not complete an orthonormal tangent basis".into(),
        ));
    }

    Ok(TangentFrame {
        anchor,
        grid,
        basis,
        local_mean,
        eigenvalues,
    })
}

/// Fits tangent frames at every dataset vertex (parallel over anchors),
/// reusing a precomputed pairwise L2 matrix.
pub fn tangent_frames(
    curves: &[Curve],
    pairwise: &DMatrix<f64>,
    k_pca: usize,
    d: usize,
) -> Result<Vec<TangentFrame>> {
    let n = curves.len();
    if pairwise.nrows() != n || pairwise.ncols() != n {
        return Err(FsmlError::parameter(
            "pairwise matrix shape must match the dataset",
        ));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = pairwise.row(i).iter().copied().collect();
            local_pca_from_dists(curves, Anchor::Vertex(i), &row, k_pca, d)
        })
        .collect()
}

/// Parallel-transport operator R_{b,a} from frame `a` coordinates to frame
/// `b` coordinates: with Φ_ab(k,s)=⟨φ̂_ak, φ̂_bs⟩ and SVD Φ_ab=UΣVᵀ, the
/// operator is VUᵀ (the orthogonal factor closest to Φ_abᵀ).
pub fn transport_operator(frame_a: &TangentFrame, frame_b: &TangentFrame) -> Result<DMatrix<f64>> {
    if frame_a.d() != frame_b.d() {
        return Err(FsmlError::parameter(
            "transport requires frames of equal dimension",
        ));
    }
    if !frame_a.grid.same_as(&frame_b.grid) {
        return Err(FsmlError::GridMismatch);
    }
    let d = frame_a.d();
    let g = frame_a.grid.len();
    let w = frame_a.grid.weights();
    let mut phi = DMatrix::zeros(d, d);
    for k in 0..d {
        for s in 0..d {
            let mut acc = 0.0;
            for gi in 0..g {
                acc += w[gi] * (frame_a.basis[(gi, k)] * frame_b.basis[(gi, s)]);
            }
            phi[(k, s)] = acc;
        }
    }
    let svd = SVD::new(phi, true, true);
    if svd.singular_values.iter().any(|&s| s < 1e-12) {
        log::warn!("transport operator is rank-deficient (frames nearly orthogonal)");
    }
    let u = svd.u.expect("SVD with u requested");
    let v_t = svd.v_t.expect("SVD with v_t requested");
    Ok(v_t.transpose() * u.transpose())
}
