//! Geodesic distances by unfolding graph paths through tangent frames.
//!
//! Each graph edge is projected onto the tangent space at its head vertex,
//! transported along the remaining path with the parallel-transport
//! operators, and the transported edge vectors are summed; the norm of the
//! aggregate is the unfolded distance. Both traversal directions of the
//! same shortest path are averaged, which symmetrizes the matrix exactly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{FsmlError, Result};
use crate::fda::Curve;
use crate::geometry::graph::{dijkstra, NeighborGraph};
use crate::geometry::tangent::{transport_operator, TangentFrame};

/// One shortest path with its per-edge difference curves
/// V̂_{i_k} = X̂_{i_{k−1}} − X̂_{i_k} (attached at the edge's head i_k).
#[derive(Clone, Debug)]
pub struct GeodesicPath {
    vertices: Vec<usize>,
    edge_vectors: Vec<Curve>,
}

impl GeodesicPath {
    /// Builds the path through the given vertex sequence.
    pub fn from_vertices(vertices: Vec<usize>, curves: &[Curve]) -> Result<Self> {
        if vertices.is_empty() {
            return Err(FsmlError::parameter("a path needs at least one vertex"));
        }
        if let Some(&bad) = vertices.iter().find(|&&v| v >= curves.len()) {
            return Err(FsmlError::parameter(format!(
                "path vertex {bad} out of range for {} curves",
                curves.len()
            )));
        }
        let edge_vectors = vertices
            .windows(2)
            .map(|w| curves[w[0]].minus(&curves[w[1]]))
            .collect::<Result<Vec<Curve>>>()?;
        Ok(GeodesicPath {
            vertices,
            edge_vectors,
        })
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    /// Difference curves, one per edge (empty for a single-vertex path).
    pub fn edge_vectors(&self) -> &[Curve] {
        &self.edge_vectors
    }
}

/// Unfolds a path into the terminal tangent space and returns the norm of
/// the aggregated edge vector.
pub fn unfolded_geodesic_distance(path: &GeodesicPath, frames: &[TangentFrame]) -> Result<f64> {
    let verts = path.vertices();
    if let Some(&bad) = verts.iter().find(|&&v| v >= frames.len()) {
        return Err(FsmlError::parameter(format!(
            "path vertex {bad} has no tangent frame"
        )));
    }
    if verts.len() == 1 {
        return Ok(0.0);
    }
    // s accumulates, in the frame of the current vertex i_k, the sum of all
    // edge vectors seen so far.
    let mut s = frames[verts[1]].project(&path.edge_vectors()[0])?;
    for k in 2..verts.len() {
        let r = transport_operator(&frames[verts[k - 1]], &frames[verts[k]])?;
        s = r * s + frames[verts[k]].project(&path.edge_vectors()[k - 1])?;
    }
    Ok(s.norm())
}

/// Per-directed-edge cache: for the edge a→b (stored at b, aligned with the
/// graph's sorted neighbor list) holds the transport R_{b,a} and the tangent
/// projection of X̂_a − X̂_b at b.
pub struct EdgeTransports {
    per_vertex: Vec<Vec<(DMatrix<f64>, DVector<f64>)>>,
}

impl EdgeTransports {
    fn get(&self, b: usize, slot: usize) -> &(DMatrix<f64>, DVector<f64>) {
        &self.per_vertex[b][slot]
    }
}

/// Precomputes transports and head projections for every directed edge.
pub fn edge_transports(
    graph: &NeighborGraph,
    frames: &[TangentFrame],
    curves: &[Curve],
) -> Result<EdgeTransports> {
    let n = graph.n();
    if frames.len() != n || curves.len() != n {
        return Err(FsmlError::parameter(
            "graph, frames, and curves must agree on n",
        ));
    }
    let per_vertex = (0..n)
        .into_par_iter()
        .map(|b| {
            graph
                .neighbors(b)
                .iter()
                .map(|&(a, _)| {
                    let r = transport_operator(&frames[a], &frames[b])?;
                    let diff = curves[a].minus(&curves[b])?;
                    let p = frames[b].project(&diff)?;
                    Ok((r, p))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EdgeTransports { per_vertex })
}

/// Symmetric matrix of unfolded geodesic distances.
#[derive(Clone, Debug)]
pub struct GeodesicDistances {
    matrix: DMatrix<f64>,
}

impl GeodesicDistances {
    /// Wraps an existing matrix, validating the type invariants (square,
    /// finite, nonnegative, zero diagonal, exactly symmetric).
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(FsmlError::parameter("geodesic matrix must be square"));
        }
        for i in 0..n {
            if matrix[(i, i)] != 0.0 {
                return Err(FsmlError::InvalidState(format!(
                    "geodesic matrix diagonal entry {i} is {}",
                    matrix[(i, i)]
                )));
            }
            for j in 0..n {
                let v = matrix[(i, j)];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(FsmlError::InvalidState(format!(
                        "geodesic matrix entry ({i}, {j}) is {v}"
                    )));
                }
                if matrix[(i, j)] != matrix[(j, i)] {
                    return Err(FsmlError::InvalidState(format!(
                        "geodesic matrix is asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(GeodesicDistances { matrix })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Computes the full unfolded geodesic distance matrix. For every pair the
/// shortest path from the smaller-index endpoint's Dijkstra tree is unfolded
/// in both directions and the two norms are averaged.
pub fn geodesic_distance_matrix(
    curves: &[Curve],
    graph: &NeighborGraph,
    frames: &[TangentFrame],
) -> Result<GeodesicDistances> {
    let n = graph.n();
    if curves.len() != n || frames.len() != n {
        return Err(FsmlError::parameter(
            "graph, frames, and curves must agree on n",
        ));
    }
    if n == 0 {
        return Ok(GeodesicDistances {
            matrix: DMatrix::zeros(0, 0),
        });
    }
    let d = frames[0].d();
    if frames.iter().any(|f| f.d() != d) {
        return Err(FsmlError::parameter("frames must share one dimension d"));
    }
    let transports = edge_transports(graph, frames, curves)?;

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|src| source_row(graph, &transports, d, src))
        .collect();

    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = rows[i][j];
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    Ok(GeodesicDistances { matrix })
}

/// Unfolded distances from `src` to every vertex, sharing path prefixes and
/// suffixes over the Dijkstra tree instead of re-walking each pair.
fn source_row(
    graph: &NeighborGraph,
    transports: &EdgeTransports,
    d: usize,
    src: usize,
) -> Vec<f64> {
    let n = graph.n();
    let (dist, pred) = dijkstra(graph, src);
    // Predecessors settle strictly earlier (weights are positive), so a
    // (distance, index) order processes every parent before its children.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));

    // slot_of[p] = position of p in the current vertex's neighbor list.
    let slot_of = |b: usize, a: usize| -> usize {
        graph
            .neighbors(b)
            .binary_search_by(|probe| probe.0.cmp(&a))
            .expect("tree edge is a graph edge")
    };

    // forward[v]: aggregate of the src→v path in frame v.
    // back[v]: aggregate of the reversed (v→src) path in frame src.
    // chain[v]: transport from frame v to frame src along the tree path.
    let mut forward: Vec<DVector<f64>> = vec![DVector::zeros(d); n];
    let mut back: Vec<DVector<f64>> = vec![DVector::zeros(d); n];
    let mut chain: Vec<DMatrix<f64>> = vec![DMatrix::identity(d, d); n];
    let mut out = vec![0.0; n];
    for &v in &order {
        if v == src {
            continue;
        }
        let p = pred[v] as usize;
        let (r_vp, proj_at_v) = transports.get(v, slot_of(v, p));
        forward[v] = r_vp * &forward[p] + proj_at_v;
        let (r_pv, proj_at_p) = transports.get(p, slot_of(p, v));
        back[v] = &back[p] + &chain[p] * proj_at_p;
        chain[v] = &chain[p] * r_pv;
        out[v] = (forward[v].norm() + back[v].norm()) / 2.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fda::{pairwise_l2, Grid};
    use crate::geometry::graph::dijkstra_all_paths;
    use crate::geometry::tangent::tests::{random_orthonormal_basis, random_smooth_curves};
    use crate::geometry::tangent::{local_pca, tangent_frames, Anchor};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Curves in an exact 2-dim affine subspace, plus their plane coords.
    fn flat_dataset(seed: u64, n: usize) -> (Vec<Curve>, Vec<[f64; 2]>) {
        let grid = Grid::uniform(0.0, 1.0, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_orthonormal_basis(&mut rng, &grid, 2);
        let mut coords = Vec::with_capacity(n);
        let curves = (0..n)
            .map(|_| {
                let a1: f64 = rng.gen_range(-2.0..2.0);
                let a2: f64 = rng.gen_range(-2.0..2.0);
                coords.push([a1, a2]);
                let vals: Vec<f64> = (0..grid.len())
                    .map(|gi| 1.0 + a1 * b[(gi, 0)] + a2 * b[(gi, 1)])
                    .collect();
                Curve::new(grid.clone(), vals).unwrap()
            })
            .collect();
        (curves, coords)
    }

    #[test]
    fn single_edge_distance_is_the_projection_norm() {
        let grid = Grid::uniform(0.0, 1.0, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let curves = random_smooth_curves(&mut rng, &grid, 12);
        let pairwise = pairwise_l2(&curves).unwrap();
        let frames = tangent_frames(&curves, &pairwise, 6, 2).unwrap();
        let path = GeodesicPath::from_vertices(vec![0, 1], &curves).unwrap();
        let d = unfolded_geodesic_distance(&path, &frames).unwrap();
        let proj = frames[1]
            .project(&curves[0].minus(&curves[1]).unwrap())
            .unwrap();
        assert!((d - proj.norm()).abs() < 1e-12);
        // Projection cannot lengthen the edge.
        assert!(d <= pairwise[(0, 1)] + 1e-10);
    }

    #[test]
    fn trivial_path_has_zero_distance() {
        let grid = Grid::uniform(0.0, 1.0, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let curves = random_smooth_curves(&mut rng, &grid, 8);
        let pairwise = pairwise_l2(&curves).unwrap();
        let frames = tangent_frames(&curves, &pairwise, 5, 2).unwrap();
        let path = GeodesicPath::from_vertices(vec![3], &curves).unwrap();
        assert_eq!(unfolded_geodesic_distance(&path, &frames).unwrap(), 0.0);
    }

    #[test]
    fn flat_subspace_unfolds_to_straight_line_l2() {
        let (curves, _) = flat_dataset(17, 30);
        let pairwise = pairwise_l2(&curves).unwrap();
        let frames = tangent_frames(&curves, &pairwise, 8, 2).unwrap();
        let graph = NeighborGraph::from_distances(&pairwise, 4).unwrap();
        let geo = geodesic_distance_matrix(&curves, &graph, &frames).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                assert!(
                    (geo.matrix()[(i, j)] - pairwise[(i, j)]).abs() < 1e-6,
                    "({i},{j}): unfolded {} vs straight {}",
                    geo.matrix()[(i, j)],
                    pairwise[(i, j)]
                );
            }
        }
    }

    #[test]
    fn flat_subspace_unfolds_along_any_path() {
        // Even a deliberately long path telescopes to the endpoint
        // difference when the data are flat.
        let (curves, _) = flat_dataset(19, 10);
        let frame = |i| local_pca(&curves, Anchor::Vertex(i), 10, 2).unwrap();
        let frames: Vec<_> = (0..10).map(frame).collect();
        let path = GeodesicPath::from_vertices(vec![0, 7, 3, 9, 1, 4], &curves).unwrap();
        let d = unfolded_geodesic_distance(&path, &frames).unwrap();
        let straight = crate::fda::l2_distance(&curves[0], &curves[4]).unwrap();
        assert!((d - straight).abs() < 1e-6, "{d} vs {straight}");
    }

    #[test]
    fn matrix_agrees_with_per_path_unfolding() {
        let grid = Grid::uniform(0.0, 1.0, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let curves = random_smooth_curves(&mut rng, &grid, 25);
        let pairwise = pairwise_l2(&curves).unwrap();
        let frames = tangent_frames(&curves, &pairwise, 7, 2).unwrap();
        let graph = NeighborGraph::from_distances(&pairwise, 3).unwrap();
        let geo = geodesic_distance_matrix(&curves, &graph, &frames).unwrap();
        let sp = dijkstra_all_paths(&graph);
        for i in 0..25 {
            for j in i + 1..25 {
                let verts = sp.path(i, j);
                let fwd = GeodesicPath::from_vertices(verts.clone(), &curves).unwrap();
                let mut rev_verts = verts;
                rev_verts.reverse();
                let rev = GeodesicPath::from_vertices(rev_verts, &curves).unwrap();
                let expect = (unfolded_geodesic_distance(&fwd, &frames).unwrap()
                    + unfolded_geodesic_distance(&rev, &frames).unwrap())
                    / 2.0;
                assert!(
                    (geo.matrix()[(i, j)] - expect).abs() < 1e-10,
                    "({i},{j}): {} vs {}",
                    geo.matrix()[(i, j)],
                    expect
                );
            }
        }
    }

    #[test]
    fn unfolded_distance_never_exceeds_path_length() {
        let grid = Grid::uniform(0.0, 1.0, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let curves = random_smooth_curves(&mut rng, &grid, 30);
        let pairwise = pairwise_l2(&curves).unwrap();
        let frames = tangent_frames(&curves, &pairwise, 8, 2).unwrap();
        let graph = NeighborGraph::from_distances(&pairwise, 3).unwrap();
        let geo = geodesic_distance_matrix(&curves, &graph, &frames).unwrap();
        let sp = dijkstra_all_paths(&graph);
        for i in 0..30 {
            for j in 0..30 {
                assert!(geo.matrix()[(i, j)] <= sp.dist[(i, j)] + 1e-8);
            }
        }
    }

    #[test]
    fn matrix_invariants_hold() {
        let grid = Grid::uniform(0.0, 1.0, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let curves = random_smooth_curves(&mut rng, &grid, 20);
        let pairwise = pairwise_l2(&curves).unwrap();
        let frames = tangent_frames(&curves, &pairwise, 6, 2).unwrap();
        let graph = NeighborGraph::from_distances(&pairwise, 3).unwrap();
        let geo = geodesic_distance_matrix(&curves, &graph, &frames).unwrap();
        // Round-trips through the validating constructor.
        GeodesicDistances::from_matrix(geo.matrix().clone()).unwrap();
    }

    #[test]
    fn from_matrix_rejects_bad_input() {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 2.0;
        assert!(GeodesicDistances::from_matrix(m).is_err());
        let mut diag = DMatrix::zeros(2, 2);
        diag[(0, 0)] = 0.5;
        assert!(GeodesicDistances::from_matrix(diag).is_err());
    }
}
