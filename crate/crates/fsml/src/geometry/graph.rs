//! Neighbor graph with guaranteed connectivity, and exact shortest paths.
//!
//! The adjacency rule is a symmetric k-NN graph under L2 distance (an edge
//! exists when either endpoint ranks the other among its k nearest). When
//! that graph is disconnected, edges of the Euclidean minimum spanning tree
//! over all n points are added in ascending weight order until one component
//! remains, so downstream shortest-path code never sees infinities.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{FsmlError, Result};
use crate::fda::{pairwise_l2, Curve};

/// Weight assigned to zero-distance duplicate pairs: zero-weight edges are
/// forbidden, so they are floored here (with a warning).
pub const ZERO_WEIGHT_FLOOR: f64 = 1e-12;

/// Symmetric, connected weighted graph over the dataset indices.
#[derive(Clone, Debug)]
pub struct NeighborGraph {
    /// Adjacency lists sorted by neighbor index; `adj[i]` never contains `i`.
    adj: Vec<Vec<(usize, f64)>>,
    /// Bridges added by MST augmentation, if the k-NN graph was disconnected.
    mst_bridges: Vec<(usize, usize)>,
}

impl NeighborGraph {
    /// Builds the symmetric k-NN graph from a precomputed distance matrix,
    /// augmenting with MST edges until connected.
    pub fn from_distances(dist: &DMatrix<f64>, k_graph: usize) -> Result<Self> {
        let n = dist.nrows();
        if dist.ncols() != n {
            return Err(FsmlError::parameter("distance matrix must be square"));
        }
        if k_graph < 1 {
            return Err(FsmlError::parameter("k_graph must be at least 1"));
        }
        if n < k_graph + 1 {
            return Err(FsmlError::InsufficientData {
                needed: k_graph + 1,
                got: n,
            });
        }

        // Symmetric k-NN adjacency: deterministic neighbor ranking by
        // (distance, index).
        let mut edges: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
            for &j in order.iter().take(k_graph) {
                let (a, b) = (i.min(j), i.max(j));
                if !edges[a].contains(&b) {
                    edges[a].push(b);
                }
            }
        }

        let mut uf = UnionFind::new(n);
        let mut floored = 0usize;
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut push_edge = |adj: &mut Vec<Vec<(usize, f64)>>, a: usize, b: usize, d: f64| {
            let w = if d < ZERO_WEIGHT_FLOOR {
                floored += 1;
                ZERO_WEIGHT_FLOOR
            } else {
                d
            };
            adj[a].push((b, w));
            adj[b].push((a, w));
        };
        for a in 0..n {
            for idx in 0..edges[a].len() {
                let b = edges[a][idx];
                push_edge(&mut adj, a, b, dist[(a, b)]);
                uf.union(a, b);
            }
        }

        // MST augmentation (Kruskal over all pairs, ascending by
        // (weight, i, j)): adding only component-joining edges yields exactly
        // the MST bridges between k-NN components.
        let mut mst_bridges = Vec::new();
        if uf.components() > 1 {
            let mut all_pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect();
            all_pairs.sort_by(|&(a, b), &(c, d)| {
                dist[(a, b)]
                    .total_cmp(&dist[(c, d)])
                    .then(a.cmp(&c))
                    .then(b.cmp(&d))
            });
            for (a, b) in all_pairs {
                if uf.components() == 1 {
                    break;
                }
                if uf.union(a, b) {
                    push_edge(&mut adj, a, b, dist[(a, b)]);
                    mst_bridges.push((a, b));
                }
            }
        }

        if floored > 0 {
            log::warn!(
                "{floored} zero-distance pair(s) floored to edge weight {ZERO_WEIGHT_FLOOR}"
            );
        }
        for list in &mut adj {
            list.sort_by(|a, b| a.0.cmp(&b.0));
        }
        Ok(NeighborGraph { adj, mst_bridges })
    }

    /// Convenience constructor from curves (computes pairwise L2 first).
    pub fn build(curves: &[Curve], k_graph: usize) -> Result<Self> {
        let dist = pairwise_l2(curves)?;
        NeighborGraph::from_distances(&dist, k_graph)
    }

    /// Builds a graph directly from an explicit undirected edge list
    /// (weights floored like every other edge). Mostly useful for tests and
    /// for replaying stored graphs.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            if a == b || a >= n || b >= n {
                return Err(FsmlError::parameter(format!(
                    "edge ({a}, {b}) invalid for {n} vertices"
                )));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(FsmlError::parameter(format!(
                    "edge ({a}, {b}) has invalid weight {w}"
                )));
            }
            let w = w.max(ZERO_WEIGHT_FLOOR);
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        let mut uf = UnionFind::new(n);
        for (a, list) in adj.iter().enumerate() {
            for &(b, _) in list {
                uf.union(a, b);
            }
        }
        if uf.components() != 1 {
            return Err(FsmlError::InvalidState(
                "edge list does not describe a connected graph".into(),
            ));
        }
        for list in &mut adj {
            list.sort_by(|x, y| x.0.cmp(&y.0));
            list.dedup_by(|x, y| x.0 == y.0);
        }
        Ok(NeighborGraph {
            adj,
            mst_bridges: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    /// Neighbors of `i`, ascending by index.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    /// Bridges the MST augmentation had to add (empty when the k-NN graph
    /// was already connected).
    pub fn mst_bridges(&self) -> &[(usize, usize)] {
        &self.mst_bridges
    }

    /// Iterates undirected edges once each, as (i, j, w) with i < j.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj.iter().enumerate().flat_map(|(i, list)| {
            list.iter()
                .filter(move |&&(j, _)| j > i)
                .map(move |&(j, w)| (i, j, w))
        })
    }
}

/// Shortest-path trees from every source, produced by Dijkstra's algorithm.
#[derive(Clone, Debug)]
pub struct ShortestPaths {
    /// dist[(s, v)] = length of the shortest s→v path.
    pub dist: DMatrix<f64>,
    /// pred[s][v] = predecessor of v on the shortest path from s
    /// (u32::MAX at the source itself).
    pred: Vec<Vec<u32>>,
}

const NO_PRED: u32 = u32::MAX;

impl ShortestPaths {
    /// Reconstructs the vertex sequence from `from` to `to` (inclusive).
    /// Returns `[from]` when `from == to`.
    pub fn path(&self, from: usize, to: usize) -> Vec<usize> {
        let mut rev = vec![to];
        let mut v = to;
        while v != from {
            let p = self.pred[from][v];
            debug_assert_ne!(p, NO_PRED, "disconnected pair ({from}, {to})");
            v = p as usize;
            rev.push(v);
        }
        rev.reverse();
        rev
    }
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap via reversed comparison; ties pop the smaller vertex
        // index first, making the predecessor tree deterministic.
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from one source; exact distances and predecessor links.
pub fn dijkstra(graph: &NeighborGraph, source: usize) -> (Vec<f64>, Vec<u32>) {
    let n = graph.n();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![NO_PRED; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::with_capacity(n);
    dist[source] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
        if settled[u] {
            continue;
        }
        settled[u] = true;
        for &(v, w) in graph.neighbors(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                pred[v] = u as u32;
                heap.push(HeapEntry { dist: nd, node: v });
            }
        }
    }
    (dist, pred)
}

/// Shortest-path trees from all sources (parallel over sources).
pub fn dijkstra_all_paths(graph: &NeighborGraph) -> ShortestPaths {
    let n = graph.n();
    let per_source: Vec<(Vec<f64>, Vec<u32>)> =
        (0..n).into_par_iter().map(|s| dijkstra(graph, s)).collect();
    let mut dist = DMatrix::zeros(n, n);
    let mut pred = Vec::with_capacity(n);
    for (s, (d, p)) in per_source.into_iter().enumerate() {
        for (v, dv) in d.into_iter().enumerate() {
            dist[(s, v)] = dv;
        }
        pred.push(p);
    }
    ShortestPaths { dist, pred }
}

struct UnionFind {
    parent: Vec<usize>,
    components: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            components: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        // Deterministic: smaller root wins.
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        self.components -= 1;
        true
    }

    fn components(&self) -> usize {
        self.components
    }
}
