//! Manifold geometry: neighbor graph, tangent frames, intrinsic dimension,
//! and parallel-transport-unfolded geodesic distances.

mod dimension;
mod graph;
pub(crate) mod tangent;
mod unfold;

pub use dimension::{
    estimate_intrinsic_dim, estimate_intrinsic_dim_from_dists, DimensionEstimate, MIN_POINTS,
    MIN_VALID,
};
pub use graph::{
    dijkstra, dijkstra_all_paths, NeighborGraph, ShortestPaths, ZERO_WEIGHT_FLOOR,
};
pub use tangent::{local_pca, tangent_frames, transport_operator, Anchor, TangentFrame};
pub use unfold::{
    edge_transports, geodesic_distance_matrix, unfolded_geodesic_distance, EdgeTransports,
    GeodesicDistances, GeodesicPath,
};

pub(crate) use tangent::local_pca_from_dists;
