//! Supervised manifold learning for functional data.
//!
//! `fsml` classifies curves observed as noisy discrete samples. The method
//! assumes the underlying smooth curves concentrate near a low-dimensional
//! manifold in L²; it then
//!
//! 1. recovers each curve with a ridged local-linear smoother ([`fda`]),
//! 2. builds a connected neighbor graph and estimates geodesic distances by
//!    parallel-transport unfolding of shortest paths ([`geometry`]),
//! 3. penalizes distances between differently labeled curves and embeds the
//!    result with classical MDS ([`embedding`]),
//! 4. extends the embedding out of sample with a tangent-space local-linear
//!    coordinate map ([`interpolate`]),
//! 5. classifies embedded points with k-NN, LDA or a linear SVM
//!    ([`classify`]),
//!
//! with the penalty ξ and regression bandwidth h selected by nested
//! cross-validation ([`tuning`]). [`pipeline`] wires the stages into a
//! fit/predict API with a persistent model format, [`synth`] provides the
//! seeded simulation models used for benchmarking, and [`report`] renders
//! diagnostics and plot-ready sweeps.
//!
//! Everything is deterministic: fixed seeds, fixed tie-breaking rules and
//! schedule-independent parallelism make repeated runs bit-identical.

pub mod classify;
pub mod embedding;
pub mod error;
pub mod fda;
pub mod geometry;
pub mod interpolate;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod tuning;

pub use error::{FsmlError, Result};
