//! Functional-data core: grids, curves, L2 geometry, kernels, smoothing.

mod curve;
mod grid;
mod kernel;
mod smooth;

pub use curve::{
    l2_distance, pairwise_l2, trapezoid_inner_product, Curve, LabeledDataset, SampledCurve,
};
pub use grid::{Grid, MIN_GRID_LEN};
pub use kernel::Kernel;
pub use smooth::{
    loocv_bandwidth, plugin_bandwidth, ridged_local_linear_smooth, smooth_dataset, Bandwidth,
    SmoothingConfig,
};

