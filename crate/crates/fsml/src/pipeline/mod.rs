//! End-to-end orchestration: smooth → graph → frames → geodesics → 𝔻ξ →
//! MDS → coordinate map → classifier head, plus model persistence.
//!
//! Every stage failure is annotated with the stage name. Fits are
//! deterministic given the seed and configuration regardless of thread
//! count, and the fitted model is immutable, so concurrent prediction is
//! safe.

mod bundle;

use std::time::Instant;

use nalgebra::DVector;

use crate::classify::{fit_head, ClassifierHead, HeadSpec};
use crate::embedding::{classical_mds, penalized_proximity, Embedding};
use crate::error::{FsmlError, Result};
use crate::fda::{
    pairwise_l2, smooth_dataset, Bandwidth, Curve, Grid, Kernel, LabeledDataset, SampledCurve,
    SmoothingConfig,
};
use crate::geometry::{
    estimate_intrinsic_dim_from_dists, geodesic_distance_matrix, tangent_frames,
    DimensionEstimate, GeodesicDistances, NeighborGraph,
};
use crate::interpolate::CoordinateMapModel;
use crate::tuning::{default_h_grid, default_xi_grid, CvOutcome, CvPlan, MapSettings};

pub use bundle::FORMAT_VERSION;

/// Version of the built-in defaults recorded in fitted models, bumped
/// whenever a default grid or constant changes meaning.
pub const DEFAULTS_VERSION: u32 = 1;

/// Everything `fit` needs to know; `Default` gives the documented defaults.
#[derive(Clone, Debug)]
pub struct FsmlConfig {
    /// Shared evaluation grid size (G).
    pub grid_points: usize,
    /// Grid endpoints; default to the observed time range.
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    /// Kernel for smoothing and for the interpolation weights.
    pub kernel: Kernel,
    /// Smoothing bandwidth policy.
    pub bandwidth: Bandwidth,
    /// Smoothing ridge; `None` uses J⁻² per curve.
    pub smooth_ridge: Option<f64>,
    /// Local-PCA neighborhood size.
    pub k_pca: usize,
    /// Neighbor-graph degree; `None` defaults to `k_pca`.
    pub k_graph: Option<usize>,
    /// Intrinsic dimension; `None` estimates it.
    pub d: Option<usize>,
    /// Label penalty; `None` selects it by nested CV.
    pub xi: Option<f64>,
    /// Interpolation bandwidth; `None` selects it by nested CV.
    pub h_reg: Option<f64>,
    /// Coordinate-map ridge λ_n; `None` uses n⁻³.
    pub map_ridge: Option<f64>,
    /// Classifier head.
    pub head: HeadSpec,
    /// Fold count L for the nested CV.
    pub cv_folds: usize,
    /// ξ candidates; `None` uses the geodesic-quantile grid.
    pub xi_grid: Option<Vec<f64>>,
    /// h candidates; `None` uses the log-spaced pairwise-distance grid.
    pub h_grid: Option<Vec<f64>>,
    /// Stratify CV folds by label.
    pub stratified: bool,
    /// Seed for fold assignment.
    pub seed: u64,
}

impl Default for FsmlConfig {
    fn default() -> Self {
        FsmlConfig {
            grid_points: 101,
            grid_min: None,
            grid_max: None,
            kernel: Kernel::Gaussian,
            bandwidth: Bandwidth::Plugin,
            smooth_ridge: None,
            k_pca: 15,
            k_graph: None,
            d: None,
            xi: None,
            h_reg: None,
            map_ridge: None,
            head: HeadSpec::Knn { k: 20 },
            cv_folds: 10,
            xi_grid: None,
            h_grid: None,
            stratified: true,
            seed: 0,
        }
    }
}

/// Provenance of a fit: what was searched, estimated, and how long each
/// stage took.
#[derive(Clone, Debug)]
pub struct FitMetadata {
    pub seed: u64,
    pub defaults_version: u32,
    /// ξ grid actually searched (singleton when ξ was fixed).
    pub xi_grid: Vec<f64>,
    /// h grid actually searched (singleton when h_reg was fixed).
    pub h_grid: Vec<f64>,
    /// Nested-CV outcome when tuning ran.
    pub cv: Option<CvOutcome>,
    /// Intrinsic-dimension diagnostics when d was estimated.
    pub dim: Option<DimensionEstimate>,
    /// (stage, seconds) in execution order.
    pub timings: Vec<(String, f64)>,
}

/// A fitted FSML model: everything needed to embed, interpolate, and
/// classify new curves.
#[derive(Clone, Debug)]
pub struct FsmlModel {
    ids: Vec<String>,
    dataset: LabeledDataset,
    d: usize,
    d_estimated: bool,
    k_pca: usize,
    k_graph: usize,
    xi: f64,
    kernel: Kernel,
    bandwidth: Bandwidth,
    smooth_ridge: Option<f64>,
    distances: GeodesicDistances,
    embedding: Embedding,
    map: CoordinateMapModel,
    head_spec: HeadSpec,
    head: ClassifierHead,
    metadata: FitMetadata,
}

impl FsmlModel {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Smoothed training curves and labels.
    pub fn dataset(&self) -> &LabeledDataset {
        &self.dataset
    }

    pub fn grid(&self) -> &Grid {
        self.dataset.grid()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_estimated(&self) -> bool {
        self.d_estimated
    }

    pub fn k_pca(&self) -> usize {
        self.k_pca
    }

    pub fn k_graph(&self) -> usize {
        self.k_graph
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn h_reg(&self) -> f64 {
        self.map.h_reg()
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn head_spec(&self) -> HeadSpec {
        self.head_spec
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn distances(&self) -> &GeodesicDistances {
        &self.distances
    }

    pub fn map(&self) -> &CoordinateMapModel {
        &self.map
    }

    pub fn metadata(&self) -> &FitMetadata {
        &self.metadata
    }

    /// Smooths one raw query with the training smoother settings (the
    /// bandwidth policy is applied to the query's own observations).
    pub fn smooth_query(&self, raw: &SampledCurve) -> Result<Curve> {
        let cfg = SmoothingConfig {
            kernel: self.kernel,
            bandwidth: self.bandwidth,
            ridge: self.smooth_ridge,
        };
        Ok(smooth_dataset(std::slice::from_ref(raw), self.grid(), &cfg)?.remove(0))
    }

    /// μ̂ coordinates for already-smoothed queries on the model grid.
    pub fn interpolate(&self, curves: &[Curve]) -> Result<Vec<DVector<f64>>> {
        self.map.interpolate_batch(curves)
    }

    /// Classifies already-smoothed queries.
    pub fn predict_curves(&self, curves: &[Curve]) -> Result<Vec<usize>> {
        let coords = self.interpolate(curves)?;
        coords.iter().map(|z| self.head.predict(z)).collect()
    }

    /// Smooths raw queries onto the model grid, then classifies them.
    pub fn predict_raw(&self, raw: &[SampledCurve]) -> Result<Vec<usize>> {
        let curves = self.smooth_queries(raw)?;
        self.predict_curves(&curves)
    }

    /// Smooths a batch of raw queries onto the model grid.
    pub fn smooth_queries(&self, raw: &[SampledCurve]) -> Result<Vec<Curve>> {
        let cfg = SmoothingConfig {
            kernel: self.kernel,
            bandwidth: self.bandwidth,
            ridge: self.smooth_ridge,
        };
        smooth_dataset(raw, self.grid(), &cfg)
    }

    /// Per-class scores of a query embedding, when the head exposes them.
    pub fn scores(&self, z: &DVector<f64>) -> Option<Vec<(usize, f64)>> {
        self.head.scores(z)
    }

    /// Persists the model as a directory bundle.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        bundle::save(self, dir)
    }

    /// Loads a model bundle written by [`FsmlModel::save`].
    pub fn load(dir: &std::path::Path) -> Result<FsmlModel> {
        bundle::load(dir)
    }
}

fn validate_config(config: &FsmlConfig) -> Result<()> {
    if config.k_pca < 2 {
        return Err(FsmlError::parameter("k_pca must be at least 2"));
    }
    if let Some(k) = config.k_graph {
        if k < 1 {
            return Err(FsmlError::parameter("k_graph must be at least 1"));
        }
    }
    if config.cv_folds < 2 {
        return Err(FsmlError::parameter("cv_folds must be at least 2"));
    }
    if let Some(xi) = config.xi {
        if !(xi.is_finite() && xi >= 0.0) {
            return Err(FsmlError::parameter("ξ must be nonnegative and finite"));
        }
    }
    if let Some(h) = config.h_reg {
        if !(h.is_finite() && h > 0.0) {
            return Err(FsmlError::parameter("h_reg must be positive and finite"));
        }
    }
    Ok(())
}

/// Smoothed curves plus the full-sample geometry — the expensive prefix of
/// a fit, reusable for embedding-only runs and for resuming.
pub struct GeometryArtifacts {
    pub ids: Vec<String>,
    pub dataset: LabeledDataset,
    pub distances: GeodesicDistances,
    pub d: usize,
    pub dim: Option<DimensionEstimate>,
    timings: Vec<(String, f64)>,
}

/// Runs smooth → dimension → graph → frames → geodesics.
pub fn prepare_geometry(
    raw: &[SampledCurve],
    labels: &[usize],
    config: &FsmlConfig,
) -> Result<GeometryArtifacts> {
    validate_config(config)?;
    if raw.len() < 2 {
        return Err(FsmlError::InsufficientData {
            needed: 2,
            got: raw.len(),
        });
    }
    if raw.len() != labels.len() {
        return Err(FsmlError::parameter(format!(
            "{} curves vs {} labels",
            raw.len(),
            labels.len()
        )));
    }
    let mut timings = Vec::new();

    let start = Instant::now();
    let t_min = config.grid_min.unwrap_or_else(|| {
        raw.iter()
            .map(|c| c.times()[0])
            .fold(f64::INFINITY, f64::min)
    });
    let t_max = config.grid_max.unwrap_or_else(|| {
        raw.iter()
            .map(|c| *c.times().last().expect("nonempty"))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let grid = Grid::uniform(t_min, t_max, config.grid_points).map_err(|e| e.in_stage("smooth"))?;
    let smoothing = SmoothingConfig {
        kernel: config.kernel,
        bandwidth: config.bandwidth,
        ridge: config.smooth_ridge,
    };
    let curves = smooth_dataset(raw, &grid, &smoothing).map_err(|e| e.in_stage("smooth"))?;
    let class_count = labels.iter().max().map_or(1, |&m| m + 1);
    let dataset = LabeledDataset::new(curves, labels.to_vec(), class_count)
        .map_err(|e| e.in_stage("smooth"))?;
    timings.push(("smooth".to_string(), start.elapsed().as_secs_f64()));

    let ids: Vec<String> = raw.iter().map(|c| c.id().to_string()).collect();
    let artifacts = geometry_of(dataset, config, timings)?;
    Ok(GeometryArtifacts { ids, ..artifacts })
}

/// Geometry stages for an already-smoothed dataset.
fn geometry_of(
    dataset: LabeledDataset,
    config: &FsmlConfig,
    mut timings: Vec<(String, f64)>,
) -> Result<GeometryArtifacts> {
    let start = Instant::now();
    let pairwise = pairwise_l2(dataset.curves()).map_err(|e| e.in_stage("dimension"))?;
    let (d, dim) = match config.d {
        Some(d) => (d, None),
        None => {
            let est =
                estimate_intrinsic_dim_from_dists(&pairwise).map_err(|e| e.in_stage("dimension"))?;
            (est.dim, Some(est))
        }
    };
    if d < 1 || d + 1 > dataset.n() {
        return Err(FsmlError::parameter(format!(
            "intrinsic dimension d = {d} out of range for n = {}",
            dataset.n()
        ))
        .in_stage("dimension"));
    }
    timings.push(("dimension".to_string(), start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let k_graph = config.k_graph.unwrap_or(config.k_pca);
    let graph =
        NeighborGraph::from_distances(&pairwise, k_graph).map_err(|e| e.in_stage("graph"))?;
    timings.push(("graph".to_string(), start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let frames = tangent_frames(dataset.curves(), &pairwise, config.k_pca, d)
        .map_err(|e| e.in_stage("frames"))?;
    timings.push(("frames".to_string(), start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let distances = geodesic_distance_matrix(dataset.curves(), &graph, &frames)
        .map_err(|e| e.in_stage("geodesics"))?;
    timings.push(("geodesics".to_string(), start.elapsed().as_secs_f64()));

    Ok(GeometryArtifacts {
        ids: Vec::new(),
        dataset,
        distances,
        d,
        dim,
        timings,
    })
}

/// Fits the full pipeline on raw observations.
pub fn fit(raw: &[SampledCurve], labels: &[usize], config: &FsmlConfig) -> Result<FsmlModel> {
    let artifacts = prepare_geometry(raw, labels, config)?;
    fit_from_artifacts(artifacts, config)
}

/// Resumes a fit from an already-smoothed dataset and its saved geodesic
/// distance matrix, skipping the geometry stages.
pub fn fit_from_distances(
    ids: Vec<String>,
    dataset: LabeledDataset,
    distances: GeodesicDistances,
    config: &FsmlConfig,
) -> Result<FsmlModel> {
    validate_config(config)?;
    if distances.n() != dataset.n() {
        return Err(FsmlError::parameter(format!(
            "{} distance rows for {} curves",
            distances.n(),
            dataset.n()
        )));
    }
    if ids.len() != dataset.n() {
        return Err(FsmlError::parameter(format!(
            "{} ids for {} curves",
            ids.len(),
            dataset.n()
        )));
    }
    let (d, dim) = match config.d {
        Some(d) => (d, None),
        None => {
            let pairwise =
                pairwise_l2(dataset.curves()).map_err(|e| e.in_stage("dimension"))?;
            let est =
                estimate_intrinsic_dim_from_dists(&pairwise).map_err(|e| e.in_stage("dimension"))?;
            (est.dim, Some(est))
        }
    };
    let artifacts = GeometryArtifacts {
        ids,
        dataset,
        distances,
        d,
        dim,
        timings: Vec::new(),
    };
    fit_from_artifacts(artifacts, config)
}

/// Tuning → embedding → coordinate map → head.
pub fn fit_from_artifacts(
    artifacts: GeometryArtifacts,
    config: &FsmlConfig,
) -> Result<FsmlModel> {
    let GeometryArtifacts {
        ids,
        dataset,
        distances,
        d,
        dim,
        mut timings,
    } = artifacts;

    let start = Instant::now();
    let map_settings = MapSettings {
        d,
        k_pca: config.k_pca,
        kernel: config.kernel,
        ridge: config.map_ridge,
    };
    let (xi, h_reg, xi_grid, h_grid, cv) = match (config.xi, config.h_reg) {
        (Some(xi), Some(h)) => (xi, h, vec![xi], vec![h], None),
        (fixed_xi, fixed_h) => {
            let xi_grid = match fixed_xi {
                Some(xi) => vec![xi],
                None => config
                    .xi_grid
                    .clone()
                    .unwrap_or_else(|| default_xi_grid(&distances)),
            };
            let h_grid = match fixed_h {
                Some(h) => vec![h],
                None => match &config.h_grid {
                    Some(g) => g.clone(),
                    None => default_h_grid(dataset.curves()).map_err(|e| e.in_stage("tuning"))?,
                },
            };
            let plan = CvPlan {
                folds: config.cv_folds,
                xi_grid: xi_grid.clone(),
                h_grid: h_grid.clone(),
                seed: config.seed,
                stratified: config.stratified,
            };
            let outcome =
                crate::tuning::nested_cv_select(&dataset, &distances, &plan, config.head, &map_settings)
                    .map_err(|e| e.in_stage("tuning"))?;
            let xi = fixed_xi.unwrap_or(outcome.xi);
            let h = fixed_h.unwrap_or(outcome.h_reg);
            (xi, h, xi_grid, h_grid, Some(outcome))
        }
    };
    timings.push(("tuning".to_string(), start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let prox = penalized_proximity(&distances, dataset.labels(), xi)
        .map_err(|e| e.in_stage("embedding"))?;
    let embedding = classical_mds(&prox, d).map_err(|e| e.in_stage("embedding"))?;
    timings.push(("embedding".to_string(), start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let map = CoordinateMapModel::new(
        dataset.curves().to_vec(),
        embedding.coords.clone(),
        config.kernel,
        h_reg,
        config.k_pca,
        config.map_ridge,
    )
    .map_err(|e| e.in_stage("map"))?;
    timings.push(("map".to_string(), start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let head =
        fit_head(config.head, &embedding.coords, dataset.labels()).map_err(|e| e.in_stage("head"))?;
    timings.push(("head".to_string(), start.elapsed().as_secs_f64()));

    Ok(FsmlModel {
        ids,
        k_graph: config.k_graph.unwrap_or(config.k_pca),
        dataset,
        d,
        d_estimated: dim.is_some(),
        k_pca: config.k_pca,
        xi,
        kernel: config.kernel,
        bandwidth: config.bandwidth,
        smooth_ridge: config.smooth_ridge,
        distances,
        embedding,
        map,
        head_spec: config.head,
        head,
        metadata: FitMetadata {
            seed: config.seed,
            defaults_version: DEFAULTS_VERSION,
            xi_grid,
            h_grid,
            cv,
            dim,
            timings,
        },
    })
}

/// Embedding-only run: geometry, penalty, and MDS without tuning or heads.
/// The artifacts carry ids, smoothed curves, geodesic distances, and any
/// dimension diagnostics for export.
pub fn embed(
    raw: &[SampledCurve],
    labels: &[usize],
    xi: f64,
    config: &FsmlConfig,
) -> Result<(GeometryArtifacts, Embedding)> {
    let artifacts = prepare_geometry(raw, labels, config)?;
    let prox = penalized_proximity(&artifacts.distances, artifacts.dataset.labels(), xi)
        .map_err(|e| e.in_stage("embedding"))?;
    let embedding = classical_mds(&prox, artifacts.d).map_err(|e| e.in_stage("embedding"))?;
    Ok((artifacts, embedding))
}
