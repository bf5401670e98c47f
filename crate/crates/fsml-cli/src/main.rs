//! `fsml` — supervised manifold learning for functional data.
//!
//! Subcommands cover the full workflow: simulate benchmark data, fit and
//! persist a model, predict and embed new curves, and export benchmark
//! tables, penalty sweeps, and run reports.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use fsml::classify::HeadSpec;
use fsml::fda::{Bandwidth, Kernel};
use fsml::io;
use fsml::pipeline::{self, FsmlConfig, FsmlModel};
use fsml::report::{
    benchmark_run, report_from_bundle, xi_sweep_csv, BenchmarkSpec, RunReport, XiSweepSpec,
};
use fsml::synth::{generate, ModelId, SynthSpec};

#[derive(Parser)]
#[command(name = "fsml", version, about = "Label-aware manifold embeddings and classification for functional data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from one of the built-in models.
    Simulate(SimulateArgs),
    /// Fit a model on observed curves and save it as a directory bundle.
    Fit(FitArgs),
    /// Classify new curves with a saved model.
    Predict(PredictArgs),
    /// Compute a label-penalized embedding without fitting a classifier.
    Embed(EmbedArgs),
    /// Simulate, fit, and score over independent reps; print an error table.
    Benchmark(BenchmarkArgs),
    /// Test error across a √ξ grid with CV-chosen bandwidths.
    SweepXi(SweepXiArgs),
    /// Summarize a saved model bundle.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model id: i, ii, iii, iv, v, or example2.
    #[arg(long)]
    model: ModelId,
    /// Number of curves.
    #[arg(long)]
    n: usize,
    /// Observations per curve.
    #[arg(long = "J", default_value_t = 50)]
    j: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the observation-noise pass.
    #[arg(long)]
    no_noise: bool,
    /// Output CSV (long format `curve_id,t,value`).
    #[arg(long)]
    out: PathBuf,
    /// Labels CSV (`curve_id,label`).
    #[arg(long)]
    labels: PathBuf,
    /// Optional CSV of generating intrinsic coordinates.
    #[arg(long)]
    truth: Option<PathBuf>,
}

/// Flags shared by every command that rebuilds the geometry.
#[derive(Args)]
struct GeometryArgs {
    /// Evaluation grid size.
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    /// Grid range; defaults to the observed time range.
    #[arg(long)]
    grid_min: Option<f64>,
    #[arg(long)]
    grid_max: Option<f64>,
    /// Kernel for smoothing and interpolation: gaussian or epanechnikov.
    #[arg(long, default_value = "gaussian")]
    kernel: Kernel,
    /// Smoothing bandwidth: plugin, loocv, or a number.
    #[arg(long, default_value = "plugin")]
    bandwidth: Bandwidth,
    /// Smoothing ridge; defaults to J⁻² per curve.
    #[arg(long)]
    smooth_ridge: Option<f64>,
    /// Local-PCA neighborhood size.
    #[arg(long = "kpca", default_value_t = 15)]
    k_pca: usize,
    /// Neighbor-graph degree; defaults to --kpca.
    #[arg(long = "kgraph")]
    k_graph: Option<usize>,
    /// Intrinsic dimension: auto or a positive integer.
    #[arg(long, default_value = "auto")]
    d: String,
    /// Print the estimated dimension and per-point ratio diagnostics.
    #[arg(long)]
    dump_dim_diagnostics: bool,
}

impl GeometryArgs {
    fn apply(&self, config: &mut FsmlConfig) -> Result<()> {
        config.grid_points = self.grid_points;
        config.grid_min = self.grid_min;
        config.grid_max = self.grid_max;
        config.kernel = self.kernel;
        config.bandwidth = self.bandwidth;
        config.smooth_ridge = self.smooth_ridge;
        config.k_pca = self.k_pca;
        config.k_graph = self.k_graph;
        config.d = parse_auto(&self.d, "--d")?;
        Ok(())
    }
}

#[derive(Args)]
struct FitArgs {
    /// Training curves CSV (long format).
    #[arg(long)]
    curves: PathBuf,
    /// Labels CSV.
    #[arg(long)]
    labels: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Label penalty ξ: auto (nested CV) or a nonnegative number.
    #[arg(long, default_value = "auto")]
    xi: String,
    /// Interpolation bandwidth: auto (nested CV) or a positive number.
    #[arg(long = "hreg", default_value = "auto")]
    h_reg: String,
    /// Coordinate-map ridge λ; defaults to n⁻³.
    #[arg(long)]
    map_ridge: Option<f64>,
    /// Classifier head: knn<k>, lda, or svm<cost>.
    #[arg(long, default_value = "knn20", value_parser = parse_head)]
    head: HeadSpec,
    /// CV fold count.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// ξ candidates (comma-separated); default derives from the data.
    #[arg(long, value_delimiter = ',')]
    xi_grid: Option<Vec<f64>>,
    /// h candidates (comma-separated); default derives from the data.
    #[arg(long, value_delimiter = ',')]
    h_grid: Option<Vec<f64>>,
    /// Plain random CV folds instead of label-stratified ones.
    #[arg(long)]
    no_stratify: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model bundle.
    #[arg(long)]
    model: PathBuf,
    /// Query curves CSV (long format).
    #[arg(long)]
    curves: PathBuf,
    /// Predictions CSV (`curve_id,predicted_label[,score_<class>…]`).
    #[arg(long)]
    out: PathBuf,
    /// Also write interpolated coordinates (`curve_id,z1..zd`).
    #[arg(long)]
    coords_out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    curves: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Label penalty ξ.
    #[arg(long)]
    xi: f64,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Embedding CSV (`curve_id,z1..zd,label`).
    #[arg(long)]
    out: PathBuf,
    /// Optional geodesic distance matrix export.
    #[arg(long)]
    distances_out: Option<PathBuf>,
    /// Optional MDS eigenvalue export.
    #[arg(long)]
    eigenvalues_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    model: ModelId,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long = "J", default_value_t = 50)]
    j: usize,
    /// Independent test sample size per rep.
    #[arg(long, default_value_t = 500)]
    test_n: usize,
    /// Heads to score, comma-separated (knn<k>, lda, svm<cost>).
    #[arg(long, default_value = "knn20", value_delimiter = ',', value_parser = parse_head)]
    heads: Vec<HeadSpec>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Optional per-rep error CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepXiArgs {
    #[arg(long)]
    model: ModelId,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long = "J", default_value_t = 50)]
    j: usize,
    #[arg(long, default_value_t = 500)]
    test_n: usize,
    /// Ascending √ξ values, comma-separated.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    #[arg(long, default_value = "knn20", value_parser = parse_head)]
    head: HeadSpec,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Sweep CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved model bundle.
    #[arg(long)]
    model: PathBuf,
    /// Optional machine-readable CV cell export.
    #[arg(long)]
    cv_out: Option<PathBuf>,
}

fn parse_head(s: &str) -> Result<HeadSpec, String> {
    let t = s.trim().to_ascii_lowercase();
    if t == "lda" {
        return Ok(HeadSpec::Lda);
    }
    if let Some(rest) = t.strip_prefix("knn") {
        let k: usize = if rest.is_empty() {
            20
        } else {
            rest.parse().map_err(|e| format!("knn size: {e}"))?
        };
        if k == 0 {
            return Err("knn size must be positive".into());
        }
        return Ok(HeadSpec::Knn { k });
    }
    if let Some(rest) = t.strip_prefix("svm") {
        let cost: f64 = if rest.is_empty() {
            1.0
        } else {
            rest.parse().map_err(|e| format!("svm cost: {e}"))?
        };
        if !(cost.is_finite() && cost > 0.0) {
            return Err("svm cost must be positive".into());
        }
        return Ok(HeadSpec::Svm { cost });
    }
    Err(format!("unknown head `{s}` (expected knn<k>, lda, or svm<cost>)"))
}

fn parse_auto<T: std::str::FromStr>(s: &str, flag: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if s.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    s.parse::<T>()
        .map(Some)
        .map_err(|e| anyhow::anyhow!("{flag}: {e}"))
}

fn read_training_data(
    curves: &PathBuf,
    labels: &PathBuf,
) -> Result<(Vec<fsml::fda::SampledCurve>, Vec<usize>)> {
    let raw = io::read_curves_long(curves)
        .with_context(|| format!("reading {}", curves.display()))?;
    let ids: Vec<String> = raw.iter().map(|c| c.id().to_string()).collect();
    let pairs = io::read_labels_csv(labels)
        .with_context(|| format!("reading {}", labels.display()))?;
    let aligned = io::align_labels(&ids, &pairs)?;
    Ok((raw, aligned))
}

fn dump_dim_diagnostics(dim: Option<&fsml::geometry::DimensionEstimate>) {
    match dim {
        Some(est) => {
            println!(
                "dimension estimate: d = {} (d_hat = {}, {} valid ratios, {} used)",
                est.dim, est.d_hat, est.valid, est.used
            );
            println!("point,mu_ratio");
            for (i, r) in est.ratios.iter().enumerate() {
                match r {
                    Some(v) => println!("{i},{v}"),
                    None => println!("{i},"),
                }
            }
        }
        None => println!("dimension estimate: skipped (d was given)"),
    }
}

fn coords_matrix(coords: &[nalgebra::DVector<f64>]) -> DMatrix<f64> {
    let rows = coords.len();
    let cols = coords.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, cols, |i, j| coords[i][j])
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let data = generate(&SynthSpec {
        model: args.model,
        n: args.n,
        j: args.j,
        noise: !args.no_noise,
        seed: args.seed,
    })?;
    io::write_sampled_curves_long(&args.out, &data.curves)?;
    let ids: Vec<String> = data.curves.iter().map(|c| c.id().to_string()).collect();
    io::write_labels_csv(&args.labels, &ids, &data.labels)?;
    if let Some(truth) = &args.truth {
        match &data.intrinsic {
            Some(coords) => io::write_coords_csv(truth, &ids, coords)?,
            None => bail!("model {} exposes no intrinsic coordinates", args.model),
        }
    }
    println!(
        "wrote {} curves (J = {}, noise sd = {}) to {}",
        data.curves.len(),
        args.j,
        data.noise_sd,
        args.out.display()
    );
    Ok(())
}

fn run_fit(args: FitArgs) -> Result<()> {
    let (raw, labels) = read_training_data(&args.curves, &args.labels)?;
    let mut config = FsmlConfig {
        xi: parse_auto(&args.xi, "--xi")?,
        h_reg: parse_auto(&args.h_reg, "--hreg")?,
        map_ridge: args.map_ridge,
        head: args.head,
        cv_folds: args.folds,
        xi_grid: args.xi_grid.clone(),
        h_grid: args.h_grid.clone(),
        stratified: !args.no_stratify,
        seed: args.seed,
        ..FsmlConfig::default()
    };
    args.geometry.apply(&mut config)?;
    let model = pipeline::fit(&raw, &labels, &config)?;
    let heuristic = (model.dataset().n() as f64).powf(2.0 / (model.d() as f64 + 2.0));
    eprintln!(
        "hint: common neighborhood-size guidance is k_pca ≈ n^(2/(d+2)) = {heuristic:.0} here; using {}",
        model.k_pca()
    );
    if args.geometry.dump_dim_diagnostics {
        dump_dim_diagnostics(model.metadata().dim.as_ref());
    }
    model.save(&args.model)?;
    print!("{}", RunReport::from_model(&model).render());
    println!("saved model to {}", args.model.display());
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let model = FsmlModel::load(&args.model)?;
    let raw = io::read_curves_long(&args.curves)
        .with_context(|| format!("reading {}", args.curves.display()))?;
    let ids: Vec<String> = raw.iter().map(|c| c.id().to_string()).collect();
    let smoothed = model.smooth_queries(&raw)?;
    let coords = model.interpolate(&smoothed)?;
    let mut predictions = Vec::with_capacity(coords.len());
    let mut scores: Vec<Vec<(usize, f64)>> = Vec::new();
    for z in &coords {
        predictions.push(model.head().predict(z)?);
        if let Some(s) = model.scores(z) {
            scores.push(s);
        }
    }
    let score_block = if scores.len() == coords.len() && !scores.is_empty() {
        let classes: Vec<usize> = scores[0].iter().map(|(c, _)| *c).collect();
        let rows: Vec<Vec<f64>> = scores
            .iter()
            .map(|s| s.iter().map(|(_, v)| *v).collect())
            .collect();
        Some((classes, rows))
    } else {
        None
    };
    io::write_predictions_csv(
        &args.out,
        &ids,
        &predictions,
        score_block
            .as_ref()
            .map(|(c, r)| (c.as_slice(), r.as_slice())),
    )?;
    if let Some(path) = &args.coords_out {
        io::write_coords_csv(path, &ids, &coords_matrix(&coords))?;
    }
    println!("wrote {} predictions to {}", ids.len(), args.out.display());
    Ok(())
}

fn run_embed(args: EmbedArgs) -> Result<()> {
    let (raw, labels) = read_training_data(&args.curves, &args.labels)?;
    let mut config = FsmlConfig::default();
    args.geometry.apply(&mut config)?;
    let (artifacts, embedding) = pipeline::embed(&raw, &labels, args.xi, &config)?;
    if args.geometry.dump_dim_diagnostics {
        dump_dim_diagnostics(artifacts.dim.as_ref());
    }
    io::write_embedding_csv(
        &args.out,
        &artifacts.ids,
        &embedding.coords,
        artifacts.dataset.labels(),
    )?;
    if let Some(path) = &args.distances_out {
        io::write_matrix_csv(path, &artifacts.ids, artifacts.distances.matrix())?;
    }
    if let Some(path) = &args.eigenvalues_out {
        io::write_column_csv(path, "eigenvalue", &embedding.eigenvalues)?;
    }
    println!(
        "embedded {} curves into {} dimensions (epsilon_mds = {}, clipped mass = {})",
        artifacts.dataset.n(),
        embedding.coords.ncols(),
        embedding.epsilon_mds,
        embedding.clipped_mass
    );
    Ok(())
}

fn run_benchmark(args: BenchmarkArgs) -> Result<()> {
    let spec = BenchmarkSpec {
        test_n: args.test_n,
        folds: args.folds,
        ..BenchmarkSpec::new(args.model, args.n, args.j, args.heads.clone(), args.reps, args.seed)
    };
    let table = benchmark_run(&spec)?;
    print!("{}", table.render());
    if let Some(path) = &args.out {
        std::fs::write(path, table.csv())?;
    }
    Ok(())
}

fn run_sweep(args: SweepXiArgs) -> Result<()> {
    let spec = XiSweepSpec {
        model: args.model,
        n: args.n,
        j: args.j,
        test_n: args.test_n,
        sqrt_xi_grid: args.grid.clone(),
        head: args.head,
        reps: args.reps,
        seed: args.seed,
        folds: args.folds,
    };
    let rows = fsml::report::export_xi_sweep(&spec)?;
    let csv = xi_sweep_csv(&rows);
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            println!("wrote {} sweep rows to {}", rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<()> {
    let report = report_from_bundle(&args.model)?;
    print!("{}", report.render());
    if let Some(path) = &args.cv_out {
        match &report.cv {
            Some(cv) => std::fs::write(path, cv.csv())?,
            None => bail!("bundle has no CV results (ξ and h_reg were fixed)"),
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Simulate(args) => run_simulate(args),
        Command::Fit(args) => run_fit(args),
        Command::Predict(args) => run_predict(args),
        Command::Embed(args) => run_embed(args),
        Command::Benchmark(args) => run_benchmark(args),
        Command::SweepXi(args) => run_sweep(args),
        Command::Report(args) => run_report(args),
    }
}
