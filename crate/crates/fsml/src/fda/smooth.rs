//! Recovery of smooth curves from noisy discrete observations.
//!
//! The workhorse is a ridged local-linear kernel smoother: at every grid
//! point t it forms the weighted moments
//!
//! ```text
//! S_k = (1/J) Σ_j K((T_j−t)/h)·((T_j−t)/h)^k        k = 0, 1, 2
//! T_k = (1/J) Σ_j K((T_j−t)/h)·((T_j−t)/h)^k·X̃_j    k = 0, 1
//! ```
//!
//! and returns (T₀S₂ − T₁S₁) / (S₀S₂ − S₁² + ridge), where the ridge term
//! λ·sign(S₀S₂−S₁²) only engages when |S₀S₂−S₁²| < λ. With the default
//! λ = J⁻² the estimator never produces NaN/Inf on degenerate observation
//! designs (e.g. a cluster of identical times), at the price of a biased
//! value exactly there.
//!
//! Bandwidths come from a direct plug-in rule (global quartic pilot fit for
//! roughness and residual variance) or, as a fallback, leave-one-out CV.

use rayon::prelude::*;

use crate::error::{FsmlError, Result};
use crate::fda::curve::{Curve, SampledCurve};
use crate::fda::grid::Grid;
use crate::fda::kernel::Kernel;

/// How to pick the smoothing bandwidth for each curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// Direct plug-in rule (default).
    Plugin,
    /// Leave-one-out cross-validation over a log-spaced candidate grid.
    Loocv,
    /// A fixed bandwidth shared by all curves.
    Fixed(f64),
}

impl std::fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bandwidth::Plugin => write!(f, "plugin"),
            Bandwidth::Loocv => write!(f, "loocv"),
            Bandwidth::Fixed(h) => write!(f, "{h}"),
        }
    }
}

impl std::str::FromStr for Bandwidth {
    type Err = FsmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plugin" => Ok(Bandwidth::Plugin),
            "loocv" => Ok(Bandwidth::Loocv),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|h| h.is_finite() && *h > 0.0)
                .map(Bandwidth::Fixed)
                .ok_or_else(|| {
                    FsmlError::parameter(format!(
                        "bandwidth must be `plugin`, `loocv` or a positive number, got `{other}`"
                    ))
                }),
        }
    }
}

/// Settings shared by every curve of a dataset during smoothing.
#[derive(Clone, Debug)]
pub struct SmoothingConfig {
    pub kernel: Kernel,
    pub bandwidth: Bandwidth,
    /// Ridge λ; `None` uses the per-curve default J⁻².
    pub ridge: Option<f64>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            kernel: Kernel::Gaussian,
            bandwidth: Bandwidth::Plugin,
            ridge: None,
        }
    }
}

/// Ridged local-linear smooth of one raw curve onto `grid`.
///
/// # Errors
/// - `h ≤ 0` or `λ < 0` → [`FsmlError::InvalidParameter`];
/// - every kernel weight zero at some grid point (bandwidth far too small
///   for the design) → [`FsmlError::DegenerateFit`] naming that point.
pub fn ridged_local_linear_smooth(
    raw: &SampledCurve,
    grid: &Grid,
    kernel: Kernel,
    h: f64,
    lambda: f64,
) -> Result<Curve> {
    if !(h.is_finite() && h > 0.0) {
        return Err(FsmlError::parameter(format!("bandwidth h = {h} must be positive")));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(FsmlError::parameter(format!("ridge λ = {lambda} must be nonnegative")));
    }
    let inv_j = 1.0 / raw.len() as f64;
    let mut values = Vec::with_capacity(grid.len());
    for &t in grid.points() {
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&tj, &xj) in raw.times().iter().zip(raw.values()) {
            let u = (tj - t) / h;
            let k = kernel.eval(u);
            s0 += k;
            s1 += k * u;
            s2 += k * u * u;
            t0 += k * xj;
            t1 += k * u * xj;
        }
        s0 *= inv_j;
        s1 *= inv_j;
        s2 *= inv_j;
        t0 *= inv_j;
        t1 *= inv_j;
        if s0 == 0.0 {
            return Err(FsmlError::DegenerateFit { grid_point: t });
        }
        let mut den = s0 * s2 - s1 * s1;
        if den.abs() < lambda {
            // sign(0) counts as positive so the ridge always engages.
            den += if den < 0.0 { -lambda } else { lambda };
        }
        values.push((t0 * s2 - t1 * s1) / den);
    }
    Curve::new(grid.clone(), values)
}

/// Direct plug-in bandwidth.
///
/// Fits a global degree-4 polynomial pilot to estimate the residual
/// variance σ̂² and the roughness ∫(X̂″)², then returns
/// C_K·(σ̂²·|𝒯| / (∫(X̂″)²·J))^{1/5} clamped to
/// [2·max consecutive time spacing, |𝒯|/2]. Degenerate pilots (zero
/// roughness or zero residual variance) fall back to the relevant clamp.
///
/// # Errors
/// `J < 5` → [`FsmlError::InsufficientData`].
pub fn plugin_bandwidth(raw: &SampledCurve, kernel: Kernel) -> Result<f64> {
    let j = raw.len();
    if j < 5 {
        return Err(FsmlError::InsufficientData { needed: 5, got: j });
    }
    let span = raw.span();
    let upper = span / 2.0;
    let max_gap = raw
        .times()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    let lower = 2.0 * max_gap;
    if !(span > 0.0) {
        // All observations at one time: no scale to work with; any positive
        // bandwidth behaves identically, so return 1 and let the ridge cope.
        return Ok(1.0);
    }

    // Quartic pilot fit on times mapped to [-1, 1] for conditioning.
    let a = raw.times()[0];
    let scale = 2.0 / span;
    let design = nalgebra::DMatrix::from_fn(j, 5, |r, c| {
        let s = (raw.times()[r] - a) * scale - 1.0;
        s.powi(c as i32)
    });
    let y = nalgebra::DVector::from_column_slice(raw.values());
    let coeffs = design
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| FsmlError::InvalidState(format!("pilot polynomial fit failed: {e}")))?;
    let residuals = design * &coeffs - &y;
    let dof = (j as f64 - 5.0).max(1.0);
    let sigma2 = residuals.norm_squared() / dof;

    // Roughness ∫(X″)² dt of the pilot. With P(s) the fitted quartic in the
    // scaled variable, X″(t) = P″(s)·scale² and dt = ds/scale, so
    // ∫(X″)² dt = scale³·∫_{-1}^{1} (2c₂ + 6c₃s + 12c₄s²)² ds, which expands
    // analytically below.
    let (c2, c3, c4) = (coeffs[2], coeffs[3], coeffs[4]);
    let (qa, qb, qc) = (2.0 * c2, 6.0 * c3, 12.0 * c4);
    let integral =
        2.0 * qa * qa + 2.0 * qb * qb / 3.0 + 2.0 * qc * qc / 5.0 + 4.0 * qa * qc / 3.0;
    let roughness = scale.powi(3) * integral;

    // Scale-relative zero test: an exactly-representable straight line still
    // leaves ~1e-30 of floating-point lint in the pilot coefficients, which
    // must count as "no curvature" (⇒ unbounded h, upper clamp).
    let value_scale2 = raw.values().iter().map(|v| v * v).sum::<f64>() / j as f64;
    let roughness_floor = 1e-20 * value_scale2 / span.powi(3);
    let h = if roughness <= roughness_floor {
        upper
    } else {
        kernel.plugin_constant() * (sigma2 * span / (roughness * j as f64)).powf(0.2)
    };
    // Upper clamp wins when the design is too sparse for both bounds.
    Ok(h.max(lower).min(upper))
}

/// Leave-one-out CV bandwidth over a log-spaced candidate grid between the
/// median consecutive spacing and |𝒯|/2. Ties prefer the smaller bandwidth.
///
/// # Errors
/// `J < 5` → [`FsmlError::InsufficientData`].
pub fn loocv_bandwidth(raw: &SampledCurve, kernel: Kernel) -> Result<f64> {
    let j = raw.len();
    if j < 5 {
        return Err(FsmlError::InsufficientData { needed: 5, got: j });
    }
    let span = raw.span();
    if !(span > 0.0) {
        return Ok(1.0);
    }
    let mut gaps: Vec<f64> = raw.times().windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let lo = gaps[gaps.len() / 2].max(span * 1e-4);
    let hi = span / 2.0;
    let candidates: Vec<f64> = if lo >= hi {
        vec![hi]
    } else {
        let (ll, lh) = (lo.ln(), hi.ln());
        (0..15)
            .map(|i| (ll + (lh - ll) * i as f64 / 14.0).exp())
            .collect()
    };

    let lambda = (j as f64).powi(-2);
    let mut best = (f64::INFINITY, candidates[0]);
    for &h in &candidates {
        let mut cv = 0.0;
        for leave in 0..j {
            let t = raw.times()[leave];
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (idx, (&tj, &xj)) in raw.times().iter().zip(raw.values()).enumerate() {
                if idx == leave {
                    continue;
                }
                let u = (tj - t) / h;
                let k = kernel.eval(u);
                s0 += k;
                s1 += k * u;
                s2 += k * u * u;
                t0 += k * xj;
                t1 += k * u * xj;
            }
            if s0 == 0.0 {
                cv = f64::INFINITY;
                break;
            }
            let mut den = s0 * s2 - s1 * s1;
            if den.abs() < lambda {
                den += if den < 0.0 { -lambda } else { lambda };
            }
            let fit = (t0 * s2 - t1 * s1) / den;
            let e = fit - raw.values()[leave];
            cv += e * e;
        }
        if cv < best.0 {
            best = (cv, h);
        }
    }
    Ok(best.1)
}

/// Smooths every raw curve onto the shared grid, in parallel. The bandwidth
/// policy is applied per curve; the ridge defaults to J⁻² per curve.
pub fn smooth_dataset(
    raws: &[SampledCurve],
    grid: &Grid,
    cfg: &SmoothingConfig,
) -> Result<Vec<Curve>> {
    raws.par_iter()
        .map(|raw| {
            let h = match cfg.bandwidth {
                Bandwidth::Plugin => plugin_bandwidth(raw, cfg.kernel)?,
                Bandwidth::Loocv => loocv_bandwidth(raw, cfg.kernel)?,
                Bandwidth::Fixed(h) => h,
            };
            let lambda = cfg.ridge.unwrap_or((raw.len() as f64).powi(-2));
            ridged_local_linear_smooth(raw, grid, cfg.kernel, h, lambda)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    fn equidistant_times(j: usize) -> Vec<f64> {
        (0..j).map(|i| i as f64 / (j - 1) as f64).collect()
    }

    /// Reference local-linear fit at one point by solving the 2×2 weighted
    /// least-squares system directly — an independent route to the same
    /// estimator, used as the oracle for the closed-form implementation.
    fn naive_local_linear(times: &[f64], values: &[f64], t: f64, h: f64, kernel: Kernel) -> f64 {
        let (mut sw, mut swx, mut swxx, mut swy, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&tj, &xj) in times.iter().zip(values) {
            let w = kernel.eval((tj - t) / h);
            let x = tj - t;
            sw += w;
            swx += w * x;
            swxx += w * x * x;
            swy += w * xj;
            swxy += w * x * xj;
        }
        // Solve [sw swx; swx swxx][b0 b1]ᵀ = [swy swxy]ᵀ for the intercept.
        let det = sw * swxx - swx * swx;
        (swy * swxx - swxy * swx) / det
    }

    #[test]
    fn reproduces_linear_data_exactly() {
        let times = equidistant_times(50);
        let values: Vec<f64> = times.iter().map(|t| 3.0 * t - 0.7).collect();
        let raw = SampledCurve::new("lin", times, values).unwrap();
        let grid = Grid::uniform(0.0, 1.0, 101).unwrap();
        let sm = ridged_local_linear_smooth(&raw, &grid, Kernel::Gaussian, 0.15, 0.0).unwrap();
        for (&t, &v) in grid.points().iter().zip(sm.values()) {
            assert!(
                (v - (3.0 * t - 0.7)).abs() < 1e-8,
                "t = {t}: {v} vs {}",
                3.0 * t - 0.7
            );
        }
    }

    #[test]
    fn matches_naive_reference_where_ridge_inactive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let times = equidistant_times(60);
        let values: Vec<f64> = times
            .iter()
            .map(|t| (TWO_PI * t).cos() + 0.05 * rng.gen::<f64>())
            .collect();
        let raw = SampledCurve::new("c", times, values).unwrap();
        let grid = Grid::uniform(0.0, 1.0, 101).unwrap();
        let h = 0.3;
        let sm = ridged_local_linear_smooth(&raw, &grid, Kernel::Gaussian, h, 0.0).unwrap();
        for (&t, &v) in grid.points().iter().zip(sm.values()) {
            let reference = naive_local_linear(raw.times(), raw.values(), t, h, Kernel::Gaussian);
            assert!((v - reference).abs() < 1e-10, "t = {t}: {v} vs {reference}");
        }
    }

    #[test]
    fn identical_times_stay_finite_with_default_ridge() {
        let j = 20;
        let raw = SampledCurve::new("dup", vec![0.4; j], vec![1.5; j]).unwrap();
        let grid = Grid::uniform(0.0, 1.0, 33).unwrap();
        let lambda = (j as f64).powi(-2);
        let sm = ridged_local_linear_smooth(&raw, &grid, Kernel::Gaussian, 0.1, lambda).unwrap();
        assert!(sm.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn degenerate_fit_names_the_grid_point() {
        // Epanechnikov support is [-1,1]; with h = 1e-3 no observation
        // reaches grid points away from the observation cluster.
        let raw = SampledCurve::new("far", vec![0.0, 0.01, 0.02, 0.03], vec![1.0; 4]).unwrap();
        let grid = Grid::uniform(0.0, 1.0, 101).unwrap();
        let err = ridged_local_linear_smooth(&raw, &grid, Kernel::Epanechnikov, 1e-3, 0.0)
            .unwrap_err();
        match err {
            FsmlError::DegenerateFit { grid_point } => assert!(grid_point > 0.03),
            other => panic!("expected degenerate-fit error, got {other}"),
        }
    }

    #[test]
    fn rejects_nonpositive_bandwidth() {
        let raw = SampledCurve::new("x", equidistant_times(10), vec![0.0; 10]).unwrap();
        let grid = Grid::uniform(0.0, 1.0, 16).unwrap();
        assert!(ridged_local_linear_smooth(&raw, &grid, Kernel::Gaussian, 0.0, 0.0).is_err());
        assert!(ridged_local_linear_smooth(&raw, &grid, Kernel::Gaussian, -1.0, 0.0).is_err());
    }

    #[test]
    fn ridge_never_yields_nan_on_degenerate_designs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let grid = Grid::uniform(0.0, 1.0, 21).unwrap();
        for _ in 0..1000 {
            // Degenerate designs: tiny clusters, repeated times, near-ties.
            let j = rng.gen_range(2..8usize);
            let base: f64 = rng.gen();
            let times: Vec<f64> = (0..j)
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        base
                    } else {
                        base + 1e-13 * rng.gen::<f64>()
                    }
                })
                .collect();
            let values: Vec<f64> = (0..j).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect();
            let raw = SampledCurve::new("fuzz", times, values).unwrap();
            let lambda = (j as f64).powi(-2);
            let h = 10f64.powf(rng.gen_range(-3.0..0.0));
            // A bandwidth so small that every weight underflows is allowed
            // to fail loudly — but it must never smuggle out a NaN/Inf.
            match ridged_local_linear_smooth(&raw, &grid, Kernel::Gaussian, h, lambda) {
                Ok(sm) => assert!(sm.values().iter().all(|v| v.is_finite())),
                Err(FsmlError::DegenerateFit { .. }) => {}
                Err(other) => panic!("unexpected error: {other}"),
            }
        }
    }

    #[test]
    fn plugin_bandwidth_noiseless_linear_hits_upper_clamp() {
        let times = equidistant_times(50);
        let values: Vec<f64> = times.iter().map(|t| 2.0 * t + 1.0).collect();
        let raw = SampledCurve::new("lin", times, values).unwrap();
        let h = plugin_bandwidth(&raw, Kernel::Gaussian).unwrap();
        assert!((h - 0.5).abs() < 1e-12, "got {h}");
    }

    #[test]
    fn plugin_bandwidth_requires_five_points() {
        let raw = SampledCurve::new("tiny", vec![0.0, 0.3, 0.6, 1.0], vec![0.0; 4]).unwrap();
        assert!(matches!(
            plugin_bandwidth(&raw, Kernel::Gaussian),
            Err(FsmlError::InsufficientData { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn plugin_bandwidth_sane_band_and_rmse_on_sine() {
        // Monte-Carlo oracle: J = 50 equidistant samples of sin(2πt) with
        // N(0, 0.1²) noise. The plug-in bandwidth should stay in a sane band
        // and the smoothed curve should track the truth.
        let j = 50;
        let grid = Grid::uniform(0.0, 1.0, 101).unwrap();
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rmses = Vec::new();
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let times = equidistant_times(j);
            let values: Vec<f64> = times
                .iter()
                .map(|&t| (TWO_PI * t).sin() + noise.sample(&mut rng))
                .collect();
            let raw = SampledCurve::new("sine", times, values).unwrap();
            let h = plugin_bandwidth(&raw, Kernel::Gaussian).unwrap();
            assert!((0.02..=0.25).contains(&h), "seed {seed}: h = {h}");
            let sm =
                ridged_local_linear_smooth(&raw, &grid, Kernel::Gaussian, h, (j as f64).powi(-2))
                    .unwrap();
            let mse: f64 = grid
                .points()
                .iter()
                .zip(sm.values())
                .map(|(&t, &v)| (v - (TWO_PI * t).sin()).powi(2))
                .sum::<f64>()
                / grid.len() as f64;
            rmses.push(mse.sqrt());
        }
        rmses.sort_by(f64::total_cmp);
        let median = rmses[rmses.len() / 2];
        assert!(median < 0.08, "median RMSE = {median}");
    }

    #[test]
    fn loocv_bandwidth_lands_in_band_on_sine() {
        let j = 50;
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let times = equidistant_times(j);
        let values: Vec<f64> = times
            .iter()
            .map(|&t| (TWO_PI * t).sin() + noise.sample(&mut rng))
            .collect();
        let raw = SampledCurve::new("sine", times, values).unwrap();
        let h = loocv_bandwidth(&raw, Kernel::Gaussian).unwrap();
        assert!((0.01..=0.5).contains(&h), "h = {h}");
        // Deterministic: same data, same answer.
        assert_eq!(
            h.to_bits(),
            loocv_bandwidth(&raw, Kernel::Gaussian).unwrap().to_bits()
        );
    }

    #[test]
    fn smooth_dataset_applies_policy_per_curve() {
        let grid = Grid::uniform(0.0, 1.0, 51).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let raws: Vec<SampledCurve> = (0..8)
            .map(|i| {
                let times = equidistant_times(40);
                let phase: f64 = rng.gen();
                let values = times
                    .iter()
                    .map(|&t| (TWO_PI * (t + phase)).sin() + 0.05 * rng.gen::<f64>())
                    .collect();
                SampledCurve::new(format!("c{i}"), times, values).unwrap()
            })
            .collect();
        let smoothed = smooth_dataset(&raws, &grid, &SmoothingConfig::default()).unwrap();
        assert_eq!(smoothed.len(), 8);
        for c in &smoothed {
            assert!(c.grid().same_as(&grid));
            assert!(c.values().iter().all(|v| v.is_finite()));
        }
    }
}
