//! Seeded generators for the simulation models and their ground truth.
//!
//! Every generator is a pure function of the seed: one ChaCha8 stream draws,
//! per curve, the label and then the model parameters in a fixed order, and
//! the optional observation-noise pass reuses the same stream afterwards, so
//! identical seeds give bitwise-identical datasets, and the noisy dataset
//! shares its underlying clean curves with the noise-free one.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{FsmlError, Result};
use crate::fda::SampledCurve;

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Which simulation family to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelId {
    /// Time warping: X = Z₁·μ(γ_{Z₂}(t)) with label-dependent warp range.
    I,
    /// Two Swiss rolls in span{sin 2πt, cos 2πt, sin 4πt}.
    II,
    /// Torus embedded in the same 3-dim span, triangle label regions.
    III,
    /// Gaussian scores on {log(t+2), t, t³}.
    IV,
    /// 50-term Fourier expansion with label-dependent score decay.
    V,
    /// One-parameter warping family X = sin(2π·γ_ω(t)).
    Example2,
}

impl ModelId {
    /// Intrinsic dimension when the generator knows it exactly
    /// (model (v) is genuinely high-dimensional, so `None`).
    pub fn true_dim(self) -> Option<usize> {
        match self {
            ModelId::I | ModelId::II | ModelId::III => Some(2),
            ModelId::IV => Some(3),
            ModelId::V => None,
            ModelId::Example2 => Some(1),
        }
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelId::I => "i",
            ModelId::II => "ii",
            ModelId::III => "iii",
            ModelId::IV => "iv",
            ModelId::V => "v",
            ModelId::Example2 => "example2",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelId {
    type Err = FsmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(ModelId::I),
            "ii" | "2" => Ok(ModelId::II),
            "iii" | "3" => Ok(ModelId::III),
            "iv" | "4" => Ok(ModelId::IV),
            "v" | "5" => Ok(ModelId::V),
            "example2" | "example-2" | "warp" => Ok(ModelId::Example2),
            other => Err(FsmlError::parameter(format!("unknown model '{other}'"))),
        }
    }
}

/// Generator request.
#[derive(Clone, Copy, Debug)]
pub struct SynthSpec {
    pub model: ModelId,
    /// Sample size.
    pub n: usize,
    /// Observation points per curve (equidistant on [0, 1]).
    pub j: usize,
    /// Add iid N(0, V̂_X/20) observation noise.
    pub noise: bool,
    pub seed: u64,
}

/// One generated sample with whatever ground truth the model exposes.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub curves: Vec<SampledCurve>,
    pub labels: Vec<usize>,
    /// Generating manifold coordinates (models (ii), (iii), Example 2).
    pub intrinsic: Option<DMatrix<f64>>,
    /// Noise standard deviation actually applied (0 when noise is off).
    pub noise_sd: f64,
}

/// Samples a dataset. Curves observe X_i(t_j) at t_j = j/(J−1), plus noise
/// when requested.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    if spec.n < 2 {
        return Err(FsmlError::parameter("n must be at least 2"));
    }
    if spec.j < 2 {
        return Err(FsmlError::parameter("J must be at least 2"));
    }
    let n = spec.n;
    let j = spec.j;
    let times: Vec<f64> = (0..j).map(|g| g as f64 / (j - 1) as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut values = vec![vec![0.0f64; j]; n];
    let mut labels = Vec::with_capacity(n);
    let mut intrinsic_rows: Vec<Vec<f64>> = Vec::new();

    for i in 0..n {
        match spec.model {
            ModelId::I => {
                let y = usize::from(rng.gen_bool(0.5));
                let z1 = Gamma::new(4.0, 0.5)
                    .expect("valid gamma parameters")
                    .sample(&mut rng);
                let z2 = if y == 0 {
                    rng.gen_range(-1.0..0.2)
                } else {
                    rng.gen_range(-0.2..1.0)
                };
                for (g, &t) in times.iter().enumerate() {
                    values[i][g] = z1 * warp_mu(exp_warp(z2, t));
                }
                labels.push(y);
            }
            ModelId::II => {
                let y = usize::from(rng.gen_bool(0.5));
                let z1 = rng.gen_range(0.0..TAU);
                let z2 = rng.gen_range(0.0..8.0);
                let angle = z1 + if y == 1 { std::f64::consts::PI } else { 0.0 };
                let (a, b, c) = (z1 * angle.cos(), z1 * angle.sin(), z2);
                for (g, &t) in times.iter().enumerate() {
                    values[i][g] =
                        a * (TAU * t).sin() + b * (TAU * t).cos() + c * (2.0 * TAU * t).sin();
                }
                labels.push(y);
                intrinsic_rows.push(vec![z1, z2]);
            }
            ModelId::III => {
                let y = usize::from(rng.gen_bool(0.5));
                let (theta, phi) = loop {
                    let th = rng.gen_range(0.0..TAU);
                    let ph = rng.gen_range(0.0..TAU);
                    let inside = if y == 0 {
                        0.0 < th && th < ph
                    } else {
                        0.0 < ph && ph <= th
                    };
                    if inside {
                        break (th, ph);
                    }
                };
                let r = 2.0 + theta.cos();
                let (a, b, c) = (r * phi.cos(), r * phi.sin(), theta.sin());
                for (g, &t) in times.iter().enumerate() {
                    values[i][g] =
                        a * (TAU * t).sin() + b * (TAU * t).cos() + c * (2.0 * TAU * t).sin();
                }
                labels.push(y);
                intrinsic_rows.push(vec![theta, phi]);
            }
            ModelId::IV => {
                let y = usize::from(rng.gen_bool(0.5));
                let (mu, sd) = if y == 0 {
                    ([-1.0, 2.0, -3.0], [0.6, 0.4, 0.2])
                } else {
                    ([-0.5, 2.5, -2.5], [0.9, 0.5, 0.3])
                };
                let mut xi = [0.0; 3];
                for k in 0..3 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    xi[k] = mu[k] + sd[k] * z;
                }
                for (g, &t) in times.iter().enumerate() {
                    values[i][g] = xi[0] * (t + 2.0).ln() + xi[1] * t + xi[2] * t * t * t;
                }
                labels.push(y);
            }
            ModelId::V => {
                let y = usize::from(rng.gen_bool(0.5));
                let mean = y as f64;
                let mut scores = [0.0f64; 50];
                for (k, score) in scores.iter_mut().enumerate() {
                    let jj = (k + 1) as f64;
                    let sd = if y == 0 {
                        (-jj / 6.0).exp()
                    } else {
                        (-jj / 4.0).exp()
                    };
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *score = sd * z;
                }
                for (g, &t) in times.iter().enumerate() {
                    let mut v = mean;
                    for (k, &score) in scores.iter().enumerate() {
                        v += score * fourier_basis(k + 1, t);
                    }
                    values[i][g] = v;
                }
                labels.push(y);
            }
            ModelId::Example2 => {
                let omega = rng.gen_range(0.0..TAU);
                let y = usize::from(omega > std::f64::consts::PI);
                let gamma = warp_gamma(omega, &times);
                for (g, _) in times.iter().enumerate() {
                    values[i][g] = (TAU * gamma[g]).sin();
                }
                labels.push(y);
                intrinsic_rows.push(vec![omega]);
            }
        }
    }

    // Observation noise: ε_ij ~ N(0, V̂_X/20) with V̂_X the integrated
    // sample variance of the clean curves.
    let mut noise_sd = 0.0;
    if spec.noise {
        let var = integrated_sample_variance(&values, &times);
        noise_sd = (var / 20.0).sqrt();
        for row in values.iter_mut() {
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += noise_sd * z;
            }
        }
    }

    let curves = values
        .into_iter()
        .enumerate()
        .map(|(i, vals)| SampledCurve::new(format!("sim{i:05}"), times.clone(), vals))
        .collect::<Result<Vec<_>>>()?;
    let intrinsic = if intrinsic_rows.is_empty() {
        None
    } else {
        let q = intrinsic_rows[0].len();
        Some(DMatrix::from_fn(n, q, |r, c| intrinsic_rows[r][c]))
    };
    Ok(SynthData {
        curves,
        labels,
        intrinsic,
        noise_sd,
    })
}

/// Exponential warp γ_z(t) = (e^{zt}−1)/(e^z−1), the identity at z = 0.
fn exp_warp(z: f64, t: f64) -> f64 {
    if z == 0.0 {
        t
    } else {
        ((z * t).exp() - 1.0) / (z.exp() - 1.0)
    }
}

/// Three-bump mean of the warping model: sum of N(m, s²) densities.
fn warp_mu(t: f64) -> f64 {
    normal_pdf(t, 0.2, 0.08) + normal_pdf(t, 0.5, 0.1) + normal_pdf(t, 0.8, 0.13)
}

fn normal_pdf(t: f64, mean: f64, sd: f64) -> f64 {
    let z = (t - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (TAU).sqrt())
}

/// Example 2 warp: γ(t) = ∫₀ᵗ e^{θ_ω} / ∫₀¹ e^{θ_ω} via cumulative
/// trapezoid on the observation grid.
fn warp_gamma(omega: f64, times: &[f64]) -> Vec<f64> {
    let theta = |t: f64| -> f64 {
        let mut acc = 0.0;
        for k in 1..=50usize {
            let kf = k as f64;
            acc += (kf * omega).sin() * (std::f64::consts::PI * kf * t).sin()
                / ((kf - 8.0).powi(2) + 2.0);
        }
        acc
    };
    let e: Vec<f64> = times.iter().map(|&t| theta(t).exp()).collect();
    let mut cum = vec![0.0; times.len()];
    for g in 1..times.len() {
        cum[g] = cum[g - 1] + 0.5 * (e[g - 1] + e[g]) * (times[g] - times[g - 1]);
    }
    let total = cum[times.len() - 1];
    cum.iter_mut().for_each(|v| *v /= total);
    cum
}

/// φ₁ = 1, φ_{2ℓ} = √2·cos(2ℓπt), φ_{2ℓ+1} = √2·sin(2ℓπt).
fn fourier_basis(j: usize, t: f64) -> f64 {
    if j == 1 {
        return 1.0;
    }
    let l = (j / 2) as f64;
    let arg = 2.0 * l * std::f64::consts::PI * t;
    if j % 2 == 0 {
        std::f64::consts::SQRT_2 * arg.cos()
    } else {
        std::f64::consts::SQRT_2 * arg.sin()
    }
}

/// ∫ (1/(n−1)) Σ_i {X_i(t) − X̄(t)}² dt by trapezoid over the grid.
fn integrated_sample_variance(values: &[Vec<f64>], times: &[f64]) -> f64 {
    let n = values.len();
    let j = times.len();
    let mut total = 0.0;
    for g in 0..j {
        let mean = values.iter().map(|row| row[g]).sum::<f64>() / n as f64;
        let var = values
            .iter()
            .map(|row| (row[g] - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        let w = if g == 0 {
            (times[1] - times[0]) / 2.0
        } else if g == j - 1 {
            (times[j - 1] - times[j - 2]) / 2.0
        } else {
            (times[g + 1] - times[g - 1]) / 2.0
        };
        total += w * var;
    }
    total
}

/// Arc length of the Swiss-roll spiral: s(z) = ∫₀ᶻ √(1+u²) du.
fn spiral_arc_length(z: f64) -> f64 {
    (z * (1.0 + z * z).sqrt() + z.asinh()) / 2.0
}

/// Isometric chart for same-class Swiss-roll curves: the Euclidean distance
/// between chart points equals the L²([0,1]) geodesic distance along the
/// roll (the 1/√2 factor accounts for ∫sin²(2πt)dt = ½ on each basis
/// function).
pub fn swiss_roll_chart(z1: f64, z2: f64) -> [f64; 2] {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    [scale * spiral_arc_length(z1), scale * z2]
}
