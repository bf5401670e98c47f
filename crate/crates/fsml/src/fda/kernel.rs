//! Smoothing kernels.
//!
//! Both kernels are symmetric probability densities on ℝ. The same named
//! kernel drives curve smoothing and the interpolation weights.

use std::fmt;
use std::str::FromStr;

use crate::error::{FsmlError, Result};

/// A named symmetric density on ℝ.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// Standard Gaussian density (default).
    Gaussian,
    /// Epanechnikov density 3/4·(1−u²) on [−1, 1].
    Epanechnikov,
}

impl Kernel {
    /// Evaluates the kernel density at `u`.
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => {
                const INV_SQRT_2PI: f64 = 0.3989422804014327; // 1/√(2π)
                INV_SQRT_2PI * (-0.5 * u * u).exp()
            }
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// Kernel constant C_K = (R(K)/μ₂(K)²)^{1/5} of the direct plug-in
    /// bandwidth rule, where R(K)=∫K² and μ₂(K)=∫u²K.
    pub fn plugin_constant(self) -> f64 {
        match self {
            // R = 1/(2√π), μ₂ = 1
            Kernel::Gaussian => (0.5 / std::f64::consts::PI.sqrt()).powf(0.2),
            // R = 3/5, μ₂ = 1/5 ⇒ R/μ₂² = 15
            Kernel::Epanechnikov => 15f64.powf(0.2),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Gaussian => write!(f, "gaussian"),
            Kernel::Epanechnikov => write!(f, "epanechnikov"),
        }
    }
}

impl FromStr for Kernel {
    type Err = FsmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "gauss" => Ok(Kernel::Gaussian),
            "epanechnikov" | "epan" => Ok(Kernel::Epanechnikov),
            other => Err(FsmlError::parameter(format!(
                "unknown kernel `{other}` (expected gaussian or epanechnikov)"
            ))),
        }
    }
}
