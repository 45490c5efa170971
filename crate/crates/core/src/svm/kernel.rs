//! Kernel functions for nonlinear classification.

use super::SvmError;
use serde::{Deserialize, Serialize};

/// Supported kernels and their parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Polynomial { degree: u32, coef0: f64 },
    Gaussian { gamma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), SvmError> {
        match self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, coef0 } => {
                if *degree < 1 {
                    return Err(SvmError::InvalidKernel("degree must be >= 1".into()));
                }
                if !coef0.is_finite() {
                    return Err(SvmError::InvalidKernel("coef0 must be finite".into()));
                }
                Ok(())
            }
            KernelSpec::Gaussian { gamma } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(SvmError::InvalidKernel("gamma must be > 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Kernel value without a dimension check; callers validate up front.
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Polynomial { degree, coef0 } => (dot(a, b) + coef0).powi(*degree as i32),
            KernelSpec::Gaussian { gamma } => {
                let d2: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                (-gamma * d2).exp()
            }
        }
    }

    /// The `1 / (d * var)` heuristic for the Gaussian width.
    pub fn gaussian_gamma_heuristic(data: &[Vec<f64>]) -> f64 {
        if data.is_empty() || data[0].is_empty() {
            return 1.0;
        }
        let d = data[0].len();
        let n = (data.len() * d) as f64;
        let mean: f64 = data.iter().flatten().sum::<f64>() / n;
        let var: f64 = data
            .iter()
            .flatten()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / n;
        if var > 0.0 {
            1.0 / (d as f64 * var)
        } else {
            1.0
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kernel value `K(x1, x2)`; symmetric in its arguments.
pub fn kernel_eval(spec: &KernelSpec, x1: &[f64], x2: &[f64]) -> Result<f64, SvmError> {
    if x1.len() != x2.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x1.len(),
            actual: x2.len(),
        });
    }
    Ok(spec.eval_unchecked(x1, x2))
}
