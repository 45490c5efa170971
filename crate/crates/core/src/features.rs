//! SVM input vectors from fitted piecewise functions.
//!
//! Linear fits contribute their slope rates, quadratic fits the (m, n)
//! pair of every piece. Constant coefficients are deliberately excluded:
//! the shape of the trajectory carries the electrical signature, its
//! vertical offset does not.

use crate::fit::{LinearFit, QuadFit};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("feature dimension {dim} has zero variance across the training set")]
    ZeroVariance { dim: usize },
    #[error("need at least two training vectors, got {0}")]
    TooFewVectors(usize),
    #[error("expected dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite feature value in dimension {dim}")]
    NonFinite { dim: usize },
}

/// Which fit family produced a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Linear,
    Quadratic,
}

/// One SVM input: ordered reals plus an optional location label.
///
/// `kind` is `None` for vectors read back from CSV, where the producing
/// family is not recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub kind: Option<FeatureKind>,
    pub label: Option<u32>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Slope rates `(s_1, ..., s_P)` in piece order; intercepts excluded.
pub fn features_linear(fit: &LinearFit) -> FeatureVector {
    FeatureVector {
        values: fit.slopes(),
        kind: Some(FeatureKind::Linear),
        label: None,
    }
}

/// Interleaved `(m_1, n_1, ..., m_P, n_P)` in piece order; `h_k` excluded.
pub fn features_quadratic(fit: &QuadFit) -> FeatureVector {
    FeatureVector {
        values: fit
            .coefficients()
            .iter()
            .flat_map(|c| [c.m, c.n])
            .collect(),
        kind: Some(FeatureKind::Quadratic),
        label: None,
    }
}

/// Per-dimension z-score standardization learned from a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Scales a raw value vector in place.
    pub fn apply_values(&self, values: &mut [f64]) -> Result<(), FeatureError> {
        if values.len() != self.mean.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.mean.len(),
                actual: values.len(),
            });
        }
        for (j, v) in values.iter_mut().enumerate() {
            *v = (*v - self.mean[j]) / self.std[j];
        }
        Ok(())
    }
}

/// Learns per-dimension mean and (population) standard deviation.
pub fn fit_scaler(vectors: &[FeatureVector]) -> Result<Scaler, FeatureError> {
    if vectors.len() < 2 {
        return Err(FeatureError::TooFewVectors(vectors.len()));
    }
    let dim = vectors[0].dim();
    for v in vectors {
        if v.dim() != dim {
            return Err(FeatureError::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            });
        }
        if let Some(j) = v.values.iter().position(|x| !x.is_finite()) {
            return Err(FeatureError::NonFinite { dim: j });
        }
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (j, x) in v.values.iter().enumerate() {
            mean[j] += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for v in vectors {
        for (j, x) in v.values.iter().enumerate() {
            let d = x - mean[j];
            var[j] += d * d;
        }
    }
    let mut std = vec![0.0; dim];
    for (j, v) in var.iter().enumerate() {
        let s = (v / n).sqrt();
        if s == 0.0 {
            return Err(FeatureError::ZeroVariance { dim: j });
        }
        std[j] = s;
    }
    Ok(Scaler { mean, std })
}

/// Standardizes one vector with a previously learned scaler.
pub fn apply_scaler(scaler: &Scaler, vector: &FeatureVector) -> Result<FeatureVector, FeatureError> {
    let mut out = vector.clone();
    scaler.apply_values(&mut out.values)?;
    Ok(out)
}
