//! Soft-margin kernel SVM: binary SMO training, one-vs-one multiclass
//! composition, and JSON model persistence.

mod kernel;
mod smo;

pub use kernel::{kernel_eval, KernelSpec};
pub use smo::{train_binary_svm, train_binary_svm_detailed, SmoParams, TrainOutcome};

use crate::features::{FeatureVector, Scaler};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Schema version of the serialized model file.
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("expected dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("labels must be +1 or -1, got {0}")]
    InvalidLabel(f64),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set contains a single class")]
    SingleClass,
    #[error("need at least two classes with labeled samples, got {0}")]
    TooFewClasses(usize),
    #[error("feature vector is missing a label")]
    MissingLabel,
    #[error("model file version {found} does not match supported version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error("model io error: {0}")]
    Io(String),
}

/// A trained binary classifier: retained support vectors, their signed dual
/// coefficients `alpha_i y_i`, and the bias of `f(x) = sum a_i y_i K(x_i, x) - b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support_vectors: Vec<Vec<f64>>,
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub c: f64,
    /// False when the trainer exhausted its pass budget before the KKT
    /// conditions held; the model is still usable.
    pub converged: bool,
}

impl BinarySvm {
    /// Signed decision value; its sign is the binary prediction.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64, SvmError> {
        if let Some(sv) = self.support_vectors.first() {
            if sv.len() != x.len() {
                return Err(SvmError::DimensionMismatch {
                    expected: sv.len(),
                    actual: x.len(),
                });
            }
        }
        let mut acc = 0.0;
        for (sv, coef) in self.support_vectors.iter().zip(&self.dual_coefs) {
            acc += coef * self.kernel.eval_unchecked(sv, x);
        }
        Ok(acc - self.bias)
    }
}

/// One pairwise classifier inside the one-vs-one ensemble. A positive
/// decision value votes for `label_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSvm {
    pub label_a: u32,
    pub label_b: u32,
    pub svm: BinarySvm,
}

/// One-vs-one multiclass ensemble with the feature scaler folded in, so
/// prediction takes raw (unscaled) feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassSvmModel {
    pub labels: Vec<u32>,
    pub pairs: Vec<PairwiseSvm>,
    pub scaler: Option<Scaler>,
    pub kernel: KernelSpec,
    pub c: f64,
    /// Fingerprint of the training configuration, for report provenance.
    #[serde(default)]
    pub config_fingerprint: String,
}

impl MulticlassSvmModel {
    /// Applies the stored scaler (exactly once) to a raw feature vector.
    fn scaled(&self, x: &[f64]) -> Result<Vec<f64>, SvmError> {
        let mut values = x.to_vec();
        if let Some(scaler) = &self.scaler {
            scaler
                .apply_values(&mut values)
                .map_err(|_| SvmError::DimensionMismatch {
                    expected: scaler.dim(),
                    actual: x.len(),
                })?;
        }
        Ok(values)
    }

    /// Majority vote over all pairwise classifiers.
    ///
    /// Ties break toward the largest accumulated |decision value| among the
    /// tied labels, then toward the smallest label id.
    pub fn predict(&self, x: &[f64]) -> Result<u32, SvmError> {
        let scaled = self.scaled(x)?;
        let decisions: Vec<f64> = self
            .pairs
            .iter()
            .map(|p| p.svm.decision_value(&scaled))
            .collect::<Result<_, _>>()?;
        Ok(tally_votes(&self.labels, &self.pairs, &decisions))
    }

    /// Decision values of every pairwise classifier, in `pairs` order.
    pub fn pairwise_decisions(&self, x: &[f64]) -> Result<Vec<f64>, SvmError> {
        let scaled = self.scaled(x)?;
        self.pairs
            .iter()
            .map(|p| p.svm.decision_value(&scaled))
            .collect()
    }
}

/// Vote tally with the documented tie-break rule.
fn tally_votes(labels: &[u32], pairs: &[PairwiseSvm], decisions: &[f64]) -> u32 {
    let mut votes: std::collections::BTreeMap<u32, (usize, f64)> =
        labels.iter().map(|&l| (l, (0, 0.0))).collect();
    for (pair, &d) in pairs.iter().zip(decisions) {
        let winner = if d >= 0.0 { pair.label_a } else { pair.label_b };
        let entry = votes.entry(winner).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += d.abs();
    }
    let top = votes.values().map(|(v, _)| *v).max().unwrap_or(0);
    votes
        .iter()
        .filter(|(_, (v, _))| *v == top)
        .max_by(|(la, (_, sa)), (lb, (_, sb))| {
            // Larger summed |decision| wins; equal strength prefers the
            // smaller label id (BTreeMap order makes max_by keep the first
            // maximum encountered... so compare ids inverted explicitly).
            sa.partial_cmp(sb)
                .expect("finite decision sums")
                .then(lb.cmp(la))
        })
        .map(|(l, _)| *l)
        .expect("at least one label")
}

/// Trains the one-vs-one ensemble: one binary model per unordered label
/// pair, each trained only on that pair's samples.
///
/// `scaler`, when given, is applied to every vector before training and is
/// stored in the model so prediction consumes raw vectors.
pub fn train_multiclass(
    dataset: &[FeatureVector],
    kernel: &KernelSpec,
    params: &SmoParams,
    scaler: Option<Scaler>,
) -> Result<MulticlassSvmModel, SvmError> {
    kernel.validate()?;
    let mut labels: Vec<u32> = Vec::new();
    for v in dataset {
        let label = v.label.ok_or(SvmError::MissingLabel)?;
        if !labels.contains(&label) {
            labels.push(label);
        }
    }
    labels.sort_unstable();
    if labels.len() < 2 {
        return Err(SvmError::TooFewClasses(labels.len()));
    }

    let scaled: Vec<(u32, Vec<f64>)> = dataset
        .iter()
        .map(|v| {
            let mut values = v.values.clone();
            if let Some(s) = &scaler {
                s.apply_values(&mut values)
                    .map_err(|_| SvmError::DimensionMismatch {
                        expected: s.dim(),
                        actual: v.values.len(),
                    })?;
            }
            Ok((v.label.expect("checked above"), values))
        })
        .collect::<Result<_, SvmError>>()?;

    let mut pairs = Vec::with_capacity(labels.len() * (labels.len() - 1) / 2);
    for (ia, &label_a) in labels.iter().enumerate() {
        for &label_b in &labels[ia + 1..] {
            let mut features = Vec::new();
            let mut targets = Vec::new();
            for (label, values) in &scaled {
                if *label == label_a {
                    features.push(values.clone());
                    targets.push(1.0);
                } else if *label == label_b {
                    features.push(values.clone());
                    targets.push(-1.0);
                }
            }
            let svm = train_binary_svm(&features, &targets, kernel, params)?;
            pairs.push(PairwiseSvm {
                label_a,
                label_b,
                svm,
            });
        }
    }
    Ok(MulticlassSvmModel {
        labels,
        pairs,
        scaler,
        kernel: *kernel,
        c: params.c,
        config_fingerprint: String::new(),
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(flatten)]
    model: MulticlassSvmModel,
}

/// Writes the model as versioned JSON.
pub fn save_model(model: &MulticlassSvmModel, path: &Path) -> Result<(), SvmError> {
    let file = ModelFile {
        version: MODEL_VERSION,
        model: model.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| SvmError::MalformedModel(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| SvmError::Io(e.to_string()))
}

/// Reads a model back; the version field must match exactly.
pub fn load_model(path: &Path) -> Result<MulticlassSvmModel, SvmError> {
    let text = std::fs::read_to_string(path).map_err(|e| SvmError::Io(e.to_string()))?;
    // Peek at the version before strict decoding so a version skew is
    // reported as such rather than as a shape error.
    let probe: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| SvmError::MalformedModel(e.to_string()))?;
    let found = probe
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| SvmError::MalformedModel("missing version field".into()))?
        as u32;
    if found != MODEL_VERSION {
        return Err(SvmError::VersionMismatch {
            found,
            expected: MODEL_VERSION,
        });
    }
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| SvmError::MalformedModel(e.to_string()))?;
    Ok(file.model)
}
