//! Train/test splitting and classification reporting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least two classes with two samples each, got {0}")]
    TooFewSamples(String),
    #[error("split fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("label {0} is not part of the model")]
    UnknownLabel(u32),
}

/// Indices of a stratified train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits per class so every class lands on both sides; shuffling is seeded
/// and the index order is deterministic.
pub fn stratified_split(
    labels: &[u32],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitIndices, EvalError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::BadFraction(test_fraction));
    }
    let mut by_class: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (idx, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(idx);
    }
    if by_class.len() < 2 {
        return Err(EvalError::TooFewSamples(format!(
            "{} class(es) present",
            by_class.len()
        )));
    }
    for (label, members) in &by_class {
        if members.len() < 2 {
            return Err(EvalError::TooFewSamples(format!(
                "class {label} has {} sample(s)",
                members.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in by_class.values() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let n_test = ((shuffled.len() as f64 * test_fraction).round() as usize)
            .clamp(1, shuffled.len() - 1);
        test.extend_from_slice(&shuffled[..n_test]);
        train.extend_from_slice(&shuffled[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Rows are truth, columns are prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<u32>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    /// Builds the matrix over `labels` from (truth, prediction) pairs.
    pub fn from_pairs(labels: &[u32], pairs: &[(u32, u32)]) -> Result<Self, EvalError> {
        let mut sorted = labels.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let index = |l: u32| -> Result<usize, EvalError> {
            sorted.binary_search(&l).map_err(|_| EvalError::UnknownLabel(l))
        };
        let n = sorted.len();
        let mut counts = vec![vec![0usize; n]; n];
        for &(truth, pred) in pairs {
            counts[index(truth)?][index(pred)?] += 1;
        }
        Ok(ConfusionMatrix {
            labels: sorted,
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Trace over total.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: usize = (0..self.labels.len()).map(|k| self.counts[k][k]).sum();
        trace as f64 / total as f64
    }

    /// Correct predictions of class `k` over all predictions of class `k`;
    /// 0 when the class was never predicted.
    pub fn precision(&self, k: usize) -> f64 {
        let predicted: usize = (0..self.labels.len()).map(|r| self.counts[r][k]).sum();
        if predicted == 0 {
            0.0
        } else {
            self.counts[k][k] as f64 / predicted as f64
        }
    }

    /// Correct predictions of class `k` over its true count; 0 when absent.
    pub fn recall(&self, k: usize) -> f64 {
        let actual: usize = self.counts[k].iter().sum();
        if actual == 0 {
            0.0
        } else {
            self.counts[k][k] as f64 / actual as f64
        }
    }

    /// Row sums, i.e. per-class truth counts.
    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Per-class summary inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: u32,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

/// Wall-clock stage timings. Not serialized: reports must be byte-identical
/// across reruns of the same configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub simulate_ms: f64,
    pub fit_ms: f64,
    pub train_ms: f64,
    pub eval_ms: f64,
    /// Mean per-trajectory prep+fit latency, the real-time figure of merit.
    pub per_trajectory_fit_us: f64,
}

/// Classification report over a held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub n_test: usize,
    pub config_fingerprint: String,
    #[serde(skip)]
    pub timing: StageTimings,
}

impl EvalReport {
    pub fn from_pairs(
        labels: &[u32],
        pairs: &[(u32, u32)],
        config_fingerprint: String,
    ) -> Result<Self, EvalError> {
        let confusion = ConfusionMatrix::from_pairs(labels, pairs)?;
        let per_class = confusion
            .labels
            .iter()
            .enumerate()
            .map(|(k, &label)| ClassMetrics {
                label,
                precision: confusion.precision(k),
                recall: confusion.recall(k),
                support: confusion.counts[k].iter().sum(),
            })
            .collect();
        Ok(EvalReport {
            accuracy: confusion.accuracy(),
            per_class,
            n_test: pairs.len(),
            confusion,
            config_fingerprint,
            timing: StageTimings::default(),
        })
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rank(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "series must have equal length");
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean) * (x - mean);
        db += (y - mean) * (y - mean);
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut j = k;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[k]] {
            j += 1;
        }
        let avg = (k + j) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=j] {
            ranks[idx] = avg;
        }
        k = j + 1;
    }
    ranks
}
