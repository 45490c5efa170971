//! Sequential minimal optimization for the soft-margin dual.
//!
//! Classic two-multiplier coordinate ascent with an error cache and Platt's
//! working-pair heuristics. The random fallback scans start at seeded
//! positions, so training is deterministic for a given configuration.

use super::kernel::KernelSpec;
use super::{BinarySvm, SvmError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Trainer knobs. `tol` is the KKT tolerance, `max_passes` caps the outer
/// sweeps before the trainer gives up and flags the model unconverged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams {
    pub c: f64,
    pub tol: f64,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for SmoParams {
    fn default() -> Self {
        SmoParams {
            c: 10.0,
            tol: 1e-3,
            max_passes: 200,
            seed: 0x5b77_a3d9,
        }
    }
}

/// Full training outcome, including per-example multipliers for KKT audits.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BinarySvm,
    pub alphas: Vec<f64>,
    pub dual_objective: f64,
    pub converged: bool,
}

struct Solver<'a> {
    y: &'a [f64],
    gram: Vec<f64>,
    n: usize,
    c: f64,
    tol: f64,
    alphas: Vec<f64>,
    bias: f64,
    errors: Vec<f64>,
    rng: ChaCha8Rng,
}

impl<'a> Solver<'a> {
    fn new(x: &'a [Vec<f64>], y: &'a [f64], kernel: &KernelSpec, params: &SmoParams) -> Self {
        let n = x.len();
        let mut gram = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let k = kernel.eval_unchecked(&x[a], &x[b]);
                gram[a * n + b] = k;
                gram[b * n + a] = k;
            }
        }
        // With all alphas at zero the decision value is -bias = 0, so the
        // initial error is simply -y_i.
        let errors = y.iter().map(|yi| -yi).collect();
        Solver {
            y,
            gram,
            n,
            c: params.c,
            tol: params.tol,
            alphas: vec![0.0; n],
            bias: 0.0,
            errors,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        }
    }

    #[inline]
    fn k(&self, a: usize, b: usize) -> f64 {
        self.gram[a * self.n + b]
    }

    fn is_non_bound(&self, i: usize) -> bool {
        self.alphas[i] > 0.0 && self.alphas[i] < self.c
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1_old, a2_old) = (self.alphas[i1], self.alphas[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (e1, e2) = (self.errors[i1], self.errors[i2]);
        let s = y1 * y2;

        let (lo, hi) = if s < 0.0 {
            ((a2_old - a1_old).max(0.0), (self.c + a2_old - a1_old).min(self.c))
        } else {
            ((a2_old + a1_old - self.c).max(0.0), (a2_old + a1_old).min(self.c))
        };
        if lo >= hi {
            return false;
        }

        let k11 = self.k(i1, i1);
        let k12 = self.k(i1, i2);
        let k22 = self.k(i2, i2);
        let eta = k11 + k22 - 2.0 * k12;

        let a2_new = if eta > 0.0 {
            (a2_old + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Flat or indefinite direction: evaluate the objective at both
            // ends of the feasible segment (the constant bias term cancels
            // out of the comparison).
            let f1 = y1 * e1 - a1_old * k11 - s * a2_old * k12;
            let f2 = y2 * e2 - a2_old * k22 - s * a1_old * k12;
            let l1 = a1_old + s * (a2_old - lo);
            let h1 = a1_old + s * (a2_old - hi);
            let lobj = l1 * f1 + lo * f2 + 0.5 * l1 * l1 * k11 + 0.5 * lo * lo * k22
                + s * lo * l1 * k12;
            let hobj = h1 * f1 + hi * f2 + 0.5 * h1 * h1 * k11 + 0.5 * hi * hi * k22
                + s * hi * h1 * k12;
            if lobj < hobj - 1e-12 {
                lo
            } else if hobj < lobj - 1e-12 {
                hi
            } else {
                return false;
            }
        };
        if (a2_new - a2_old).abs() < 1e-12 * (a2_new + a2_old + 1e-12) {
            return false;
        }
        // Snap rounding dust onto the box so bound/non-bound classification
        // stays exact; the partner multiplier keeps the equality constraint.
        let snap = 1e-12 * self.c;
        let a2_new = if a2_new < snap {
            0.0
        } else if a2_new > self.c - snap {
            self.c
        } else {
            a2_new
        };
        let a1_raw = a1_old + s * (a2_old - a2_new);
        let a1_new = if a1_raw < snap {
            0.0
        } else if a1_raw > self.c - snap {
            self.c
        } else {
            a1_raw.clamp(0.0, self.c)
        };

        let d1 = y1 * (a1_new - a1_old);
        let d2 = y2 * (a2_new - a2_old);
        let b1 = e1 + d1 * k11 + d2 * k12 + self.bias;
        let b2 = e2 + d1 * k12 + d2 * k22 + self.bias;
        let new_bias = if a1_new > 0.0 && a1_new < self.c {
            b1
        } else if a2_new > 0.0 && a2_new < self.c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let delta_bias = new_bias - self.bias;

        self.alphas[i1] = a1_new;
        self.alphas[i2] = a2_new;
        self.bias = new_bias;
        for j in 0..self.n {
            self.errors[j] += d1 * self.k(i1, j) + d2 * self.k(i2, j) - delta_bias;
        }
        true
    }

    fn examine(&mut self, i2: usize) -> bool {
        let y2 = self.y[i2];
        let a2 = self.alphas[i2];
        let e2 = self.errors[i2];
        let r2 = e2 * y2;
        let violates = (r2 < -self.tol && a2 < self.c) || (r2 > self.tol && a2 > 0.0);
        if !violates {
            return false;
        }

        // Second-choice heuristic: maximize |E1 - E2| over non-bound rows.
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.n {
            if self.is_non_bound(i) {
                let gap = (self.errors[i] - e2).abs();
                if best.is_none_or(|(_, g)| gap > g) {
                    best = Some((i, gap));
                }
            }
        }
        if let Some((i1, _)) = best {
            if self.take_step(i1, i2) {
                return true;
            }
        }
        // Fallback sweeps from seeded start positions.
        let start = self.rng.random_range(0..self.n);
        for off in 0..self.n {
            let i1 = (start + off) % self.n;
            if self.is_non_bound(i1) && self.take_step(i1, i2) {
                return true;
            }
        }
        let start = self.rng.random_range(0..self.n);
        for off in 0..self.n {
            let i1 = (start + off) % self.n;
            if self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }

    fn run(&mut self, max_passes: usize) -> bool {
        let mut examine_all = true;
        let mut changed = 1usize;
        let mut passes = 0;
        while changed > 0 || examine_all {
            passes += 1;
            if passes > max_passes {
                return false;
            }
            changed = 0;
            if examine_all {
                for i in 0..self.n {
                    changed += usize::from(self.examine(i));
                }
            } else {
                for i in 0..self.n {
                    if self.is_non_bound(i) {
                        changed += usize::from(self.examine(i));
                    }
                }
            }
            if examine_all {
                examine_all = false;
            } else if changed == 0 {
                examine_all = true;
            }
        }
        // The loop exits after a full sweep with no progress; converged
        // means no example still violates KKT within tol.
        (0..self.n).all(|i| {
            let r = self.errors[i] * self.y[i];
            !((r < -self.tol && self.alphas[i] < self.c)
                || (r > self.tol && self.alphas[i] > 0.0))
        })
    }

    fn dual_objective(&self) -> f64 {
        let mut linear = 0.0;
        let mut quad = 0.0;
        for i in 0..self.n {
            if self.alphas[i] == 0.0 {
                continue;
            }
            linear += self.alphas[i];
            for j in 0..self.n {
                if self.alphas[j] == 0.0 {
                    continue;
                }
                quad += self.alphas[i] * self.alphas[j] * self.y[i] * self.y[j] * self.k(i, j);
            }
        }
        linear - 0.5 * quad
    }
}

/// Trains a binary soft-margin SVM and keeps the per-example multipliers.
pub fn train_binary_svm_detailed(
    features: &[Vec<f64>],
    labels: &[f64],
    kernel: &KernelSpec,
    params: &SmoParams,
) -> Result<TrainOutcome, SvmError> {
    kernel.validate()?;
    if features.is_empty() {
        return Err(SvmError::EmptyTrainingSet);
    }
    if features.len() != labels.len() {
        return Err(SvmError::DimensionMismatch {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    let dim = features[0].len();
    for f in features {
        if f.len() != dim {
            return Err(SvmError::DimensionMismatch {
                expected: dim,
                actual: f.len(),
            });
        }
    }
    for &y in labels {
        if y != 1.0 && y != -1.0 {
            return Err(SvmError::InvalidLabel(y));
        }
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(SvmError::SingleClass);
    }
    if !(params.c.is_finite() && params.c > 0.0) {
        return Err(SvmError::InvalidKernel("C must be > 0".into()));
    }

    let mut solver = Solver::new(features, labels, kernel, params);
    let converged = solver.run(params.max_passes);
    let dual_objective = solver.dual_objective();

    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for i in 0..solver.n {
        if solver.alphas[i] > 0.0 {
            support_vectors.push(features[i].clone());
            dual_coefs.push(solver.alphas[i] * labels[i]);
        }
    }
    let model = BinarySvm {
        support_vectors,
        dual_coefs,
        bias: solver.bias,
        kernel: *kernel,
        c: params.c,
        converged,
    };
    Ok(TrainOutcome {
        model,
        alphas: solver.alphas.clone(),
        dual_objective,
        converged,
    })
}

/// Trains a binary soft-margin SVM; an exhausted pass budget is reported via
/// the model's `converged` flag rather than an error.
pub fn train_binary_svm(
    features: &[Vec<f64>],
    labels: &[f64],
    kernel: &KernelSpec,
    params: &SmoParams,
) -> Result<BinarySvm, SvmError> {
    train_binary_svm_detailed(features, labels, kernel, params).map(|o| o.model)
}
