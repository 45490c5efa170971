//! Declarative pipeline configuration and the stage runners behind the CLI.
//!
//! One TOML file drives every stage; all randomness flows from the seeds it
//! names, so a config fully determines every produced byte. Unused blocks
//! may be omitted: each stage validates only what it reads.

use crate::eval::{stratified_split, EvalError, EvalReport, StageTimings};
use crate::features::{
    apply_scaler, features_linear, features_quadratic, fit_scaler, FeatureError, FeatureVector,
};
use crate::fit::{
    build_linear_design, build_quadratic_design, fit_residual, solve_linear_fit,
    solve_quadratic_fit, FitBounds, FitError, PiecewiseFit, SolveOptions,
};
use crate::io::{
    read_features_csv, read_fit_record, read_trajectory_csv, write_features_csv, write_fit_record,
    write_manifest, write_trajectory_csv, FitRecord, IoError, ManifestEntry,
};
use crate::prep::{
    extract_lower_branch, segment_samples, select_breakpoints, BreakpointPolicy, FitMode,
    LowerBranchConfig,
};
use crate::sim::{
    derive_seed, generate_dataset, FaultScenario, HifCircuitParams, SimError, SourceSpec,
    Trajectory,
};
use crate::svm::{load_model, save_model, train_multiclass, KernelSpec, MulticlassSvmModel,
    SmoParams, SvmError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{file}: {message}")]
    Item { file: String, message: String },
    #[error("all {0} trajectories failed to fit")]
    AllItemsFailed(usize),
}

fn config_err(field: &str, message: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub simulation: SimulationConfig,
    pub prep: PrepConfig,
    pub fit: FitConfig,
    pub svm: SvmConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub seed: u64,
    pub per_class: u32,
    /// Relative measurement-noise level.
    pub eta: f64,
    pub source: SourceConfig,
    pub circuit: CircuitConfig,
    pub scenarios: Vec<ScenarioConfig>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed: 1,
            per_class: 50,
            eta: 0.01,
            source: SourceConfig::default(),
            circuit: CircuitConfig::default(),
            scenarios: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub amplitude: f64,
    pub frequency: f64,
    pub sample_rate: f64,
    pub n_cycles: u32,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            amplitude: 2400.0,
            frequency: 60.0,
            sample_rate: 20_000.0,
            n_cycles: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircuitConfig {
    pub v_p: f64,
    pub v_n: f64,
    pub r_p: f64,
    pub r_n: f64,
    pub flicker: f64,
    /// When set, v_p is drawn per scenario from this range (seeded) to
    /// emulate arc asymmetry; same for `v_n_range`.
    pub v_p_range: Option<[f64; 2]>,
    pub v_n_range: Option<[f64; 2]>,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        // Arc voltages of a few hundred volts against a kV-scale source keep
        // the dead-band transition a small feature of the V-I loop, as in
        // field trajectories.
        CircuitConfig {
            v_p: 300.0,
            v_n: -280.0,
            r_p: 120.0,
            r_n: 130.0,
            flicker: 0.05,
            v_p_range: None,
            v_n_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub label: u32,
    pub series_resistance: f64,
    #[serde(default)]
    pub series_reactance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub mode: FitMode,
    pub pieces: usize,
    pub policy: PolicyName,
    /// Outer breakpoints for the `manual` policy (`pieces + 1` values).
    pub manual_breakpoints: Vec<f64>,
    pub lower_branch_bins: usize,
    pub degenerate_floor_frac: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            mode: FitMode::Linear,
            pieces: 3,
            policy: PolicyName::EqualRange,
            manual_breakpoints: Vec::new(),
            lower_branch_bins: 64,
            degenerate_floor_frac: 1.0 / 16.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    EqualRange,
    Quantile,
    Manual,
}

impl PrepConfig {
    pub fn policy(&self) -> BreakpointPolicy {
        match self.policy {
            PolicyName::EqualRange => BreakpointPolicy::EqualRange,
            PolicyName::Quantile => BreakpointPolicy::Quantile,
            PolicyName::Manual => BreakpointPolicy::Manual(self.manual_breakpoints.clone()),
        }
    }

    pub fn lower_branch(&self) -> LowerBranchConfig {
        LowerBranchConfig {
            bins: self.lower_branch_bins,
            floor_frac: self.degenerate_floor_frac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub ridge_fallback: bool,
    /// Optional common lower/upper bound applied to every knot.
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
}

impl FitConfig {
    pub fn bounds(&self, n_knots: usize) -> Result<FitBounds, FitError> {
        if self.y_min.is_none() && self.y_max.is_none() {
            return Ok(FitBounds::none());
        }
        FitBounds::new(vec![self.y_min; n_knots], vec![self.y_max; n_knots])
    }

    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            ridge_fallback: self.ridge_fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub kernel: KernelName,
    /// Gaussian width; 0 means the `1/(d * var)` heuristic.
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
    pub c: f64,
    pub tol: f64,
    pub max_passes: usize,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            kernel: KernelName::Gaussian,
            gamma: 0.0,
            degree: 3,
            coef0: 1.0,
            c: 10.0,
            tol: 1e-3,
            max_passes: 200,
            seed: 0x5b77_a3d9,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Linear,
    Polynomial,
    Gaussian,
}

impl SvmConfig {
    /// Resolves the kernel, applying the gamma heuristic on the given data.
    pub fn kernel_spec(&self, data: &[Vec<f64>]) -> KernelSpec {
        match self.kernel {
            KernelName::Linear => KernelSpec::Linear,
            KernelName::Polynomial => KernelSpec::Polynomial {
                degree: self.degree,
                coef0: self.coef0,
            },
            KernelName::Gaussian => KernelSpec::Gaussian {
                gamma: if self.gamma > 0.0 {
                    self.gamma
                } else {
                    KernelSpec::gaussian_gamma_heuristic(data)
                },
            },
        }
    }

    pub fn smo_params(&self) -> SmoParams {
        SmoParams {
            c: self.c,
            tol: self.tol,
            max_passes: self.max_passes,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Held-out fraction of each class.
    pub split_fraction: f64,
    pub split_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split_fraction: 0.3,
            split_seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| config_err("<config>", e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            config_err("<config>", format!("{}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    /// FNV-1a hash of the canonical serialization, stamped into models and
    /// reports for provenance.
    pub fn fingerprint(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for byte in text.bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }

    pub fn validate_simulation(&self) -> Result<(), PipelineError> {
        let sim = &self.simulation;
        if sim.per_class < 1 {
            return Err(config_err("simulation.per_class", "must be >= 1"));
        }
        if !(sim.eta >= 0.0 && sim.eta.is_finite()) {
            return Err(config_err("simulation.eta", "must be finite and >= 0"));
        }
        self.source_spec()
            .validate()
            .map_err(|e| config_err("simulation.source", e.to_string()))?;
        let circuit = &sim.circuit;
        HifCircuitParams {
            v_p: circuit.v_p,
            v_n: circuit.v_n,
            r_p: circuit.r_p,
            r_n: circuit.r_n,
            flicker: circuit.flicker,
        }
        .validate()
        .map_err(|e| config_err("simulation.circuit", e.to_string()))?;
        for (name, range, positive) in [
            ("simulation.circuit.v_p_range", &circuit.v_p_range, true),
            ("simulation.circuit.v_n_range", &circuit.v_n_range, false),
        ] {
            if let Some([lo, hi]) = range {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(config_err(name, "range must be finite with lo <= hi"));
                }
                if positive && *lo <= 0.0 {
                    return Err(config_err(name, "range must be strictly positive"));
                }
                if !positive && *hi >= 0.0 {
                    return Err(config_err(name, "range must be strictly negative"));
                }
            }
        }
        if sim.scenarios.is_empty() {
            return Err(config_err("simulation.scenarios", "at least one scenario"));
        }
        let mut labels = std::collections::BTreeSet::new();
        for (k, s) in sim.scenarios.iter().enumerate() {
            if !labels.insert(s.label) {
                return Err(config_err(
                    &format!("simulation.scenarios[{k}].label"),
                    format!("duplicate label {}", s.label),
                ));
            }
            if !(s.series_resistance.is_finite() && s.series_resistance >= 0.0) {
                return Err(config_err(
                    &format!("simulation.scenarios[{k}].series_resistance"),
                    "must be finite and >= 0",
                ));
            }
            if !(s.series_reactance.is_finite() && s.series_reactance >= 0.0) {
                return Err(config_err(
                    &format!("simulation.scenarios[{k}].series_reactance"),
                    "must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }

    pub fn validate_prep(&self) -> Result<(), PipelineError> {
        let prep = &self.prep;
        if prep.pieces < 1 {
            return Err(config_err("prep.pieces", "must be >= 1"));
        }
        if prep.lower_branch_bins < 2 {
            return Err(config_err("prep.lower_branch_bins", "must be >= 2"));
        }
        if !(prep.degenerate_floor_frac >= 0.0 && prep.degenerate_floor_frac < 1.0) {
            return Err(config_err(
                "prep.degenerate_floor_frac",
                "must lie in [0, 1)",
            ));
        }
        if prep.policy == PolicyName::Manual {
            if prep.manual_breakpoints.len() != prep.pieces + 1 {
                return Err(config_err(
                    "prep.manual_breakpoints",
                    format!(
                        "need {} values for {} pieces, got {}",
                        prep.pieces + 1,
                        prep.pieces,
                        prep.manual_breakpoints.len()
                    ),
                ));
            }
            if prep
                .manual_breakpoints
                .windows(2)
                .any(|w| !(w[1] > w[0] && w[0].is_finite()))
            {
                return Err(config_err(
                    "prep.manual_breakpoints",
                    "must be strictly increasing and finite",
                ));
            }
        }
        if let (Some(lo), Some(hi)) = (self.fit.y_min, self.fit.y_max) {
            if lo > hi {
                return Err(config_err("fit.y_min", "exceeds fit.y_max"));
            }
        }
        Ok(())
    }

    pub fn validate_svm(&self) -> Result<(), PipelineError> {
        let svm = &self.svm;
        if !(svm.c.is_finite() && svm.c > 0.0) {
            return Err(config_err("svm.c", "must be > 0"));
        }
        if !(svm.tol.is_finite() && svm.tol > 0.0) {
            return Err(config_err("svm.tol", "must be > 0"));
        }
        if svm.max_passes < 1 {
            return Err(config_err("svm.max_passes", "must be >= 1"));
        }
        if svm.kernel == KernelName::Polynomial && svm.degree < 1 {
            return Err(config_err("svm.degree", "must be >= 1"));
        }
        if svm.gamma < 0.0 || !svm.gamma.is_finite() {
            return Err(config_err("svm.gamma", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn validate_eval(&self) -> Result<(), PipelineError> {
        let f = self.eval.split_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(config_err("eval.split_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn source_spec(&self) -> SourceSpec {
        let s = &self.simulation.source;
        SourceSpec {
            amplitude: s.amplitude,
            frequency: s.frequency,
            sample_rate: s.sample_rate,
            n_cycles: s.n_cycles,
        }
    }

    /// Circuit for one scenario, drawing from the configured ranges when
    /// present. The draw is seeded by (seed, label), independent of scenario
    /// order.
    pub fn circuit_for(&self, label: u32) -> HifCircuitParams {
        let c = &self.simulation.circuit;
        let mut params = HifCircuitParams {
            v_p: c.v_p,
            v_n: c.v_n,
            r_p: c.r_p,
            r_n: c.r_n,
            flicker: c.flicker,
        };
        if c.v_p_range.is_some() || c.v_n_range.is_some() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                self.simulation.seed ^ 0x5ca1_ab1e,
                label,
                0,
            ));
            if let Some([lo, hi]) = c.v_p_range {
                params.v_p = rng.random_range(lo..=hi);
            }
            if let Some([lo, hi]) = c.v_n_range {
                params.v_n = rng.random_range(lo..=hi);
            }
        }
        params
    }
}

// ---------------------------------------------------------------------------
// Stage runners
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub n_trajectories: usize,
    pub n_scenarios: usize,
    pub manifest: PathBuf,
    pub elapsed_ms: f64,
}

/// Simulates every configured scenario and writes trajectory CSVs plus the
/// manifest into `out_dir`. Deterministic from the config alone.
pub fn run_simulate(
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<SimulateSummary, PipelineError> {
    config.validate_simulation()?;
    let started = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(|e| IoError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;

    let sim = &config.simulation;
    let source = config.source_spec();
    let mut entries = Vec::new();
    let mut written = 0usize;
    for scenario_cfg in &sim.scenarios {
        let scenario = FaultScenario {
            location_label: scenario_cfg.label,
            series_resistance: scenario_cfg.series_resistance,
            series_reactance: scenario_cfg.series_reactance,
        };
        let circuit = config.circuit_for(scenario.location_label);
        let batch = generate_dataset(
            std::slice::from_ref(&scenario),
            &circuit,
            &source,
            sim.per_class,
            sim.eta,
            sim.seed,
        )?;
        for (rep, traj) in batch.iter().enumerate() {
            let file = format!("traj_{:03}_{:03}.csv", scenario.location_label, rep);
            write_trajectory_csv(&out_dir.join(&file), traj)?;
            entries.push(ManifestEntry {
                file,
                label: scenario.location_label,
                seed: traj.meta.seed,
                scenario: scenario.location_label,
                eta: sim.eta,
            });
            written += 1;
        }
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(SimulateSummary {
        n_trajectories: written,
        n_scenarios: sim.scenarios.len(),
        manifest,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub n_trajectories: usize,
    pub n_samples: usize,
    pub labels: Vec<u32>,
}

/// Loads and validates a dataset directory against its manifest.
pub fn run_ingest(
    dir: &Path,
    manifest: &Path,
) -> Result<(Vec<(String, Trajectory)>, IngestSummary), PipelineError> {
    let entries = crate::io::read_manifest(manifest)?;
    let mut dataset = Vec::with_capacity(entries.len());
    for entry in &entries {
        let csv_path = dir.join(&entry.file);
        if !csv_path.is_file() {
            return Err(IoError::MissingLabel {
                file: entry.file.clone(),
            }
            .into());
        }
        let mut traj = read_trajectory_csv(&csv_path)?;
        traj.label = Some(entry.label);
        traj.meta.seed = entry.seed;
        traj.meta.scenario = Some(entry.scenario);
        traj.meta.eta = entry.eta;
        dataset.push((entry.file.clone(), traj));
    }
    let mut labels: Vec<u32> = dataset.iter().filter_map(|(_, t)| t.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let summary = IngestSummary {
        n_trajectories: dataset.len(),
        n_samples: dataset.iter().map(|(_, t)| t.len()).sum(),
        labels,
    };
    Ok((dataset, summary))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitSummary {
    pub n_ok: usize,
    pub n_failed: usize,
    pub failures: Vec<(String, String)>,
    pub elapsed_ms: f64,
    pub per_trajectory_us: f64,
}

/// Runs prep + fit on one trajectory and returns the fit and its features.
pub fn fit_one(
    traj: &Trajectory,
    config: &PipelineConfig,
) -> Result<(PiecewiseFit, FeatureVector), PipelineError> {
    let item = |e: String| PipelineError::Item {
        file: String::new(),
        message: e,
    };
    let prep = &config.prep;
    let lower = extract_lower_branch(traj, &prep.lower_branch()).map_err(|e| item(e.to_string()))?;
    let grid = select_breakpoints(&lower, &prep.policy(), prep.mode, prep.pieces)
        .map_err(|e| item(e.to_string()))?;
    let seg = segment_samples(&lower, &grid).map_err(|e| item(e.to_string()))?;
    let bounds = config
        .fit
        .bounds(grid.n_knots())
        .map_err(|e| item(e.to_string()))?;
    let options = config.fit.options();
    let (fit, mut features) = match prep.mode {
        FitMode::Linear => {
            let design = build_linear_design(&seg).map_err(|e| item(e.to_string()))?;
            let fit = solve_linear_fit(&design, &bounds, &options).map_err(|e| item(e.to_string()))?;
            let features = features_linear(&fit);
            (PiecewiseFit::Linear(fit), features)
        }
        FitMode::Quadratic => {
            let design = build_quadratic_design(&seg).map_err(|e| item(e.to_string()))?;
            let fit =
                solve_quadratic_fit(&design, &bounds, &options).map_err(|e| item(e.to_string()))?;
            let features = features_quadratic(&fit);
            (PiecewiseFit::Quadratic(fit), features)
        }
    };
    debug_assert!({
        let recomputed = fit_residual(&fit, &seg).expect("fit and segmentation share a grid");
        let scale = seg
            .piece(0)
            .iter()
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .max(1.0);
        ((recomputed - fit.residual()) / scale).abs() < 1e-8
    });
    features.label = traj.label;
    Ok((fit, features))
}

/// Fits every trajectory, recording per-item failures without aborting the
/// batch (unless `strict`). Writes one fit JSON per trajectory plus the
/// feature CSV.
pub fn run_fit(
    dataset: &[(String, Trajectory)],
    config: &PipelineConfig,
    out_dir: &Path,
    strict: bool,
) -> Result<(Vec<FeatureVector>, FitSummary), PipelineError> {
    config.validate_prep()?;
    let started = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(|e| IoError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;

    let mut features = Vec::new();
    let mut summary = FitSummary::default();
    for (name, traj) in dataset {
        match fit_one(traj, config) {
            Ok((fit, feature)) => {
                let record = FitRecord::from_fit(&fit, name.clone(), traj.label);
                let stem = Path::new(name)
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_else(|| name.clone());
                write_fit_record(&out_dir.join(format!("fit_{stem}.json")), &record)?;
                features.push(feature);
                summary.n_ok += 1;
            }
            Err(e) => {
                if strict {
                    return Err(PipelineError::Item {
                        file: name.clone(),
                        message: e.to_string(),
                    });
                }
                summary.n_failed += 1;
                summary.failures.push((name.clone(), e.to_string()));
            }
        }
    }
    if summary.n_ok == 0 {
        return Err(PipelineError::AllItemsFailed(dataset.len()));
    }
    write_features_csv(&out_dir.join("features.csv"), &features)?;
    summary.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    summary.per_trajectory_us = summary.elapsed_ms * 1e3 / dataset.len().max(1) as f64;
    Ok((features, summary))
}

/// Stratified split, scaler on the training side only, one-vs-one training,
/// and held-out evaluation. Writes `model.json` and `report.json`.
pub fn run_train(
    features: &[FeatureVector],
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<(MulticlassSvmModel, EvalReport), PipelineError> {
    config.validate_svm()?;
    config.validate_eval()?;
    let started = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(|e| IoError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;

    let labels: Vec<u32> = features
        .iter()
        .map(|f| f.label.ok_or(SvmError::MissingLabel))
        .collect::<Result<_, _>>()?;
    let split = stratified_split(&labels, config.eval.split_fraction, config.eval.split_seed)?;
    let train: Vec<FeatureVector> = split.train.iter().map(|&i| features[i].clone()).collect();

    let scaler = if config.svm.standardize {
        Some(fit_scaler(&train)?)
    } else {
        None
    };
    // Kernel heuristics see the data the way the trainer will.
    let kernel_view: Vec<Vec<f64>> = match &scaler {
        Some(s) => train
            .iter()
            .map(|v| apply_scaler(s, v).map(|sv| sv.values))
            .collect::<Result<_, _>>()?,
        None => train.iter().map(|v| v.values.clone()).collect(),
    };
    let kernel = config.svm.kernel_spec(&kernel_view);
    let mut model = train_multiclass(&train, &kernel, &config.svm.smo_params(), scaler)?;
    model.config_fingerprint = config.fingerprint();
    let train_ms = started.elapsed().as_secs_f64() * 1e3;

    let eval_started = Instant::now();
    let pairs: Vec<(u32, u32)> = split
        .test
        .iter()
        .map(|&i| {
            let predicted = model.predict(&features[i].values)?;
            Ok((labels[i], predicted))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut report = EvalReport::from_pairs(&model.labels, &pairs, model.config_fingerprint.clone())?;
    report.timing = StageTimings {
        train_ms,
        eval_ms: eval_started.elapsed().as_secs_f64() * 1e3,
        ..StageTimings::default()
    };

    save_model(&model, &out_dir.join("model.json"))?;
    write_report(&out_dir.join("report.json"), &report)?;
    Ok((model, report))
}

/// Evaluates a stored model against an external labeled feature CSV.
pub fn run_eval(model_path: &Path, features_path: &Path) -> Result<EvalReport, PipelineError> {
    let started = Instant::now();
    let model = load_model(model_path)?;
    let features = read_features_csv(features_path)?;
    let pairs: Vec<(u32, u32)> = features
        .iter()
        .map(|f| {
            let truth = f.label.ok_or(SvmError::MissingLabel)?;
            let predicted = model.predict(&f.values)?;
            Ok((truth, predicted))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut report =
        EvalReport::from_pairs(&model.labels, &pairs, model.config_fingerprint.clone())?;
    report.timing = StageTimings {
        eval_ms: started.elapsed().as_secs_f64() * 1e3,
        ..StageTimings::default()
    };
    Ok(report)
}

/// Builds the measured-vs-fitted overlay for one trajectory and fit record.
pub fn run_plot_data(
    traj_path: &Path,
    fit_path: &Path,
    config: &PipelineConfig,
    out_path: &Path,
) -> Result<(), PipelineError> {
    let traj = read_trajectory_csv(traj_path)?;
    let record = read_fit_record(fit_path)?;
    let fit = record.to_fit()?;
    let lower = extract_lower_branch(&traj, &config.prep.lower_branch()).map_err(|e| {
        PipelineError::Item {
            file: traj_path.display().to_string(),
            message: e.to_string(),
        }
    })?;
    let samples: Vec<(f64, f64)> = lower.samples.iter().map(|s| (s.i, s.v)).collect();
    let csv = crate::io::plot_overlay_csv(&samples, &fit);
    std::fs::write(out_path, csv).map_err(|e| IoError::Io {
        path: out_path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// Reports serialize without timings so identical configs rewrite identical
/// bytes.
pub fn write_report(path: &Path, report: &EvalReport) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(report).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, json).map_err(|e| {
        PipelineError::Io(IoError::Io {
            path: path.display().to_string(),
            source: e,
        })
    })
}

/// Renders a human-readable report summary for the console.
pub fn format_report(report: &EvalReport) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "accuracy: {:.4} ({} test samples)", report.accuracy, report.n_test);
    let _ = writeln!(out, "config fingerprint: {}", report.config_fingerprint);
    let _ = writeln!(out, "label  precision  recall  support");
    for c in &report.per_class {
        let _ = writeln!(
            out,
            "{:>5}  {:>9.4}  {:>6.4}  {:>7}",
            c.label, c.precision, c.recall, c.support
        );
    }
    if report.timing.train_ms > 0.0 {
        let _ = writeln!(
            out,
            "timing: train {:.1} ms, eval {:.1} ms",
            report.timing.train_ms, report.timing.eval_ms
        );
    }
    out
}
