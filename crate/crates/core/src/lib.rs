//! High-impedance fault localization from feederhead V-I trajectories.
//!
//! High-impedance faults draw too little current for overcurrent relays, but
//! the voltage-current loop they trace at the feederhead carries a location
//! signature. This crate implements the full desk-scale pipeline:
//!
//! 1. [`sim`] - synthetic trajectories from a two-antiparallel-diode arc
//!    model behind a per-location series impedance, with seeded noise;
//! 2. [`prep`] - lower-branch extraction and breakpoint segmentation;
//! 3. [`fit`] - continuous piecewise linear/quadratic least squares in
//!    closed form over the knot y-values;
//! 4. [`features`] - slope (s_k) and curvature (m_k, n_k) feature vectors,
//!    with optional standardization;
//! 5. [`svm`] - from-scratch SMO-trained kernel SVM with one-vs-one
//!    multiclass voting and JSON persistence;
//! 6. [`pipeline`] - config-driven stage runners (simulate, ingest, fit,
//!    train, eval, plot-data) shared with the CLI.
//!
//! Everything is deterministic given the seeds named in the configuration.

pub mod eval;
pub mod features;
pub mod fit;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod prep;
pub mod sim;
pub mod svm;

pub use eval::{spearman_rank, ConfusionMatrix, EvalError, EvalReport, SplitIndices};
pub use features::{
    apply_scaler, features_linear, features_quadratic, fit_scaler, FeatureError, FeatureKind,
    FeatureVector, Scaler,
};
pub use fit::{
    build_linear_design, build_quadratic_design, fit_residual, linear_slopes, solve_linear_fit,
    solve_quadratic_fit, DesignMatrix, FitBounds, FitError, LinearFit, PiecewiseFit, QuadFit,
    SolveOptions,
};
pub use prep::{
    extract_lower_branch, segment_samples, select_breakpoints, BreakpointGrid, BreakpointPolicy,
    FitMode, LowerBranchConfig, PrepError, Segmentation,
};
pub use sim::{
    add_measurement_noise, diode_branch_current, generate_dataset, simulate_hif_trajectory,
    FaultScenario, HifCircuitParams, Sample, SimError, SourceSpec, Trajectory,
};
pub use svm::{
    kernel_eval, load_model, save_model, train_binary_svm, train_multiclass, BinarySvm,
    KernelSpec, MulticlassSvmModel, SmoParams, SvmError,
};
