//! Shared builders for the pipeline benchmarks.

use hifloc_core::prep::{
    extract_lower_branch, segment_samples, select_breakpoints, BreakpointPolicy, FitMode,
    LowerBranchConfig, Segmentation,
};
use hifloc_core::sim::{
    add_measurement_noise, simulate_hif_trajectory, FaultScenario, HifCircuitParams, SourceSpec,
    Trajectory,
};

pub fn bench_circuit() -> HifCircuitParams {
    HifCircuitParams {
        v_p: 300.0,
        v_n: -280.0,
        r_p: 120.0,
        r_n: 130.0,
        flicker: 0.05,
    }
}

pub fn bench_source() -> SourceSpec {
    SourceSpec {
        amplitude: 2400.0,
        frequency: 60.0,
        sample_rate: 20_000.0,
        n_cycles: 2,
    }
}

pub fn bench_scenario() -> FaultScenario {
    FaultScenario {
        location_label: 7,
        series_resistance: 40.0,
        series_reactance: 12.0,
    }
}

/// One noisy trajectory with the benchmark defaults.
pub fn bench_trajectory(seed: u64) -> Trajectory {
    let clean =
        simulate_hif_trajectory(&bench_circuit(), &bench_source(), &bench_scenario(), seed)
            .expect("benchmark parameters are valid");
    add_measurement_noise(&clean, 0.01, seed ^ 0xbeef)
}

/// Prepped segmentation ready for design building.
pub fn bench_segmentation(seed: u64, mode: FitMode) -> Segmentation {
    let traj = bench_trajectory(seed);
    let lower = extract_lower_branch(&traj, &LowerBranchConfig::default()).expect("loop splits");
    let grid =
        select_breakpoints(&lower, &BreakpointPolicy::EqualRange, mode, 3).expect("grid builds");
    segment_samples(&lower, &grid).expect("segments are populated")
}
