//! Synthetic high-impedance-fault trajectory generation.
//!
//! The arc is modeled as two antiparallel diode branches with DC sources
//! `v_p` / `v_n` and branch resistances `r_p` / `r_n`: current flows to
//! ground when the fault-point voltage exceeds `v_p`, returns to the source
//! when it drops below `v_n`, and stops entirely inside the dead band
//! `[v_n, v_p]` (arc quenching). The fault sits behind a per-location
//! Thevenin impedance, which is what makes trajectories from different
//! locations distinguishable at the feederhead.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Floor on the multiplicative resistance jitter so a flickering branch can
/// never reach zero or negative resistance.
const MIN_JITTER_FACTOR: f64 = 0.05;

/// Cap on per-step regime attempts before the solve is declared stuck.
const REGIME_ATTEMPT_CAP: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid circuit parameters: {0}")]
    InvalidCircuit(String),
    #[error("invalid source spec: {0}")]
    InvalidSource(String),
    #[error("invalid fault scenario: {0}")]
    InvalidScenario(String),
    #[error("per-step circuit solve failed to settle on a regime after {0} attempts")]
    NonConvergence(usize),
    #[error("duplicate scenario label {0}")]
    DuplicateLabel(u32),
    #[error("per_class must be at least 1")]
    EmptyClass,
}

/// Two-antiparallel-diode arc circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HifCircuitParams {
    /// Positive-branch DC source voltage (V, > 0).
    pub v_p: f64,
    /// Negative-branch DC source voltage (V, < 0).
    pub v_n: f64,
    /// Positive-branch resistance (ohm, > 0).
    pub r_p: f64,
    /// Negative-branch resistance (ohm, > 0).
    pub r_n: f64,
    /// Relative per-step resistance jitter amplitude, in [0, 0.5].
    pub flicker: f64,
}

impl HifCircuitParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [self.v_p, self.v_n, self.r_p, self.r_n, self.flicker];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidCircuit("non-finite field".into()));
        }
        if !(self.v_n < 0.0 && 0.0 < self.v_p) {
            return Err(SimError::InvalidCircuit(format!(
                "dead band must straddle zero: v_n = {}, v_p = {}",
                self.v_n, self.v_p
            )));
        }
        if self.r_p <= 0.0 || self.r_n <= 0.0 {
            return Err(SimError::InvalidCircuit(
                "branch resistances must be strictly positive".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.flicker) {
            return Err(SimError::InvalidCircuit(format!(
                "flicker must lie in [0, 0.5], got {}",
                self.flicker
            )));
        }
        Ok(())
    }
}

/// A fault location reduced to its Thevenin signature seen from the feederhead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultScenario {
    /// Opaque bus identifier used as the class label.
    pub location_label: u32,
    /// Cumulative feeder resistance to the fault point (ohm, >= 0).
    pub series_resistance: f64,
    /// Cumulative feeder reactance at source frequency (ohm, >= 0).
    pub series_reactance: f64,
}

impl FaultScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.series_resistance.is_finite()
            || !self.series_reactance.is_finite()
            || self.series_resistance < 0.0
            || self.series_reactance < 0.0
        {
            return Err(SimError::InvalidScenario(format!(
                "series impedance must be finite and nonnegative (label {})",
                self.location_label
            )));
        }
        Ok(())
    }
}

/// Sinusoidal feederhead source and sampling setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    /// Peak source voltage (V, > 0).
    pub amplitude: f64,
    /// Source frequency (Hz, > 0).
    pub frequency: f64,
    /// Samples per second (Hz).
    pub sample_rate: f64,
    /// Number of fundamental cycles simulated (>= 1).
    pub n_cycles: u32,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(SimError::InvalidSource("amplitude must be > 0".into()));
        }
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(SimError::InvalidSource("frequency must be > 0".into()));
        }
        if !self.sample_rate.is_finite() || self.sample_rate < 100.0 * self.frequency {
            return Err(SimError::InvalidSource(format!(
                "sample_rate must be at least 100 x frequency ({} < {})",
                self.sample_rate,
                100.0 * self.frequency
            )));
        }
        if self.n_cycles < 1 {
            return Err(SimError::InvalidSource("n_cycles must be >= 1".into()));
        }
        Ok(())
    }

    /// Total sample count over the configured cycles.
    pub fn sample_count(&self) -> usize {
        (self.n_cycles as f64 * self.sample_rate / self.frequency).round() as usize
    }
}

/// One feederhead measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub i: f64,
    pub v: f64,
}

/// Provenance carried alongside the samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub scenario: Option<u32>,
    pub eta: f64,
}

/// Ordered feederhead (t, i, v) samples plus an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub label: Option<u32>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Current through the antiparallel diode pair at fault-point voltage `v_f`.
///
/// Zero inside the dead band `[v_n, v_p]`; Ohm's law against the conducting
/// branch outside it.
pub fn diode_branch_current(v_f: f64, params: &HifCircuitParams) -> f64 {
    if v_f > params.v_p {
        (v_f - params.v_p) / params.r_p
    } else if v_f < params.v_n {
        (v_f - params.v_n) / params.r_n
    } else {
        0.0
    }
}

/// Per-step jittered branch resistances.
fn jittered(r: f64, flicker: f64, rng: &mut ChaCha8Rng, unit_normal: &Normal<f64>) -> f64 {
    // Always burn one draw so the stream layout does not depend on flicker.
    let g = unit_normal.sample(rng);
    if flicker == 0.0 {
        r
    } else {
        r * (1.0 + flicker * g).max(MIN_JITTER_FACTOR)
    }
}

/// Solves one step of the series circuit: source voltage seen at the fault
/// (`v_drive`) behind `r_series` into the diode pair.
///
/// Each conduction regime yields a closed-form current; the chosen regime
/// must be self-consistent with the resulting fault-point voltage.
fn solve_step(
    v_drive: f64,
    r_series: f64,
    v_p: f64,
    v_n: f64,
    r_p: f64,
    r_n: f64,
) -> Result<f64, SimError> {
    for attempt in 0..REGIME_ATTEMPT_CAP {
        let i = match attempt {
            // Dead band first: the common case during quenching.
            0 => 0.0,
            1 => (v_drive - v_p) / (r_p + r_series),
            2 => (v_drive - v_n) / (r_n + r_series),
            _ => break,
        };
        let v_f = v_drive - i * r_series;
        let consistent = match attempt {
            0 => (v_n..=v_p).contains(&v_f),
            1 => i > 0.0 && v_f >= v_p,
            2 => i < 0.0 && v_f <= v_n,
            _ => false,
        };
        if consistent {
            return Ok(i);
        }
    }
    Err(SimError::NonConvergence(REGIME_ATTEMPT_CAP))
}

/// Time-steps the sinusoidal source through the fault's series impedance
/// into the diode pair and records the feederhead (i, v) trace.
///
/// Reactance is handled quasi-statically: the voltage driving the fault is
/// the source delayed by the impedance angle of the path. Deterministic
/// given identical inputs and seed.
pub fn simulate_hif_trajectory(
    circuit: &HifCircuitParams,
    source: &SourceSpec,
    fault: &FaultScenario,
    seed: u64,
) -> Result<Trajectory, SimError> {
    circuit.validate()?;
    source.validate()?;
    fault.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal is well-formed");

    let n = source.sample_count();
    let omega = 2.0 * std::f64::consts::PI * source.frequency;
    let r_cond = 0.5 * (circuit.r_p + circuit.r_n);
    let phase_lag = fault
        .series_reactance
        .atan2(fault.series_resistance + r_cond);

    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / source.sample_rate;
        let v_head = source.amplitude * (omega * t).sin();
        let v_drive = source.amplitude * (omega * t - phase_lag).sin();

        let r_p = jittered(circuit.r_p, circuit.flicker, &mut rng, &unit_normal);
        let r_n = jittered(circuit.r_n, circuit.flicker, &mut rng, &unit_normal);
        let i = solve_step(
            v_drive,
            fault.series_resistance,
            circuit.v_p,
            circuit.v_n,
            r_p,
            r_n,
        )?;
        samples.push(Sample { t, i, v: v_head });
    }

    Ok(Trajectory {
        samples,
        label: Some(fault.location_label),
        meta: TrajectoryMeta {
            seed,
            scenario: Some(fault.location_label),
            eta: 0.0,
        },
    })
}

/// Perturbs each channel with zero-mean Gaussian noise scaled to
/// `eta x` that channel's nominal (peak absolute) value.
///
/// `eta = 0` returns a bitwise-identical copy; otherwise deterministic
/// given the seed.
pub fn add_measurement_noise(traj: &Trajectory, eta: f64, seed: u64) -> Trajectory {
    assert!(eta >= 0.0 && eta.is_finite(), "eta must be >= 0");
    let mut out = traj.clone();
    out.meta.eta = eta;
    if eta == 0.0 || traj.samples.is_empty() {
        return out;
    }

    let nominal_i = traj.samples.iter().map(|s| s.i.abs()).fold(0.0, f64::max);
    let nominal_v = traj.samples.iter().map(|s| s.v.abs()).fold(0.0, f64::max);
    let sigma_i = eta * nominal_i;
    let sigma_v = eta * nominal_v;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal is well-formed");
    for s in &mut out.samples {
        s.i += sigma_i * unit_normal.sample(&mut rng);
        s.v += sigma_v * unit_normal.sample(&mut rng);
    }
    out
}

/// SplitMix64 step for deriving decorrelated sub-seeds.
fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic per-trajectory sub-seed.
pub fn derive_seed(base: u64, label: u32, replicate: u32) -> u64 {
    mix_seed(base ^ mix_seed((u64::from(label) << 32) | u64::from(replicate)))
}

/// Simulates `per_class` noisy trajectories for every scenario.
///
/// Ordering is scenario-major then replicate, and every trajectory gets a
/// distinct derived sub-seed, so the collection is fully deterministic.
pub fn generate_dataset(
    scenarios: &[FaultScenario],
    circuit: &HifCircuitParams,
    source: &SourceSpec,
    per_class: u32,
    eta: f64,
    seed: u64,
) -> Result<Vec<Trajectory>, SimError> {
    if per_class < 1 {
        return Err(SimError::EmptyClass);
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in scenarios {
        if !seen.insert(s.location_label) {
            return Err(SimError::DuplicateLabel(s.location_label));
        }
    }

    let mut out = Vec::with_capacity(scenarios.len() * per_class as usize);
    for scenario in scenarios {
        for rep in 0..per_class {
            let sub_seed = derive_seed(seed, scenario.location_label, rep);
            let clean = simulate_hif_trajectory(circuit, source, scenario, sub_seed)?;
            let noisy = add_measurement_noise(&clean, eta, mix_seed(sub_seed));
            out.push(noisy);
        }
    }
    Ok(out)
}
