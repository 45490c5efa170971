//! Lower-branch extraction, breakpoint selection, and segmentation.
//!
//! The V-I loop of an arcing fault is traversed twice per cycle; fitting
//! wants a function of current, so we first reduce the loop to its lower
//! branch, then partition the current axis into pieces bounded by the
//! chosen breakpoints.

use crate::sim::{Sample, Trajectory};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PrepError {
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("no hysteresis to split: loop extent {extent:.3e} below floor {floor:.3e}")]
    DegenerateLoop { extent: f64, floor: f64 },
    #[error("breakpoints must be strictly increasing: {0}")]
    NonIncreasingGrid(String),
    #[error("piece {piece} has {count} samples but {mode_min} are required")]
    InsufficientSamples {
        piece: usize,
        count: usize,
        mode_min: usize,
    },
    #[error("grid mode {expected:?} required, got {actual:?}")]
    ModeMismatch { expected: FitMode, actual: FitMode },
}

/// Approximation family; decides knot layout and per-piece sample minima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Linear,
    Quadratic,
}

impl FitMode {
    /// Minimum samples per piece for an identifiable fit.
    pub fn min_samples_per_piece(self) -> usize {
        match self {
            FitMode::Linear => 2,
            FitMode::Quadratic => 3,
        }
    }
}

/// Knot locations along the current axis.
///
/// Linear grids carry one knot per piece boundary; quadratic grids add the
/// exact midpoint of every piece as an interpolation knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointGrid {
    xs: Vec<f64>,
    mode: FitMode,
}

impl BreakpointGrid {
    /// Linear grid from piece boundaries (`pieces + 1` strictly increasing values).
    pub fn linear(outer: Vec<f64>) -> Result<Self, PrepError> {
        check_strictly_increasing(&outer)?;
        if outer.len() < 2 {
            return Err(PrepError::NonIncreasingGrid(
                "need at least two breakpoints".into(),
            ));
        }
        Ok(BreakpointGrid {
            xs: outer,
            mode: FitMode::Linear,
        })
    }

    /// Quadratic grid from piece boundaries; midpoints are inserted exactly.
    pub fn quadratic_from_outer(outer: Vec<f64>) -> Result<Self, PrepError> {
        check_strictly_increasing(&outer)?;
        if outer.len() < 2 {
            return Err(PrepError::NonIncreasingGrid(
                "need at least two breakpoints".into(),
            ));
        }
        let mut xs = Vec::with_capacity(outer.len() * 2 - 1);
        for (k, w) in outer.windows(2).enumerate() {
            xs.push(w[0]);
            let mid = 0.5 * (w[0] + w[1]);
            if !(mid > w[0] && mid < w[1]) {
                return Err(PrepError::NonIncreasingGrid(format!(
                    "piece {k} too narrow to hold a midpoint knot"
                )));
            }
            xs.push(mid);
        }
        xs.push(*outer.last().expect("outer is nonempty"));
        Ok(BreakpointGrid {
            xs,
            mode: FitMode::Quadratic,
        })
    }

    /// Rebuilds a grid from serialized knots, revalidating the invariants.
    pub fn from_knot_positions(xs: Vec<f64>, mode: FitMode) -> Result<Self, PrepError> {
        check_strictly_increasing(&xs)?;
        match mode {
            FitMode::Linear => {
                if xs.len() < 2 {
                    return Err(PrepError::NonIncreasingGrid("too few knots".into()));
                }
            }
            FitMode::Quadratic => {
                if xs.len() < 3 || xs.len().is_multiple_of(2) {
                    return Err(PrepError::NonIncreasingGrid(
                        "quadratic grid needs an odd knot count >= 3".into(),
                    ));
                }
                for k in 0..(xs.len() - 1) / 2 {
                    let exact = 0.5 * (xs[2 * k] + xs[2 * k + 2]);
                    if xs[2 * k + 1] != exact {
                        return Err(PrepError::NonIncreasingGrid(format!(
                            "knot {} is not the exact midpoint of its piece",
                            2 * k + 1
                        )));
                    }
                }
            }
        }
        Ok(BreakpointGrid { xs, mode })
    }

    pub fn mode(&self) -> FitMode {
        self.mode
    }

    /// All knot positions, midpoints included for quadratic grids.
    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn n_knots(&self) -> usize {
        self.xs.len()
    }

    pub fn n_pieces(&self) -> usize {
        match self.mode {
            FitMode::Linear => self.xs.len() - 1,
            FitMode::Quadratic => (self.xs.len() - 1) / 2,
        }
    }

    /// Piece boundaries (outer knots only).
    pub fn outer(&self) -> Vec<f64> {
        match self.mode {
            FitMode::Linear => self.xs.clone(),
            FitMode::Quadratic => self.xs.iter().copied().step_by(2).collect(),
        }
    }

    /// `[x_left, x_right]` of piece `k`.
    pub fn piece_bounds(&self, k: usize) -> (f64, f64) {
        match self.mode {
            FitMode::Linear => (self.xs[k], self.xs[k + 1]),
            FitMode::Quadratic => (self.xs[2 * k], self.xs[2 * k + 2]),
        }
    }

    /// Piece index owning current `x`; interior boundaries tie-break left,
    /// out-of-range currents return `None`.
    pub fn piece_of(&self, x: f64) -> Option<usize> {
        let outer = self.outer();
        let first = *outer.first().expect("grid is nonempty");
        let last = *outer.last().expect("grid is nonempty");
        if x < first || x > last {
            return None;
        }
        if x == first {
            return Some(0);
        }
        // Left tie-break: piece k owns (outer[k], outer[k+1]].
        let k = outer.partition_point(|&b| b < x);
        Some(k - 1)
    }
}

fn check_strictly_increasing(xs: &[f64]) -> Result<(), PrepError> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(PrepError::NonIncreasingGrid("non-finite breakpoint".into()));
    }
    for w in xs.windows(2) {
        if w[1] <= w[0] {
            return Err(PrepError::NonIncreasingGrid(format!(
                "{} does not exceed {}",
                w[1], w[0]
            )));
        }
    }
    Ok(())
}

/// How breakpoint positions are chosen along the current axis.
#[derive(Debug, Clone, PartialEq)]
pub enum BreakpointPolicy {
    /// Equal-width pieces across [min current, max current].
    EqualRange,
    /// Interior boundaries at the k/P current quantiles.
    Quantile,
    /// User-supplied piece boundaries (outer knots only).
    Manual(Vec<f64>),
}

/// Lower-branch extraction knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBranchConfig {
    /// Number of current bins the loop is sliced into.
    pub bins: usize,
    /// Loop is degenerate when its widest bin spans less than this fraction
    /// of the overall voltage extent.
    pub floor_frac: f64,
}

impl Default for LowerBranchConfig {
    fn default() -> Self {
        LowerBranchConfig {
            bins: 64,
            floor_frac: 1.0 / 16.0,
        }
    }
}

/// Per-sample bin index over the sample set's own current range.
fn bin_indices(samples: &[Sample], bins: usize) -> Option<Vec<usize>> {
    let i_min = samples.iter().map(|s| s.i).fold(f64::INFINITY, f64::min);
    let i_max = samples.iter().map(|s| s.i).fold(f64::NEG_INFINITY, f64::max);
    let range = i_max - i_min;
    if range <= 0.0 {
        return None;
    }
    Some(
        samples
            .iter()
            .map(|s| ((((s.i - i_min) / range) * bins as f64) as usize).min(bins - 1))
            .collect(),
    )
}

/// Lower representative per occupied bin: the median-voltage sample among
/// the candidates below the bin's min/max midline. The median tracks the
/// branch center instead of the noise envelope a minimum would follow.
fn lower_representatives(samples: &[Sample], bin_ids: &[usize], bins: usize) -> Vec<Sample> {
    let mut lo = vec![f64::INFINITY; bins];
    let mut hi = vec![f64::NEG_INFINITY; bins];
    for (s, &b) in samples.iter().zip(bin_ids) {
        lo[b] = lo[b].min(s.v);
        hi[b] = hi[b].max(s.v);
    }
    let mut candidates: Vec<Vec<Sample>> = vec![Vec::new(); bins];
    for (s, &b) in samples.iter().zip(bin_ids) {
        if s.v <= 0.5 * (lo[b] + hi[b]) {
            candidates[b].push(*s);
        }
    }
    candidates
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(|mut c| {
            c.sort_by(|a, b| (a.v, a.t).partial_cmp(&(b.v, b.t)).expect("finite samples"));
            c[(c.len() - 1) / 2]
        })
        .collect()
}

/// Reduces a V-I loop to its lower branch: one representative sample per
/// current bin, taken from the lower half of that bin's voltage span.
///
/// The reduction is repeated until the retained set is single-valued per
/// bin over its own current range, so the output is a fixed point and the
/// operation is idempotent. Inputs already in that state pass through
/// unchanged (sorted by current); dense inputs whose widest bin spans less
/// than the configured fraction of the voltage extent have no hysteresis to
/// split and are rejected.
pub fn extract_lower_branch(
    traj: &Trajectory,
    config: &LowerBranchConfig,
) -> Result<Trajectory, PrepError> {
    if traj.samples.is_empty() {
        return Err(PrepError::EmptyTrajectory);
    }
    let bins = config.bins.max(2);
    let sorted_output = |mut samples: Vec<Sample>| -> Trajectory {
        samples.sort_by(|a, b| {
            (a.i, a.v, a.t)
                .partial_cmp(&(b.i, b.v, b.t))
                .expect("finite samples")
        });
        Trajectory {
            samples,
            label: traj.label,
            meta: traj.meta,
        }
    };

    let bin_ids = bin_indices(&traj.samples, bins).ok_or(PrepError::DegenerateLoop {
        extent: 0.0,
        floor: f64::INFINITY,
    })?;

    let mut occupancy = vec![0usize; bins];
    let mut lo = vec![f64::INFINITY; bins];
    let mut hi = vec![f64::NEG_INFINITY; bins];
    for (s, &b) in traj.samples.iter().zip(&bin_ids) {
        occupancy[b] += 1;
        lo[b] = lo[b].min(s.v);
        hi[b] = hi[b].max(s.v);
    }

    // Already a branch, not a loop: nothing to split.
    if occupancy.iter().all(|&n| n <= 1) {
        return Ok(sorted_output(traj.samples.clone()));
    }

    let v_min = traj.samples.iter().map(|s| s.v).fold(f64::INFINITY, f64::min);
    let v_max = traj
        .samples
        .iter()
        .map(|s| s.v)
        .fold(f64::NEG_INFINITY, f64::max);
    let extent = occupancy
        .iter()
        .zip(lo.iter().zip(&hi))
        .filter(|(n, _)| **n > 0)
        .map(|(_, (l, h))| h - l)
        .fold(0.0, f64::max);
    let floor = config.floor_frac * (v_max - v_min);
    if extent < floor || v_max <= v_min {
        return Err(PrepError::DegenerateLoop { extent, floor });
    }

    let mut samples = lower_representatives(&traj.samples, &bin_ids, bins);
    // Re-bin over the shrunken range until single-valued; terminates because
    // every round strictly reduces the sample count.
    while let Some(ids) = bin_indices(&samples, bins) {
        let mut occupancy = vec![0usize; bins];
        for &b in &ids {
            occupancy[b] += 1;
        }
        if occupancy.iter().all(|&n| n <= 1) {
            break;
        }
        samples = lower_representatives(&samples, &ids, bins);
    }
    Ok(sorted_output(samples))
}

/// Chooses piece boundaries for `pieces` pieces over the trajectory's
/// current span and builds the grid for `mode`.
pub fn select_breakpoints(
    traj: &Trajectory,
    policy: &BreakpointPolicy,
    mode: FitMode,
    pieces: usize,
) -> Result<BreakpointGrid, PrepError> {
    if traj.samples.is_empty() {
        return Err(PrepError::EmptyTrajectory);
    }
    if pieces < 1 {
        return Err(PrepError::NonIncreasingGrid("need at least one piece".into()));
    }
    let outer = match policy {
        BreakpointPolicy::EqualRange => {
            let lo = traj.samples.iter().map(|s| s.i).fold(f64::INFINITY, f64::min);
            let hi = traj
                .samples
                .iter()
                .map(|s| s.i)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut outer = Vec::with_capacity(pieces + 1);
            outer.push(lo);
            for k in 1..pieces {
                outer.push(lo + (hi - lo) * k as f64 / pieces as f64);
            }
            outer.push(hi);
            outer
        }
        BreakpointPolicy::Quantile => {
            let mut currents: Vec<f64> = traj.samples.iter().map(|s| s.i).collect();
            currents.sort_by(|a, b| a.partial_cmp(b).expect("finite currents"));
            let quantile = |q: f64| -> f64 {
                let pos = q * (currents.len() - 1) as f64;
                let idx = pos.floor() as usize;
                let frac = pos - idx as f64;
                if idx + 1 < currents.len() {
                    currents[idx] * (1.0 - frac) + currents[idx + 1] * frac
                } else {
                    currents[idx]
                }
            };
            let mut outer = Vec::with_capacity(pieces + 1);
            outer.push(currents[0]);
            for k in 1..pieces {
                outer.push(quantile(k as f64 / pieces as f64));
            }
            outer.push(*currents.last().expect("nonempty"));
            outer
        }
        BreakpointPolicy::Manual(values) => values.clone(),
    };
    if outer.len() != pieces + 1 {
        return Err(PrepError::NonIncreasingGrid(format!(
            "expected {} breakpoints for {} pieces, got {}",
            pieces + 1,
            pieces,
            outer.len()
        )));
    }
    match mode {
        FitMode::Linear => BreakpointGrid::linear(outer),
        FitMode::Quadratic => BreakpointGrid::quadratic_from_outer(outer),
    }
}

/// Samples of one trajectory partitioned into the grid's pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    grid: BreakpointGrid,
    pieces: Vec<Vec<(f64, f64)>>,
    dropped: usize,
}

impl Segmentation {
    pub fn grid(&self) -> &BreakpointGrid {
        &self.grid
    }

    /// `(current, voltage)` pairs of piece `k`.
    pub fn piece(&self, k: usize) -> &[(f64, f64)] {
        &self.pieces[k]
    }

    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }

    /// Per-piece sample counts `N_k`.
    pub fn counts(&self) -> Vec<usize> {
        self.pieces.iter().map(Vec::len).collect()
    }

    /// Samples outside the grid span, dropped during partitioning.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn total_samples(&self) -> usize {
        self.pieces.iter().map(Vec::len).sum()
    }
}

/// Assigns samples to pieces without enforcing per-piece minima.
pub fn partition_samples(traj: &Trajectory, grid: &BreakpointGrid) -> Segmentation {
    let mut pieces = vec![Vec::new(); grid.n_pieces()];
    let mut dropped = 0usize;
    for s in &traj.samples {
        match grid.piece_of(s.i) {
            Some(k) => pieces[k].push((s.i, s.v)),
            None => dropped += 1,
        }
    }
    Segmentation {
        grid: grid.clone(),
        pieces,
        dropped,
    }
}

/// Partitions samples into pieces and enforces the mode's per-piece minimum.
pub fn segment_samples(traj: &Trajectory, grid: &BreakpointGrid) -> Result<Segmentation, PrepError> {
    let seg = partition_samples(traj, grid);
    let min = grid.mode().min_samples_per_piece();
    for (k, piece) in seg.pieces.iter().enumerate() {
        if piece.len() < min {
            return Err(PrepError::InsufficientSamples {
                piece: k,
                count: piece.len(),
                mode_min: min,
            });
        }
    }
    Ok(seg)
}
