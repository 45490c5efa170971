//! Continuous piecewise least squares with fixed breakpoints.
//!
//! Both families share one structure: every piece is parameterized by the
//! y-values of its knots, so each observation row is a barycentric (linear)
//! or Lagrange (quadratic) combination of knot unknowns. Stacking the rows
//! gives an ordinary linear least-squares problem in the knot vector, shared
//! knots make the approximation C0-continuous by construction, and nothing
//! constrains the first derivative across pieces.

use crate::linalg::{solve_least_squares, solve_least_squares_ridge, Matrix};
use crate::prep::{BreakpointGrid, FitMode, Segmentation};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("piece {0} has zero width")]
    ZeroWidthPiece(usize),
    #[error("normal equations are singular; deficient knots {deficient_knots:?}")]
    SingularNormalEquations { deficient_knots: Vec<usize> },
    #[error("knot {knot} has lower bound {lower} above upper bound {upper}")]
    InfeasibleBounds { knot: usize, lower: f64, upper: f64 },
    #[error("fit and segmentation use different grids")]
    GridMismatch,
    #[error("expected a {expected:?} grid, got {actual:?}")]
    ModeMismatch { expected: FitMode, actual: FitMode },
    #[error("bound projection did not settle after {0} active-set iterations")]
    BoundedSolveStalled(usize),
}

/// Optional per-knot box bounds on the fitted y-values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitBounds {
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
}

impl FitBounds {
    /// No bounds on any knot.
    pub fn none() -> Self {
        FitBounds::default()
    }

    pub fn new(lower: Vec<Option<f64>>, upper: Vec<Option<f64>>) -> Result<Self, FitError> {
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if let (Some(lo), Some(hi)) = (lo, hi) {
                if lo > hi {
                    return Err(FitError::InfeasibleBounds {
                        knot: k,
                        lower: *lo,
                        upper: *hi,
                    });
                }
            }
        }
        Ok(FitBounds { lower, upper })
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(Option::is_none) && self.upper.iter().all(Option::is_none)
    }

    fn lower_of(&self, k: usize) -> Option<f64> {
        self.lower.get(k).copied().flatten()
    }

    fn upper_of(&self, k: usize) -> Option<f64> {
        self.upper.get(k).copied().flatten()
    }
}

/// Solver knobs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Retry a singular system with a tiny ridge term instead of failing.
    pub ridge_fallback: bool,
}

/// Stacked observation rows `A` and targets `b = V`, one row per retained
/// sample, in piece order.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    a: Matrix,
    b: Vec<f64>,
    grid: BreakpointGrid,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn targets(&self) -> &[f64] {
        &self.b
    }

    pub fn grid(&self) -> &BreakpointGrid {
        &self.grid
    }

    /// Infinity norm of `A^T (A y - b)`, the stationarity defect of `y`.
    pub fn normal_equation_defect(&self, y: &[f64]) -> f64 {
        let resid: Vec<f64> = self
            .a
            .mul_vec(y)
            .iter()
            .zip(&self.b)
            .map(|(p, t)| p - t)
            .collect();
        self.a
            .transpose_mul_vec(&resid)
            .iter()
            .fold(0.0, |acc, g| acc.max(g.abs()))
    }
}

fn barycentric_linear(x: f64, x_left: f64, x_right: f64) -> (f64, f64) {
    let width = x_right - x_left;
    ((x_right - x) / width, (x - x_left) / width)
}

fn lagrange_quadratic(x: f64, x_left: f64, x_mid: f64, x_right: f64) -> (f64, f64, f64) {
    let l = (x - x_mid) * (x - x_right) / ((x_left - x_mid) * (x_left - x_right));
    let m = (x - x_left) * (x - x_right) / ((x_mid - x_left) * (x_mid - x_right));
    let r = (x - x_left) * (x - x_mid) / ((x_right - x_left) * (x_right - x_mid));
    (l, m, r)
}

/// Builds the linear design: each sample of piece `k` contributes the
/// barycentric pair `(v, w)` on the piece's two knots, and every row sums
/// to one.
pub fn build_linear_design(seg: &Segmentation) -> Result<DesignMatrix, FitError> {
    let grid = seg.grid();
    if grid.mode() != FitMode::Linear {
        return Err(FitError::ModeMismatch {
            expected: FitMode::Linear,
            actual: grid.mode(),
        });
    }
    let n_rows = seg.total_samples();
    let n_knots = grid.n_knots();
    let mut a = Matrix::zeros(n_rows, n_knots);
    let mut b = Vec::with_capacity(n_rows);
    let mut row = 0;
    for k in 0..seg.n_pieces() {
        let (x_left, x_right) = grid.piece_bounds(k);
        if x_right == x_left {
            return Err(FitError::ZeroWidthPiece(k));
        }
        for &(i, v) in seg.piece(k) {
            let (wl, wr) = barycentric_linear(i, x_left, x_right);
            a.set(row, k, wl);
            a.set(row, k + 1, wr);
            b.push(v);
            row += 1;
        }
    }
    Ok(DesignMatrix {
        a,
        b,
        grid: grid.clone(),
    })
}

/// Builds the quadratic design: each sample contributes the Lagrange weights
/// through its piece's (left, midpoint, right) knots; rows sum to one.
pub fn build_quadratic_design(seg: &Segmentation) -> Result<DesignMatrix, FitError> {
    let grid = seg.grid();
    if grid.mode() != FitMode::Quadratic {
        return Err(FitError::ModeMismatch {
            expected: FitMode::Quadratic,
            actual: grid.mode(),
        });
    }
    let knots = grid.knots();
    let n_rows = seg.total_samples();
    let mut a = Matrix::zeros(n_rows, knots.len());
    let mut b = Vec::with_capacity(n_rows);
    let mut row = 0;
    for k in 0..seg.n_pieces() {
        let (x_left, x_mid, x_right) = (knots[2 * k], knots[2 * k + 1], knots[2 * k + 2]);
        if x_right == x_left {
            return Err(FitError::ZeroWidthPiece(k));
        }
        for &(i, v) in seg.piece(k) {
            let (wl, wm, wr) = lagrange_quadratic(i, x_left, x_mid, x_right);
            a.set(row, 2 * k, wl);
            a.set(row, 2 * k + 1, wm);
            a.set(row, 2 * k + 2, wr);
            b.push(v);
            row += 1;
        }
    }
    Ok(DesignMatrix {
        a,
        b,
        grid: grid.clone(),
    })
}

/// Scale-aware ridge strength used by the opt-in fallback.
fn ridge_lambda(a: &Matrix) -> f64 {
    let mut trace = 0.0;
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            let v = a.get(r, c);
            trace += v * v;
        }
    }
    1e-10 * (trace / a.cols() as f64).max(1.0)
}

fn solve_unbounded(design: &DesignMatrix, options: &SolveOptions) -> Result<Vec<f64>, FitError> {
    match solve_least_squares(&design.a, &design.b) {
        Ok(y) => Ok(y),
        Err(rank) => {
            if options.ridge_fallback {
                Ok(solve_least_squares_ridge(
                    &design.a,
                    &design.b,
                    ridge_lambda(&design.a),
                ))
            } else {
                Err(FitError::SingularNormalEquations {
                    deficient_knots: rank.deficient_columns,
                })
            }
        }
    }
}

/// Re-solves the free knots with the clamped ones fixed at their bounds.
#[allow(clippy::needless_range_loop)]
fn solve_reduced(
    design: &DesignMatrix,
    clamped: &[Option<f64>],
    options: &SolveOptions,
) -> Result<Vec<f64>, FitError> {
    let free: Vec<usize> = (0..design.a.cols())
        .filter(|k| clamped[*k].is_none())
        .collect();
    let mut y: Vec<f64> = clamped.iter().map(|c| c.unwrap_or(0.0)).collect();
    if free.is_empty() {
        return Ok(y);
    }
    let mut reduced = Matrix::zeros(design.a.rows(), free.len());
    let mut rhs = design.b.clone();
    for r in 0..design.a.rows() {
        for (j, &k) in free.iter().enumerate() {
            reduced.set(r, j, design.a.get(r, k));
        }
        for (k, c) in clamped.iter().enumerate() {
            if let Some(value) = c {
                rhs[r] -= design.a.get(r, k) * value;
            }
        }
    }
    let solution = match solve_least_squares(&reduced, &rhs) {
        Ok(s) => s,
        Err(rank) => {
            if options.ridge_fallback {
                solve_least_squares_ridge(&reduced, &rhs, ridge_lambda(&reduced))
            } else {
                return Err(FitError::SingularNormalEquations {
                    deficient_knots: rank.deficient_columns.iter().map(|j| free[*j]).collect(),
                });
            }
        }
    };
    for (j, &k) in free.iter().enumerate() {
        y[k] = solution[j];
    }
    Ok(y)
}

const ACTIVE_SET_CAP: usize = 200;

/// Solves the knot vector, projecting onto the bounds with an active-set
/// loop when they bite: clamp the most-violated knot, re-solve the free
/// ones, and release clamped knots whose multiplier turns negative.
fn solve_knots(
    design: &DesignMatrix,
    bounds: &FitBounds,
    options: &SolveOptions,
) -> Result<Vec<f64>, FitError> {
    let n = design.a.cols();
    for k in 0..n {
        if let (Some(lo), Some(hi)) = (bounds.lower_of(k), bounds.upper_of(k)) {
            if lo > hi {
                return Err(FitError::InfeasibleBounds {
                    knot: k,
                    lower: lo,
                    upper: hi,
                });
            }
        }
    }

    let mut y = solve_unbounded(design, options)?;
    if bounds.is_unbounded() {
        return Ok(y);
    }

    let mut clamped: Vec<Option<f64>> = vec![None; n];
    let mut at_lower = vec![false; n];
    for _ in 0..ACTIVE_SET_CAP {
        // Most-violated free knot, if any.
        let mut worst: Option<(usize, f64, f64, bool)> = None;
        for k in 0..n {
            if clamped[k].is_some() {
                continue;
            }
            if let Some(lo) = bounds.lower_of(k) {
                let gap = lo - y[k];
                if gap > 0.0 && worst.is_none_or(|w| gap > w.1) {
                    worst = Some((k, gap, lo, true));
                }
            }
            if let Some(hi) = bounds.upper_of(k) {
                let gap = y[k] - hi;
                if gap > 0.0 && worst.is_none_or(|w| gap > w.1) {
                    worst = Some((k, gap, hi, false));
                }
            }
        }
        if let Some((k, _, bound, lower)) = worst {
            clamped[k] = Some(bound);
            at_lower[k] = lower;
            y = solve_reduced(design, &clamped, options)?;
            continue;
        }

        // Feasible: check multiplier signs of the clamped knots.
        let resid: Vec<f64> = design
            .a
            .mul_vec(&y)
            .iter()
            .zip(&design.b)
            .map(|(p, t)| p - t)
            .collect();
        let grad = design.a.transpose_mul_vec(&resid); // 1/2 gradient
        let tol = 1e-9 * (1.0 + grad.iter().fold(0.0_f64, |m, g| m.max(g.abs())));
        let mut release: Option<(usize, f64)> = None;
        for k in 0..n {
            if clamped[k].is_none() {
                continue;
            }
            // At a lower bound the multiplier is +grad, at an upper bound -grad.
            let mult = if at_lower[k] { grad[k] } else { -grad[k] };
            if mult < -tol && release.is_none_or(|r| mult < r.1) {
                release = Some((k, mult));
            }
        }
        match release {
            Some((k, _)) => {
                clamped[k] = None;
                y = solve_reduced(design, &clamped, options)?;
            }
            None => return Ok(y),
        }
    }
    Err(FitError::BoundedSolveStalled(ACTIVE_SET_CAP))
}

fn objective(design: &DesignMatrix, y: &[f64]) -> f64 {
    design
        .a
        .mul_vec(y)
        .iter()
        .zip(&design.b)
        .map(|(p, t)| (p - t) * (p - t))
        .sum()
}

/// Continuous piecewise linear fit: knot y-values plus derived slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    grid: BreakpointGrid,
    knots: Vec<f64>,
    residual: f64,
}

impl LinearFit {
    pub fn from_knots(grid: BreakpointGrid, knots: Vec<f64>, residual: f64) -> Result<Self, FitError> {
        if grid.mode() != FitMode::Linear {
            return Err(FitError::ModeMismatch {
                expected: FitMode::Linear,
                actual: grid.mode(),
            });
        }
        assert_eq!(grid.n_knots(), knots.len(), "knot count must match grid");
        Ok(LinearFit {
            grid,
            knots,
            residual,
        })
    }

    pub fn grid(&self) -> &BreakpointGrid {
        &self.grid
    }

    /// Fitted y-values at the knots.
    pub fn knot_values(&self) -> &[f64] {
        &self.knots
    }

    /// Sum of squared fitting errors reported by the solver.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Per-piece slope rates, always recomputed from the knots.
    pub fn slopes(&self) -> Vec<f64> {
        let xs = self.grid.knots();
        (0..self.grid.n_pieces())
            .map(|k| (self.knots[k + 1] - self.knots[k]) / (xs[k + 1] - xs[k]))
            .collect()
    }

    /// Per-piece intercepts `h_k = y_left - s_k x_left`.
    pub fn intercepts(&self) -> Vec<f64> {
        let xs = self.grid.knots();
        self.slopes()
            .iter()
            .enumerate()
            .map(|(k, s)| self.knots[k] - s * xs[k])
            .collect()
    }

    pub fn in_domain(&self, x: f64) -> bool {
        self.grid.piece_of(x).is_some()
    }

    /// Evaluates the fit at current `x` (end pieces extend beyond the grid).
    pub fn evaluate(&self, x: f64) -> f64 {
        let k = clamped_piece(&self.grid, x);
        let (x_left, x_right) = self.grid.piece_bounds(k);
        let (wl, wr) = barycentric_linear(x, x_left, x_right);
        self.knots[k] * wl + self.knots[k + 1] * wr
    }
}

/// Per-piece quadratic coefficients of `y = m x^2 + n x + h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadPieceCoeffs {
    pub m: f64,
    pub n: f64,
    pub h: f64,
}

/// Continuous piecewise quadratic fit over (left, midpoint, right) knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadFit {
    grid: BreakpointGrid,
    knots: Vec<f64>,
    residual: f64,
}

impl QuadFit {
    pub fn from_knots(grid: BreakpointGrid, knots: Vec<f64>, residual: f64) -> Result<Self, FitError> {
        if grid.mode() != FitMode::Quadratic {
            return Err(FitError::ModeMismatch {
                expected: FitMode::Quadratic,
                actual: grid.mode(),
            });
        }
        assert_eq!(grid.n_knots(), knots.len(), "knot count must match grid");
        Ok(QuadFit {
            grid,
            knots,
            residual,
        })
    }

    pub fn grid(&self) -> &BreakpointGrid {
        &self.grid
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.knots
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Quadratic/linear/constant coefficients per piece, recomputed from the
    /// knots: the midpoint layout cancels `n` and `h` in the second
    /// difference, giving `m` directly, then `n` and `h` follow.
    pub fn coefficients(&self) -> Vec<QuadPieceCoeffs> {
        let xs = self.grid.knots();
        (0..self.grid.n_pieces())
            .map(|k| {
                let (xl, xm, xr) = (xs[2 * k], xs[2 * k + 1], xs[2 * k + 2]);
                let (yl, ym, yr) = (
                    self.knots[2 * k],
                    self.knots[2 * k + 1],
                    self.knots[2 * k + 2],
                );
                let m = (yr - 2.0 * ym + yl) / (xr * xr - 2.0 * xm * xm + xl * xl);
                let n = (ym - yl - m * (xm * xm - xl * xl)) / (xm - xl);
                let h = yl - m * xl * xl - n * xl;
                QuadPieceCoeffs { m, n, h }
            })
            .collect()
    }

    pub fn in_domain(&self, x: f64) -> bool {
        self.grid.piece_of(x).is_some()
    }

    /// Evaluates via the Lagrange form on the knots, so knot passage is exact.
    pub fn evaluate(&self, x: f64) -> f64 {
        let k = clamped_piece(&self.grid, x);
        let xs = self.grid.knots();
        let (xl, xm, xr) = (xs[2 * k], xs[2 * k + 1], xs[2 * k + 2]);
        let (wl, wm, wr) = lagrange_quadratic(x, xl, xm, xr);
        self.knots[2 * k] * wl + self.knots[2 * k + 1] * wm + self.knots[2 * k + 2] * wr
    }
}

/// Piece owning `x`, with out-of-range currents assigned to the end pieces.
fn clamped_piece(grid: &BreakpointGrid, x: f64) -> usize {
    match grid.piece_of(x) {
        Some(k) => k,
        None => {
            let outer = grid.outer();
            if x < outer[0] {
                0
            } else {
                grid.n_pieces() - 1
            }
        }
    }
}

/// Either fit family behind one dispatching surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PiecewiseFit {
    Linear(LinearFit),
    Quadratic(QuadFit),
}

impl PiecewiseFit {
    pub fn grid(&self) -> &BreakpointGrid {
        match self {
            PiecewiseFit::Linear(f) => f.grid(),
            PiecewiseFit::Quadratic(f) => f.grid(),
        }
    }

    pub fn residual(&self) -> f64 {
        match self {
            PiecewiseFit::Linear(f) => f.residual(),
            PiecewiseFit::Quadratic(f) => f.residual(),
        }
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        match self {
            PiecewiseFit::Linear(f) => f.evaluate(x),
            PiecewiseFit::Quadratic(f) => f.evaluate(x),
        }
    }

    pub fn mode(&self) -> FitMode {
        match self {
            PiecewiseFit::Linear(_) => FitMode::Linear,
            PiecewiseFit::Quadratic(_) => FitMode::Quadratic,
        }
    }
}

/// Solves the piecewise linear problem in closed form (stable QR, never an
/// explicit inverse) and projects onto the bounds when given.
pub fn solve_linear_fit(
    design: &DesignMatrix,
    bounds: &FitBounds,
    options: &SolveOptions,
) -> Result<LinearFit, FitError> {
    if design.grid.mode() != FitMode::Linear {
        return Err(FitError::ModeMismatch {
            expected: FitMode::Linear,
            actual: design.grid.mode(),
        });
    }
    let knots = solve_knots(design, bounds, options)?;
    let residual = objective(design, &knots);
    LinearFit::from_knots(design.grid.clone(), knots, residual)
}

/// Quadratic counterpart of [`solve_linear_fit`] over the 7-knot layout.
pub fn solve_quadratic_fit(
    design: &DesignMatrix,
    bounds: &FitBounds,
    options: &SolveOptions,
) -> Result<QuadFit, FitError> {
    if design.grid.mode() != FitMode::Quadratic {
        return Err(FitError::ModeMismatch {
            expected: FitMode::Quadratic,
            actual: design.grid.mode(),
        });
    }
    let knots = solve_knots(design, bounds, options)?;
    let residual = objective(design, &knots);
    QuadFit::from_knots(design.grid.clone(), knots, residual)
}

/// Recomputes the objective of `fit` over `seg` by direct evaluation.
pub fn fit_residual(fit: &PiecewiseFit, seg: &Segmentation) -> Result<f64, FitError> {
    if fit.grid() != seg.grid() {
        return Err(FitError::GridMismatch);
    }
    let mut total = 0.0;
    for k in 0..seg.n_pieces() {
        for &(i, v) in seg.piece(k) {
            let e = fit.evaluate(i) - v;
            total += e * e;
        }
    }
    Ok(total)
}

/// Convenience accessor mirroring the slope feature contract.
pub fn linear_slopes(fit: &LinearFit) -> Vec<f64> {
    fit.slopes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prep::{partition_samples, segment_samples};
    use crate::sim::{Sample, Trajectory, TrajectoryMeta};

    fn traj_from_iv(pairs: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            samples: pairs
                .iter()
                .enumerate()
                .map(|(k, (i, v))| Sample {
                    t: k as f64,
                    i: *i,
                    v: *v,
                })
                .collect(),
            label: None,
            meta: TrajectoryMeta::default(),
        }
    }

    fn line_dataset() -> Trajectory {
        let pairs: Vec<(f64, f64)> = (0..=18)
            .map(|k| {
                let i = k as f64 * 0.5;
                (i, 2.0 * i + 1.0)
            })
            .collect();
        traj_from_iv(&pairs)
    }

    fn linear_grid_0_9() -> BreakpointGrid {
        BreakpointGrid::linear(vec![0.0, 3.0, 6.0, 9.0]).unwrap()
    }

    #[test]
    fn linear_design_rows_are_barycentric() {
        let traj = traj_from_iv(&[(0.0, 1.0), (1.5, 1.0), (4.0, 1.0), (5.0, 1.0), (7.0, 1.0), (8.0, 1.0)]);
        let seg = segment_samples(&traj, &linear_grid_0_9()).unwrap();
        let design = build_linear_design(&seg).unwrap();
        let a = design.matrix();
        // Sample at x_a.
        assert_eq!(a.row(0), &[1.0, 0.0, 0.0, 0.0]);
        // Sample at the piece-1 midpoint.
        assert_eq!(a.row(1), &[0.5, 0.5, 0.0, 0.0]);
        // Sample at I = 4 inside piece 2: (0, 2/3, 1/3, 0).
        assert!((a.get(2, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.get(2, 2) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.get(2, 0), 0.0);
        assert_eq!(a.get(2, 3), 0.0);
    }

    #[test]
    fn quadratic_design_rows_are_lagrange_weights() {
        let grid = BreakpointGrid::quadratic_from_outer(vec![0.0, 3.0, 6.0, 9.0]).unwrap();
        let traj = traj_from_iv(&[
            (0.0, 1.0),
            (1.5, 1.0),
            (1.0, 1.0),
            (4.0, 1.0),
            (4.5, 1.0),
            (5.0, 1.0),
            (7.0, 1.0),
            (8.0, 1.0),
            (9.0, 1.0),
        ]);
        let seg = segment_samples(&traj, &grid).unwrap();
        let design = build_quadratic_design(&seg).unwrap();
        let a = design.matrix();
        // At the left knot: weights (1, 0, 0).
        assert_eq!(a.row(0)[0..3], [1.0, 0.0, 0.0]);
        // At the interpolation midpoint: weights (0, 1, 0).
        assert_eq!(a.row(1)[0..3], [0.0, 1.0, 0.0]);
        // At I = 1 in piece (0, 1.5, 3): (2/9, 8/9, -1/9).
        assert!((a.get(2, 0) - 2.0 / 9.0).abs() < 1e-15);
        assert!((a.get(2, 1) - 8.0 / 9.0).abs() < 1e-15);
        assert!((a.get(2, 2) + 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn design_rows_sum_to_one() {
        let traj = line_dataset();
        let lin = segment_samples(&traj, &linear_grid_0_9()).unwrap();
        let design = build_linear_design(&lin).unwrap();
        for r in 0..design.matrix().rows() {
            let sum: f64 = design.matrix().row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let qgrid = BreakpointGrid::quadratic_from_outer(vec![0.0, 3.0, 6.0, 9.0]).unwrap();
        let qseg = segment_samples(&traj, &qgrid).unwrap();
        let qdesign = build_quadratic_design(&qseg).unwrap();
        for r in 0..qdesign.matrix().rows() {
            let sum: f64 = qdesign.matrix().row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_line_recovers_constant_slope() {
        let traj = line_dataset();
        let seg = segment_samples(&traj, &linear_grid_0_9()).unwrap();
        let design = build_linear_design(&seg).unwrap();
        let fit = solve_linear_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap();
        for s in fit.slopes() {
            assert!((s - 2.0).abs() < 1e-9);
        }
        let scale = design.targets().iter().map(|v| v * v).sum::<f64>();
        assert!(fit.residual() / scale < 1e-18);
    }

    #[test]
    fn exact_parabola_recovers_unit_quadratic() {
        let pairs: Vec<(f64, f64)> = (0..=27)
            .map(|k| {
                let i = k as f64 / 3.0;
                (i, i * i)
            })
            .collect();
        let traj = traj_from_iv(&pairs);
        let grid = BreakpointGrid::quadratic_from_outer(vec![0.0, 3.0, 6.0, 9.0]).unwrap();
        let seg = segment_samples(&traj, &grid).unwrap();
        let design = build_quadratic_design(&seg).unwrap();
        let fit = solve_quadratic_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap();
        for c in fit.coefficients() {
            assert!((c.m - 1.0).abs() < 1e-9, "m = {}", c.m);
            assert!(c.n.abs() < 1e-9, "n = {}", c.n);
        }
        // Exact recovery evaluates exactly off-knot too.
        assert!((fit.evaluate(2.7) - 7.29).abs() < 1e-12);
        let scale = design.targets().iter().map(|v| v * v).sum::<f64>();
        assert!(fit.residual() / scale < 1e-18);
    }

    #[test]
    fn linear_data_in_quadratic_mode_zeroes_curvature() {
        let traj = line_dataset();
        let grid = BreakpointGrid::quadratic_from_outer(vec![0.0, 3.0, 6.0, 9.0]).unwrap();
        let seg = segment_samples(&traj, &grid).unwrap();
        let design = build_quadratic_design(&seg).unwrap();
        let fit = solve_quadratic_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap();
        for c in fit.coefficients() {
            assert!(c.m.abs() < 1e-9);
            assert!((c.n - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn slopes_from_tent_knots() {
        let grid = BreakpointGrid::linear(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let fit = LinearFit::from_knots(grid, vec![1.0, 3.0, 3.0, 1.0], 0.0).unwrap();
        assert_eq!(fit.slopes(), vec![2.0, 0.0, -2.0]);
        assert_eq!(fit.evaluate(0.5), 2.0);
        // Knot passage is exact.
        assert_eq!(fit.evaluate(0.0), 1.0);
        assert_eq!(fit.evaluate(3.0), 1.0);
    }

    #[test]
    fn constant_knots_have_zero_slopes() {
        let grid = BreakpointGrid::linear(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let fit = LinearFit::from_knots(grid, vec![4.0; 4], 0.0).unwrap();
        assert_eq!(fit.slopes(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn interior_knot_evaluation_is_continuous_to_the_last_bit() {
        let traj = traj_from_iv(&[
            (0.3, 0.2),
            (1.7, 3.1),
            (3.4, 2.9),
            (5.1, -1.0),
            (6.8, 0.4),
            (8.9, 5.5),
        ]);
        let grid = linear_grid_0_9();
        let seg = segment_samples(&traj, &grid).unwrap();
        let design = build_linear_design(&seg).unwrap();
        let fit = solve_linear_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap();
        for knot in [3.0, 6.0] {
            let left = fit.evaluate(knot - 0.0);
            // piece_of ties left; evaluate the right piece directly.
            let k = grid.piece_of(knot).unwrap() + 1;
            let (xl, xr) = grid.piece_bounds(k);
            let (wl, wr) = barycentric_linear(knot, xl, xr);
            let right = fit.knot_values()[k] * wl + fit.knot_values()[k + 1] * wr;
            assert_eq!(left, right);
        }
    }

    #[test]
    fn kinked_data_keeps_slope_jump() {
        // Piecewise linear data with a genuine kink at the interior knot.
        let pairs: Vec<(f64, f64)> = (0..=18)
            .map(|k| {
                let i = k as f64 * 0.5;
                let v = if i <= 3.0 { 0.0 } else { 2.0 * (i - 3.0) };
                (i, v)
            })
            .collect();
        let traj = traj_from_iv(&pairs);
        let seg = segment_samples(&traj, &linear_grid_0_9()).unwrap();
        let design = build_linear_design(&seg).unwrap();
        let fit = solve_linear_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap();
        let slopes = fit.slopes();
        assert!(slopes[0].abs() < 1e-9);
        assert!((slopes[1] - 2.0).abs() < 1e-9);
        assert!((slopes[1] - slopes[0]).abs() > 1.0, "kink must survive");
    }

    #[test]
    fn single_off_sample_residual_is_squared_error() {
        // Piece 3 has one sample 0.5 V off the line the other points pin down.
        let traj = traj_from_iv(&[
            (0.0, 0.0),
            (1.0, 1.0),
            (3.5, 3.5),
            (5.0, 5.0),
            (7.0, 7.5),
            (7.0, 7.5),
        ]);
        let seg = segment_samples(&traj, &linear_grid_0_9()).unwrap();
        let design = build_linear_design(&seg).unwrap();
        let fit = solve_linear_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap();
        // The duplicated off-line sample pulls the knot; residual is what the
        // recomputation oracle says it is.
        let pf = PiecewiseFit::Linear(fit.clone());
        let recomputed = fit_residual(&pf, &seg).unwrap();
        let scale = design.targets().iter().map(|v| v * v).sum::<f64>().max(1.0);
        assert!(((fit.residual() - recomputed) / scale).abs() < 1e-10);
    }

    #[test]
    fn residual_of_single_outlier_sample() {
        // Exactly representable data except one sample 0.5 V off, placed so
        // no knot can absorb it: duplicate currents with conflicting targets.
        let traj = traj_from_iv(&[
            (0.0, 0.0),
            (1.0, 1.0),
            (4.0, 4.0),
            (4.0, 4.0),
            (8.0, 8.0),
            (8.0, 8.5),
        ]);
        let seg = segment_samples(&traj, &linear_grid_0_9()).unwrap();
        let design = build_linear_design(&seg).unwrap();
        let fit = solve_linear_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap();
        // Best the model can do at I = 8 is split the difference: each of the
        // two samples is 0.25 off, residual 2 * 0.25^2 = 0.125... unless the
        // rest of the line bends. Check against the recomputation oracle
        // rather than a hand value for the bent case, then check the simple
        // one-term case directly.
        let pf = PiecewiseFit::Linear(fit.clone());
        let recomputed = fit_residual(&pf, &seg).unwrap();
        assert!((fit.residual() - recomputed).abs() < 1e-12);

        // One-term sum: single sample 0.5 V off an otherwise pinned line.
        let grid = BreakpointGrid::linear(vec![0.0, 1.0]).unwrap();
        let fixed = LinearFit::from_knots(grid, vec![0.0, 1.0], 0.0).unwrap();
        let e = fixed.evaluate(0.5) - 1.0; // sample (0.5, 1.0) off y = x
        assert!((e * e - 0.25).abs() < 1e-15);
    }

    #[test]
    fn normal_equations_hold_for_unbounded_solve() {
        let traj = traj_from_iv(&[
            (0.2, 1.1),
            (1.4, 0.3),
            (2.9, 2.2),
            (3.3, -0.7),
            (4.8, 1.9),
            (5.6, 2.4),
            (6.1, -0.2),
            (7.7, 3.3),
            (8.8, 1.0),
        ]);
        let seg = segment_samples(&traj, &linear_grid_0_9()).unwrap();
        let design = build_linear_design(&seg).unwrap();
        let fit = solve_linear_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap();
        let scale = design
            .targets()
            .iter()
            .map(|v| v.abs())
            .fold(0.0_f64, f64::max)
            .max(1.0);
        assert!(design.normal_equation_defect(fit.knot_values()) / scale < 1e-8);
    }

    #[test]
    fn active_bound_clamps_knot_and_keeps_kkt() {
        let traj = line_dataset(); // v = 2i + 1, true y_a = 1
        let seg = segment_samples(&traj, &linear_grid_0_9()).unwrap();
        let design = build_linear_design(&seg).unwrap();
        let bounds = FitBounds::new(
            vec![None, None, None, None],
            vec![Some(0.0), None, None, None],
        )
        .unwrap();
        let fit = solve_linear_fit(&design, &bounds, &SolveOptions::default()).unwrap();
        assert_eq!(fit.knot_values()[0], 0.0);
        assert!(fit.residual() > 0.0);
        // KKT: multiplier of the active upper bound must be nonnegative,
        // i.e. the gradient at the clamped knot pushes upward.
        let resid: Vec<f64> = design
            .matrix()
            .mul_vec(fit.knot_values())
            .iter()
            .zip(design.targets())
            .map(|(p, t)| p - t)
            .collect();
        let grad = design.matrix().transpose_mul_vec(&resid);
        assert!(-grad[0] >= -1e-9, "upper-bound multiplier must be >= 0");
        // Free knots remain stationary.
        for g in &grad[1..] {
            assert!(g.abs() < 1e-8);
        }
    }

    #[test]
    fn infeasible_bounds_are_rejected() {
        let err = FitBounds::new(vec![Some(1.0)], vec![Some(0.0)]).unwrap_err();
        assert!(matches!(err, FitError::InfeasibleBounds { knot: 0, .. }));
    }

    #[test]
    fn empty_knot_neighborhood_is_singular_and_ridge_recovers() {
        // Both piece-1 samples sit exactly at x_b, so knot a has no support.
        let traj = traj_from_iv(&[
            (3.0, 6.0),
            (3.0, 6.0),
            (4.0, 7.0),
            (5.0, 8.0),
            (7.0, 10.0),
            (8.0, 11.0),
        ]);
        let seg = segment_samples(&traj, &linear_grid_0_9()).unwrap();
        let design = build_linear_design(&seg).unwrap();
        let err =
            solve_linear_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap_err();
        match err {
            FitError::SingularNormalEquations { deficient_knots } => {
                assert!(deficient_knots.contains(&0));
            }
            other => panic!("expected singular error, got {other:?}"),
        }
        let fit = solve_linear_fit(
            &design,
            &FitBounds::none(),
            &SolveOptions {
                ridge_fallback: true,
            },
        )
        .unwrap();
        assert!(fit.knot_values().iter().all(|y| y.is_finite()));
    }

    #[test]
    fn quadratic_residual_never_exceeds_linear() {
        let datasets: Vec<Vec<(f64, f64)>> = (0..20)
            .map(|seed| {
                (0..24)
                    .map(|k| {
                        let i = k as f64 * 9.0 / 23.0;
                        let wob = ((k * 7 + seed * 13) % 11) as f64 * 0.3;
                        (i, 0.5 * i + wob)
                    })
                    .collect()
            })
            .collect();
        for pairs in datasets {
            let traj = traj_from_iv(&pairs);
            let lin_seg = segment_samples(&traj, &linear_grid_0_9()).unwrap();
            let lin_design = build_linear_design(&lin_seg).unwrap();
            let lin =
                solve_linear_fit(&lin_design, &FitBounds::none(), &SolveOptions::default())
                    .unwrap();
            let qgrid = BreakpointGrid::quadratic_from_outer(vec![0.0, 3.0, 6.0, 9.0]).unwrap();
            let qseg = segment_samples(&traj, &qgrid).unwrap();
            let qdesign = build_quadratic_design(&qseg).unwrap();
            let quad =
                solve_quadratic_fit(&qdesign, &FitBounds::none(), &SolveOptions::default())
                    .unwrap();
            assert!(quad.residual() <= lin.residual() + 1e-9);
        }
    }

    #[test]
    fn quadratic_passes_through_its_knots() {
        let traj = traj_from_iv(&[
            (0.5, 1.3),
            (1.0, 0.9),
            (2.0, 1.4),
            (3.5, -0.8),
            (4.0, 2.2),
            (5.5, 1.1),
            (6.5, 0.3),
            (7.5, 2.8),
            (8.5, -1.2),
        ]);
        let grid = BreakpointGrid::quadratic_from_outer(vec![0.0, 3.0, 6.0, 9.0]).unwrap();
        let seg = segment_samples(&traj, &grid).unwrap();
        let design = build_quadratic_design(&seg).unwrap();
        let fit = solve_quadratic_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap();
        let coeffs = fit.coefficients();
        let xs = grid.knots();
        for k in 0..grid.n_pieces() {
            for (xi, yi) in [
                (xs[2 * k], fit.knot_values()[2 * k]),
                (xs[2 * k + 1], fit.knot_values()[2 * k + 1]),
                (xs[2 * k + 2], fit.knot_values()[2 * k + 2]),
            ] {
                let y = coeffs[k].m * xi * xi + coeffs[k].n * xi + coeffs[k].h;
                assert!((y - yi).abs() < 1e-9 * (1.0 + yi.abs()));
            }
        }
    }

    #[test]
    fn grid_mismatch_is_detected() {
        let traj = line_dataset();
        let seg = segment_samples(&traj, &linear_grid_0_9()).unwrap();
        let design = build_linear_design(&seg).unwrap();
        let fit = solve_linear_fit(&design, &FitBounds::none(), &SolveOptions::default()).unwrap();
        let other_grid = BreakpointGrid::linear(vec![0.0, 4.0, 6.0, 9.0]).unwrap();
        let other_seg = partition_samples(&traj, &other_grid);
        let err = fit_residual(&PiecewiseFit::Linear(fit), &other_seg).unwrap_err();
        assert_eq!(err, FitError::GridMismatch);
    }

    #[test]
    fn mode_mismatch_is_detected() {
        let traj = line_dataset();
        let qgrid = BreakpointGrid::quadratic_from_outer(vec![0.0, 3.0, 6.0, 9.0]).unwrap();
        let seg = segment_samples(&traj, &qgrid).unwrap();
        let err = build_linear_design(&seg).unwrap_err();
        assert!(matches!(err, FitError::ModeMismatch { .. }));
    }

    #[test]
    fn perturbing_any_knot_never_improves_the_objective() {
        // Local optimality probe over a batch of deterministic pseudo-random
        // datasets.
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let pairs: Vec<(f64, f64)> = (0..30)
                .map(|_| (next() * 9.0, next() * 4.0 - 2.0))
                .collect();
            let traj = traj_from_iv(&pairs);
            let seg = match segment_samples(&traj, &linear_grid_0_9()) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let design = build_linear_design(&seg).unwrap();
            let fit = match solve_linear_fit(&design, &FitBounds::none(), &SolveOptions::default())
            {
                Ok(f) => f,
                Err(_) => continue,
            };
            let base = fit.residual();
            let scale = fit
                .knot_values()
                .iter()
                .fold(1.0_f64, |m, y| m.max(y.abs()));
            for k in 0..4 {
                for sign in [-1.0, 1.0] {
                    let mut knots = fit.knot_values().to_vec();
                    knots[k] += sign * 1e-3 * scale;
                    let perturbed = objective(&design, &knots);
                    assert!(
                        perturbed >= base - 1e-12 * scale * scale,
                        "knot {k} perturbation improved objective"
                    );
                }
            }
        }
    }
}
