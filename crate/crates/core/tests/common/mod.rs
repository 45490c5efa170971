//! Independent oracles shared by the integration suites.
//!
//! Everything here minimizes or maximizes objectives by direct evaluation
//! (finite differences, exhaustive active-set enumeration), deliberately
//! avoiding the design-matrix/QR and SMO code paths under test.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

/// Piecewise linear objective in the coefficient form: the fitted value in
/// piece k is `s_k I + y_left - s_k x_left` with `s_k` the knot-difference
/// slope.
pub fn linear_objective(outer: &[f64], knots: &[f64], samples: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for &(i, v) in samples {
        let k = piece_of(outer, i);
        let s = (knots[k + 1] - knots[k]) / (outer[k + 1] - outer[k]);
        let pred = s * i + knots[k] - s * outer[k];
        total += (pred - v) * (pred - v);
    }
    total
}

/// Piecewise quadratic objective in the coefficient form of the midpoint
/// layout: `m_k` from the second difference, `n_k` from the first, `h_k`
/// from point passage.
pub fn quadratic_objective(outer: &[f64], knots: &[f64], samples: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for &(i, v) in samples {
        let k = piece_of(outer, i);
        let (xl, xr) = (outer[k], outer[k + 1]);
        let xm = 0.5 * (xl + xr);
        let (yl, ym, yr) = (knots[2 * k], knots[2 * k + 1], knots[2 * k + 2]);
        let m = (yr - 2.0 * ym + yl) / (xr * xr - 2.0 * xm * xm + xl * xl);
        let n = (ym - yl - m * (xm * xm - xl * xl)) / (xm - xl);
        let h = yl - m * xl * xl - n * xl;
        let pred = m * i * i + n * i + h;
        total += (pred - v) * (pred - v);
    }
    total
}

/// Piece owning current `i` with the left tie-break at interior boundaries.
fn piece_of(outer: &[f64], i: f64) -> usize {
    if i <= outer[1] {
        return 0;
    }
    for k in 1..outer.len() - 1 {
        if i <= outer[k + 1] {
            return k;
        }
    }
    outer.len() - 2
}

/// Minimizes a quadratic function of `dim` variables by reconstructing its
/// Hessian and gradient from objective evaluations alone (exact for a
/// quadratic up to rounding) and solving the stationarity system.
///
/// Returns `(argmin, min_value)`, or `None` if the Hessian is singular.
pub fn minimize_quadratic<F: Fn(&[f64]) -> f64>(f: F, dim: usize) -> Option<(Vec<f64>, f64)> {
    let zero = vec![0.0; dim];
    let f0 = f(&zero);
    let step = 1.0;
    let mut f_single = vec![0.0; dim];
    let mut point = zero.clone();
    for i in 0..dim {
        point[i] = step;
        f_single[i] = f(&point);
        point[i] = 0.0;
    }
    // h[i][j] from f(e_i + e_j) - f(e_i) - f(e_j) + f(0); diagonal from the
    // single evaluations and the gradient identity.
    let mut h = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in (i + 1)..dim {
            point[i] = step;
            point[j] = step;
            let fij = f(&point);
            point[i] = 0.0;
            point[j] = 0.0;
            h[i][j] = fij - f_single[i] - f_single[j] + f0;
            h[j][i] = h[i][j];
        }
    }
    let mut grad0 = vec![0.0; dim];
    for i in 0..dim {
        point[i] = -step;
        let fm = f(&point);
        point[i] = 0.0;
        // f(e_i) = f0 + g_i + h_ii/2, f(-e_i) = f0 - g_i + h_ii/2
        h[i][i] = f_single[i] + fm - 2.0 * f0;
        grad0[i] = 0.5 * (f_single[i] - fm);
    }
    // Stationarity: H y = -grad0.
    let rhs: Vec<f64> = grad0.iter().map(|g| -g).collect();
    let y = solve_dense(&h, &rhs)?;
    let value = f(&y);
    Some((y, value))
}

/// Constrained version over per-variable boxes: exhaustively enumerates
/// free/lower/upper clamp patterns and keeps the best feasible stationary
/// point. Exact for convex quadratics at this problem size.
pub fn minimize_quadratic_boxed<F: Fn(&[f64]) -> f64>(
    f: F,
    dim: usize,
    lower: &[Option<f64>],
    upper: &[Option<f64>],
) -> Option<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut pattern = vec![0u8; dim];
    'patterns: loop {
        // Build the clamp assignment for this pattern.
        let mut fixed: Vec<Option<f64>> = vec![None; dim];
        let mut valid = true;
        for i in 0..dim {
            match pattern[i] {
                0 => {}
                1 => match lower[i] {
                    Some(lo) => fixed[i] = Some(lo),
                    None => valid = false,
                },
                _ => match upper[i] {
                    Some(hi) => fixed[i] = Some(hi),
                    None => valid = false,
                },
            }
            if !valid {
                break;
            }
        }
        if valid {
            let free: Vec<usize> = (0..dim).filter(|&i| fixed[i].is_none()).collect();
            let candidate = if free.is_empty() {
                let y: Vec<f64> = fixed.iter().map(|v| v.unwrap()).collect();
                Some(y)
            } else {
                // Minimize over the free variables with the rest pinned.
                let reduced = |z: &[f64]| {
                    let mut y: Vec<f64> = fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
                    for (j, &i) in free.iter().enumerate() {
                        y[i] = z[j];
                    }
                    f(&y)
                };
                minimize_quadratic(reduced, free.len()).map(|(z, _)| {
                    let mut y: Vec<f64> = fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
                    for (j, &i) in free.iter().enumerate() {
                        y[i] = z[j];
                    }
                    y
                })
            };
            if let Some(y) = candidate {
                let feasible = (0..dim).all(|i| {
                    lower[i].is_none_or(|lo| y[i] >= lo - 1e-9)
                        && upper[i].is_none_or(|hi| y[i] <= hi + 1e-9)
                });
                if feasible {
                    let value = f(&y);
                    if best.as_ref().is_none_or(|(_, b)| value < *b) {
                        best = Some((y, value));
                    }
                }
            }
        }
        // Advance the ternary counter.
        for i in 0..dim {
            pattern[i] += 1;
            if pattern[i] < 3 {
                continue 'patterns;
            }
            pattern[i] = 0;
        }
        break;
    }
    best
}

/// Gaussian elimination with partial pivoting; `None` on singular systems.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| m[r1][col].abs().partial_cmp(&m[r2][col].abs()).unwrap())?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..n {
            let factor = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = rhs[row];
        for k in (row + 1)..n {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    Some(x)
}

/// Exhaustive dual oracle for the soft-margin SVM on tiny sets.
///
/// Maximizes `W(a) = sum a - 1/2 a' (yy' o K) a` over `0 <= a <= C`,
/// `sum a y = 0` by enumerating every {0, C, free} pattern and solving the
/// equality-constrained stationarity system on the free block.
pub fn brute_force_dual_objective(
    gram: &[Vec<f64>],
    labels: &[f64],
    c: f64,
) -> Option<f64> {
    let n = labels.len();
    assert!(n <= 8, "enumeration oracle is for tiny sets");
    let q = |i: usize, j: usize| labels[i] * labels[j] * gram[i][j];
    let objective = |a: &[f64]| -> f64 {
        let mut w: f64 = a.iter().sum();
        for i in 0..n {
            for j in 0..n {
                w -= 0.5 * a[i] * a[j] * q(i, j);
            }
        }
        w
    };

    let mut best: Option<f64> = None;
    let mut pattern = vec![0u8; n];
    'patterns: loop {
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 0).collect();
        let mut alpha: Vec<f64> = pattern
            .iter()
            .map(|&p| match p {
                1 => c,
                _ => 0.0,
            })
            .collect();
        let solved = if free.is_empty() {
            let balance: f64 = alpha.iter().zip(labels).map(|(a, y)| a * y).sum();
            balance.abs() < 1e-9 * c.max(1.0)
        } else {
            // KKT block: [Q_FF  y_F; y_F' 0] [a_F; lambda] = [1 - Q_FB a_B; -y_B' a_B]
            let nf = free.len();
            let mut mat = vec![vec![0.0; nf + 1]; nf + 1];
            let mut rhs = vec![0.0; nf + 1];
            for (r, &i) in free.iter().enumerate() {
                for (cidx, &j) in free.iter().enumerate() {
                    mat[r][cidx] = q(i, j);
                }
                mat[r][nf] = labels[i];
                let mut fixed_term = 0.0;
                for j in 0..n {
                    if pattern[j] == 1 {
                        fixed_term += q(i, j) * c;
                    }
                }
                rhs[r] = 1.0 - fixed_term;
            }
            for (cidx, &j) in free.iter().enumerate() {
                mat[nf][cidx] = labels[j];
            }
            let mut fixed_balance = 0.0;
            for j in 0..n {
                if pattern[j] == 1 {
                    fixed_balance += labels[j] * c;
                }
            }
            rhs[nf] = -fixed_balance;
            match solve_dense(&mat, &rhs) {
                Some(solution) => {
                    let feasible = free
                        .iter()
                        .enumerate()
                        .all(|(r, _)| (-1e-9 * c.max(1.0)..=c * (1.0 + 1e-9)).contains(&solution[r]));
                    if feasible {
                        for (r, &i) in free.iter().enumerate() {
                            alpha[i] = solution[r].clamp(0.0, c);
                        }
                        true
                    } else {
                        false
                    }
                }
                None => false,
            }
        };
        if solved {
            let w = objective(&alpha);
            if best.is_none_or(|b| w > b) {
                best = Some(w);
            }
        }
        for i in 0..n {
            pattern[i] += 1;
            if pattern[i] < 3 {
                continue 'patterns;
            }
            pattern[i] = 0;
        }
        break;
    }
    best
}

/// Splitmix-style deterministic pseudo-random stream for test data.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        self.0
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}
