//! Optimal ratcheting over a finite menu of dividend rates.
//!
//! With rates c_0 < c_1 < ... < c_{n-1} and the promise never to decrease
//! the rate, the value at the top rate is the constant-rate closed form and
//! every lower level is a two-exponential solution matched to the level
//! above it at a threshold z_i. The recursion solves the levels from the
//! top down; each threshold is the first maximizer of the matching
//! coefficient, which simultaneously enforces value continuity and smooth
//! pasting at z_i.
//!
//! Two independent routes to the same thresholds are kept side by side:
//! the maximization route ([`solve_thresholds`]) and an obstacle route
//! ([`obstacle_thresholds`]) that looks for the smallest coefficient whose
//! two-exponential curve dominates the next level everywhere. They agree
//! to lattice accuracy and cross-validate each other in the test suite.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{v_constant, v_constant_slope, ModelParams, Unrestricted};
use crate::numerics::{golden_max, linspace};

/// Strictly increasing, nonnegative, finite dividend rates. The last entry
/// plays the role of the cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RateGrid(Vec<f64>);

impl RateGrid {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(CoreError::invalid("rate grid is empty"));
        }
        for &r in &rates {
            if !r.is_finite() || r < 0.0 {
                return Err(CoreError::invalid(format!(
                    "rates must be finite and nonnegative, got {r}"
                )));
            }
        }
        for w in rates.windows(2) {
            if w[1] <= w[0] {
                return Err(CoreError::invalid(format!(
                    "rates must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(RateGrid(rates))
    }

    /// The dyadic menu {k cbar / 2^n : k = 0..2^n} with 2^n + 1 rates.
    pub fn dyadic(cbar: f64, n: u32) -> Result<Self> {
        if !cbar.is_finite() || cbar <= 0.0 {
            return Err(CoreError::invalid(format!("cbar must be positive, got {cbar}")));
        }
        if n > 20 {
            return Err(CoreError::invalid(format!("dyadic level {n} is too fine")));
        }
        let m = 1usize << n;
        Ok(RateGrid(
            (0..=m).map(|k| cbar * k as f64 / m as f64).collect(),
        ))
    }

    pub fn rates(&self) -> &[f64] {
        &self.0
    }

    pub fn cbar(&self) -> f64 {
        *self.0.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for RateGrid {
    type Error = CoreError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        RateGrid::new(v)
    }
}

impl From<RateGrid> for Vec<f64> {
    fn from(g: RateGrid) -> Vec<f64> {
        g.0
    }
}

/// e^{theta1 x} - e^{theta2 x} at rate c; the increasing homogeneous
/// solution that vanishes at the origin.
pub(crate) fn dfun(p: &ModelParams, c: f64, x: f64) -> f64 {
    let t = p.theta(c);
    (t.theta1 * x).exp() - (t.theta2 * x).exp()
}

pub(crate) fn dfun_slope(p: &ModelParams, c: f64, x: f64) -> f64 {
    let t = p.theta(c);
    t.theta1 * (t.theta1 * x).exp() - t.theta2 * (t.theta2 * x).exp()
}

/// Index of the level that actually governs at surplus x when the current
/// rate sits at `from`: every threshold at or below x has already been
/// crossed. `z` holds one threshold per non-top level.
fn effective_level(z: &[f64], x: f64, from: usize) -> usize {
    let mut j = from;
    while j < z.len() && x >= z[j] {
        j += 1;
    }
    j
}

fn level_value(p: &ModelParams, rates: &[f64], z: &[f64], a: &[f64], x: f64, from: usize) -> f64 {
    let j = effective_level(z, x, from);
    let g = v_constant(p, rates[j], x);
    if j < a.len() {
        g + a[j] * dfun(p, rates[j], x)
    } else {
        g
    }
}

fn level_slope(p: &ModelParams, rates: &[f64], z: &[f64], a: &[f64], x: f64, from: usize) -> f64 {
    let j = effective_level(z, x, from);
    let g = v_constant_slope(p, rates[j], x);
    if j < a.len() {
        g + a[j] * dfun_slope(p, rates[j], x)
    } else {
        g
    }
}

/// Solved ratcheting problem on a finite rate menu: one threshold and one
/// matching coefficient per non-top level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub params: ModelParams,
    rates: Vec<f64>,
    thresholds: Vec<f64>,
    coefficients: Vec<f64>,
}

impl ThresholdPolicy {
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn cbar(&self) -> f64 {
        *self.rates.last().unwrap()
    }

    /// Value when the current rate is `rates()[level]`.
    pub fn value(&self, x: f64, level: usize) -> f64 {
        assert!(level < self.rates.len(), "level {level} out of range");
        level_value(&self.params, &self.rates, &self.thresholds, &self.coefficients, x, level)
    }

    /// x-derivative of [`Self::value`].
    pub fn slope(&self, x: f64, level: usize) -> f64 {
        assert!(level < self.rates.len(), "level {level} out of range");
        level_slope(&self.params, &self.rates, &self.thresholds, &self.coefficients, x, level)
    }

    /// Index of the grid rate equal to c, if there is one.
    pub fn level_of_rate(&self, c: f64) -> Option<usize> {
        let tol = 1e-9 * self.cbar().max(1.0);
        self.rates.iter().position(|&r| (r - c).abs() <= tol)
    }

    /// Value for an off-menu current rate c, conservatively rounding the
    /// rate up to the next grid point.
    pub fn value_rounded(&self, x: f64, c: f64) -> Result<f64> {
        let tol = 1e-9 * self.cbar().max(1.0);
        if c > self.cbar() + tol {
            return Err(CoreError::invalid(format!(
                "rate {c} exceeds the cap {}",
                self.cbar()
            )));
        }
        let level = self
            .rates
            .iter()
            .position(|&r| r >= c - tol)
            .expect("cap check above guarantees a grid rate at or above c");
        Ok(self.value(x, level))
    }

    /// Value for an off-menu current rate c under the extended strategy
    /// that keeps paying c until the floor level's threshold is hit and
    /// then joins the grid recursion. Requires c within the menu's span.
    pub fn value_extended(&self, x: f64, c: f64) -> Result<f64> {
        let tol = 1e-9 * self.cbar().max(1.0);
        if c < self.rates[0] - tol || c > self.cbar() + tol {
            return Err(CoreError::invalid(format!(
                "rate {c} outside the menu span [{}, {}]",
                self.rates[0],
                self.cbar()
            )));
        }
        let i = self
            .rates
            .iter()
            .rposition(|&r| r <= c + tol)
            .expect("span check above guarantees a grid rate at or below c");
        if i == self.rates.len() - 1 {
            return Ok(self.value(x, i));
        }
        let z = self.thresholds[i];
        if x >= z {
            return Ok(self.value(x, i + 1));
        }
        let wz = self.value(z, i + 1);
        let a = (wz - v_constant(&self.params, c, z)) / dfun(&self.params, c, z);
        Ok(v_constant(&self.params, c, x) + a * dfun(&self.params, c, x))
    }

    /// Values on a lattice, one row per grid rate.
    pub fn table(&self, x: &[f64]) -> FiniteValueTable {
        let values = (0..self.rates.len())
            .map(|level| x.iter().map(|&xx| self.value(xx, level)).collect())
            .collect();
        FiniteValueTable {
            x: x.to_vec(),
            rates: self.rates.clone(),
            values,
        }
    }
}

/// Lattice of policy values for export: `values[i][j]` is the value at
/// rate `rates[i]` and surplus `x[j]`.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteValueTable {
    pub x: Vec<f64>,
    pub rates: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SolveOpts {
    /// Right end of the threshold search window; defaults to five times
    /// the unconstrained barrier plus a drift length scale.
    pub x_max: Option<f64>,
    pub scan_points: usize,
    /// Golden-section window tolerance relative to the search window.
    pub golden_rtol: f64,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            x_max: None,
            scan_points: 2000,
            golden_rtol: 1e-10,
        }
    }
}

pub(crate) fn default_x_max(p: &ModelParams, cbar: f64) -> Result<f64> {
    let b = Unrestricted::new(*p, cbar)?.b_star();
    // constant-rate values saturate on the scale 1/|theta2|, which for
    // small q is far longer than the barrier scale; thresholds can sit
    // anywhere on it
    let slow = -4.0 / p.theta(cbar).theta2;
    Ok(5.0 * (b + p.sigma * p.sigma / p.mu) + slow)
}

/// Solve the backward recursion by direct maximization: each threshold is
/// the first maximizer of the matching-coefficient curve
/// (W_next(y) - g_i(y)) / D_i(y) over y >= 0.
pub fn solve_thresholds(
    p: &ModelParams,
    rates: &RateGrid,
    opts: &SolveOpts,
) -> Result<ThresholdPolicy> {
    let rs = rates.rates();
    let n = rs.len();
    let cbar = rates.cbar();
    let mut z = vec![0.0; n.saturating_sub(1)];
    let mut a = vec![0.0; n.saturating_sub(1)];
    if n == 1 || cbar <= p.trivial_threshold() {
        // Paying the cap from the start is optimal; every level collapses.
        return Ok(ThresholdPolicy {
            params: *p,
            rates: rs.to_vec(),
            thresholds: z,
            coefficients: a,
        });
    }
    let x_max0 = match opts.x_max {
        Some(v) if v.is_finite() && v > 0.0 => v,
        Some(v) => return Err(CoreError::invalid(format!("x_max must be positive, got {v}"))),
        None => default_x_max(p, cbar)?,
    };
    for i in (0..n - 1).rev() {
        let ci = rs[i];
        let ti = p.theta(ci);
        let ratio = |y: f64| -> f64 {
            if y <= 0.0 {
                // limit of the quotient: both numerator and denominator
                // vanish linearly at the origin
                let wn_slope = level_slope(p, rs, &z, &a, 0.0, i + 1);
                return (wn_slope - v_constant_slope(p, ci, 0.0)) / (ti.theta1 - ti.theta2);
            }
            let wn = level_value(p, rs, &z, &a, y, i + 1);
            (wn - v_constant(p, ci, y)) / dfun(p, ci, y)
        };
        let mut x_max = x_max0;
        let (zi, ai) = loop {
            let grid = linspace(0.0, x_max, opts.scan_points + 1);
            let mut best = 0usize;
            let mut best_v = ratio(grid[0]);
            for (k, &y) in grid.iter().enumerate().skip(1) {
                let v = ratio(y);
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            if best == 0 {
                // The coefficient curve peaks at the origin: ratcheting to
                // the next rate immediately dominates waiting.
                break (0.0, 0.0);
            }
            if best == opts.scan_points {
                if x_max >= 64.0 * x_max0 {
                    return Err(CoreError::bracket(format!(
                        "threshold maximizer for rate {ci} still at the right edge \
                         after widening the window to {x_max}"
                    )));
                }
                x_max *= 2.0;
                continue;
            }
            let (zi, ai) = golden_max(
                ratio,
                grid[best - 1],
                grid[best + 1],
                opts.golden_rtol * x_max,
            );
            break (zi, ai);
        };
        z[i] = zi;
        a[i] = ai;
    }
    Ok(ThresholdPolicy {
        params: *p,
        rates: rs.to_vec(),
        thresholds: z,
        coefficients: a,
    })
}

/// First-order optimality residual at one solved threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FocCheck {
    /// Interior threshold; carries N'(z) D(z) - N(z) D'(z), which the true
    /// maximizer sets to zero.
    Interior(f64),
    /// Threshold at the origin, where the first-order condition does not
    /// apply.
    Boundary,
}

pub fn foc_residual(policy: &ThresholdPolicy, level: usize) -> Result<FocCheck> {
    let n = policy.rates.len();
    if level + 1 >= n {
        return Err(CoreError::invalid(format!(
            "level {level} has no threshold (grid has {n} rates)"
        )));
    }
    let zi = policy.thresholds[level];
    if zi <= 0.0 {
        return Ok(FocCheck::Boundary);
    }
    let p = &policy.params;
    let ci = policy.rates[level];
    let nval = policy.value(zi, level + 1) - v_constant(p, ci, zi);
    let nslope = policy.slope(zi, level + 1) - v_constant_slope(p, ci, zi);
    let d = dfun(p, ci, zi);
    let ds = dfun_slope(p, ci, zi);
    Ok(FocCheck::Interior(nslope * d - nval * ds))
}

#[derive(Debug, Clone)]
pub struct ObstacleOpts {
    pub x_max: Option<f64>,
    pub lattice: usize,
    /// Relative tolerance of the bisection on the coefficient.
    pub a_rtol: f64,
}

impl Default for ObstacleOpts {
    fn default() -> Self {
        ObstacleOpts {
            x_max: None,
            lattice: 4000,
            a_rtol: 1e-13,
        }
    }
}

/// Thresholds and coefficients from the obstacle route.
#[derive(Debug, Clone)]
pub struct ObstacleSolution {
    pub thresholds: Vec<f64>,
    pub coefficients: Vec<f64>,
}

/// Solve the same recursion by the dual characterization: the coefficient
/// at each level is the smallest a for which g_i + a D_i dominates the next
/// level's value everywhere, and the threshold is the first contact point
/// of that smallest dominating curve.
pub fn obstacle_thresholds(
    p: &ModelParams,
    rates: &RateGrid,
    opts: &ObstacleOpts,
) -> Result<ObstacleSolution> {
    let rs = rates.rates();
    let n = rs.len();
    let cbar = rates.cbar();
    let mut z = vec![0.0; n.saturating_sub(1)];
    let mut a = vec![0.0; n.saturating_sub(1)];
    if n == 1 || cbar <= p.trivial_threshold() {
        return Ok(ObstacleSolution {
            thresholds: z,
            coefficients: a,
        });
    }
    let x_max = match opts.x_max {
        Some(v) if v.is_finite() && v > 0.0 => v,
        Some(v) => return Err(CoreError::invalid(format!("x_max must be positive, got {v}"))),
        None => 2.0 * default_x_max(p, cbar)?,
    };
    let grid = linspace(0.0, x_max, opts.lattice + 1);
    for i in (0..n - 1).rev() {
        let ci = rs[i];
        let wn: Vec<f64> = grid
            .iter()
            .map(|&x| level_value(p, rs, &z, &a, x, i + 1))
            .collect();
        let gi: Vec<f64> = grid.iter().map(|&x| v_constant(p, ci, x)).collect();
        let di: Vec<f64> = grid.iter().map(|&x| dfun(p, ci, x)).collect();
        let feasible = |aa: f64| -> bool {
            gi.iter()
                .zip(&di)
                .zip(&wn)
                .all(|((&g, &d), &w)| g + aa * d >= w)
        };
        let mut hi = 1.0_f64;
        let mut doublings = 0;
        while !feasible(hi) {
            hi *= 2.0;
            doublings += 1;
            if doublings > 70 {
                return Err(CoreError::NoConvergence(format!(
                    "no dominating two-exponential curve found for rate {ci} \
                     with coefficient up to {hi}"
                )));
            }
        }
        let mut lo = 0.0_f64;
        if feasible(lo) {
            // Only possible when the next level never rises above the
            // constant-rate form, i.e. the level is degenerate.
            z[i] = 0.0;
            a[i] = 0.0;
            continue;
        }
        while hi - lo > opts.a_rtol * hi {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let astar = hi;
        // Contact point: the largest infeasible coefficient dips below the
        // obstacle on a short interval around the tangency. Bracket that
        // dip on the lattice, then pin the minimum of the tangent gap.
        let gap_lo: Vec<f64> = gi
            .iter()
            .zip(&di)
            .zip(&wn)
            .map(|((&g, &d), &w)| g + lo * d - w)
            .collect();
        let first_neg = gap_lo
            .iter()
            .position(|&v| v < 0.0)
            .expect("lo is infeasible, so the gap dips below zero somewhere");
        let after = gap_lo[first_neg..]
            .iter()
            .position(|&v| v >= 0.0)
            .map(|k| first_neg + k)
            .unwrap_or(opts.lattice);
        let step = grid[1] - grid[0];
        let left = (grid[first_neg.saturating_sub(1)] - step).max(0.0);
        let right = (grid[after] + step).min(x_max);
        let gap = |x: f64, aa: f64| {
            v_constant(p, ci, x) + aa * dfun(p, ci, x) - level_value(p, rs, &z, &a, x, i + 1)
        };
        let (mut zi, _) = golden_max(|x| -gap(x, astar), left, right, 1e-12 * x_max);
        let mut astar = astar;
        if zi > step {
            // The bisected coefficient is only as sharp as the lattice; at a
            // tangency the exact coefficient makes the gap vanish at its
            // minimum, so alternate "touch at z" with "re-centre z".
            for _ in 0..4 {
                astar = (level_value(p, rs, &z, &a, zi, i + 1) - v_constant(p, ci, zi))
                    / dfun(p, ci, zi);
                let (znew, _) = golden_max(
                    |x| -gap(x, astar),
                    (zi - step).max(0.0),
                    zi + step,
                    1e-13 * x_max,
                );
                zi = znew;
            }
        }
        // Beyond the lattice the dominating curve must have pulled clear of
        // the cap value, otherwise the window was too short.
        let tail = gi[opts.lattice] + astar * di[opts.lattice];
        if tail < cbar / p.q - 1e-9 {
            return Err(CoreError::bracket(format!(
                "obstacle lattice for rate {ci} ends at {x_max} before the \
                 dominating curve clears the cap value"
            )));
        }
        z[i] = if zi <= 1e-12 * x_max { 0.0 } else { zi };
        a[i] = astar;
    }
    Ok(ObstacleSolution {
        thresholds: z,
        coefficients: a,
    })
}

/// One row of the dyadic refinement study: d_sup is the largest pointwise
/// gain from doubling the menu, min_gap the most negative gain observed
/// (zero up to rounding, since finer menus dominate).
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: u32,
    pub rates: usize,
    pub d_sup: f64,
    pub min_gap: f64,
}

/// Solve the dyadic menus S^1 .. S^{levels+1} and measure successive sup
/// gaps on a shared lattice. The gaps are the computable certificate that
/// the finite menus converge to the continuum value.
pub fn convergence_study(
    p: &ModelParams,
    cbar: f64,
    levels: u32,
    opts: &SolveOpts,
) -> Result<Vec<ConvergenceRow>> {
    if levels == 0 {
        return Err(CoreError::invalid("levels must be at least 1"));
    }
    let mut policies = Vec::with_capacity(levels as usize + 1);
    for n in 1..=levels + 1 {
        policies.push(solve_thresholds(p, &RateGrid::dyadic(cbar, n)?, opts)?);
    }
    let b = Unrestricted::new(*p, cbar)?.b_star();
    let hi = if b > 0.0 { 4.0 * b } else { 5.0 * p.sigma * p.sigma / p.mu };
    let xs = linspace(0.0, hi, 400);
    let mut rows = Vec::with_capacity(levels as usize);
    for n in 1..=levels {
        let coarse = &policies[(n - 1) as usize];
        let fine = &policies[n as usize];
        let mut d_sup = f64::NEG_INFINITY;
        let mut min_gap = f64::INFINITY;
        for k in 0..coarse.rates().len() {
            for &x in &xs {
                let gain = fine.value(x, 2 * k) - coarse.value(x, k);
                d_sup = d_sup.max(gain);
                min_gap = min_gap.min(gain);
            }
        }
        rows.push(ConvergenceRow {
            n,
            rates: coarse.rates().len(),
            d_sup,
            min_gap,
        });
    }
    Ok(rows)
}
