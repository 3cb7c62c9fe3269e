//! Free-boundary curve for a continuum of admissible dividend rates.
//!
//! When the rate can ratchet to any value in [c_low, cbar], the state space
//! splits along a curve x = zeta(c): below it the rate is held (the value
//! is a two-exponential form H(x,c) = g(x,c) + A(c) D(x,c)), above it the
//! rate ratchets continuously so that the state stays on the curve. Three
//! facts pin the curve down:
//!
//!   * at (zeta(c), c) the coefficient satisfies A(c) = -b0_x / b1_x,
//!     where b0, b1 are the coefficient functions of [`crate::bfun`];
//!   * differentiating that identity along the curve and eliminating A'
//!     with the transport equation A' = b0 + b1 A yields a first-order ODE
//!     for zeta, integrated backwards from the anchor at cbar;
//!   * the anchor zeta(cbar) is the unique interior minimum of b0(., cbar).
//!
//! The transport equation also gives A by quadrature, which is kept as an
//! independent route to the same coefficients for cross-checking.

use serde::{Deserialize, Serialize};

use crate::bfun::{b_funcs, b_partials, b_slopes};
use crate::error::{CoreError, Result};
use crate::finite::{dfun, dfun_slope, ThresholdPolicy};
use crate::model::{v_constant, v_constant_slope, ModelParams};
use crate::numerics::{bisect, cumulative_quad, grid_derivative, grid_second, linspace};

#[derive(Debug, Clone)]
pub struct CurveOpts {
    /// Number of integration steps between c_low and cbar.
    pub steps: usize,
    /// Lowest rate the curve is integrated down to.
    pub c_low: f64,
}

impl Default for CurveOpts {
    fn default() -> Self {
        CurveOpts {
            steps: 2000,
            c_low: 0.0,
        }
    }
}

/// Anchor of the curve: the first interior minimum of b0(., cbar), found
/// by scanning d/dx b0 for upward sign changes and polishing by bisection.
/// Downward crossings (local maxima, which appear for small q) are skipped.
/// The search window widens a few times because the root moves far out for
/// large caps.
pub fn find_zbar(p: &ModelParams, cbar: f64) -> Result<f64> {
    if cbar <= p.trivial_threshold() {
        return Err(CoreError::invalid(format!(
            "cap {cbar} is at or below the trivial threshold {}; the boundary \
             curve degenerates to zero",
            p.trivial_threshold()
        )));
    }
    let slope = |x: f64| b_slopes(p, x, cbar).0;
    let t1 = p.theta(cbar).theta1;
    let mut hi = crate::finite::default_x_max(p, cbar)?;
    for _ in 0..5 {
        let grid = linspace(0.0, hi, 2001);
        let mut fa = slope(grid[0]);
        for k in 1..grid.len() {
            let fb = slope(grid[k]);
            if fa < 0.0 && fb >= 0.0 {
                let root = bisect(slope, grid[k - 1], grid[k], fa, fb, 1e-13)?;
                let d = b_partials(p, root, cbar);
                if d.b0_xx > 0.0 {
                    // past e^{theta1 x} = f64::MAX the minimum is an
                    // underflow artifact and no value on the hold region
                    // is representable anyway
                    if t1 * root > 700.0 {
                        return Err(CoreError::NoConvergence(format!(
                            "anchor of the cap-{cbar} boundary sits at {root}, beyond \
                             the representable range of the hold-region basis"
                        )));
                    }
                    return Ok(root);
                }
            }
            fa = fb;
        }
        hi *= 2.0;
    }
    Err(CoreError::bracket(format!(
        "b0(., {cbar}) has no interior minimum on (0, {hi}]"
    )))
}

/// Right-hand side of the boundary ODE d zeta / dc at (z, c), with a
/// degeneracy guard: the denominator is a difference of two curvature
/// terms, and when it cancels below `floor_rel` times their magnitude the
/// curve construction has broken down.
fn curve_rhs(p: &ModelParams, c: f64, z: f64, floor_rel: f64) -> Result<f64> {
    let d = b_partials(p, z, c);
    let num = -d.b0 * d.b1_x * d.b1_x + d.b1 * d.b0_x * d.b1_x - d.b0_xc * d.b1_x
        + d.b1_xc * d.b0_x;
    let den = d.b0_xx * d.b1_x - d.b1_xx * d.b0_x;
    let scale = (d.b0_xx * d.b1_x).abs() + (d.b1_xx * d.b0_x).abs();
    if den.abs() < floor_rel * scale {
        return Err(CoreError::DegenerateCurve {
            c,
            reason: format!("ODE denominator {den} below {floor_rel} of its term scale {scale}"),
        });
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CurveKind {
    /// Output of the ODE integration.
    Smooth,
    /// Piecewise-constant curve induced by a finite-menu policy: zeta(c)
    /// equals `thresholds[i]` on [rates[i], rates[i+1]) and 0 at the cap.
    Step {
        rates: Vec<f64>,
        thresholds: Vec<f64>,
    },
}

/// A free-boundary curve with its transport coefficient sampled on a grid
/// of rates: zeta(c), A(c) and everything needed to evaluate the induced
/// value surface W(x, c).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePolicy {
    pub params: ModelParams,
    pub cbar: f64,
    pub kind: CurveKind,
    /// Ascending rate samples; the first entry is the lowest rate reached.
    c: Vec<f64>,
    zeta: Vec<f64>,
    a: Vec<f64>,
    /// Anchor zeta(cbar) for smooth curves.
    pub zbar: Option<f64>,
    pub monotone: bool,
    /// Set when the integration stopped early; the samples then cover
    /// [degenerate_at, cbar] only.
    pub degenerate_at: Option<f64>,
}

impl CurvePolicy {
    pub fn c_samples(&self) -> &[f64] {
        &self.c
    }

    pub fn zeta_samples(&self) -> &[f64] {
        &self.zeta
    }

    pub fn a_samples(&self) -> &[f64] {
        &self.a
    }

    pub fn c_low(&self) -> f64 {
        self.c[0]
    }

    /// Structural sanity of a policy read from external data.
    pub fn validated(self) -> Result<Self> {
        let n = self.c.len();
        if n < 5 || self.zeta.len() != n || self.a.len() != n {
            return Err(CoreError::invalid(format!(
                "curve sample arrays must share one length >= 5, got c: {}, zeta: {}, a: {}",
                n,
                self.zeta.len(),
                self.a.len()
            )));
        }
        if !self
            .c
            .iter()
            .chain(self.zeta.iter())
            .chain(self.a.iter())
            .all(|v| v.is_finite())
        {
            return Err(CoreError::invalid("curve samples must be finite"));
        }
        if self.c.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::invalid("rate samples must be strictly increasing"));
        }
        if (self.c[n - 1] - self.cbar).abs() > 1e-9 * self.cbar.max(1.0) {
            return Err(CoreError::invalid(format!(
                "last rate sample {} does not match the cap {}",
                self.c[n - 1],
                self.cbar
            )));
        }
        if let CurveKind::Step { rates, thresholds } = &self.kind {
            if rates.len() != thresholds.len() + 1 {
                return Err(CoreError::invalid(
                    "step curve needs one threshold per non-top rate",
                ));
            }
        }
        Ok(self)
    }

    fn rate_tol(&self) -> f64 {
        1e-9 * self.cbar.max(1.0)
    }

    fn check_rate(&self, c: f64) -> Result<f64> {
        if !c.is_finite() || c < self.c[0] - self.rate_tol() || c > self.cbar + self.rate_tol() {
            return Err(CoreError::invalid(format!(
                "rate {c} outside the curve's span [{}, {}]",
                self.c[0], self.cbar
            )));
        }
        Ok(c.clamp(self.c[0], self.cbar))
    }

    /// Interpolation cell index: c lies in [c[i], c[i+1]].
    fn cell(&self, c: f64) -> usize {
        let n = self.c.len();
        let i = self.c.partition_point(|&v| v <= c);
        i.clamp(1, n - 1) - 1
    }

    pub fn zeta_at(&self, c: f64) -> Result<f64> {
        let c = self.check_rate(c)?;
        match &self.kind {
            CurveKind::Smooth => {
                let i = self.cell(c);
                let t = (c - self.c[i]) / (self.c[i + 1] - self.c[i]);
                Ok(self.zeta[i] + t * (self.zeta[i + 1] - self.zeta[i]))
            }
            CurveKind::Step { rates, thresholds } => {
                let i = rates.partition_point(|&r| r <= c + self.rate_tol());
                // i is the count of rates at or below c
                if i >= rates.len() {
                    Ok(0.0) // at the cap the whole axis is ratcheted through
                } else {
                    Ok(thresholds[i - 1])
                }
            }
        }
    }

    /// Transport coefficient at rate c, linearly interpolated between the
    /// stored samples (exact on the samples themselves).
    pub fn a_at(&self, c: f64) -> Result<f64> {
        let c = self.check_rate(c)?;
        let i = self.cell(c);
        let t = (c - self.c[i]) / (self.c[i + 1] - self.c[i]);
        Ok(self.a[i] + t * (self.a[i + 1] - self.a[i]))
    }

    /// Hold-region value H(x, c) = g(x, c) + A(c) D(x, c). Only defined up
    /// to the curve.
    pub fn h_value(&self, x: f64, c: f64) -> Result<f64> {
        let z = self.zeta_at(c)?;
        if x < 0.0 || x > z * (1.0 + 1e-12) + 1e-12 {
            return Err(CoreError::invalid(format!(
                "x = {x} outside the hold region [0, {z}] at rate {c}"
            )));
        }
        Ok(v_constant(&self.params, c, x) + self.a_at(c)? * dfun(&self.params, c, x))
    }

    pub fn h_slope(&self, x: f64, c: f64) -> Result<f64> {
        let z = self.zeta_at(c)?;
        if x < 0.0 || x > z * (1.0 + 1e-12) + 1e-12 {
            return Err(CoreError::invalid(format!(
                "x = {x} outside the hold region [0, {z}] at rate {c}"
            )));
        }
        Ok(v_constant_slope(&self.params, c, x) + self.a_at(c)? * dfun_slope(&self.params, c, x))
    }

    /// Rate the strategy ratchets to when the surplus sits at x >= zeta(c):
    /// the first rate at or above c whose boundary blocks x. Implemented on
    /// the running maximum of zeta so non-monotone curves are handled too.
    pub fn continuation_rate(&self, x: f64, c: f64) -> Result<f64> {
        let c = self.check_rate(c)?;
        let z0 = self.zeta_at(c)?;
        if x < z0 * (1.0 - 1e-12) - 1e-12 {
            return Err(CoreError::invalid(format!(
                "x = {x} is below the curve at rate {c} (zeta = {z0})"
            )));
        }
        match &self.kind {
            CurveKind::Smooth => {
                let mut prev_c = c;
                let mut hw = z0; // running maximum of zeta over [c, prev_c]
                let start = self.cell(c) + 1;
                for j in start..self.c.len() {
                    let zj = self.zeta[j];
                    if zj > hw && zj > x {
                        // blocked inside (prev_c, c[j]); interpolate on the
                        // rising section from the running max to zeta[j]
                        let base = hw.max(self.zeta[j - 1].min(zj));
                        let lo_c = if self.zeta[j - 1] >= base { self.c[j - 1] } else { prev_c };
                        let lo_z = self.zeta[j - 1].max(hw);
                        let t = if zj > lo_z { (x - lo_z) / (zj - lo_z) } else { 0.0 };
                        return Ok(lo_c + t.clamp(0.0, 1.0) * (self.c[j] - lo_c));
                    }
                    hw = hw.max(zj);
                    prev_c = self.c[j];
                }
                Ok(self.cbar)
            }
            CurveKind::Step { rates, thresholds } => {
                let mut i = rates.partition_point(|&r| r <= c + self.rate_tol());
                // first piece index strictly above c's piece
                while i < rates.len() {
                    if i == rates.len() - 1 {
                        return Ok(self.cbar);
                    }
                    if thresholds[i] > x {
                        return Ok(rates[i]);
                    }
                    i += 1;
                }
                Ok(self.cbar)
            }
        }
    }

    /// Value surface of the curve strategy: H(x, c) below the curve,
    /// H(x, continuation rate) above it.
    pub fn w_value(&self, x: f64, c: f64) -> Result<f64> {
        let c = self.check_rate(c)?;
        if !x.is_finite() || x < 0.0 {
            return Err(CoreError::invalid(format!("x must be finite and nonnegative, got {x}")));
        }
        let z = self.zeta_at(c)?;
        if x < z {
            self.h_value(x, c)
        } else {
            let ch = self.continuation_rate(x, c)?;
            Ok(v_constant(&self.params, ch, x) + self.a_at(ch)? * dfun(&self.params, ch, x))
        }
    }

    pub fn w_slope(&self, x: f64, c: f64) -> Result<f64> {
        let c = self.check_rate(c)?;
        if !x.is_finite() || x < 0.0 {
            return Err(CoreError::invalid(format!("x must be finite and nonnegative, got {x}")));
        }
        let z = self.zeta_at(c)?;
        if x < z {
            self.h_slope(x, c)
        } else {
            // the rate adjustment contributes nothing to the x-derivative:
            // H is flat in c exactly on the curve
            let ch = self.continuation_rate(x, c)?;
            Ok(v_constant_slope(&self.params, ch, x)
                + self.a_at(ch)? * dfun_slope(&self.params, ch, x))
        }
    }
}

/// Integrate the boundary ODE backwards from (cbar, zbar) with fixed-step
/// fourth-order Runge-Kutta. A degenerate right-hand side or a boundary
/// collapse (zeta <= 0) truncates the curve and flags it rather than
/// failing: the samples that were computed are still a valid curve on
/// their span.
pub fn integrate_curve(p: &ModelParams, cbar: f64, opts: &CurveOpts) -> Result<CurvePolicy> {
    if opts.steps < 10 {
        return Err(CoreError::invalid("curve integration needs at least 10 steps"));
    }
    if !(opts.c_low >= 0.0 && opts.c_low < cbar) {
        return Err(CoreError::invalid(format!(
            "c_low must satisfy 0 <= c_low < cbar, got {} vs {cbar}",
            opts.c_low
        )));
    }
    let zbar = find_zbar(p, cbar)?;
    let h = (cbar - opts.c_low) / opts.steps as f64;
    let floor_rel = 1e-10;
    // collected descending from cbar, reversed at the end
    let mut cs = vec![cbar];
    let mut zs = vec![zbar];
    let mut degenerate_at = None;
    let mut z = zbar;
    'outer: for k in 0..opts.steps {
        let c0 = cbar - k as f64 * h;
        let step = |cc: f64, zz: f64| curve_rhs(p, cc, zz, floor_rel);
        let result = (|| -> Result<f64> {
            let k1 = step(c0, z)?;
            let k2 = step(c0 - 0.5 * h, z - 0.5 * h * k1)?;
            let k3 = step(c0 - 0.5 * h, z - 0.5 * h * k2)?;
            let k4 = step(c0 - h, z - h * k3)?;
            Ok(z - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        })();
        match result {
            Ok(znext) if znext > 0.0 && znext.is_finite() => {
                z = znext;
                cs.push(c0 - h);
                zs.push(z);
            }
            Ok(_) | Err(CoreError::DegenerateCurve { .. }) => {
                degenerate_at = Some(c0);
                break 'outer;
            }
            Err(e) => return Err(e),
        }
    }
    cs.reverse();
    zs.reverse();
    // exact last-sample cleanup: the descending loop accumulates rounding
    if degenerate_at.is_none() {
        cs[0] = opts.c_low;
    }
    *cs.last_mut().unwrap() = cbar;
    let mut a: Vec<f64> = cs
        .iter()
        .zip(&zs)
        .map(|(&c, &zz)| {
            let (b0_x, b1_x) = b_slopes(p, zz, c);
            -b0_x / b1_x
        })
        .collect();
    // the anchor is the exact zero of b0_x, so A(cbar) is pinned
    *a.last_mut().unwrap() = 0.0;
    let monotone = zs.windows(2).all(|w| w[1] >= w[0] - 1e-10 * zbar);
    Ok(CurvePolicy {
        params: *p,
        cbar,
        kind: CurveKind::Smooth,
        c: cs,
        zeta: zs,
        a,
        zbar: Some(zbar),
        monotone,
        degenerate_at,
    })
}

/// Coefficients by the independent quadrature route: solve the transport
/// equation A' = b0 + b1 A along the stored curve as an explicit integral
/// with A(cbar) = 0, using cumulative quadrature on the sample grid.
pub fn a_by_quadrature(policy: &CurvePolicy) -> Result<Vec<f64>> {
    if !matches!(policy.kind, CurveKind::Smooth) {
        return Err(CoreError::invalid(
            "quadrature coefficients need a smooth curve; step curves get them at construction",
        ));
    }
    let p = &policy.params;
    let n = policy.c.len();
    let h = (policy.c[n - 1] - policy.c[0]) / (n - 1) as f64;
    let mut f0 = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    for k in 0..n {
        let (b0, b1) = b_funcs(p, policy.zeta[k], policy.c[k]);
        f0.push(b0);
        f1.push(b1);
    }
    // B(c) = int_{c_low}^{c} b1; b1 <= 0 makes B nonincreasing, so exp(B)
    // stays bounded while exp(-B) grows towards cbar. The weighted
    // integrand exp(-B) b0 and the final product exp(B) I(c) keep every
    // intermediate in range.
    let big_b = cumulative_quad(h, &f1);
    let weighted: Vec<f64> = big_b
        .iter()
        .zip(&f0)
        .map(|(&b, &v)| (-b).exp() * v)
        .collect();
    let cum = cumulative_quad(h, &weighted);
    let total = cum[n - 1];
    Ok((0..n)
        .map(|k| -(big_b[k].exp() * (total - cum[k])))
        .collect())
}

/// Largest relative residual of the transport equation A' = b0 + b1 A over
/// the stored samples, with A' from fourth-order differencing of the
/// stored coefficients. Checks that curve and coefficients jointly solve
/// the boundary system they were built from.
pub fn ode_residual_max(policy: &CurvePolicy) -> Result<f64> {
    if !matches!(policy.kind, CurveKind::Smooth) {
        return Err(CoreError::invalid("ODE residual is defined for smooth curves"));
    }
    let p = &policy.params;
    let n = policy.c.len();
    let h = (policy.c[n - 1] - policy.c[0]) / (n - 1) as f64;
    let da = grid_derivative(h, &policy.a);
    let mut worst = 0.0_f64;
    for (k, dak) in da.iter().enumerate() {
        let (b0, b1) = b_funcs(p, policy.zeta[k], policy.c[k]);
        let rhs = b0 + b1 * policy.a[k];
        let resid = (dak - rhs).abs() / rhs.abs().max(1.0);
        worst = worst.max(resid);
    }
    Ok(worst)
}

/// Piecewise-constant curve induced by a finite-menu policy, with the
/// transport coefficients computed by per-piece quadrature. The resulting
/// value surface must coincide with the menu recursion's extended values;
/// the test suite holds the two routes against each other.
pub fn step_curve(policy: &ThresholdPolicy, samples_per_piece: usize) -> Result<CurvePolicy> {
    let p = &policy.params;
    let rates = policy.rates();
    let n = rates.len();
    if n < 2 {
        return Err(CoreError::invalid("step curve needs at least two rates"));
    }
    if samples_per_piece < 8 {
        return Err(CoreError::invalid("need at least 8 samples per piece"));
    }
    let thresholds = policy.thresholds().to_vec();
    let zeta_of = |c: f64, piece: usize| -> f64 {
        // zeta on [rates[i], rates[i+1]) is thresholds[i]
        let _ = c;
        thresholds[piece]
    };
    // Dense grid piece by piece; B and the weighted integral chain across
    // pieces because both are integrals of (piecewise-defined) integrands.
    let mut cs: Vec<f64> = Vec::new();
    let mut zs: Vec<f64> = Vec::new();
    let mut big_b: Vec<f64> = Vec::new();
    let mut weighted_cum: Vec<f64> = Vec::new();
    let mut b_off = 0.0;
    let mut i_off = 0.0;
    for piece in 0..n - 1 {
        let nodes = linspace(rates[piece], rates[piece + 1], samples_per_piece + 1);
        let hh = nodes[1] - nodes[0];
        let f1: Vec<f64> = nodes
            .iter()
            .map(|&s| b_funcs(p, zeta_of(s, piece), s).1)
            .collect();
        let bpc = cumulative_quad(hh, &f1);
        let w: Vec<f64> = nodes
            .iter()
            .zip(&bpc)
            .map(|(&s, &b)| (-(b + b_off)).exp() * b_funcs(p, zeta_of(s, piece), s).0)
            .collect();
        let ipc = cumulative_quad(hh, &w);
        let skip = usize::from(piece > 0); // boundary node already stored
        for k in skip..nodes.len() {
            cs.push(nodes[k]);
            zs.push(zeta_of(nodes[k], piece));
            big_b.push(bpc[k] + b_off);
            weighted_cum.push(ipc[k] + i_off);
        }
        b_off += bpc[samples_per_piece];
        i_off += ipc[samples_per_piece];
    }
    let total = *weighted_cum.last().unwrap();
    let a: Vec<f64> = big_b
        .iter()
        .zip(&weighted_cum)
        .map(|(&b, &i)| -(b.exp() * (total - i)))
        .collect();
    let monotone = thresholds.windows(2).all(|w| w[1] >= w[0]);
    Ok(CurvePolicy {
        params: *p,
        cbar: policy.cbar(),
        kind: CurveKind::Step {
            rates: rates.to_vec(),
            thresholds,
        },
        c: cs,
        zeta: zs,
        a,
        zbar: None,
        monotone,
        degenerate_at: None,
    })
}

#[derive(Debug, Clone)]
pub struct VerifyOpts {
    /// Absolute tolerance on every optimality residual.
    pub tol: f64,
    /// Surplus lattice size for the flatness sweep.
    pub nx: usize,
}

impl Default for VerifyOpts {
    fn default() -> Self {
        VerifyOpts { tol: 1e-4, nx: 400 }
    }
}

/// Outcome of the optimality verification sweep. All maxima are absolute
/// except `max_dcw`, which is the signed maximum of the c-derivative (the
/// surface must be non-increasing in the locked rate, so anything above
/// `tol` is a violation).
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub pass: bool,
    pub tol: f64,
    /// max over samples of (slope at the curve - 1)
    pub max_slope_excess: f64,
    pub worst_slope_c: f64,
    /// signed max of dW/dc over the hold-region lattice
    pub max_dcw: f64,
    pub worst_dcw_x: f64,
    pub worst_dcw_c: f64,
    /// mixed second derivative of H at the curve (zero for a true free
    /// boundary)
    pub max_pasting_mixed: f64,
    pub worst_pasting_mixed_c: f64,
    /// second c-derivative of H at the curve
    pub max_pasting_cc: f64,
    pub worst_pasting_cc_c: f64,
    /// |d/dx b0| at the anchor, which defines zeta(cbar)
    pub anchor_residual: f64,
    /// relative transport-equation residual from differenced coefficients
    pub ode_residual: f64,
    pub lattice_nx: usize,
    pub lattice_x_hi: f64,
    pub samples: usize,
}

impl CurvePolicy {
    /// Check the variational characterization of the curve on a lattice:
    /// slope at most one on the boundary, value non-increasing in the
    /// locked rate, and twice-smooth pasting across the curve. Derivative
    /// estimates in c come from high-order differencing of the stored
    /// coefficient samples; everything in x is analytic.
    pub fn verify(&self, opts: &VerifyOpts) -> Result<VerificationReport> {
        if !matches!(self.kind, CurveKind::Smooth) {
            return Err(CoreError::invalid("verification applies to smooth curves"));
        }
        if opts.nx < 10 {
            return Err(CoreError::invalid("verification lattice needs at least 10 points"));
        }
        let p = &self.params;
        let n = self.c.len();
        let h = (self.c[n - 1] - self.c[0]) / (n - 1) as f64;
        let da = grid_derivative(h, &self.a);
        let dda = grid_second(h, &self.a);

        // (a) slope on the curve, from the hold side where the curve is
        // interior; at a collapsed boundary the surface slope is the
        // cap-rate constant form's.
        let mut max_slope_excess = f64::NEG_INFINITY;
        let mut worst_slope_c = self.c[0];
        for k in 0..n {
            let slope = if self.zeta[k] > 0.0 {
                v_constant_slope(p, self.c[k], self.zeta[k])
                    + self.a[k] * dfun_slope(p, self.c[k], self.zeta[k])
            } else {
                v_constant_slope(p, self.cbar, 0.0)
            };
            let excess = slope - 1.0;
            if excess > max_slope_excess {
                max_slope_excess = excess;
                worst_slope_c = self.c[k];
            }
        }

        // (b) dW/dc = D(x,c) (A'(c) - b0(x,c) - b1(x,c) A(c)) on the hold
        // region; must stay at or below zero. The product D * b0 is formed
        // directly: it stays bounded even where both factors are extreme.
        let zmax = self.zeta.iter().cloned().fold(0.0, f64::max);
        let x_hi = 1.5 * zmax + 5.0 * p.sigma * p.sigma / p.mu;
        let xs = linspace(0.0, x_hi, opts.nx);
        let mut max_dcw = f64::NEG_INFINITY;
        let (mut worst_dcw_x, mut worst_dcw_c) = (0.0, self.c[0]);
        for (k, dak) in da.iter().enumerate() {
            for &x in &xs {
                if x >= self.zeta[k] {
                    break;
                }
                let (b0, b1) = b_funcs(p, x, self.c[k]);
                let d = dfun(p, self.c[k], x);
                let dcw = d * (dak - b0 - b1 * self.a[k]);
                if dcw > max_dcw {
                    max_dcw = dcw;
                    worst_dcw_x = x;
                    worst_dcw_c = self.c[k];
                }
            }
        }
        if max_dcw == f64::NEG_INFINITY {
            // no hold region at all (fully collapsed curve)
            max_dcw = 0.0;
        }

        // (c) twice-smooth pasting at the curve: the mixed and the second
        // c-derivative of H both vanish along a true free boundary. The
        // ratchet side is flat in c by construction, so these one-sided
        // values are the full jumps. The top two samples are skipped: the
        // one-sided second-derivative stencils there cannot resolve the
        // coefficient's simple zero at the cap, and the anchor residual
        // pins that endpoint instead.
        let mut max_pasting_mixed = 0.0_f64;
        let mut worst_pasting_mixed_c = self.c[0];
        let mut max_pasting_cc = 0.0_f64;
        let mut worst_pasting_cc_c = self.c[0];
        let hc = 1e-5 * self.cbar.max(1.0);
        for k in 0..n.saturating_sub(2) {
            if self.zeta[k] <= 0.0 {
                continue;
            }
            let (x, c) = (self.zeta[k], self.c[k]);
            let bd = b_partials(p, x, c);
            let d = dfun(p, c, x);
            let dprime = dfun_slope(p, c, x);
            let transport = da[k] - bd.b0 - bd.b1 * self.a[k];
            let identity = -bd.b0_x - bd.b1_x * self.a[k];
            let mixed = dprime * transport + d * identity;
            if mixed.abs() > max_pasting_mixed {
                max_pasting_mixed = mixed.abs();
                worst_pasting_mixed_c = c;
            }
            // c-derivatives of b0, b1 and of D by Richardson differencing
            let b0_c = richardson_c(|cc| b_funcs(p, x, cc).0, c, hc);
            let b1_c = richardson_c(|cc| b_funcs(p, x, cc).1, c, hc);
            let d_c = richardson_c(|cc| dfun(p, cc, x), c, hc);
            let cc_val = d_c * transport
                + d * (dda[k] - b0_c - b1_c * self.a[k] - bd.b1 * da[k]);
            if cc_val.abs() > max_pasting_cc {
                max_pasting_cc = cc_val.abs();
                worst_pasting_cc_c = c;
            }
        }

        let anchor_residual = match self.zbar {
            Some(zb) => b_slopes(p, zb, self.cbar).0.abs(),
            None => 0.0,
        };
        let ode_residual = ode_residual_max(self)?;
        let tol = opts.tol;
        let pass = max_slope_excess <= tol
            && max_dcw <= tol
            && max_pasting_mixed <= tol
            && max_pasting_cc <= tol;
        Ok(VerificationReport {
            pass,
            tol,
            max_slope_excess,
            worst_slope_c,
            max_dcw,
            worst_dcw_x,
            worst_dcw_c,
            max_pasting_mixed,
            worst_pasting_mixed_c,
            max_pasting_cc,
            worst_pasting_cc_c,
            anchor_residual,
            ode_residual,
            lattice_nx: opts.nx,
            lattice_x_hi: x_hi,
            samples: n,
        })
    }
}

fn richardson_c<F: Fn(f64) -> f64>(f: F, c: f64, h: f64) -> f64 {
    let d = |hh: f64| (f(c + hh) - f(c - hh)) / (2.0 * hh);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Full continuum solve: integrate the curve (or produce the collapsed one
/// below the trivial threshold) and verify it.
pub fn solve_continuum(
    p: &ModelParams,
    cbar: f64,
    opts: &CurveOpts,
    vopts: &VerifyOpts,
) -> Result<(CurvePolicy, VerificationReport)> {
    if !cbar.is_finite() || cbar <= 0.0 {
        return Err(CoreError::invalid(format!("cbar must be positive, got {cbar}")));
    }
    let policy = if cbar <= p.trivial_threshold() {
        let c = linspace(opts.c_low, cbar, opts.steps + 1);
        let nn = c.len();
        CurvePolicy {
            params: *p,
            cbar,
            kind: CurveKind::Smooth,
            c,
            zeta: vec![0.0; nn],
            a: vec![0.0; nn],
            zbar: None,
            monotone: true,
            degenerate_at: None,
        }
    } else {
        integrate_curve(p, cbar, opts)?
    };
    let report = policy.verify(vopts)?;
    Ok((policy, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::{solve_thresholds, RateGrid};

    fn params() -> ModelParams {
        ModelParams::new(4.0, 2.0, 0.1).unwrap()
    }

    #[test]
    fn anchor_matches_frozen_values() {
        let p = params();
        let z4 = find_zbar(&p, 4.0).unwrap();
        assert!((z4 - 14.733427940038455).abs() < 1e-7, "zbar(4) = {z4}");
        let z8 = find_zbar(&p, 8.0).unwrap();
        assert!((z8 - 49.727675210289206).abs() < 1e-6, "zbar(8) = {z8}");
    }

    #[test]
    fn anchor_rejects_trivial_cap() {
        let p = params();
        assert!(find_zbar(&p, 0.04).is_err());
    }

    #[test]
    fn integration_is_step_consistent() {
        let p = params();
        let coarse = integrate_curve(&p, 4.0, &CurveOpts { steps: 250, c_low: 0.0 }).unwrap();
        let fine = integrate_curve(&p, 4.0, &CurveOpts { steps: 500, c_low: 0.0 }).unwrap();
        let zc = coarse.zeta_samples()[0];
        let zf = fine.zeta_samples()[0];
        assert!((zc - zf).abs() < 1e-6 * zf.abs(), "zeta(0): {zc} vs {zf}");
        assert!(coarse.monotone);
        assert!(coarse.degenerate_at.is_none());
    }

    #[test]
    fn curve_hits_frozen_low_end() {
        let p = params();
        let pol = integrate_curve(&p, 4.0, &CurveOpts { steps: 1000, c_low: 0.0 }).unwrap();
        let z0 = pol.zeta_samples()[0];
        assert!((z0 - 3.6928568869533276).abs() < 5e-5, "zeta(0) = {z0}");
        let z2 = pol.zeta_at(2.0).unwrap();
        assert!((z2 - 5.824088942654716).abs() < 5e-5, "zeta(2) = {z2}");
        let a0 = pol.a_samples()[0];
        assert!((a0 - 29.236967608138546).abs() < 1e-3, "A(0) = {a0}");
        assert_eq!(*pol.a_samples().last().unwrap(), 0.0);
    }

    #[test]
    fn quadrature_route_matches_identity_coefficients() {
        let p = params();
        let pol = integrate_curve(&p, 4.0, &CurveOpts { steps: 1000, c_low: 0.0 }).unwrap();
        let aq = a_by_quadrature(&pol).unwrap();
        let scale = 1e-6 * (4.0 / p.q);
        for (k, (&quad, &ident)) in aq.iter().zip(pol.a_samples()).enumerate() {
            let (_, b1_x) = b_slopes(&p, pol.zeta_samples()[k], pol.c_samples()[k]);
            let (b0_x, _) = b_slopes(&p, pol.zeta_samples()[k], pol.c_samples()[k]);
            let resid = (quad * b1_x + b0_x).abs();
            assert!(resid <= scale, "node {k}: residual {resid}");
            assert!((quad - ident).abs() <= 1e-5 * ident.abs().max(1e-3));
        }
    }

    #[test]
    fn constant_curve_coefficient_has_closed_form() {
        // A synthetic flat curve zeta == 5: the hold value at x = 5 is flat
        // in c, so A(0) D(5, 0) must equal the cap's constant-rate value.
        let p = params();
        let n = 2001;
        let c = linspace(0.0, 4.0, n);
        let pol = CurvePolicy {
            params: p,
            cbar: 4.0,
            kind: CurveKind::Smooth,
            c,
            zeta: vec![5.0; n],
            a: vec![0.0; n],
            zbar: None,
            monotone: true,
            degenerate_at: None,
        };
        let aq = a_by_quadrature(&pol).unwrap();
        let closed = v_constant(&p, 4.0, 5.0) / dfun(&p, 0.0, 5.0);
        assert!(
            (aq[0] - closed).abs() < 1e-7 * closed,
            "quadrature {} vs closed {closed}",
            aq[0]
        );
        assert!((closed - 23.8).abs() < 0.1);
    }

    #[test]
    fn trivial_cap_collapses_and_verifies() {
        let p = params();
        let (pol, report) = solve_continuum(
            &p,
            0.04,
            &CurveOpts { steps: 100, c_low: 0.0 },
            &VerifyOpts::default(),
        )
        .unwrap();
        assert!(pol.zeta_samples().iter().all(|&z| z == 0.0));
        assert!(report.pass, "{report:?}");
        for x in [0.0, 0.7, 3.0, 12.0] {
            let w = pol.w_value(x, 0.01).unwrap();
            let vc = v_constant(&p, 0.04, x);
            assert!((w - vc).abs() <= 1e-12 * vc.max(1.0), "x = {x}");
        }
    }

    #[test]
    fn verification_passes_on_the_solved_curve() {
        let p = params();
        let (_, report) = solve_continuum(
            &p,
            4.0,
            &CurveOpts { steps: 1000, c_low: 0.0 },
            &VerifyOpts { tol: 1e-4, nx: 200 },
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn verification_rejects_a_shifted_curve() {
        let p = params();
        let mut pol = integrate_curve(&p, 4.0, &CurveOpts { steps: 1000, c_low: 0.0 }).unwrap();
        for z in &mut pol.zeta {
            *z += 0.2;
        }
        let report = pol.verify(&VerifyOpts { tol: 1e-4, nx: 100 }).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn region_logic_and_far_field() {
        let p = params();
        let pol = integrate_curve(&p, 4.0, &CurveOpts { steps: 500, c_low: 0.0 }).unwrap();
        // inverse property on the samples
        for k in (0..pol.c.len()).step_by(97) {
            if pol.zeta[k] > 0.0 {
                let c = pol.continuation_rate(pol.zeta[k], pol.c[k]).unwrap();
                assert!((c - pol.c[k]).abs() < 1e-9 * 4.0, "sample {k}");
            }
        }
        // far from the boundary the surface flattens at cbar / q
        let w = pol.w_value(100.0, 0.0).unwrap();
        assert!((w - 40.0).abs() < 1e-8 * 40.0);
        // hold-region evaluation refuses points above the curve
        assert!(pol.h_value(pol.zeta[0] + 1.0, 0.0).is_err());
        // continuation refuses points below it
        assert!(pol.continuation_rate(0.5 * pol.zeta[0], 0.0).is_err());
        // rates outside the span are rejected
        assert!(pol.w_value(1.0, 4.5).is_err());
        assert!(pol.w_value(1.0, -0.2).is_err());
    }

    #[test]
    fn step_curve_reproduces_menu_values() {
        let p = params();
        let grid = RateGrid::new(vec![0.0, 2.0, 4.0]).unwrap();
        let menu = solve_thresholds(&p, &grid, &Default::default()).unwrap();
        let sc = step_curve(&menu, 200).unwrap();
        for &x in &[0.0, 0.8, 2.5, 5.0, 9.0, 14.0] {
            for &c in &[0.0, 2.0, 4.0] {
                let via_curve = sc.w_value(x, c).unwrap();
                let via_menu = menu.value_extended(x, c).unwrap();
                assert!(
                    (via_curve - via_menu).abs() < 1e-9 * via_menu.abs().max(1.0),
                    "x={x} c={c}: {via_curve} vs {via_menu}"
                );
            }
        }
    }
}
