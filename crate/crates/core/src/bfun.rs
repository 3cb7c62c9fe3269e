//! Coefficient functions of the free-boundary machinery.
//!
//! Candidate value functions in the no-ratchet region all have the form
//! g(x,c) + A(c) D(x,c) with g the constant-rate closed form and
//! D(x,c) = e^{theta1 x} - e^{theta2 x}. Requiring such a candidate to be
//! flat in c couples A to the two quotients
//!
//!   b0(x,c) = -d/dc[g(x,c)] / D(x,c)
//!   b1(x,c) = -d/dc[D(x,c)] / D(x,c)
//!
//! Both are 0/0 at x = 0, so each gets three evaluation regimes: exact
//! limits at the origin, a truncated power-series quotient while
//! max(theta1, -theta2) x is small, and expm1-factored closed forms
//! elsewhere. The factored forms are scaled by e^{-(theta1-theta2)x} so
//! every exponent is nonpositive: they keep full relative accuracy near
//! the switch and never overflow, however far out a lattice reaches.

use crate::model::{CharacteristicRoots, ModelParams};

/// u e^u - (e^u - 1). Positive for all u != 0, O(u^2) at the origin.
pub(crate) fn phi1(u: f64) -> f64 {
    if u.abs() >= 0.5 {
        return u * u.exp() - f64::exp_m1(u);
    }
    // sum_{k>=2} (k-1) u^k / k!
    let mut term = u * u / 2.0; // k = 2
    let mut acc = term;
    for k in 3..30 {
        term *= u / k as f64;
        acc += term * (k - 1) as f64 / 1.0;
        if term.abs() < 1e-18 * acc.abs().max(1e-300) {
            break;
        }
    }
    acc
}

/// e^u - 1 - u. Positive for all u != 0, O(u^2) at the origin.
pub(crate) fn phi2(u: f64) -> f64 {
    if u.abs() >= 0.5 {
        return f64::exp_m1(u) - u;
    }
    let mut term = u * u / 2.0;
    let mut acc = term;
    for k in 3..30 {
        term *= u / k as f64;
        acc += term;
        if term.abs() < 1e-18 * acc.abs().max(1e-300) {
            break;
        }
    }
    acc
}

/// b0, b1 and their first and second x-partials plus the mixed xc-partials,
/// evaluated together because the free-boundary ODE consumes the whole set.
#[derive(Debug, Clone, Copy)]
pub struct BDerivs {
    pub b0: f64,
    pub b1: f64,
    pub b0_x: f64,
    pub b1_x: f64,
    pub b0_xx: f64,
    pub b1_xx: f64,
    pub b0_xc: f64,
    pub b1_xc: f64,
}

/// Below this value of max(theta1, -theta2) * x the quotients are evaluated
/// by series division instead of the factored closed forms.
const SERIES_SWITCH: f64 = 0.05;

/// Number of quotient series coefficients; contributions decay like
/// (0.05)^k / k!, so this is far past double precision.
const NSER: usize = 18;

struct SeriesEval {
    b0: f64,
    b1: f64,
    b0_x: f64,
    b1_x: f64,
    b0_xx: f64,
    b1_xx: f64,
}

/// Taylor coefficients of b0 and b1 around x = 0, by dividing the power
/// series of numerator and denominator (both vanish linearly, so the
/// leading x is cancelled first).
fn quotient_coeffs(t: &CharacteristicRoots, c: f64, q: f64) -> ([f64; NSER], [f64; NSER]) {
    let (t1, t2, dt1, dt2) = (t.theta1, t.theta2, t.dtheta1, t.dtheta2);
    // Shifted coefficients: index j holds the x^{j+1} coefficient of the
    // original series, i.e. the x^j coefficient after cancelling one x.
    let mut num0 = [0.0_f64; NSER]; // -d/dc g
    let mut num1 = [0.0_f64; NSER]; // -d/dc D
    let mut den = [0.0_f64; NSER]; // D
    let mut p1 = 1.0_f64; // t1^j
    let mut p2 = 1.0_f64; // t2^j
    let mut kfac = 1.0_f64; // (j+1)!
    for j in 0..NSER {
        let k = (j + 1) as f64;
        kfac *= k;
        num0[j] = p2 * (t2 + c * dt2 * k) / (q * kfac);
        num1[j] = (dt2 * p2 - dt1 * p1) * k / kfac; // (.. )/(k-1)! = k/k!
        den[j] = (p1 * t1 - p2 * t2) / kfac;
        p1 *= t1;
        p2 *= t2;
    }
    let mut q0 = [0.0_f64; NSER];
    let mut q1 = [0.0_f64; NSER];
    for j in 0..NSER {
        let mut s0 = num0[j];
        let mut s1 = num1[j];
        for i in 0..j {
            s0 -= q0[i] * den[j - i];
            s1 -= q1[i] * den[j - i];
        }
        q0[j] = s0 / den[0];
        q1[j] = s1 / den[0];
    }
    (q0, q1)
}

fn series_eval(p: &ModelParams, t: &CharacteristicRoots, x: f64, c: f64) -> SeriesEval {
    let (q0, q1) = quotient_coeffs(t, c, p.q);
    let mut e = SeriesEval {
        b0: 0.0,
        b1: 0.0,
        b0_x: 0.0,
        b1_x: 0.0,
        b0_xx: 0.0,
        b1_xx: 0.0,
    };
    for j in (0..NSER).rev() {
        let jf = j as f64;
        e.b0 = e.b0 * x + q0[j];
        e.b1 = e.b1 * x + q1[j];
        if j >= 1 {
            e.b0_x = e.b0_x * x + jf * q0[j];
            e.b1_x = e.b1_x * x + jf * q1[j];
        }
        if j >= 2 {
            e.b0_xx = e.b0_xx * x + jf * (jf - 1.0) * q0[j];
            e.b1_xx = e.b1_xx * x + jf * (jf - 1.0) * q1[j];
        }
    }
    e
}

fn in_series_region(t: &CharacteristicRoots, x: f64) -> bool {
    t.theta1.max(-t.theta2) * x < SERIES_SWITCH
}

/// (b0, b1) at (x, c). Requires x >= 0.
pub fn b_funcs(p: &ModelParams, x: f64, c: f64) -> (f64, f64) {
    debug_assert!(x >= 0.0);
    let t = p.theta(c);
    if in_series_region(&t, x) {
        let e = series_eval(p, &t, x, c);
        return (e.b0, e.b1);
    }
    let (t1, t2, dt1, dt2) = (t.theta1, t.theta2, t.dtheta1, t.dtheta2);
    let u = (t1 - t2) * x;
    let em = (-u).exp();
    let den = -f64::exp_m1(-u); // (e^u - 1) e^{-u}
    let b0 = (c * dt2 * x * em + (-t1 * x).exp() * f64::exp_m1(t2 * x)) / (p.q * den);
    let b1 = x * (dt2 * em - dt1) / den;
    (b0, b1)
}

/// First x-partials of b0 and b1. The b1 partial is a quotient of strictly
/// positive quantities with a leading minus sign and therefore negative for
/// every x > 0, which is what makes the boundary identity solvable for A.
pub fn b_slopes(p: &ModelParams, x: f64, c: f64) -> (f64, f64) {
    debug_assert!(x >= 0.0);
    let t = p.theta(c);
    if in_series_region(&t, x) {
        let e = series_eval(p, &t, x, c);
        return (e.b0_x, e.b1_x);
    }
    let (t1, t2, dt1, dt2) = (t.theta1, t.theta2, t.dtheta1, t.dtheta2);
    let u = (t1 - t2) * x;
    let em = (-u).exp();
    let den2 = {
        let d = f64::exp_m1(-u); // -(e^u - 1) e^{-u}
        d * d
    };
    // phi1(u) e^{-2u} = e^{-u} phi2(-u) and e^u phi2(u) e^{-2u} = phi1(-u),
    // so the small-u series of the phis still carries the cancellation.
    let b0_x = (t1 * (-t1 * x).exp() - t2 * ((t2 - 2.0 * t1) * x).exp()
        - (t1 - t2) * em
        - c * dt2 * em * phi2(-u))
        / (p.q * den2);
    let b1_x = -(dt1 * phi1(-u) + dt2 * em * phi2(-u)) / den2;
    (b0_x, b1_x)
}

fn richardson<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let d = |hh: f64| (f(x + hh) - f(x - hh)) / (2.0 * hh);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Full derivative bundle at (x, c). First partials are analytic; the
/// second and mixed partials are Richardson-extrapolated central
/// differences of those analytic firsts, except in the series region where
/// everything comes straight from the Taylor coefficients. The series
/// region covers a fixed neighbourhood of x = 0, so no difference step ever
/// has to straddle the origin.
pub fn b_partials(p: &ModelParams, x: f64, c: f64) -> BDerivs {
    debug_assert!(x >= 0.0);
    let t = p.theta(c);
    let hc = 1e-5 * c.abs().max(1.0);
    if in_series_region(&t, x) {
        let e = series_eval(p, &t, x, c);
        let slope_c = |cc: f64| {
            let tt = p.theta(cc);
            let ee = series_eval(p, &tt, x, cc);
            (ee.b0_x, ee.b1_x)
        };
        let b0_xc = richardson(|cc| slope_c(cc).0, c, hc);
        let b1_xc = richardson(|cc| slope_c(cc).1, c, hc);
        return BDerivs {
            b0: e.b0,
            b1: e.b1,
            b0_x: e.b0_x,
            b1_x: e.b1_x,
            b0_xx: e.b0_xx,
            b1_xx: e.b1_xx,
            b0_xc,
            b1_xc,
        };
    }
    let (b0, b1) = b_funcs(p, x, c);
    let (b0_x, b1_x) = b_slopes(p, x, c);
    let hx = 1e-5_f64.max(1e-5 * x);
    let b0_xx = richardson(|xx| b_slopes(p, xx, c).0, x, hx);
    let b1_xx = richardson(|xx| b_slopes(p, xx, c).1, x, hx);
    let b0_xc = richardson(|cc| b_slopes(p, x, cc).0, c, hc);
    let b1_xc = richardson(|cc| b_slopes(p, x, cc).1, c, hc);
    BDerivs {
        b0,
        b1,
        b0_x,
        b1_x,
        b0_xx,
        b1_xx,
        b0_xc,
        b1_xc,
    }
}

/// b0 at x = 0: (theta2 + c theta2') / (q (theta1 - theta2)).
pub fn b0_origin(p: &ModelParams, c: f64) -> f64 {
    let t = p.theta(c);
    (t.theta2 + c * t.dtheta2) / (p.q * (t.theta1 - t.theta2))
}

/// b1 at x = 0: (theta2' - theta1') / (theta1 - theta2).
pub fn b1_origin(p: &ModelParams, c: f64) -> f64 {
    let t = p.theta(c);
    (t.dtheta2 - t.dtheta1) / (t.theta1 - t.theta2)
}
