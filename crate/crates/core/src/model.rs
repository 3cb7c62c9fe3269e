//! Surplus model and the closed forms that anchor everything else.
//!
//! The uncontrolled surplus is a Brownian motion with drift `mu` and
//! volatility `sigma`; dividends are discounted at rate `q`. Paying at a
//! constant rate c changes the drift to `mu - c`, and the discounted value
//! of any payout stream solves a second-order ODE whose characteristic
//! roots theta1 > 0 > theta2 drive every formula in this crate.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu: f64,
    pub sigma: f64,
    pub q: f64,
}

/// Roots of (sigma^2/2) t^2 + (mu - c) t - q = 0 together with their
/// derivatives in c. theta1 is the positive root, theta2 the negative one.
#[derive(Debug, Clone, Copy)]
pub struct CharacteristicRoots {
    pub theta1: f64,
    pub theta2: f64,
    pub dtheta1: f64,
    pub dtheta2: f64,
}

impl ModelParams {
    pub fn new(mu: f64, sigma: f64, q: f64) -> Result<Self> {
        for (name, v) in [("mu", mu), ("sigma", sigma), ("q", q)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(CoreError::invalid(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(ModelParams { mu, sigma, q })
    }

    /// Largest cap for which paying it from the start is optimal. Below this
    /// value every threshold collapses to zero and the whole problem reduces
    /// to the constant-rate closed form.
    pub fn trivial_threshold(&self) -> f64 {
        self.q * self.sigma * self.sigma / (2.0 * self.mu)
    }

    /// Characteristic roots at rate c, evaluated without cancellation: the
    /// root on the same side as the drift `c - mu` is computed directly and
    /// the other recovered from the product theta1 * theta2 = -2q/sigma^2.
    pub fn theta(&self, c: f64) -> CharacteristicRoots {
        let s2 = self.sigma * self.sigma;
        let d = c - self.mu;
        let s = (d * d + 2.0 * self.q * s2).sqrt();
        let (theta1, theta2) = if d >= 0.0 {
            let t1 = (d + s) / s2;
            (t1, -2.0 * self.q / (s2 * t1))
        } else {
            let t2 = (d - s) / s2;
            (-2.0 * self.q / (s2 * t2), t2)
        };
        // dtheta1 = (1 + d/s)/sigma^2 and dtheta2 = (1 - d/s)/sigma^2; the
        // subtractive one is rewritten as 2q/(s(s +- d)) to stay exact when
        // |d| >> sqrt(q) sigma.
        let dtheta1 = if d >= 0.0 {
            (1.0 + d / s) / s2
        } else {
            2.0 * self.q / (s * (s - d))
        };
        let dtheta2 = if d <= 0.0 {
            (1.0 - d / s) / s2
        } else {
            2.0 * self.q / (s * (s + d))
        };
        CharacteristicRoots {
            theta1,
            theta2,
            dtheta1,
            dtheta2,
        }
    }

}

/// Value of the strategy that pays rate c forever (no ratcheting left to
/// do): (c/q)(1 - e^{theta2(c) x}). Increasing, concave, with limit c/q.
pub fn v_constant(p: &ModelParams, c: f64, x: f64) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    let t2 = p.theta(c).theta2;
    -(c / p.q) * f64::exp_m1(t2 * x)
}

/// Slope of [`v_constant`] in x.
pub fn v_constant_slope(p: &ModelParams, c: f64, x: f64) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    let t2 = p.theta(c).theta2;
    -(c / p.q) * t2 * (t2 * x).exp()
}

/// Value of the unconstrained problem where the dividend rate may move
/// freely in [0, cbar]: pay nothing below the barrier `b_star`, pay cbar
/// above it. This is the upper envelope every ratcheting value stays under.
#[derive(Debug, Clone)]
pub struct Unrestricted {
    params: ModelParams,
    cbar: f64,
    b_star: f64,
    t1_0: f64,
    t2_0: f64,
    t2_bar: f64,
    /// theta1(0) e^{theta1(0) b*} - theta2(0) e^{theta2(0) b*}, the
    /// normalization that makes the slope 1 at the barrier.
    denom: f64,
}

impl Unrestricted {
    pub fn new(params: ModelParams, cbar: f64) -> Result<Self> {
        if !cbar.is_finite() || cbar < 0.0 {
            return Err(CoreError::invalid(format!(
                "cbar must be finite and nonnegative, got {cbar}"
            )));
        }
        let r0 = params.theta(0.0);
        let rb = params.theta(cbar);
        let (t1_0, t2_0, t2_bar) = (r0.theta1, r0.theta2, rb.theta2);
        // b* > 0 exactly when cbar exceeds q sigma^2 / (2 mu); at or below
        // that the barrier clamps to zero and the value degenerates to the
        // constant-rate form.
        let b_star = if cbar <= params.trivial_threshold() {
            0.0
        } else {
            let num = t2_0 * (t2_0 - t2_bar);
            let den = t1_0 * (t1_0 - t2_bar);
            (num / den).ln() / (t1_0 - t2_0)
        };
        let denom = t1_0 * (t1_0 * b_star).exp() - t2_0 * (t2_0 * b_star).exp();
        Ok(Unrestricted {
            params,
            cbar,
            b_star,
            t1_0,
            t2_0,
            t2_bar,
            denom,
        })
    }

    pub fn b_star(&self) -> f64 {
        self.b_star
    }

    pub fn value(&self, x: f64) -> f64 {
        if self.cbar == 0.0 {
            return 0.0;
        }
        if self.b_star == 0.0 {
            // Clamped barrier: paying cbar immediately is already optimal.
            return v_constant(&self.params, self.cbar, x);
        }
        if x <= self.b_star {
            ((self.t1_0 * x).exp() - (self.t2_0 * x).exp()) / self.denom
        } else {
            self.cbar / self.params.q + (self.t2_bar * (x - self.b_star)).exp() / self.t2_bar
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        if self.cbar == 0.0 {
            return 0.0;
        }
        if self.b_star == 0.0 {
            return v_constant_slope(&self.params, self.cbar, x);
        }
        if x <= self.b_star {
            (self.t1_0 * (self.t1_0 * x).exp() - self.t2_0 * (self.t2_0 * x).exp()) / self.denom
        } else {
            (self.t2_bar * (x - self.b_star)).exp()
        }
    }

    /// Slope at the origin; every admissible value function is Lipschitz in
    /// x with this constant.
    pub fn lipschitz(&self) -> f64 {
        self.slope(0.0)
    }
}
