//! Monte Carlo validation of computed value functions.
//!
//! Paths follow the Euler scheme for the controlled surplus; the dividend
//! rate is a ratchet, so every strategy compiles to a ladder of
//! (threshold, rate) rungs consumed as the running maximum of the surplus
//! climbs. Ruin inside a step is recovered with the Brownian bridge
//! crossing probability: plain endpoint checks miss enough crossings to
//! bias values upward by several standard errors at the step sizes used
//! here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::curve::CurvePolicy;
use crate::error::{CoreError, Result};
use crate::finite::ThresholdPolicy;
use crate::model::ModelParams;
use crate::numerics::compensated_sum;

#[derive(Debug, Clone)]
pub enum StrategySpec {
    /// Pay a fixed rate until ruin.
    Constant { rate: f64 },
    /// Start at `low`, ratchet to `high` when the surplus reaches the
    /// barrier.
    OneStep { barrier: f64, low: f64, high: f64 },
    /// Finite-menu threshold policy started at a given level.
    Menu {
        policy: ThresholdPolicy,
        start_level: usize,
    },
    /// Free-boundary curve policy started at a given locked rate.
    Curve {
        policy: CurvePolicy,
        start_rate: f64,
    },
}

impl StrategySpec {
    fn max_rate(&self) -> f64 {
        match self {
            StrategySpec::Constant { rate } => *rate,
            StrategySpec::OneStep { high, .. } => *high,
            StrategySpec::Menu { policy, .. } => policy.cbar(),
            StrategySpec::Curve { policy, .. } => policy.cbar,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    /// Average antithetic pairs instead of independent paths.
    pub antithetic: bool,
    /// Brownian-bridge ruin detection inside each step.
    pub bridge: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 100_000,
            dt: 1e-3,
            t_max: 200.0,
            seed: 7,
            antithetic: false,
            bridge: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub steps_per_path: usize,
    /// Discounted dividends a path could still earn after the horizon:
    /// (max rate / q) exp(-q t_max). The horizon is validated so this
    /// stays far below the Monte Carlo noise.
    pub truncation_bias_bound: f64,
}

/// Ratchet ladder: rungs consumed as the surplus's running maximum rises.
/// Menu strategies jump to a rung's rate outright; curve strategies
/// interpolate between rungs and hit the cap past the last one.
struct Ladder {
    z: Vec<f64>,
    c: Vec<f64>,
    interp: bool,
    cap: f64,
}

impl Ladder {
    /// No rungs left to consume; the rate can never change again.
    fn done(&self, idx: usize) -> bool {
        idx >= self.z.len()
    }

    fn rate_at(&self, hw: f64, idx: &mut usize, current: f64) -> f64 {
        let n = self.z.len();
        if self.interp {
            while *idx < n && hw >= self.z[*idx] {
                *idx += 1;
            }
            if *idx == n {
                return self.cap;
            }
            if *idx == 0 {
                return current;
            }
            let (z0, z1) = (self.z[*idx - 1], self.z[*idx]);
            let (c0, c1) = (self.c[*idx - 1], self.c[*idx]);
            let r = c0 + (hw - z0) / (z1 - z0) * (c1 - c0);
            r.max(current)
        } else {
            let mut r = current;
            while *idx < n && hw >= self.z[*idx] {
                r = self.c[*idx];
                *idx += 1;
            }
            r
        }
    }
}

fn compile(spec: &StrategySpec) -> Result<(f64, Ladder)> {
    match spec {
        StrategySpec::Constant { rate } => {
            if !rate.is_finite() || *rate < 0.0 {
                return Err(CoreError::invalid(format!("rate must be nonnegative, got {rate}")));
            }
            Ok((
                *rate,
                Ladder {
                    z: vec![],
                    c: vec![],
                    interp: false,
                    cap: *rate,
                },
            ))
        }
        StrategySpec::OneStep { barrier, low, high } => {
            if !(barrier.is_finite() && *barrier >= 0.0 && *low >= 0.0 && *high >= *low) {
                return Err(CoreError::invalid(
                    "one-step strategy needs barrier >= 0 and 0 <= low <= high",
                ));
            }
            Ok((
                *low,
                Ladder {
                    z: vec![*barrier],
                    c: vec![*high],
                    interp: false,
                    cap: *high,
                },
            ))
        }
        StrategySpec::Menu {
            policy,
            start_level,
        } => {
            let rates = policy.rates();
            if *start_level >= rates.len() {
                return Err(CoreError::invalid(format!(
                    "start level {start_level} out of range for {} rates",
                    rates.len()
                )));
            }
            let z = policy.thresholds()[*start_level..].to_vec();
            let c = rates[*start_level + 1..].to_vec();
            Ok((
                rates[*start_level],
                Ladder {
                    z,
                    c,
                    interp: false,
                    cap: policy.cbar(),
                },
            ))
        }
        StrategySpec::Curve { policy, start_rate } => {
            let z0 = policy.zeta_at(*start_rate)?;
            let cs = policy.c_samples();
            let zs = policy.zeta_samples();
            // running-max envelope above the starting rate; a flat or
            // dipping section keeps one rung carrying its highest rate
            let mut z = vec![z0];
            let mut c = vec![*start_rate];
            for k in 0..cs.len() {
                if cs[k] <= *start_rate {
                    continue;
                }
                if zs[k] > *z.last().unwrap() {
                    z.push(zs[k]);
                    c.push(cs[k]);
                } else {
                    *c.last_mut().unwrap() = cs[k];
                }
            }
            Ok((
                *start_rate,
                Ladder {
                    z,
                    c,
                    interp: true,
                    cap: policy.cbar,
                },
            ))
        }
    }
}

fn validate(p: &ModelParams, spec: &StrategySpec, cfg: &SimConfig) -> Result<()> {
    if cfg.n_paths < 2 {
        return Err(CoreError::invalid("need at least 2 paths"));
    }
    if cfg.antithetic && !cfg.n_paths.is_multiple_of(2) {
        return Err(CoreError::invalid("antithetic sampling needs an even path count"));
    }
    if !(cfg.dt > 0.0 && cfg.dt.is_finite() && cfg.t_max > cfg.dt) {
        return Err(CoreError::invalid("need 0 < dt < t_max"));
    }
    if p.q * cfg.t_max < 10.0 {
        return Err(CoreError::invalid(format!(
            "horizon too short: q t_max = {} < 10 leaves a visible truncation bias",
            p.q * cfg.t_max
        )));
    }
    let same = |a: &ModelParams| {
        a.mu == p.mu && a.sigma == p.sigma && a.q == p.q
    };
    match spec {
        StrategySpec::Menu { policy, .. } if !same(&policy.params) => Err(CoreError::invalid(
            "menu policy was solved for different model parameters",
        )),
        StrategySpec::Curve { policy, .. } if !same(&policy.params) => Err(CoreError::invalid(
            "curve policy was solved for different model parameters",
        )),
        _ => Ok(()),
    }
}

struct PathRunner<'a> {
    p: &'a ModelParams,
    start_rate: f64,
    ladder: &'a Ladder,
    x0: f64,
    n_steps: usize,
    dt: f64,
    sig_sqdt: f64,
    decay: f64,
    bridge: bool,
    /// crossings with x * xn above this have probability below ~2e-18
    bridge_lim: f64,
    seed: u64,
}

impl PathRunner<'_> {
    /// Discounted dividends of one path; `sign` flips the normal draws for
    /// antithetic pairing (the bridge uniforms are shared as-is).
    fn run(&self, stream: u64, sign: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut x = self.x0;
        let mut hw = self.x0;
        let mut idx = 0usize;
        let mut rate = self
            .ladder
            .rate_at(hw, &mut idx, self.start_rate);
        let mut ratcheting = !self.ladder.done(idx);
        let mut drift = (self.p.mu - rate) * self.dt;
        let ssd = sign * self.sig_sqdt;
        // with the bridge off the guard is never taken for surviving steps
        let bridge_lim = if self.bridge { self.bridge_lim } else { -1.0 };
        let mut disc = 1.0;
        let mut j = 0.0;
        for _ in 0..self.n_steps {
            j += disc * rate;
            let z: f64 = rng.sample(StandardNormal);
            let xn = x + drift + ssd * z;
            if xn <= 0.0 {
                break;
            }
            if x * xn <= bridge_lim {
                let pcross = (-2.0 * x * xn / (self.sig_sqdt * self.sig_sqdt)).exp();
                if rng.random::<f64>() < pcross {
                    break;
                }
            }
            disc *= self.decay;
            x = xn;
            if ratcheting && x > hw {
                hw = x;
                rate = self.ladder.rate_at(hw, &mut idx, rate);
                drift = (self.p.mu - rate) * self.dt;
                ratcheting = !self.ladder.done(idx);
            }
        }
        j * self.dt
    }
}

/// Estimate the discounted dividend value of a strategy from `x0` with the
/// starting rate the strategy specifies. Path draws are indexed by a
/// counter-based stream, so results are independent of thread scheduling
/// and reproducible from the seed alone.
pub fn simulate_value(
    p: &ModelParams,
    spec: &StrategySpec,
    x0: f64,
    cfg: &SimConfig,
) -> Result<SimResult> {
    validate(p, spec, cfg)?;
    if !x0.is_finite() {
        return Err(CoreError::invalid("x0 must be finite"));
    }
    let n_steps = (cfg.t_max / cfg.dt).ceil() as usize;
    let bound = spec.max_rate() / p.q * (-p.q * cfg.t_max).exp();
    if x0 <= 0.0 {
        return Ok(SimResult {
            mean: 0.0,
            std_error: 0.0,
            n_paths: cfg.n_paths,
            steps_per_path: n_steps,
            truncation_bias_bound: 0.0,
        });
    }
    let (start_rate, ladder) = compile(spec)?;
    let sig_sqdt = p.sigma * cfg.dt.sqrt();
    let runner = PathRunner {
        p,
        start_rate,
        ladder: &ladder,
        x0,
        n_steps,
        dt: cfg.dt,
        sig_sqdt,
        decay: (-p.q * cfg.dt).exp(),
        bridge: cfg.bridge,
        bridge_lim: 20.0 * p.sigma * p.sigma * cfg.dt,
        seed: cfg.seed,
    };
    let vals: Vec<f64> = if cfg.antithetic {
        (0..cfg.n_paths / 2)
            .into_par_iter()
            .map(|k| {
                let a = runner.run(k as u64, 1.0);
                let b = runner.run(k as u64, -1.0);
                0.5 * (a + b)
            })
            .collect()
    } else {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|k| runner.run(k as u64, 1.0))
            .collect()
    };
    let n = vals.len();
    let mean = compensated_sum(&vals) / n as f64;
    let sq: Vec<f64> = vals.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = compensated_sum(&sq) / (n - 1) as f64;
    Ok(SimResult {
        mean,
        std_error: (var / n as f64).sqrt(),
        n_paths: cfg.n_paths,
        steps_per_path: n_steps,
        truncation_bias_bound: bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::v_constant;

    fn fast_params() -> ModelParams {
        // heavy discounting keeps test paths short
        ModelParams::new(4.0, 2.0, 0.5).unwrap()
    }

    fn fast_cfg(n: usize) -> SimConfig {
        SimConfig {
            n_paths: n,
            dt: 2e-3,
            t_max: 40.0,
            seed: 11,
            antithetic: false,
            bridge: true,
        }
    }

    #[test]
    fn zero_start_and_zero_rate_pay_nothing() {
        let p = fast_params();
        let spec = StrategySpec::Constant { rate: 3.0 };
        let r = simulate_value(&p, &spec, 0.0, &fast_cfg(10)).unwrap();
        assert_eq!(r.mean, 0.0);
        let spec0 = StrategySpec::Constant { rate: 0.0 };
        let r0 = simulate_value(&p, &spec0, 5.0, &fast_cfg(10)).unwrap();
        assert_eq!(r0.mean, 0.0);
        assert_eq!(r0.std_error, 0.0);
    }

    #[test]
    fn constant_rate_matches_closed_form() {
        let p = fast_params();
        let spec = StrategySpec::Constant { rate: 6.0 };
        let r = simulate_value(&p, &spec, 1.0, &fast_cfg(20_000)).unwrap();
        let exact = v_constant(&p, 6.0, 1.0);
        assert!(
            (r.mean - exact).abs() < 4.0 * r.std_error + 0.02,
            "mc {} +- {} vs {exact}",
            r.mean,
            r.std_error
        );
    }

    #[test]
    fn runs_are_reproducible_and_horizon_is_validated() {
        let p = fast_params();
        let spec = StrategySpec::OneStep {
            barrier: 2.0,
            low: 1.0,
            high: 6.0,
        };
        let a = simulate_value(&p, &spec, 1.0, &fast_cfg(2_000)).unwrap();
        let b = simulate_value(&p, &spec, 1.0, &fast_cfg(2_000)).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.std_error, b.std_error);
        let short = SimConfig {
            t_max: 10.0,
            ..fast_cfg(2_000)
        };
        assert!(simulate_value(&p, &spec, 1.0, &short).is_err());
    }

    #[test]
    fn antithetic_pairs_stay_unbiased() {
        let p = fast_params();
        let spec = StrategySpec::Constant { rate: 6.0 };
        let cfg = SimConfig {
            antithetic: true,
            ..fast_cfg(20_000)
        };
        let r = simulate_value(&p, &spec, 1.0, &cfg).unwrap();
        let exact = v_constant(&p, 6.0, 1.0);
        assert!(
            (r.mean - exact).abs() < 4.0 * r.std_error + 0.02,
            "mc {} +- {} vs {exact}",
            r.mean,
            r.std_error
        );
        let odd = SimConfig {
            n_paths: 2_001,
            ..cfg
        };
        assert!(simulate_value(&p, &spec, 1.0, &odd).is_err());
    }

    #[test]
    fn mismatched_model_parameters_are_rejected() {
        let p = fast_params();
        let other = ModelParams::new(4.0, 2.0, 0.1).unwrap();
        let grid = crate::finite::RateGrid::new(vec![0.0, 4.0]).unwrap();
        let policy = crate::finite::solve_thresholds(&other, &grid, &Default::default()).unwrap();
        let spec = StrategySpec::Menu {
            policy,
            start_level: 0,
        };
        assert!(simulate_value(&p, &spec, 1.0, &fast_cfg(10)).is_err());
    }
}
