//! One function per subcommand. Each reads the sections it needs from the
//! config, computes, writes files under the output directory and prints a
//! one-line summary.

use std::path::Path;

use ratchet_core::curve::{
    integrate_curve, solve_continuum, CurveOpts, CurvePolicy, VerifyOpts,
};
use ratchet_core::finite::{convergence_study, solve_thresholds, RateGrid, SolveOpts};
use ratchet_core::model::Unrestricted;
use ratchet_core::sim::{simulate_value, SimConfig, StrategySpec};
use ratchet_core::ModelParams;

use crate::config::{Config, StrategyConfig};
use crate::report::{write_csv, write_json};
use crate::{CliError, Format};

fn model(cfg: &Config) -> Result<ModelParams, CliError> {
    Ok(ModelParams::new(cfg.model.mu, cfg.model.sigma, cfg.model.q)?)
}

fn rate_grid(cfg: &Config) -> Result<RateGrid, CliError> {
    let section = cfg.finite.as_ref().ok_or_else(|| {
        CliError::Config("this command needs a [finite] section".into())
    })?;
    match (&section.rates, section.dyadic_levels) {
        (Some(rates), None) => Ok(RateGrid::new(rates.clone())?),
        (None, Some(levels)) => Ok(RateGrid::dyadic(cfg.curve.cbar, levels)?),
        (Some(_), Some(_)) => Err(CliError::Config(
            "[finite] must set either rates or dyadic_levels, not both".into(),
        )),
        (None, None) => Err(CliError::Config(
            "[finite] must set rates or dyadic_levels".into(),
        )),
    }
}

fn x_lattice(cfg: &Config) -> Vec<f64> {
    let n = cfg.figures.nx.max(2);
    let h = cfg.figures.x_max / (n - 1) as f64;
    (0..n).map(|k| h * k as f64).collect()
}

fn curve_opts(cfg: &Config) -> CurveOpts {
    CurveOpts {
        steps: cfg.curve.steps,
        c_low: cfg.curve.c_low,
    }
}

fn verify_opts(cfg: &Config) -> VerifyOpts {
    VerifyOpts {
        tol: cfg.verify.tol,
        nx: cfg.verify.nx,
    }
}

pub fn solve_finite(cfg: &Config, out: &Path, format: Format) -> Result<(), CliError> {
    let p = model(cfg)?;
    let grid = rate_grid(cfg)?;
    let policy = solve_thresholds(&p, &grid, &SolveOpts::default())?;
    write_json(&out.join("policy_finite.json"), &policy)?;
    let xs = x_lattice(cfg);
    let table = policy.table(&xs);
    match format {
        Format::Json => write_json(&out.join("values_finite.json"), &table)?,
        Format::Csv => {
            let labels: Vec<String> = policy
                .rates()
                .iter()
                .map(|c| format!("v_c{c}"))
                .collect();
            let mut header = vec!["x".to_string()];
            header.extend(labels);
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            let rows: Vec<Vec<f64>> = xs
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    let mut row = vec![x];
                    row.extend(table.values.iter().map(|per_rate| per_rate[j]));
                    row
                })
                .collect();
            write_csv(&out.join("values_finite.csv"), &header_refs, &rows)?;
        }
    }
    let zs: Vec<String> = policy.thresholds().iter().map(|z| format!("{z:.6}")).collect();
    println!(
        "solved {} rates, thresholds [{}]",
        policy.rates().len(),
        zs.join(", ")
    );
    Ok(())
}

pub fn solve_curve(cfg: &Config, out: &Path, format: Format) -> Result<(), CliError> {
    let p = model(cfg)?;
    let (policy, report) = solve_continuum(&p, cfg.curve.cbar, &curve_opts(cfg), &verify_opts(cfg))?;
    write_json(&out.join("curve.json"), &policy)?;
    write_json(&out.join("verification.json"), &report)?;
    match format {
        Format::Json => {}
        Format::Csv => {
            let rows: Vec<Vec<f64>> = (0..policy.c_samples().len())
                .map(|k| {
                    vec![
                        policy.c_samples()[k],
                        policy.zeta_samples()[k],
                        policy.a_samples()[k],
                    ]
                })
                .collect();
            write_csv(&out.join("boundary.csv"), &["c", "zeta", "a"], &rows)?;
        }
    }
    if let Some(c) = policy.degenerate_at {
        println!("warning: integration stopped at c = {c}; curve truncated");
    }
    println!(
        "curve: {} samples on [{}, {}], verification {}",
        policy.c_samples().len(),
        policy.c_low(),
        policy.cbar,
        if report.pass { "passed" } else { "FAILED" }
    );
    Ok(())
}

pub fn figures(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let p = model(cfg)?;
    let cbar = cfg.curve.cbar;
    let curve = integrate_curve(&p, cbar, &curve_opts(cfg))?;
    let barrier = Unrestricted::new(p, cbar)?;
    let one_step = solve_thresholds(
        &p,
        &RateGrid::new(vec![cfg.curve.c_low, cbar])?,
        &SolveOpts::default(),
    )?;
    let c0 = cfg.curve.c_low;
    let xs = x_lattice(cfg);

    let mut values = Vec::with_capacity(xs.len());
    let mut cost = Vec::with_capacity(xs.len());
    let mut gain = Vec::with_capacity(xs.len());
    for &x in &xs {
        let v_curve = curve.w_value(x, c0)?;
        let v_barrier = barrier.value(x);
        let v_one = one_step.value(x, 0);
        let d_barrier = v_barrier - v_curve;
        let d_one = v_curve - v_one;
        if d_barrier < -1e-8 || d_one < -1e-8 {
            return Err(CliError::Numerical(format!(
                "value ordering violated at x = {x}: barrier - curve = {d_barrier}, \
                 curve - one-step = {d_one}"
            )));
        }
        values.push(vec![x, v_curve, v_barrier, v_one]);
        cost.push(vec![x, d_barrier]);
        gain.push(vec![x, d_one]);
    }
    write_csv(
        &out.join("values.csv"),
        &["x", "v_curve", "v_barrier", "v_one_step"],
        &values,
    )?;
    write_csv(&out.join("ratchet_cost.csv"), &["x", "barrier_minus_curve"], &cost)?;
    write_csv(&out.join("continuum_gain.csv"), &["x", "curve_minus_one_step"], &gain)?;

    let b_star = barrier.b_star();
    let b_one = one_step.thresholds()[0];
    let rows: Vec<Vec<f64>> = (0..curve.c_samples().len())
        .map(|k| {
            vec![
                curve.c_samples()[k],
                curve.zeta_samples()[k],
                b_star,
                b_one,
            ]
        })
        .collect();
    write_csv(
        &out.join("boundaries.csv"),
        &["c", "zeta", "b_barrier", "b_one_step"],
        &rows,
    )?;
    println!("wrote 4 figure tables to {}", out.display());
    Ok(())
}

pub fn simulate(cfg: &Config, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let p = model(cfg)?;
    let section = cfg.simulate.as_ref().ok_or_else(|| {
        CliError::Config("simulate needs a [simulate] section".into())
    })?;
    let spec = match &section.strategy {
        StrategyConfig::Constant { rate } => StrategySpec::Constant { rate: *rate },
        StrategyConfig::OneStep { barrier, low, high } => StrategySpec::OneStep {
            barrier: *barrier,
            low: *low,
            high: *high,
        },
        StrategyConfig::Menu { start_level } => StrategySpec::Menu {
            policy: solve_thresholds(&p, &rate_grid(cfg)?, &SolveOpts::default())?,
            start_level: *start_level,
        },
        StrategyConfig::Curve { start_rate } => StrategySpec::Curve {
            policy: integrate_curve(&p, cfg.curve.cbar, &curve_opts(cfg))?,
            start_rate: *start_rate,
        },
    };
    let sim_cfg = SimConfig {
        n_paths: section.n_paths,
        dt: section.dt,
        t_max: section.t_max,
        seed: seed.unwrap_or(7),
        antithetic: section.antithetic,
        bridge: section.bridge,
    };
    let result = simulate_value(&p, &spec, section.x0, &sim_cfg)?;
    write_json(&out.join("simulate.json"), &result)?;
    println!(
        "mean {} (std error {}, {} paths)",
        result.mean, result.std_error, result.n_paths
    );
    Ok(())
}

pub fn converge(cfg: &Config, out: &Path, format: Format) -> Result<(), CliError> {
    let p = model(cfg)?;
    let rows = convergence_study(&p, cfg.curve.cbar, cfg.converge.levels, &SolveOpts::default())?;
    match format {
        Format::Json => write_json(&out.join("convergence.json"), &rows)?,
        Format::Csv => {
            let data: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![r.n as f64, r.rates as f64, r.d_sup, r.min_gap])
                .collect();
            write_csv(
                &out.join("convergence.csv"),
                &["level", "rates", "d_sup", "min_gap"],
                &data,
            )?;
        }
    }
    for r in &rows {
        println!("level {}: {} rates, sup gain {}", r.n, r.rates, r.d_sup);
    }
    Ok(())
}

pub fn verify(cfg: &Config, input: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", input.display())))?;
    let policy: CurvePolicy = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    let policy = policy.validated()?;
    let report = policy.verify(&verify_opts(cfg))?;
    write_json(&out.join("verification.json"), &report)?;
    // a failing report is a result, not an error: the command verified
    // exactly what it was asked to
    println!(
        "verification {} (worst slope excess {}, worst dW/dc {})",
        if report.pass { "passed" } else { "FAILED" },
        report.max_slope_excess,
        report.max_dcw
    );
    Ok(())
}
