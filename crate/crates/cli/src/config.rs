//! TOML configuration. Every section is optional except the model; any
//! key the program does not know is an error, so typos fail loudly
//! instead of silently running with a default.

use std::path::Path;

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub model: ModelSection,
    pub finite: Option<FiniteSection>,
    #[serde(default)]
    pub curve: CurveSection,
    #[serde(default)]
    pub verify: VerifySection,
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub figures: FiguresSection,
    #[serde(default)]
    pub converge: ConvergeSection,
}

impl Config {
    /// Defaults when no path is given; a named file must parse cleanly.
    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_q")]
    pub q: f64,
}

fn default_mu() -> f64 {
    4.0
}
fn default_sigma() -> f64 {
    2.0
}
fn default_q() -> f64 {
    0.1
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            mu: default_mu(),
            sigma: default_sigma(),
            q: default_q(),
        }
    }
}

/// Rate menu: either explicit rates or a dyadic grid of 2^levels + 1
/// rates on [0, cbar].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSection {
    pub rates: Option<Vec<f64>>,
    pub dyadic_levels: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    #[serde(default = "default_cbar")]
    pub cbar: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub c_low: f64,
}

fn default_cbar() -> f64 {
    4.0
}
fn default_steps() -> usize {
    2000
}

impl Default for CurveSection {
    fn default() -> Self {
        CurveSection {
            cbar: default_cbar(),
            steps: default_steps(),
            c_low: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_nx")]
    pub nx: usize,
}

fn default_tol() -> f64 {
    1e-4
}
fn default_nx() -> usize {
    400
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            tol: default_tol(),
            nx: default_nx(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub strategy: StrategyConfig,
    pub x0: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "default_true")]
    pub bridge: bool,
}

fn default_n_paths() -> usize {
    100_000
}
fn default_dt() -> f64 {
    1e-3
}
fn default_t_max() -> f64 {
    200.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategyConfig {
    Constant { rate: f64 },
    OneStep { barrier: f64, low: f64, high: f64 },
    /// Threshold policy solved from the [finite] section.
    Menu { start_level: usize },
    /// Boundary curve solved from the [curve] section.
    Curve { start_rate: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiguresSection {
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default = "default_fig_nx")]
    pub nx: usize,
}

fn default_x_max() -> f64 {
    25.0
}
fn default_fig_nx() -> usize {
    401
}

impl Default for FiguresSection {
    fn default() -> Self {
        FiguresSection {
            x_max: default_x_max(),
            nx: default_fig_nx(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSection {
    #[serde(default = "default_levels")]
    pub levels: u32,
}

fn default_levels() -> u32 {
    6
}

impl Default for ConvergeSection {
    fn default() -> Self {
        ConvergeSection {
            levels: default_levels(),
        }
    }
}
