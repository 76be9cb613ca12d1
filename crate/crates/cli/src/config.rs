//! Run configuration: a TOML file with optional sections, all of which fall
//! back to the built-in nominal scenario.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use identikit::model::{ModelSystem, ParameterSet};
use identikit::ode::{AbsTol, IntegratorConfig, TimeGrid};
use identikit::seirs::{SeirsModel, SeirsParameters};
use identikit::subset::{FeasibilityThresholds, SEIRS_CORE, SEIRS_POOL};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model")]
    pub model: String,
    pub seed: Option<u64>,
    #[serde(default = "default_sigma0_sq")]
    pub sigma0_sq: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Every model parameter must appear when the section is present.
    pub parameters: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub select: SelectSection,
    #[serde(default)]
    pub fit: FitSection,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t0: f64,
    pub span: f64,
    pub cadence: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { t0: 0.0, span: 5.0, cadence: 52.0 }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        let abs_tol = match d.abs_tol {
            AbsTol::Scalar(a) => a,
            AbsTol::PerComponent(_) => 1e-10,
        };
        Self { rel_tol: d.rel_tol, abs_tol, max_steps: d.max_steps }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectSection {
    pub j_min: usize,
    pub j_max: usize,
    pub core: Vec<String>,
    pub pool: Vec<String>,
    pub kappa_max: f64,
    pub alpha_max: f64,
    /// Feasible subsets listed per p in the printed summary.
    pub top: usize,
}

impl Default for SelectSection {
    fn default() -> Self {
        let t = FeasibilityThresholds::default();
        Self {
            j_min: 1,
            j_max: 5,
            core: SEIRS_CORE.iter().map(|s| s.to_string()).collect(),
            pool: SEIRS_POOL.iter().map(|s| s.to_string()).collect(),
            kappa_max: t.kappa_max,
            alpha_max: t.alpha_max,
            top: 5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub subset: Vec<String>,
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub cost_tol: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = identikit::lsq::SolverOptions::default();
        Self {
            subset: ["L", "beta0", "a1", "b1"].iter().map(|s| s.to_string()).collect(),
            max_iterations: d.max_iterations,
            gradient_tol: d.gradient_tol,
            step_tol: d.step_tol,
            cost_tol: d.cost_tol,
        }
    }
}

fn default_model() -> String {
    "seirs".into()
}

fn default_sigma0_sq() -> f64 {
    500.0
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.model != "seirs" {
            return Err(CliError::Config(format!("unknown model `{}` (available: seirs)", self.model)));
        }
        if !(self.sigma0_sq >= 0.0 && self.sigma0_sq.is_finite()) {
            return Err(CliError::Config("sigma0_sq must be finite and nonnegative".into()));
        }
        self.parameter_set()?;
        let names = SeirsModel.param_names();
        for n in self.select.core.iter().chain(&self.select.pool).chain(&self.fit.subset) {
            if !names.contains(&n.as_str()) {
                return Err(CliError::Config(format!("unknown parameter `{n}`")));
            }
        }
        if self.select.j_min == 0 || self.select.j_min > self.select.j_max {
            return Err(CliError::Config("select.j_min must satisfy 1 <= j_min <= j_max".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> SeirsModel {
        SeirsModel
    }

    pub fn parameter_set(&self) -> Result<ParameterSet, CliError> {
        let Some(given) = &self.parameters else {
            return Ok(SeirsParameters::nominal().to_parameter_set());
        };
        let names = SeirsModel.param_names();
        if let Some(extra) = given.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown parameter `{extra}` in [parameters]")));
        }
        let mut values = Vec::with_capacity(names.len());
        for name in names {
            match given.get(*name) {
                Some(v) => values.push(*v),
                None => return Err(CliError::Config(format!("missing parameter `{name}` in [parameters]"))),
            }
        }
        SeirsModel.validate(&values).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(SeirsParameters::from_slice(&values)
            .map_err(|e| CliError::Config(e.to_string()))?
            .to_parameter_set())
    }

    pub fn time_grid(&self) -> Result<TimeGrid, CliError> {
        let g = self.grid;
        TimeGrid::uniform(g.t0, g.span, g.cadence).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn integrator(&self) -> Result<IntegratorConfig, CliError> {
        let i = self.integrator;
        let cfg = IntegratorConfig {
            max_steps: i.max_steps,
            ..IntegratorConfig::with_tolerances(i.rel_tol, i.abs_tol)
        };
        cfg.validate(SeirsModel.state_dim()).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn thresholds(&self) -> FeasibilityThresholds {
        FeasibilityThresholds { kappa_max: self.select.kappa_max, alpha_max: self.select.alpha_max }
    }
}

/// Parses `t0:span:cadence`.
pub fn parse_grid(spec: &str) -> Result<GridSection, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected t0:span:cadence, got `{spec}`"));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("not a number: `{s}`"));
    Ok(GridSection { t0: num(parts[0])?, span: num(parts[1])?, cadence: num(parts[2])? })
}

/// Parses `a..b` (inclusive) or a single `j`.
pub fn parse_range(spec: &str) -> Result<(usize, usize), String> {
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("not an integer: `{s}`"));
    match spec.split_once("..") {
        Some((a, b)) => Ok((num(a)?, num(b.trim_start_matches('='))?)),
        None => {
            let j = num(spec)?;
            Ok((j, j))
        }
    }
}

pub fn parse_list(spec: &str) -> Vec<String> {
    spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}
