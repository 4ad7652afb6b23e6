//! Experiment configuration files (TOML).
//!
//! ```toml
//! schema_version = 1
//! n_grid = [100.0, 1000.0, 10000.0]
//!
//! [model]
//! zoo = { model = "erlang-a", mu = 1.0, theta = 0.5, staffing = { rule = "scaled", load = 1.0, beta = 0.0 } }
//!
//! [[test]]
//! name = "mean"
//! expr = "x"
//!
//! [seeds]
//! simulation = 1
//! validation = 2
//! ```
//!
//! `[model]` is either `path = "..."` (relative to the config file) or an
//! inline model specification without its `schema_version`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{parse_model_spec, Model};

#[derive(Debug, Clone)]
pub enum ModelSource {
    Inline(Model),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    pub name: String,
    pub expr: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainSolver {
    /// Product form for birth–death chains, general solve otherwise, on a
    /// box doubled until the test moments stabilize.
    Auto,
    ProductForm,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DmSolver {
    /// Closed form when d = 1, finite differences when d = 2, simulation
    /// otherwise.
    Auto,
    ClosedForm,
    Fd,
    Simulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub chain: ChainSolver,
    pub diffusion: DmSolver,
    /// Also estimate π^n(f) by simulating the diffusion model and compare.
    pub cross_check: bool,
    pub fd_cells: usize,
    pub points_per_unit: usize,
    pub max_states: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            chain: ChainSolver::Auto,
            diffusion: DmSolver::Auto,
            cross_check: false,
            fd_cells: 80,
            points_per_unit: 200,
            max_states: 4_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// A row enters the rate fit only when its error budget is below this
    /// fraction of |gap|.
    pub budget_fraction: f64,
    /// Box-doubling stop criterion for the chain solve.
    pub chain_tol: f64,
    /// Half-width of the cube on which hypotheses are sampled.
    pub validation_radius: f64,
    pub validation_samples: usize,
    pub growth_factor: f64,
    /// Half-width of the admissibility grid.
    pub admissibility_radius: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            budget_fraction: 0.1,
            chain_tol: 1e-10,
            validation_radius: 3.0,
            validation_samples: 2000,
            growth_factor: 1.05,
            admissibility_radius: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovConfig {
    /// Explicit candidate (see `parse_candidate`); chosen automatically from
    /// the test functions when absent.
    pub candidate: Option<String>,
    pub delta_trial: f64,
    pub outer_radius: f64,
    pub radial_points: usize,
    pub directions: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            candidate: None,
            delta_trial: 1.0,
            outer_radius: 20.0,
            radial_points: 400,
            directions: 180,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub simulation: u64,
    pub validation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub step: f64,
    pub warmup: f64,
    pub batches: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: 2000.0,
            step: 0.01,
            warmup: 0.1,
            batches: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    /// Initial states in scaled coordinates.
    pub x0: Vec<Vec<f64>>,
    pub t_grid: Vec<f64>,
    pub reps: usize,
    #[serde(default = "default_decay_step")]
    pub step: f64,
}

fn default_decay_step() -> f64 {
    0.005
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    n_grid: Vec<f64>,
    model: toml::Table,
    #[serde(rename = "test", default)]
    tests: Vec<TestSpec>,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    tolerances: Tolerances,
    #[serde(default)]
    lyapunov: LyapunovConfig,
    seeds: Seeds,
    #[serde(default)]
    simulation: SimulationConfig,
    decay: Option<DecayConfig>,
    #[serde(default)]
    output: OutputConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub n_grid: Vec<f64>,
    pub tests: Vec<TestSpec>,
    pub solver: SolverConfig,
    pub tolerances: Tolerances,
    pub lyapunov: LyapunovConfig,
    pub seeds: Seeds,
    pub simulation: SimulationConfig,
    pub decay: Option<DecayConfig>,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// The model, reading `[model] path` relative to `base`.
    pub fn load_model(&self, base: &Path) -> Result<Model> {
        match &self.model {
            ModelSource::Inline(m) => Ok(m.clone()),
            ModelSource::Path(p) => {
                let src = std::fs::read_to_string(base.join(p))?;
                parse_model_spec(&src)
            }
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{what} must be positive and finite, got {v}")))
    }
}

pub fn parse_config(src: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| bad(e.to_string()))?;
    if raw.schema_version != crate::SCHEMA_VERSION {
        return Err(bad(format!(
            "unsupported schema_version {} (expected {})",
            raw.schema_version,
            crate::SCHEMA_VERSION
        )));
    }
    if raw.n_grid.is_empty() || raw.n_grid.len() > 64 {
        return Err(bad("n_grid must have between 1 and 64 entries"));
    }
    for &n in &raw.n_grid {
        if !(1.0..=1e12).contains(&n) {
            return Err(bad(format!("scale {n} outside [1, 1e12]")));
        }
    }
    if !raw.n_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(bad("n_grid must be strictly increasing"));
    }
    for t in &raw.tests {
        crate::expr::parse(&t.expr)?;
    }
    let mut names = std::collections::HashSet::new();
    if !raw.tests.iter().all(|t| names.insert(t.name.as_str())) {
        return Err(bad("duplicate test function name"));
    }
    let s = &raw.solver;
    if !(4..=2000).contains(&s.fd_cells) || !(4..=100_000).contains(&s.points_per_unit) || s.max_states == 0 {
        return Err(bad("solver grid sizes out of range"));
    }
    let t = &raw.tolerances;
    positive(t.budget_fraction, "budget_fraction")?;
    positive(t.chain_tol, "chain_tol")?;
    positive(t.validation_radius, "validation_radius")?;
    positive(t.admissibility_radius, "admissibility_radius")?;
    if !(t.growth_factor >= 1.0 && t.growth_factor.is_finite()) || t.validation_samples == 0 || t.validation_samples > 10_000_000 {
        return Err(bad("growth_factor must be ≥ 1 and validation_samples in 1..=1e7"));
    }
    let l = &raw.lyapunov;
    positive(l.delta_trial, "delta_trial")?;
    positive(l.outer_radius, "outer_radius")?;
    if l.radial_points < 2 || l.radial_points > 1_000_000 || l.directions == 0 || l.directions > 1_000_000 {
        return Err(bad("radial_points and directions out of range"));
    }
    let sim = &raw.simulation;
    positive(sim.horizon, "simulation horizon")?;
    positive(sim.step, "simulation step")?;
    if !(0.0..1.0).contains(&sim.warmup) {
        return Err(bad("simulation warmup must be in [0, 1)"));
    }
    if let Some(d) = &raw.decay {
        positive(d.step, "decay step")?;
        if d.x0.is_empty() || d.reps < 2 || d.reps > 100_000_000 {
            return Err(bad("decay needs at least one x0 and reps in 2..=1e8"));
        }
        if d.x0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("decay x0 must be finite"));
        }
        if d.t_grid.is_empty() || !d.t_grid.windows(2).all(|w| w[0] < w[1]) || d.t_grid.iter().any(|&t| !(t > 0.0 && t <= 1e6)) {
            return Err(bad("decay t_grid must be positive, finite and strictly increasing"));
        }
    }
    let model = match raw.model.get("path") {
        Some(p) => {
            if raw.model.len() != 1 {
                return Err(bad("[model] with `path` takes no other keys"));
            }
            let p = p.as_str().ok_or_else(|| bad("[model] path must be a string"))?;
            ModelSource::Path(PathBuf::from(p))
        }
        None => {
            let mut table = raw.model.clone();
            if table.contains_key("schema_version") {
                return Err(bad("inline [model] takes no schema_version"));
            }
            table.insert("schema_version".into(), toml::Value::Integer(crate::SCHEMA_VERSION.into()));
            let src = toml::to_string(&table).map_err(|e| bad(e.to_string()))?;
            ModelSource::Inline(parse_model_spec(&src)?)
        }
    };
    Ok(ExperimentConfig {
        model,
        n_grid: raw.n_grid,
        tests: raw.tests,
        solver: raw.solver,
        tolerances: raw.tolerances,
        lyapunov: raw.lyapunov,
        seeds: raw.seeds,
        simulation: raw.simulation,
        decay: raw.decay,
        output: raw.output,
    })
}
