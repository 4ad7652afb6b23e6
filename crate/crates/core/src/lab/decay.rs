use std::fmt::Write as _;

use serde::Serialize;

use super::config::{DmSolver, ExperimentConfig};
use super::gap::{build_family, compile_tests, Failure};
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::simulate::{dm_steady_estimate, replicate, run_dm, TestFn};
use crate::steady::{dm_stationary_1d_auto, dm_stationary_fd, FdOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayPoint {
    pub t: f64,
    /// Estimate of E_x f(Ŷ(t)) − π(f).
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub x0: Vec<f64>,
    pub points: Vec<DecayPoint>,
    /// Fitted λ in |E_x f(Ŷ(t)) − π(f)| ≈ C e^{−λt}.
    pub rate: Option<f64>,
    pub rate_stderr: Option<f64>,
    pub points_used: usize,
    pub notes: Vec<String>,
}

/// Monte-Carlo decay curves t ↦ |E_x f(Ŷ(t)) − π(f)| from each `x0`, with an
/// exponential rate fitted by least squares on the log scale. The curve is
/// cut at the first time the estimate is within three standard errors of
/// zero. All initial states share the same random numbers.
#[allow(clippy::too_many_arguments)]
pub fn ergodicity_decay(
    dm: &DiffusionModel,
    f: TestFn,
    pi_f: f64,
    x0_list: &[Vec<f64>],
    t_grid: &[f64],
    reps: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<DecayFit>> {
    if t_grid.is_empty() || !t_grid.windows(2).all(|w| w[0] < w[1]) || !(t_grid[0] > 0.0) {
        return Err(Error::Config("t_grid must be positive and strictly increasing".into()));
    }
    if reps < 2 {
        return Err(Error::Config("at least two replications are needed".into()));
    }
    let m = t_grid.len();
    let horizon = t_grid[m - 1];
    x0_list
        .iter()
        .map(|x0| {
            if x0.len() != dm.dim() {
                return Err(Error::Dimension { expected: dm.dim(), got: x0.len() });
            }
            let samples = replicate(seed, reps, |rng, _| -> Result<Vec<f64>> {
                let mut out = Vec::with_capacity(m);
                run_dm(dm, x0, horizon, step, false, rng, |t, y| {
                    while out.len() < m && t >= t_grid[out.len()] - 0.5 * step {
                        out.push(f(y) - pi_f);
                    }
                    out.len() < m
                })?;
                Ok(out)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let points: Vec<DecayPoint> = (0..m)
                .map(|k| {
                    let vals = samples.iter().map(|s| s[k]);
                    let mean = vals.clone().sum::<f64>() / reps as f64;
                    let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
                    DecayPoint { t: t_grid[k], mean, std_err: (var / reps as f64).sqrt() }
                })
                .collect();
            Ok(fit_decay(x0.clone(), points))
        })
        .collect()
}

fn fit_decay(x0: Vec<f64>, points: Vec<DecayPoint>) -> DecayFit {
    let mut notes = Vec::new();
    let none = |points, notes| DecayFit {
        x0: x0.clone(),
        points,
        rate: None,
        rate_stderr: None,
        points_used: 0,
        notes,
    };
    if points.iter().all(|p| p.mean == 0.0 && p.std_err == 0.0) {
        notes.push("zero curve: f − π(f) vanishes along every path; no fit".into());
        return none(points, notes);
    }
    let used = points
        .iter()
        .position(|p| !(p.mean.abs() > 3.0 * p.std_err))
        .unwrap_or(points.len());
    if used < points.len() {
        notes.push(format!(
            "t_grid truncated at t = {} where the estimate reaches the noise floor",
            points[used].t
        ));
    }
    if used < 2 {
        notes.push("fewer than two points above the noise floor; no fit".into());
        return none(points, notes);
    }
    let pts: Vec<(f64, f64)> = points[..used].iter().map(|p| (p.t, p.mean.abs().ln())).collect();
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum::<f64>() / stt;
    let stderr = if pts.len() > 2 {
        let ssr: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mt)).powi(2)).sum();
        Some((ssr / (k - 2.0) / stt).sqrt())
    } else {
        None
    };
    DecayFit {
        x0,
        points,
        rate: Some(-slope),
        rate_stderr: stderr,
        points_used: used,
        notes,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub n: f64,
    pub test: String,
    pub pi_f: f64,
    pub fits: Vec<DecayFit>,
}

/// Spread of the fitted rate across scales for one test and initial state.
#[derive(Debug, Clone, Serialize)]
pub struct RateStability {
    pub test: String,
    pub x0: Vec<f64>,
    pub rates: Vec<(f64, f64)>,
    /// max/min fitted rate across the scales that produced a fit.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub schema_version: u32,
    pub model: String,
    pub seed: u64,
    pub rows: Vec<DecayRow>,
    pub stability: Vec<RateStability>,
    pub failures: Vec<Failure>,
}

impl DecayReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# gaplab-schema: {}\ntest,n,x0,t,mean,std_err\n", crate::SCHEMA_VERSION);
        for r in &self.rows {
            for fit in &r.fits {
                let x0 = fit.x0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
                for p in &fit.points {
                    let _ = writeln!(s, "{},{},{},{},{:e},{:e}", r.test, r.n, x0, p.t, p.mean, p.std_err);
                }
            }
        }
        s
    }
}

fn stationary_means(cfg: &ExperimentConfig, dm: &DiffusionModel, fs: &[TestFn], seed: u64) -> Result<Vec<f64>> {
    let d = dm.dim();
    let s = &cfg.solver;
    let method = match s.diffusion {
        DmSolver::Auto if d == 1 => DmSolver::ClosedForm,
        DmSolver::Auto if d == 2 => DmSolver::Fd,
        DmSolver::Auto => DmSolver::Simulation,
        other => other,
    };
    match method {
        DmSolver::ClosedForm | DmSolver::Fd => {
            let st = if method == DmSolver::Fd {
                dm_stationary_fd(dm, &FdOptions { half_widths: None, cells: s.fd_cells })?
            } else {
                dm_stationary_1d_auto(dm, s.points_per_unit)?
            };
            fs.iter().map(|f| st.moment(*f).map(|m| m.value)).collect()
        }
        _ => {
            let sim = &cfg.simulation;
            let est = dm_steady_estimate(dm, &vec![0.0; d], sim.horizon, sim.step, sim.warmup, sim.batches, fs, seed)?;
            Ok(est.iter().map(|e| e.mean).collect())
        }
    }
}

/// Decay curves for every scale in the grid and test function, with the
/// spread of the fitted rates across scales.
pub fn run_decay_study(cfg: &ExperimentConfig, model: &Model) -> Result<DecayReport> {
    let dc = cfg
        .decay
        .as_ref()
        .ok_or_else(|| Error::Config("missing [decay] block".into()))?;
    let tests = compile_tests(cfg, model.dim())?;
    let closures: Vec<_> = tests.iter().map(|t| move |x: &[f64]| t.eval(x)).collect();
    let fs: Vec<TestFn> = closures.iter().map(|f| f as TestFn).collect();
    let (family, mut failures) = build_family(model, &cfg.n_grid);
    let seed = cfg.seeds.simulation;
    let mut rows = Vec::new();
    for (_, sc, dm) in &family {
        let result = stationary_means(cfg, dm, &fs, seed).and_then(|pis| {
            let mut out = Vec::new();
            for ((spec, f), pi) in cfg.tests.iter().zip(&fs).zip(pis) {
                let fits = ergodicity_decay(dm, *f, pi, &dc.x0, &dc.t_grid, dc.reps, dc.step, seed)?;
                out.push(DecayRow { n: sc.n(), test: spec.name.clone(), pi_f: pi, fits });
            }
            Ok(out)
        });
        match result {
            Ok(r) => rows.extend(r),
            Err(e) => failures.push(Failure { n: sc.n(), error: e.to_string() }),
        }
    }
    let mut stability = Vec::new();
    for spec in &cfg.tests {
        for (j, x0) in dc.x0.iter().enumerate() {
            let rates: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.test == spec.name)
                .filter_map(|r| r.fits[j].rate.map(|v| (r.n, v)))
                .collect();
            let ratio = (rates.len() >= 2 && rates.iter().all(|r| r.1 > 0.0)).then(|| {
                rates.iter().map(|r| r.1).fold(0.0, f64::max) / rates.iter().map(|r| r.1).fold(f64::INFINITY, f64::min)
            });
            stability.push(RateStability { test: spec.name.clone(), x0: x0.clone(), rates, ratio });
        }
    }
    Ok(DecayReport {
        schema_version: crate::SCHEMA_VERSION,
        model: model.name.clone(),
        seed,
        rows,
        stability,
        failures,
    })
}
