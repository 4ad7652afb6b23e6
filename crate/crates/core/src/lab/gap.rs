use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ChainSolver, DmSolver, ExperimentConfig};
use super::fit::{fit_rate, RateFit};
use crate::chain::{norm, validate_assumptions, SampleBox, ScaledChain, ValidateOptions};
use crate::diffusion::{build_dm, DiffusionModel};
use crate::error::{Error, Result};
use crate::lyapunov::{
    attest_finite_moments, check_dm_to_ctmc, check_ul, moment_bound_check, parse_candidate, search_quadratic_form,
    Attestation, Candidate, DmToCtmcOutcome, GrowthOptions, TailEvidence, UlCertificate, UlOptions, UlOutcome,
};
use crate::model::{Model, TestFunction};
use crate::poisson::local_lipschitz_profile;
use crate::simulate::{dm_steady_estimate, TestFn};
use crate::steady::{
    chain_stationary_auto, chain_stationary_bd, chain_stationary_general, default_box, dm_stationary_1d_auto,
    dm_stationary_fd, AutoOptions, FdOptions, Moment,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorBudget {
    pub truncation: f64,
    pub quadrature: f64,
    pub monte_carlo: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub chain_method: String,
    pub chain_states: usize,
    pub chain_truncation_mass: f64,
    pub dm_method: String,
    pub dm_nodes: usize,
}

/// Deterministic π^n(f) against a simulated estimate of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossCheck {
    pub simulated: f64,
    pub half_width: f64,
    pub difference: f64,
    /// |difference| within the simulation half-width plus the deterministic
    /// budget.
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub n: f64,
    /// ν^n(f), the chain side.
    pub nu: f64,
    /// π^n(f), the diffusion side.
    pub pi: f64,
    /// ν^n(f) − π^n(f).
    pub gap: f64,
    pub sqrt_n_gap: f64,
    pub budget: ErrorBudget,
    pub admissible: bool,
    pub provenance: Provenance,
    pub cross_check: Option<CrossCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub name: String,
    pub expr: String,
    pub rows: Vec<GapRow>,
    pub fit: Option<RateFit>,
    pub fit_note: Option<String>,
    /// max_n √n|gap| / min_n √n|gap| over rows with nonzero gap.
    pub sqrt_n_gap_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub n: f64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionSummary {
    pub passed: bool,
    pub lipschitz_k_f: f64,
    pub avar_growth_k_a: f64,
    pub avar0_min_eig: f64,
    pub jump_bound: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Admissibility {
    pub test: String,
    /// max over the grid of f̄/V.
    pub max_ratio: f64,
    pub at: Vec<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovSummary {
    pub candidate: String,
    pub certificate_id: String,
    pub certificate: UlCertificate,
    pub structural_tail: bool,
    pub admissibility: Vec<Admissibility>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentSummary {
    /// b/δ from the certificate.
    pub bound: f64,
    /// (n, π^n(V)).
    pub pi_v: Vec<(f64, f64)>,
    /// (n, ν^n(V)).
    pub nu_v: Vec<(f64, f64)>,
    pub pi_within_bound: bool,
    pub dm_to_ctmc_certified: bool,
    pub dm_to_ctmc: String,
    pub finite_moments: Attestation,
}

/// Which hypotheses behind the gap bound were checked by machine.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisLog {
    pub assumptions: AssumptionSummary,
    pub lyapunov: LyapunovSummary,
    pub moments: MomentSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub schema_version: u32,
    pub model: String,
    pub n_grid: Vec<f64>,
    pub seeds: super::config::Seeds,
    pub tests: Vec<TestReport>,
    pub hypotheses: HypothesisLog,
    pub failures: Vec<Failure>,
}

impl GapReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# gaplab-schema: {}\n", crate::SCHEMA_VERSION);
        s.push_str("test,n,nu,pi,gap,sqrt_n_gap,budget_truncation,budget_quadrature,budget_mc,budget_total,admissible,chain_method,dm_method\n");
        for t in &self.tests {
            for r in &t.rows {
                let b = &r.budget;
                let _ = writeln!(
                    s,
                    "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
                    t.name,
                    r.n,
                    r.nu,
                    r.pi,
                    r.gap,
                    r.sqrt_n_gap,
                    b.truncation,
                    b.quadrature,
                    b.monte_carlo,
                    b.total,
                    r.admissible,
                    r.provenance.chain_method,
                    r.provenance.dm_method
                );
            }
        }
        s
    }

    pub fn test(&self, name: &str) -> Option<&TestReport> {
        self.tests.iter().find(|t| t.name == name)
    }
}

/// Short hex digest of a certificate's JSON form.
pub fn certificate_id(cert: &UlCertificate) -> String {
    let bytes = serde_json::to_vec(cert).expect("serializable");
    Sha256::digest(&bytes).iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub(crate) fn cell_seed(seed: u64, idx: usize) -> u64 {
    seed.wrapping_add((idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub(crate) fn compile_tests(cfg: &ExperimentConfig, dim: usize) -> Result<Vec<TestFunction>> {
    if cfg.tests.is_empty() {
        return Err(Error::Config("no [[test]] functions given".into()));
    }
    cfg.tests.iter().map(|t| TestFunction::parse(&t.expr, dim)).collect()
}

/// Scaled chains and diffusion models per scale; scales that fail are
/// reported instead.
pub(crate) fn build_family(model: &Model, n_grid: &[f64]) -> (Vec<(usize, ScaledChain, DiffusionModel)>, Vec<Failure>) {
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (i, &n) in n_grid.iter().enumerate() {
        match model.scaled(n).and_then(|sc| build_dm(&sc).map(|dm| (sc, dm))) {
            Ok((sc, dm)) => ok.push((i, sc, dm)),
            Err(e) => failures.push(Failure { n, error: e.to_string() }),
        }
    }
    (ok, failures)
}

fn validation_grid(d: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let per: usize = match d {
        1 => 241,
        2 => 41,
        3 => 15,
        4 => 7,
        _ => 0,
    };
    if per == 0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        return (0..4000)
            .map(|_| (0..d).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect())
            .collect();
    }
    let axis: Vec<f64> = (0..per).map(|i| -radius + 2.0 * radius * i as f64 / (per - 1) as f64).collect();
    let total = per.pow(d as u32);
    (0..total)
        .map(|mut k| {
            let mut x = vec![0.0; d];
            for c in x.iter_mut().rev() {
                *c = axis[k % per];
                k /= per;
            }
            x
        })
        .collect()
}

fn ball_points(d: usize) -> usize {
    match d {
        1 => 33,
        2 => 9,
        3 => 5,
        _ => 3,
    }
}

fn admissibility(
    tests: &[TestFunction],
    names: &[String],
    envelopes: &[Vec<f64>],
    grid: &[Vec<f64>],
    cand: &dyn Candidate,
) -> Vec<Admissibility> {
    tests
        .iter()
        .zip(names)
        .zip(envelopes)
        .map(|((_, name), fb)| {
            let mut worst = (0.0f64, 0);
            for (i, x) in grid.iter().enumerate() {
                let r = fb[i] / cand.value(x);
                if !(r <= worst.0) {
                    worst = (if r.is_nan() { f64::INFINITY } else { r }, i);
                }
            }
            Admissibility {
                test: name.clone(),
                max_ratio: worst.0,
                at: grid[worst.1].clone(),
                passed: worst.0 <= 1.0,
            }
        })
        .collect()
}

/// Certify a Lyapunov function uniformly over the family that also
/// dominates the test-function envelopes. Without an explicit candidate,
/// ρ + (xᵀQx)^m is used with the smallest m whose |x|^{2m} dominates the
/// envelopes on the outer half of the grid and ρ covering the rest.
fn certify(
    cfg: &ExperimentConfig,
    dms: &[DiffusionModel],
    tests: &[TestFunction],
) -> Result<(Arc<dyn Candidate>, UlCertificate, Vec<Admissibility>)> {
    let d = dms[0].dim();
    let radius = cfg.tolerances.admissibility_radius;
    let grid = validation_grid(d, radius, cfg.seeds.validation);
    let names: Vec<String> = cfg.tests.iter().map(|t| t.name.clone()).collect();
    let envelopes: Vec<Vec<f64>> = tests
        .iter()
        .map(|t| local_lipschitz_profile(&|x: &[f64]| t.eval(x), &grid, ball_points(d)))
        .collect();
    let opts = UlOptions {
        delta_trial: cfg.lyapunov.delta_trial,
        outer_radius: cfg.lyapunov.outer_radius,
        radial_points: cfg.lyapunov.radial_points,
        directions: cfg.lyapunov.directions,
        seed: cfg.seeds.validation,
    };
    let certified = |out: UlOutcome, what: &str| -> Result<UlCertificate> {
        match out {
            UlOutcome::Certified(c) => Ok(c),
            UlOutcome::Counterexample(c) => Err(Error::Hypothesis(format!(
                "uniform Lyapunov condition fails for {what}: A V + δV = {:.3e} at x = {:?}, n = {} ({})",
                c.value, c.x, c.n, c.reason
            ))),
        }
    };
    if let Some(src) = &cfg.lyapunov.candidate {
        let cand = parse_candidate(src, d)?;
        let cert = certified(check_ul(dms, cand.as_ref(), &opts)?, src)?;
        let adm = admissibility(tests, &names, &envelopes, &grid, cand.as_ref());
        if let Some(a) = adm.iter().find(|a| !a.passed) {
            return Err(Error::Refused(format!(
                "test `{}` is not dominated by {}: f̄/V = {:.3} at x = {:?}",
                a.test,
                cand.describe(),
                a.max_ratio,
                a.at
            )));
        }
        return Ok((cand, cert, adm));
    }
    let sq: Vec<f64> = grid.iter().map(|x| norm(x).powi(2)).collect();
    let outer = |m: u32| {
        envelopes.iter().all(|fb| {
            grid.iter()
                .enumerate()
                .all(|(i, x)| norm(x) < 0.5 * radius || fb[i] <= sq[i].powi(m as i32))
        })
    };
    let m = (1..=4).find(|&m| outer(m)).unwrap_or(4);
    let excess = envelopes
        .iter()
        .flat_map(|fb| fb.iter().zip(&sq).map(|(v, s)| v - s.powi(m as i32)))
        .fold(0.0f64, f64::max);
    let mut rho = (excess + 1.0).ceil();
    for _ in 0..4 {
        let (cand, out) = search_quadratic_form(dms, rho, m, &opts)?;
        let cert = certified(out, &cand.describe())?;
        let adm = admissibility(tests, &names, &envelopes, &grid, cand.as_ref());
        if adm.iter().all(|a| a.passed) {
            return Ok((cand, cert, adm));
        }
        // Q ≠ I can shrink V; raise ρ by the shortfall
        let mut short = 0.0f64;
        for (i, x) in grid.iter().enumerate() {
            let v = cand.value(x);
            for fb in &envelopes {
                short = short.max(fb[i] - v);
            }
        }
        rho = (rho + short + 1.0).ceil();
    }
    Err(Error::Refused(format!(
        "no certified candidate ρ + (xᵀQx)^{m} dominates the test-function envelopes"
    )))
}

struct Cell {
    nu: Vec<Moment>,
    pi: Vec<Moment>,
    mc: Vec<f64>,
    cross: Vec<Option<CrossCheck>>,
    nu_v: f64,
    pi_v: f64,
    provenance: Provenance,
}

fn solve_cell(
    cfg: &ExperimentConfig,
    sc: &ScaledChain,
    dm: &DiffusionModel,
    tests: &[TestFunction],
    cand: &dyn Candidate,
    seed: u64,
) -> Result<Cell> {
    let s = &cfg.solver;
    let fs: Vec<_> = tests.iter().map(|t| move |x: &[f64]| t.eval(x)).collect();
    let v = |x: &[f64]| cand.value(x);
    let mut refs: Vec<&dyn Fn(&[f64]) -> f64> = fs.iter().map(|f| f as &dyn Fn(&[f64]) -> f64).collect();
    let chain = match s.chain {
        ChainSolver::Auto => chain_stationary_auto(
            sc,
            &refs,
            &AutoOptions {
                tol: cfg.tolerances.chain_tol,
                max_states: s.max_states,
                ..AutoOptions::default()
            },
        )?,
        ChainSolver::ProductForm => chain_stationary_bd(sc, &default_box(sc, 16.0))?,
        ChainSolver::General => chain_stationary_general(sc, &default_box(sc, 16.0))?,
    };
    refs.push(&v);
    let nu_all = refs.iter().map(|f| chain.moment(*f)).collect::<Result<Vec<_>>>()?;
    let d = dm.dim();
    let method = match s.diffusion {
        DmSolver::Auto if d == 1 => DmSolver::ClosedForm,
        DmSolver::Auto if d == 2 => DmSolver::Fd,
        DmSolver::Auto => DmSolver::Simulation,
        DmSolver::ClosedForm if d != 1 => {
            return Err(Error::Config("closed-form diffusion stationary law needs d = 1".into()))
        }
        other => other,
    };
    let sim_fs: Vec<TestFn> = fs.iter().map(|f| f as TestFn).collect();
    let simulate = |fs: &[TestFn]| {
        let sim = &cfg.simulation;
        dm_steady_estimate(dm, &vec![0.0; d], sim.horizon, sim.step, sim.warmup, sim.batches, fs, seed)
    };
    let k = tests.len();
    let (pi_all, mc, dm_method, dm_nodes) = match method {
        DmSolver::Simulation => {
            let est = simulate(&sim_fs)?;
            let pi: Vec<Moment> = est
                .iter()
                .map(|e| Moment { value: e.mean, truncation_bound: 0.0, discretization_bound: 0.0 })
                .collect();
            let mc = est.iter().map(|e| e.half_width()).collect();
            // V by simulation as well, without a budget
            let v_sim = simulate(&[&|x: &[f64]| cand.value(x)])?[0].mean;
            let mut pi = pi;
            pi.push(Moment { value: v_sim, truncation_bound: 0.0, discretization_bound: 0.0 });
            (pi, mc, "simulation".to_string(), 0)
        }
        _ => {
            let st = if method == DmSolver::Fd {
                dm_stationary_fd(dm, &FdOptions { half_widths: None, cells: s.fd_cells })?
            } else {
                dm_stationary_1d_auto(dm, s.points_per_unit)?
            };
            let pi = refs.iter().map(|f| st.moment(*f)).collect::<Result<Vec<_>>>()?;
            (pi, vec![0.0; k], st.rule.to_string(), st.len())
        }
    };
    let cross = if s.cross_check && method != DmSolver::Simulation {
        let est = simulate(&sim_fs)?;
        est.iter()
            .zip(&pi_all)
            .map(|(e, p)| {
                let diff = p.value - e.mean;
                Some(CrossCheck {
                    simulated: e.mean,
                    half_width: e.half_width(),
                    difference: diff,
                    agrees: diff.abs() <= e.half_width() + p.budget(),
                })
            })
            .collect()
    } else {
        vec![None; k]
    };
    Ok(Cell {
        nu: nu_all[..k].to_vec(),
        pi: pi_all[..k].to_vec(),
        mc,
        cross,
        nu_v: nu_all[k].value,
        pi_v: pi_all[k].value,
        provenance: Provenance {
            chain_method: chain.method.to_string(),
            chain_states: chain.states.len(),
            chain_truncation_mass: chain.truncation_mass_bound,
            dm_method,
            dm_nodes,
        },
    })
}

/// Gap study: per scale, ν^n(f) from the chain, π^n(f) from the diffusion
/// model, their difference with an error budget, and the fitted rate over
/// admissible rows. Hypotheses are checked first; a failed check aborts
/// with [`Error::Hypothesis`] or [`Error::Refused`], while per-scale solver
/// failures are listed in the report.
pub fn run_gap_study(cfg: &ExperimentConfig, model: &Model) -> Result<GapReport> {
    let d = model.dim();
    let tests = compile_tests(cfg, d)?;
    let (family, mut failures) = build_family(model, &cfg.n_grid);
    if family.is_empty() {
        return Err(Error::Solver(format!(
            "no scale could be built: {}",
            failures.iter().map(|f| format!("n = {}: {}", f.n, f.error)).collect::<Vec<_>>().join("; ")
        )));
    }
    let scs: Vec<ScaledChain> = family.iter().map(|f| f.1.clone()).collect();
    let dms: Vec<DiffusionModel> = family.iter().map(|f| f.2.clone()).collect();
    let tol = &cfg.tolerances;
    let ar = validate_assumptions(
        &scs,
        &SampleBox::cube(d, tol.validation_radius),
        &ValidateOptions {
            samples: tol.validation_samples,
            seed: cfg.seeds.validation,
            growth_factor: tol.growth_factor,
        },
    )?;
    let assumptions = AssumptionSummary {
        passed: ar.passed(),
        lipschitz_k_f: ar.lipschitz_k_f,
        avar_growth_k_a: ar.avar_growth_k_a,
        avar0_min_eig: ar.avar0_min_eig,
        jump_bound: ar.jump_bound,
        notes: ar.notes.clone(),
    };
    if !ar.passed() {
        return Err(Error::Hypothesis(format!(
            "model assumptions fail: lipschitz {:?}, avar growth {:?}, avar0 pd {:?}, bounded jumps {:?} {:?}",
            ar.lipschitz, ar.avar_growth, ar.avar0_pd, ar.bounded_jumps, ar.notes
        )));
    }
    let (cand, cert, adm) = certify(cfg, &dms, &tests)?;
    let cells: Vec<Result<Cell>> = family
        .par_iter()
        .map(|(i, sc, dm)| solve_cell(cfg, sc, dm, &tests, cand.as_ref(), cell_seed(cfg.seeds.simulation, *i)))
        .collect();
    let mut solved = Vec::new();
    for ((_, sc, _), cell) in family.iter().zip(cells) {
        match cell {
            Ok(c) => solved.push((sc.n(), c)),
            Err(e) => failures.push(Failure { n: sc.n(), error: e.to_string() }),
        }
    }
    failures.sort_by(|a, b| a.n.total_cmp(&b.n));
    let mut reports = Vec::new();
    for (k, spec) in cfg.tests.iter().enumerate() {
        let rows: Vec<GapRow> = solved
            .iter()
            .map(|(n, c)| {
                let (nu, pi) = (c.nu[k], c.pi[k]);
                let gap = nu.value - pi.value;
                let truncation = nu.truncation_bound + pi.truncation_bound;
                let quadrature = nu.discretization_bound + pi.discretization_bound;
                let total = truncation + quadrature + c.mc[k];
                GapRow {
                    n: *n,
                    nu: nu.value,
                    pi: pi.value,
                    gap,
                    sqrt_n_gap: n.sqrt() * gap,
                    budget: ErrorBudget { truncation, quadrature, monte_carlo: c.mc[k], total },
                    admissible: total < tol.budget_fraction * gap.abs(),
                    provenance: c.provenance.clone(),
                    cross_check: c.cross[k],
                }
            })
            .collect();
        let fit_rows: Vec<(f64, f64)> = rows.iter().filter(|r| r.admissible).map(|r| (r.n, r.gap)).collect();
        let (fit, fit_note) = match fit_rate(&fit_rows) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let scaled: Vec<f64> = rows.iter().map(|r| r.sqrt_n_gap.abs()).filter(|v| *v > 0.0).collect();
        let sqrt_n_gap_ratio = (!scaled.is_empty()).then(|| {
            scaled.iter().fold(0.0f64, |a, &b| a.max(b)) / scaled.iter().fold(f64::INFINITY, |a, &b| a.min(b))
        });
        reports.push(TestReport {
            name: spec.name.clone(),
            expr: spec.expr.clone(),
            rows,
            fit,
            fit_note,
            sqrt_n_gap_ratio,
        });
    }
    let pi_v: Vec<(f64, f64)> = solved.iter().map(|(n, c)| (*n, c.pi_v)).collect();
    let nu_v: Vec<(f64, f64)> = solved.iter().map(|(n, c)| (*n, c.nu_v)).collect();
    let bound_check = moment_bound_check(&cert, &pi_v, 1e-6 * (1.0 + cert.moment_bound()));
    let n_solved: Vec<f64> = family.iter().map(|f| f.1.n()).collect();
    let (dm_to_ctmc_certified, dm_to_ctmc) =
        match check_dm_to_ctmc(cand.as_ref(), &n_solved, ar.jump_bound, &GrowthOptions::default()) {
            Ok(DmToCtmcOutcome::Certified(r)) => (true, format!("certified with C = {:.4e}", r.c)),
            Ok(DmToCtmcOutcome::Counterexample { x, ratio, reason }) => {
                (false, format!("counterexample at {x:?}: ratio {ratio:.3e} ({reason})"))
            }
            Err(e) => (false, format!("unverified: {e}")),
        };
    let structural_tail = matches!(cert.tail, TailEvidence::Structural);
    Ok(GapReport {
        schema_version: crate::SCHEMA_VERSION,
        model: model.name.clone(),
        n_grid: cfg.n_grid.clone(),
        seeds: cfg.seeds,
        tests: reports,
        hypotheses: HypothesisLog {
            assumptions,
            lyapunov: LyapunovSummary {
                candidate: cand.describe(),
                certificate_id: certificate_id(&cert),
                certificate: cert.clone(),
                structural_tail,
                admissibility: adm,
            },
            moments: MomentSummary {
                bound: bound_check.bound,
                pi_v,
                nu_v,
                pi_within_bound: bound_check.passed,
                dm_to_ctmc_certified,
                dm_to_ctmc,
                finite_moments: attest_finite_moments(model.chain.as_ref(), cand.as_ref(), &n_solved),
            },
        },
        failures,
    })
}
