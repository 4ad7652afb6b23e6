use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use gaplab::chain::{validate_assumptions, SampleBox, ValidateOptions};
use gaplab::diffusion::{build_dm, DiffusionModel};
use gaplab::fluid::{integrate_fm, stationary_point, FluidModel};
use gaplab::lab::{certificate_id, parse_config, run_decay_study, run_gap_study, ExperimentConfig};
use gaplab::lyapunov::{check_ul, parse_candidate, UlOptions, UlOutcome};
use gaplab::model::{parse_model_spec, parse_zoo_address, Model, TestFunction};
use gaplab::poisson::{solve_poisson_1d, verify_gradient_bounds};
use gaplab::simulate::{simulate_ctmc, simulate_dm};
use gaplab::steady::{
    chain_stationary_auto, dm_stationary_1d_auto, dm_stationary_fd, AutoOptions, ContinuousStationary, FdOptions,
};
use gaplab::{Error, Result, SCHEMA_VERSION};

const EXIT_INPUT: u8 = 1;
const EXIT_HYPOTHESIS: u8 = 2;
const EXIT_SOLVER: u8 = 3;

/// Steady-state diffusion approximations for scaled Markov chains.
///
/// SPEC is a model file (TOML) or a zoo address such as
/// `erlang-a:mu=1,theta=0.5` or `mphn:nu=2/2,routing=0/1/0/0,theta=0.5`.
///
/// Exit codes: 0 pass, 1 invalid input, 2 hypothesis check failed,
/// 3 solver failure.
#[derive(Parser)]
#[command(name = "gaplab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample the model assumptions (Lipschitz drift, variance growth,
    /// positive-definite ā(0), bounded jumps) across scales.
    Validate {
        spec: String,
        #[arg(long, value_delimiter = ',', default_values_t = [100.0, 1000.0, 10000.0])]
        n: Vec<f64>,
        /// Half-width of the sampling cube in scaled coordinates.
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Sampling seed (the design is fixed by default so reruns agree).
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
    },
    /// Fluid stationary point, and optionally a fluid trajectory as CSV.
    Fluid {
        spec: String,
        #[arg(long)]
        n: f64,
        /// Initial state (unscaled) for a trajectory.
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
        #[arg(long = "T", default_value_t = 20.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stationary laws of the chain and the diffusion model at one scale.
    Steady {
        spec: String,
        #[arg(long)]
        n: f64,
        /// Test functions of the scaled state (repeatable).
        #[arg(long = "f")]
        f: Vec<String>,
        /// Write the chain's stationary distribution here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the diffusion model's stationary density here.
        #[arg(long)]
        dm_csv: Option<PathBuf>,
    },
    /// Check the uniform Lyapunov condition for a candidate over scales.
    Lyapunov {
        spec: String,
        /// `poly:c0,c1,..`, `quad:rho,m[,Q..]`, `exp:c` or `expr:<expression>`.
        #[arg(long)]
        candidate: String,
        #[arg(long, value_delimiter = ',', default_values_t = [100.0, 1000.0, 10000.0, 1000000.0])]
        n: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 20.0)]
        outer_radius: f64,
    },
    /// Solve the Poisson equation of the diffusion model (d = 1).
    Poisson {
        spec: String,
        /// Test function of the scaled state.
        #[arg(long = "f")]
        f: String,
        #[arg(long, default_value_t = 100.0)]
        n: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a gap-rate study from an experiment configuration.
    Gap { config: PathBuf },
    /// Simulate a path of the scaled chain or of the diffusion model.
    Simulate {
        spec: String,
        #[arg(long)]
        n: f64,
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Kind::Chain)]
        kind: Kind,
        /// Initial state in scaled coordinates (default 0).
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
        /// Euler step for the diffusion model.
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Largest number of rows written.
        #[arg(long, default_value_t = 1_000_000)]
        cap: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit ergodicity-decay rates from an experiment configuration with a
    /// [decay] block.
    Decay { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Chain,
    Diffusion,
}

enum Verdict {
    Pass,
    HypothesisFailed,
    SolverFailed,
}

fn load_model(spec: &str) -> Result<Model> {
    let path = Path::new(spec);
    if path.is_file() {
        return parse_model_spec(&std::fs::read_to_string(path)?);
    }
    if spec.ends_with(".toml") {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("model file {spec} not found"),
        )));
    }
    parse_zoo_address(spec)
}

fn load_config(path: &Path) -> Result<(ExperimentConfig, Model, PathBuf)> {
    let cfg = parse_config(&std::fs::read_to_string(path)?)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let model = cfg.load_model(&base)?;
    Ok((cfg, model, base))
}

/// Writes to stdout, ignoring a closed pipe.
fn say(content: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(content.as_bytes());
    if !content.ends_with('\n') {
        let _ = out.write_all(b"\n");
    }
}

fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => Ok(std::fs::write(p, content)?),
        None => {
            say(content);
            Ok(())
        }
    }
}

fn print_json(v: &serde_json::Value) {
    say(&serde_json::to_string_pretty(v).expect("serializable"));
}

fn dm_at(model: &Model, n: f64) -> Result<DiffusionModel> {
    build_dm(&model.scaled(n)?)
}

fn dm_stationary(dm: &DiffusionModel) -> Result<Option<ContinuousStationary>> {
    match dm.dim() {
        1 => dm_stationary_1d_auto(dm, 200).map(Some),
        2 => dm_stationary_fd(dm, &FdOptions::default()).map(Some),
        _ => Ok(None),
    }
}

fn run(cmd: Cmd) -> Result<Verdict> {
    match cmd {
        Cmd::Validate { spec, n, radius, samples, seed } => {
            let model = load_model(&spec)?;
            let family = n.iter().map(|&n| model.scaled(n)).collect::<Result<Vec<_>>>()?;
            let report = validate_assumptions(
                &family,
                &SampleBox::cube(model.dim(), radius),
                &ValidateOptions { samples, seed, ..ValidateOptions::default() },
            )?;
            let passed = report.passed();
            print_json(&json!({ "schema_version": SCHEMA_VERSION, "model": model.describe(), "passed": passed, "report": report }));
            Ok(if passed { Verdict::Pass } else { Verdict::HypothesisFailed })
        }
        Cmd::Fluid { spec, n, x0, horizon, h, out } => {
            let model = load_model(&spec)?;
            let fm = FluidModel::from_chain(model.chain.clone(), n);
            let sp = stationary_point(&fm, &model.center(n)?)?;
            match x0 {
                Some(x0) => {
                    let traj = integrate_fm(&fm, &x0, horizon, h)?;
                    emit(out.as_deref(), &traj.to_csv())?;
                    if out.is_some() {
                        say(&sp.to_json());
                    }
                }
                None => say(&sp.to_json()),
            }
            Ok(Verdict::Pass)
        }
        Cmd::Steady { spec, n, f, csv, dm_csv } => {
            let model = load_model(&spec)?;
            let sc = model.scaled(n)?;
            let dm = build_dm(&sc)?;
            let tests = f.iter().map(|s| TestFunction::parse(s, model.dim())).collect::<Result<Vec<_>>>()?;
            let closures: Vec<_> = tests.iter().map(|t| move |x: &[f64]| t.eval(x)).collect();
            let refs: Vec<&dyn Fn(&[f64]) -> f64> = closures.iter().map(|c| c as &dyn Fn(&[f64]) -> f64).collect();
            let chain = chain_stationary_auto(&sc, &refs, &AutoOptions::default())?;
            let density = dm_stationary(&dm)?;
            let mut moments = Vec::new();
            for (t, f) in tests.iter().zip(&refs) {
                let nu = chain.moment(*f)?;
                let pi = density.as_ref().map(|d| d.moment(*f)).transpose()?;
                moments.push(json!({
                    "f": t.source(),
                    "nu": nu,
                    "pi": pi,
                    "gap": pi.map(|p| nu.value - p.value),
                }));
            }
            if let Some(p) = &csv {
                std::fs::write(p, chain.to_csv())?;
            }
            if let (Some(p), Some(d)) = (&dm_csv, &density) {
                std::fs::write(p, d.to_csv())?;
            }
            print_json(&json!({
                "schema_version": SCHEMA_VERSION,
                "model": model.describe(),
                "chain": chain.summary(),
                "diffusion": density.as_ref().map(|d| d.summary()),
                "moments": moments,
            }));
            Ok(Verdict::Pass)
        }
        Cmd::Lyapunov { spec, candidate, n, delta, outer_radius } => {
            let model = load_model(&spec)?;
            let cand = parse_candidate(&candidate, model.dim())?;
            let family = n.iter().map(|&n| dm_at(&model, n)).collect::<Result<Vec<_>>>()?;
            let opts = UlOptions { delta_trial: delta, outer_radius, ..UlOptions::default() };
            let out = check_ul(&family, cand.as_ref(), &opts)?;
            let id = out.certificate().map(certificate_id);
            print_json(&json!({ "schema_version": SCHEMA_VERSION, "certificate_id": id, "result": out }));
            Ok(match out {
                UlOutcome::Certified(_) => Verdict::Pass,
                UlOutcome::Counterexample(_) => Verdict::HypothesisFailed,
            })
        }
        Cmd::Poisson { spec, f, n, csv } => {
            let model = load_model(&spec)?;
            if model.dim() != 1 {
                return Err(Error::Config(format!("poisson needs a one-dimensional model, got d = {}", model.dim())));
            }
            let dm = dm_at(&model, n)?;
            let pi = dm_stationary_1d_auto(&dm, 200)?;
            let t = TestFunction::parse(&f, 1)?;
            let f1 = |x: f64| t.eval(&[x]);
            let sol = solve_poisson_1d(&dm, &f1, &pi)?;
            let grad = verify_gradient_bounds(&dm, &sol, &f1, model.chain.jump_bound())?;
            if let Some(p) = &csv {
                std::fs::write(p, sol.to_csv())?;
            }
            print_json(&json!({
                "schema_version": SCHEMA_VERSION,
                "f": t.source(),
                "solution": sol.summary(),
                "gradient_bounds": { "theta_hat": grad.theta_hat, "binding": grad.binding, "at": grad.at },
            }));
            Ok(Verdict::Pass)
        }
        Cmd::Gap { config } => {
            let (cfg, model, base) = load_config(&config)?;
            let report = run_gap_study(&cfg, &model)?;
            if let Some(p) = &cfg.output.csv {
                std::fs::write(base.join(p), report.to_csv())?;
            }
            match &cfg.output.json {
                Some(p) => std::fs::write(base.join(p), report.to_json())?,
                None => say(&report.to_json()),
            }
            for f in &report.failures {
                eprintln!("n = {}: {}", f.n, f.error);
            }
            Ok(if report.failures.is_empty() { Verdict::Pass } else { Verdict::SolverFailed })
        }
        Cmd::Simulate { spec, n, horizon, seed, kind, x0, step, cap, out } => {
            let model = load_model(&spec)?;
            let sc = model.scaled(n)?;
            let x0 = x0.unwrap_or_else(|| vec![0.0; model.dim()]);
            let path = match kind {
                Kind::Chain => simulate_ctmc(&sc, &x0, horizon, seed)?,
                Kind::Diffusion => simulate_dm(&build_dm(&sc)?, &x0, horizon, step, seed, false)?,
            };
            emit(out.as_deref(), &path.to_csv(cap))?;
            if out.is_some() {
                print_json(&json!({
                    "schema_version": SCHEMA_VERSION,
                    "n": n,
                    "horizon": horizon,
                    "seed": seed,
                    "points": path.times.len(),
                    "sup_norm": path.sup_norm(),
                }));
            }
            Ok(Verdict::Pass)
        }
        Cmd::Decay { config } => {
            let (cfg, model, base) = load_config(&config)?;
            let report = run_decay_study(&cfg, &model)?;
            if let Some(p) = &cfg.output.csv {
                std::fs::write(base.join(p), report.to_csv())?;
            }
            match &cfg.output.json {
                Some(p) => std::fs::write(base.join(p), report.to_json())?,
                None => say(&report.to_json()),
            }
            for f in &report.failures {
                eprintln!("n = {}: {}", f.n, f.error);
            }
            Ok(if report.failures.is_empty() { Verdict::Pass } else { Verdict::SolverFailed })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::HypothesisFailed) => ExitCode::from(EXIT_HYPOTHESIS),
        Ok(Verdict::SolverFailed) => ExitCode::from(EXIT_SOLVER),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_hypothesis_failure() {
                EXIT_HYPOTHESIS
            } else if e.is_input_error() || matches!(e, Error::Parse { .. } | Error::Dimension { .. }) {
                EXIT_INPUT
            } else {
                EXIT_SOLVER
            })
        }
    }
}
