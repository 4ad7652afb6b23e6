use gaplab::lab::{ergodicity_decay, fit_rate, parse_config, run_decay_study, run_gap_study, ExperimentConfig};
use gaplab::diffusion::DiffusionModel;
use gaplab::Error;
use nalgebra::DMatrix;
use std::path::Path;
use std::sync::Arc;

const MM_INF: &str = r#"
schema_version = 1
n_grid = [100.0, 1000.0, 10000.0]

[model]
name = "mm-inf"
dimension = 1
[model.params]
mu = 1.0
[[model.jump]]
name = "arrival"
vector = [1]
rate = "n"
[[model.jump]]
name = "departure"
vector = [-1]
rate = "mu*x1"
[model.domain]
lower = [0]
[model.fluid]
center = ["n/mu"]

[[test]]
name = "third"
expr = "x^3"

[[test]]
name = "second"
expr = "x^2"

[seeds]
simulation = 11
validation = 12
"#;

fn config(src: &str) -> (ExperimentConfig, gaplab::model::Model) {
    let cfg = parse_config(src).unwrap();
    let model = cfg.load_model(Path::new(".")).unwrap();
    (cfg, model)
}

#[test]
fn mm_inf_third_power_gap_is_inverse_sqrt() {
    let (cfg, model) = config(MM_INF);
    let rep = run_gap_study(&cfg, &model).unwrap();
    assert!(rep.failures.is_empty(), "{:?}", rep.failures);
    let third = rep.test("third").unwrap();
    for r in &third.rows {
        let exact = r.n.powf(-0.5);
        assert!((r.gap - exact).abs() < 1e-6, "n = {}: {} vs {exact}", r.n, r.gap);
        // the budget covers the actual error
        assert!((r.gap - exact).abs() <= r.budget.total + 1e-12, "{r:?}");
        assert!(r.admissible);
    }
    let fit = third.fit.as_ref().unwrap();
    assert!((fit.slope + 0.5).abs() < 1e-3, "{fit:?}");
    let second = rep.test("second").unwrap();
    for r in &second.rows {
        assert!(r.gap.abs() <= 1e-8, "{r:?}");
    }
    assert!(second.fit.is_none() && second.fit_note.is_some());
    let h = &rep.hypotheses;
    assert!(h.assumptions.passed);
    assert_eq!(h.lyapunov.certificate_id.len(), 16);
    assert!(h.lyapunov.admissibility.iter().all(|a| a.passed));
    assert!(h.moments.pi_within_bound);
    assert!(rep.to_csv().starts_with("# gaplab-schema: 1\n"));
}

#[test]
fn study_is_deterministic() {
    let src = MM_INF.replace("[100.0, 1000.0, 10000.0]", "[50.0, 200.0]").replace(
        "[seeds]",
        "[solver]\ndiffusion = \"simulation\"\n[simulation]\nhorizon = 200.0\nstep = 0.02\n[seeds]",
    );
    let (cfg, model) = config(&src);
    let a = run_gap_study(&cfg, &model).unwrap().to_json();
    let b = run_gap_study(&cfg, &model).unwrap().to_json();
    assert_eq!(a, b);
}

#[test]
fn undominated_test_function_is_refused() {
    let src = MM_INF.replace("[seeds]", "[lyapunov]\ncandidate = \"quad:1,1\"\n[seeds]");
    let (cfg, model) = config(&src);
    match run_gap_study(&cfg, &model) {
        Err(e @ Error::Refused(_)) => assert!(e.is_hypothesis_failure()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_validation() {
    for (edit, needle) in [
        (("[100.0, 1000.0, 10000.0]", "[100.0, 100.0]"), "strictly increasing"),
        (("simulation = 11\n", ""), "simulation"),
        (("expr = \"x^3\"", "expr = \"x^\""), "parse error"),
        (("schema_version = 1\nn_grid", "schema_version = 3\nn_grid"), "schema_version"),
    ] {
        let src = MM_INF.replacen(edit.0, edit.1, 1);
        let e = parse_config(&src).unwrap_err().to_string();
        assert!(e.contains(needle), "{needle}: {e}");
    }
}

#[test]
fn fit_rate_refuses_short_grids() {
    assert!(matches!(fit_rate(&[(1.0, 1.0), (2.0, 0.5)]), Err(Error::Refused(_))));
}

fn ou() -> DiffusionModel {
    DiffusionModel::new(Arc::new(|x: &[f64]| vec![-x[0]]), DMatrix::from_element(1, 1, 2.0), 1.0).unwrap()
}

#[test]
fn ou_mean_decays_at_unit_rate() {
    let t_grid: Vec<f64> = (1..=8).map(|k| 0.25 * k as f64).collect();
    let fits = ergodicity_decay(&ou(), &|x: &[f64]| x[0], 0.0, &[vec![1.0]], &t_grid, 20_000, 0.005, 3).unwrap();
    let rate = fits[0].rate.unwrap();
    assert!((rate - 1.0).abs() < 0.05, "{rate}");
}

#[test]
fn centered_constant_gives_zero_curve() {
    let fits = ergodicity_decay(&ou(), &|_: &[f64]| 2.0, 2.0, &[vec![1.0]], &[0.5, 1.0], 100, 0.01, 3).unwrap();
    assert!(fits[0].rate.is_none());
    assert!(fits[0].points.iter().all(|p| p.mean == 0.0));
    assert!(fits[0].notes[0].contains("zero curve"));
}

#[test]
fn erlang_a_decay_rates_are_uniform() {
    let src = r#"
schema_version = 1
n_grid = [100.0, 10000.0]
[model]
zoo = { model = "erlang-a", mu = 1.0, theta = 0.5, staffing = { rule = "scaled", load = 1.0, beta = 0.0 } }
[[test]]
name = "mean"
expr = "x"
[seeds]
simulation = 5
validation = 6
[decay]
x0 = [[2.0], [-2.0]]
t_grid = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0]
reps = 4000
step = 0.01
"#;
    let (cfg, model) = config(src);
    let rep = run_decay_study(&cfg, &model).unwrap();
    assert!(rep.failures.is_empty());
    for s in &rep.stability {
        let r = s.ratio.unwrap();
        assert!(r <= 2.0, "{s:?}");
    }
    assert!(rep.to_csv().starts_with("# gaplab-schema: 1\n"));
}
