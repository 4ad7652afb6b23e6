mod common;

use std::sync::Arc;

use gaplab::chain::{scale_chain, scale_chain_with_tol, ChainFamily, Jump, StateDomain};
use gaplab::diffusion::DiffusionModel;
use gaplab::simulate::{
    compare_paths, ctmc_steady_estimate, dm_steady_estimate, quantile, replicate, simulate_ctmc, simulate_dm,
    steady_estimate, PathKind, SimPath,
};
use gaplab::Error;
use nalgebra::DMatrix;

fn ou() -> DiffusionModel {
    DiffusionModel::new(Arc::new(|x: &[f64]| vec![-x[0]]), DMatrix::from_element(1, 1, 2.0), 1.0).unwrap()
}

fn frozen(dim: usize) -> Arc<ChainFamily> {
    let jumps = (0..dim)
        .map(|k| {
            let mut v = vec![0; dim];
            v[k] = 1;
            Jump::new(format!("up-{k}"), v)
        })
        .collect();
    Arc::new(
        ChainFamily::new(
            "frozen",
            dim,
            jumps,
            Arc::new(|_n: f64, _x: &[f64], out: &mut [f64]| out.fill(0.0)),
            Arc::new(move |_n: f64| StateDomain::unbounded(dim)),
        )
        .unwrap(),
    )
}

#[test]
fn pure_birth_counts_are_poisson() {
    let n = 50.0;
    let chain = common::birth_death("pure-birth", 0.0, f64::INFINITY, |n, _| n, |_, _| 0.0);
    // no drift zero exists, so the centering check is switched off
    let sc = scale_chain_with_tol(chain, n, vec![0.0], f64::INFINITY).unwrap();
    let counts: Vec<f64> = replicate(3, 1000, |_, i| {
        let p = simulate_ctmc(&sc, &[0.0], 1.0, i as u64).unwrap();
        p.states.last().unwrap()[0] * n.sqrt()
    });
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let sigma = (n / counts.len() as f64).sqrt();
    assert!((mean - n).abs() <= 4.0 * sigma, "mean {mean}");
}

#[test]
fn zero_rates_give_constant_path() {
    let sc = scale_chain(frozen(2), 10.0, vec![3.0, 4.0]).unwrap();
    let p = simulate_ctmc(&sc, &[0.0, 0.0], 5.0, 1).unwrap();
    assert_eq!(p.times, vec![0.0]);
    assert_eq!(p.kind, PathKind::Chain);
    let e = steady_estimate(&p, &|x: &[f64]| x[0] + 7.0, 0.1, 20).unwrap();
    assert!((e.mean - 7.0).abs() < 1e-12);
    assert!(e.std_err < 1e-12);
}

#[test]
fn chain_jumps_are_scaled_lattice_jumps() {
    let n = 100.0;
    let sc = common::mm_inf_scaled(1.0, n);
    let p = simulate_ctmc(&sc, &[0.0], 3.0, 9).unwrap();
    assert!(p.times.len() > 100);
    assert!(p.times.windows(2).all(|w| w[0] < w[1]));
    for w in p.states.windows(2) {
        let step = (w[1][0] - w[0][0]) * n.sqrt();
        assert!((step.abs() - 1.0).abs() < 1e-9, "{step}");
    }
}

#[test]
fn mm_inf_long_run_mean_is_zero() {
    let sc = common::mm_inf_scaled(1.0, 100.0);
    let est = ctmc_steady_estimate(&sc, &[0.0], 2000.0, 0.05, 40, &[&|x: &[f64]| x[0], &|x: &[f64]| x[0] * x[0]], 4).unwrap();
    assert!(est[0].mean.abs() <= 4.0 * est[0].std_err, "{:?}", est[0]);
    assert!((est[1].mean - 1.0).abs() <= 4.0 * est[1].std_err, "{:?}", est[1]);
}

#[test]
fn drift_only_is_euler() {
    let dm = ou();
    let p = simulate_dm(&dm, &[1.0], 1.0, 1e-3, 0, true).unwrap();
    let y = p.states.last().unwrap()[0];
    assert!((y - (-1.0f64).exp()).abs() < 1e-3, "{y}");
    assert_eq!(*p.times.last().unwrap(), 1.0);
}

#[test]
fn ou_long_run_variance() {
    let dm = ou();
    let est = dm_steady_estimate(&dm, &[0.0], 20_000.0, 0.01, 0.01, 50, &[&|y: &[f64]| y[0] * y[0]], 17).unwrap();
    assert!((est[0].mean - 1.0).abs() <= 4.0 * est[0].std_err + 0.01, "{:?}", est[0]);
    let path = simulate_dm(&dm, &[0.0], 2000.0, 0.01, 17, false).unwrap();
    let e = steady_estimate(&path, &|y: &[f64]| y[0] * y[0], 0.01, 20).unwrap();
    assert!((e.mean - 1.0).abs() <= 4.0 * e.std_err + 0.01, "{e:?}");
}

#[test]
fn halving_step_changes_little() {
    let dm = ou();
    let f: &(dyn Fn(&[f64]) -> f64 + Sync) = &|y: &[f64]| y[0] * y[0];
    let a = dm_steady_estimate(&dm, &[0.0], 10_000.0, 0.02, 0.01, 40, &[f], 21).unwrap()[0];
    let b = dm_steady_estimate(&dm, &[0.0], 10_000.0, 0.01, 0.01, 40, &[f], 22).unwrap()[0];
    let joint = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
    assert!((a.mean - b.mean).abs() < 2.0 * joint + 0.01, "{a:?} {b:?}");
}

#[test]
fn same_seed_same_path() {
    let dm = ou();
    let a = simulate_dm(&dm, &[0.3], 5.0, 0.01, 99, false).unwrap();
    let b = simulate_dm(&dm, &[0.3], 5.0, 0.01, 99, false).unwrap();
    assert_eq!(a.states, b.states);
    let c = simulate_dm(&dm, &[0.3], 5.0, 0.01, 100, false).unwrap();
    assert_ne!(a.states, c.states);
    let sc = common::mm_inf_scaled(1.0, 50.0);
    let p = simulate_ctmc(&sc, &[0.0], 5.0, 99).unwrap();
    let q = simulate_ctmc(&sc, &[0.0], 5.0, 99).unwrap();
    assert_eq!(p.times, q.times);
    assert_eq!(p.states, q.states);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let sc = common::mm_inf_scaled(1.0, 100.0);
    let run = || {
        replicate(8, 16, |_, i| {
            let p = simulate_ctmc(&sc, &[0.0], 2.0, i as u64).unwrap();
            p.states.last().unwrap()[0]
        })
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
    assert_eq!(one, four);
}

#[test]
fn too_few_batches_refused() {
    let p = SimPath {
        times: vec![0.0],
        states: vec![vec![0.0]],
        seed: 0,
        kind: PathKind::Diffusion,
        horizon: 1.0,
    };
    assert!(matches!(steady_estimate(&p, &|_| 1.0, 0.0, 10), Err(Error::TooFewBatches { .. })));
}

#[test]
fn blowup_is_reported() {
    let dm = DiffusionModel::new(Arc::new(|x: &[f64]| vec![x[0] * x[0] * x[0]]), DMatrix::from_element(1, 1, 1.0), 1.0).unwrap();
    assert!(matches!(simulate_dm(&dm, &[5.0], 10.0, 0.1, 0, true), Err(Error::Blowup { .. })));
}

/// P(sup_{t≤T}|B_t| ≤ y) by the alternating series from the reflection
/// principle.
fn brownian_sup_cdf(y: f64, t: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..200 {
        let m = (2 * k + 1) as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        s += sign / m * (-(m * m) * std::f64::consts::PI.powi(2) * t / (8.0 * y * y)).exp();
    }
    4.0 / std::f64::consts::PI * s
}

#[test]
fn zero_drift_diffusion_has_brownian_sup_law() {
    let sc = scale_chain(frozen(1), 10.0, vec![5.0]).unwrap();
    let dm = DiffusionModel::new(Arc::new(|_: &[f64]| vec![0.0]), DMatrix::from_element(1, 1, 1.0), 10.0).unwrap();
    let reps = 2000;
    let cmp = compare_paths(&[(sc, dm)], 1.0, 1e-4, reps, 12).unwrap();
    let row = &cmp.rows[0];
    assert!(row.chain.iter().all(|q| *q == 0.0));
    for (p, q) in row.probs.iter().zip(&row.diffusion) {
        let f = brownian_sup_cdf(*q, 1.0);
        let band = 4.0 * (p * (1.0 - p) / reps as f64).sqrt() + 0.01;
        assert!((f - p).abs() <= band, "p={p}: F(q)={f}");
    }
}

#[test]
fn zero_horizon_gives_zero_gap() {
    let sc = common::mm_inf_scaled(1.0, 100.0);
    let dm = gaplab::diffusion::build_dm(&sc).unwrap();
    let cmp = compare_paths(&[(sc, dm)], 0.0, 0.01, 50, 1).unwrap();
    let row = &cmp.rows[0];
    assert!(row.chain.iter().chain(&row.diffusion).all(|q| *q == 0.0));
}

#[test]
fn chain_sup_norm_is_scale_stable() {
    let pairs: Vec<_> = [100.0, 400.0]
        .iter()
        .map(|&n| {
            let sc = common::mm_inf_scaled(1.0, n);
            let dm = gaplab::diffusion::build_dm(&sc).unwrap();
            (sc, dm)
        })
        .collect();
    let cmp = compare_paths(&pairs, 2.0, 1e-3, 400, 5).unwrap();
    let (a, b) = (&cmp.rows[0], &cmp.rows[1]);
    assert!((a.chain[0] / b.chain[0] - 1.0).abs() < 0.15, "{a:?} {b:?}");
    assert!((a.chain[0] / a.diffusion[0] - 1.0).abs() < 0.2, "{a:?}");
    assert!(b.chain_unscaled[0] > 1.6 * a.chain_unscaled[0]);
}

#[test]
fn quantile_of_sorted_sample() {
    let v: Vec<f64> = (0..=100).map(f64::from).collect();
    assert_eq!(quantile(&v, 0.9), 90.0);
}
