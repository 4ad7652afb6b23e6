mod common;

use std::sync::Arc;

use gaplab::chain::{scale_chain, scale_chain_with_tol, ChainFamily, Jump, StateDomain};
use gaplab::diffusion::{build_dm, DiffusionModel};
use gaplab::error::Error;
use gaplab::steady::*;
use gaplab::zoo::{build_erlang_a, build_mphn, mphn_center, ErlangAParams, PhaseTypeParams, Staffing};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

#[test]
fn mm_inf_product_form_is_poisson() {
    let n = 100.0;
    let sc = mm_inf_scaled(1.0, n);
    let d = chain_stationary_bd(&sc, &LatticeBox::new(vec![0], vec![300]).unwrap()).unwrap();
    for (s, p) in d.states.iter().zip(&d.probs) {
        let want = poisson_log_pmf(n, s[0] as u64).exp();
        assert!((p - want).abs() <= 1e-12 * want.max(1e-300) + 1e-300, "{s:?}: {p} vs {want}");
    }
    assert!(d.truncation_mass_bound < 1e-30);
}

#[test]
fn constant_rates_give_uniform() {
    let k = 9.0;
    let chain = birth_death(
        "flat",
        0.0,
        k,
        move |_, x| if x < k { 1.0 } else { 0.0 },
        |_, x| if x > 0.0 { 1.0 } else { 0.0 },
    );
    let sc = scale_chain(chain, 1.0, vec![4.5]).unwrap();
    let bx = LatticeBox::new(vec![0], vec![9]).unwrap();
    for d in [chain_stationary_bd(&sc, &bx).unwrap(), chain_stationary_general(&sc, &bx).unwrap()] {
        for p in &d.probs {
            assert!((p - 0.1).abs() < 1e-14);
        }
        assert_eq!(d.truncation_mass_bound, 0.0);
    }
}

#[test]
fn product_form_and_general_solver_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..5 {
        let b0: f64 = rng.random_range(5.0..20.0);
        let b1: f64 = rng.random_range(0.0..0.5);
        let d1: f64 = rng.random_range(0.5..2.0);
        let d2: f64 = rng.random_range(0.0..0.02);
        let chain = birth_death(
            "random",
            0.0,
            f64::INFINITY,
            move |_, x| b0 + b1 * x,
            move |_, x| d1 * x + d2 * x * x,
        );
        // center by bisection on the drift
        let (mut lo, mut hi) = (0.0, 1e4);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chain.drift(1.0, &[mid])[0] > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sc = scale_chain_with_tol(chain, 1.0, vec![0.5 * (lo + hi)], 1e-8).unwrap();
        let bx = LatticeBox::new(vec![0], vec![(lo * 3.0) as i64 + 40]).unwrap();
        let a = chain_stationary_bd(&sc, &bx).unwrap();
        let b = chain_stationary_general(&sc, &bx).unwrap();
        let tv = a.total_variation(&b);
        assert!(tv <= 1e-10, "tv = {tv:e}");
    }
}

#[test]
fn two_state_chain() {
    let (a, b) = (2.0, 3.0);
    let chain = Arc::new(
        ChainFamily::new(
            "two-state",
            1,
            vec![Jump::new("up", vec![1]), Jump::new("down", vec![-1])],
            Arc::new(move |_n: f64, x: &[f64], out: &mut [f64]| {
                out[0] = a * (1.0 - x[0]);
                out[1] = b * x[0];
            }),
            Arc::new(|_n: f64| StateDomain::new(vec![0.0], vec![1.0])),
        )
        .unwrap(),
    );
    let sc = scale_chain(chain, 1.0, vec![a / (a + b)]).unwrap();
    let d = chain_stationary_general(&sc, &LatticeBox::new(vec![0], vec![1]).unwrap()).unwrap();
    assert!((d.probs[0] - b / (a + b)).abs() < 1e-15);
    assert!((d.probs[1] - a / (a + b)).abs() < 1e-15);
}

#[test]
fn reducible_truncation_is_reported() {
    // state 5 is absorbing from above: no way back down from 6
    let chain = birth_death(
        "trap",
        0.0,
        f64::INFINITY,
        |_, x| if x < 20.0 { 1.0 } else { 0.0 },
        |_, x| if x > 0.0 && x != 6.0 { 1.0 } else { 0.0 },
    );
    let sc = scale_chain_with_tol(chain, 1.0, vec![3.0], 10.0).unwrap();
    let bx = LatticeBox::new(vec![0], vec![10]).unwrap();
    match chain_stationary_general(&sc, &bx) {
        Err(Error::Reducible { count, examples }) => {
            assert!(count > 0);
            assert!(!examples.is_empty());
        }
        other => panic!("expected reducibility error, got {other:?}"),
    }
    assert!(matches!(chain_stationary_bd(&sc, &bx), Err(Error::NotIrreducible { state: 6 })));
}

#[test]
fn poisson_third_scaled_moment() {
    let n = 100.0;
    let sc = mm_inf_scaled(1.0, n);
    let d = chain_stationary_auto(&sc, &[&|x: &[f64]| x[0].powi(3)], &AutoOptions::default()).unwrap();
    let m = d.moment(&|x: &[f64]| x[0].powi(3)).unwrap();
    assert!((m.value - 0.1).abs() < 1e-10, "{}", m.value);
    let one = d.moment(&|_x: &[f64]| 1.0).unwrap();
    assert!((one.value - 1.0).abs() < 1e-12);
}

#[test]
fn mm_inf_variance_matches_diffusion() {
    for n in [100.0, 10_000.0] {
        let sc = mm_inf_scaled(1.0, n);
        let nu = chain_stationary_auto(&sc, &[&|x: &[f64]| x[0] * x[0]], &AutoOptions::default()).unwrap();
        let dm = build_dm(&sc).unwrap();
        let pi = dm_stationary_1d_auto(&dm, 200).unwrap();
        let a = nu.moment(&|x: &[f64]| x[0] * x[0]).unwrap().value;
        let b = pi.moment(&|x: &[f64]| x[0] * x[0]).unwrap().value;
        assert!((a - 1.0).abs() < 1e-9, "{a}");
        assert!((b - 1.0).abs() < 1e-9, "{b}");
    }
}

#[test]
fn box_doubling_stays_within_bound() {
    let p = ErlangAParams {
        mu: 1.0,
        theta: 0.5,
        staffing: Staffing::Scaled { load: 1.0, beta: 0.0 },
    };
    let chain = Arc::new(build_erlang_a(&p).unwrap());
    let n = 400.0;
    let sc = scale_chain(chain, n, vec![p.center(n)]).unwrap();
    let f = |x: &[f64]| x[0] * x[0];
    let small = chain_stationary(&sc, &LatticeBox::around(&sc, 6.0)).unwrap();
    let big = chain_stationary(&sc, &LatticeBox::around(&sc, 12.0)).unwrap();
    let ms = small.moment(&f).unwrap();
    let mb = big.moment(&f).unwrap();
    assert!((ms.value - mb.value).abs() <= ms.truncation_bound + 1e-12, "{ms:?} {mb:?}");
}

fn ou(a: f64) -> DiffusionModel {
    DiffusionModel::new(Arc::new(|x: &[f64]| vec![-x[0]]), DMatrix::from_element(1, 1, a), 1.0).unwrap()
}

#[test]
fn ou_density_is_standard_normal() {
    let pi = dm_stationary_1d(&ou(2.0), -10.0, 10.0, 4000).unwrap();
    let phi = |x: &[f64]| (-0.5 * x[0] * x[0]).exp() / (2.0 * std::f64::consts::PI).sqrt();
    for i in (0..pi.len()).step_by(97) {
        let x = pi.node(i);
        assert!((pi.density[i] - phi(&x)).abs() < 1e-10);
    }
    let m2 = pi.moment(&|x: &[f64]| x[0] * x[0]).unwrap();
    assert!((m2.value - 1.0).abs() < 1e-6);
    assert!(m2.discretization_bound < 1e-6);
}

#[test]
fn erlang_a_density_is_piecewise_gaussian() {
    let (mu, theta) = (1.0, 0.5);
    let dm = DiffusionModel::new(
        Arc::new(move |x: &[f64]| vec![if x[0] < 0.0 { -mu * x[0] } else { -theta * x[0] }]),
        DMatrix::from_element(1, 1, 2.0),
        100.0,
    )
    .unwrap();
    let pi = dm_stationary_1d(&dm, -12.0, 16.0, 6000).unwrap();
    // ∫ e^{-μx²/2} over x<0 plus ∫ e^{-θx²/2} over x>0
    let z = 0.5 * (2.0 * std::f64::consts::PI).sqrt() * (1.0 / mu.sqrt() + 1.0 / theta.sqrt());
    for i in (0..pi.len()).step_by(101) {
        let x = pi.node(i)[0];
        let k = if x < 0.0 { mu } else { theta };
        let want = (-0.5 * k * x * x).exp() / z;
        assert!((pi.density[i] - want).abs() < 1e-9, "x = {x}");
    }
}

#[test]
fn sign_drift_gives_laplace() {
    let dm = DiffusionModel::new(
        Arc::new(|x: &[f64]| vec![-x[0].signum()]),
        DMatrix::from_element(1, 1, 2.0),
        1.0,
    )
    .unwrap();
    let pi = dm_stationary_1d(&dm, -30.0, 30.0, 12000).unwrap();
    for i in (0..pi.len()).step_by(503) {
        let x = pi.node(i)[0];
        assert!((pi.density[i] - 0.5 * (-x.abs()).exp()).abs() < 1e-8, "x = {x}");
    }
}

#[test]
fn stationary_identity_by_parts() {
    let p = ErlangAParams {
        mu: 1.0,
        theta: 0.5,
        staffing: Staffing::Scaled { load: 1.0, beta: 0.0 },
    };
    let chain = Arc::new(build_erlang_a(&p).unwrap());
    let n = 100.0;
    let dm = build_dm(&scale_chain(chain, n, vec![p.center(n)]).unwrap()).unwrap();
    let pi = dm_stationary_1d_auto(&dm, 400).unwrap();
    let a = dm.avar0()[(0, 0)];
    // A x^k = k F x^{k-1} + ½ a k(k-1) x^{k-2}
    for k in 1..=3i32 {
        let au = |x: &[f64]| {
            let f = dm.drift(x)[0];
            let kf = k as f64;
            kf * f * x[0].powi(k - 1) + 0.5 * a * kf * (kf - 1.0) * if k >= 2 { x[0].powi(k - 2) } else { 0.0 }
        };
        let v = pi.moment(&au).unwrap().value;
        assert!(v.abs() < 1e-6, "k = {k}: {v}");
    }
}

#[test]
fn too_small_box_is_rejected() {
    assert!(matches!(dm_stationary_1d(&ou(2.0), -2.0, 2.0, 400), Err(Error::BoxTooSmall(_))));
}

/// 2×2 Lyapunov equation JΣ + ΣJᵀ + A = 0 solved by hand (Cramer's rule on
/// the three unknowns s11, s12, s22).
fn lyap2(j: [[f64; 2]; 2], a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let m = [
        [2.0 * j[0][0], 2.0 * j[0][1], 0.0],
        [j[1][0], j[0][0] + j[1][1], j[0][1]],
        [0.0, 2.0 * j[1][0], 2.0 * j[1][1]],
    ];
    let rhs = [-a[0][0], -a[0][1], -a[1][1]];
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(m);
    let mut s = [0.0; 3];
    for (c, sc) in s.iter_mut().enumerate() {
        let mut mc = m;
        for r in 0..3 {
            mc[r][c] = rhs[r];
        }
        *sc = det3(mc) / d;
    }
    [[s[0], s[1]], [s[1], s[2]]]
}

fn gaussian2(sigma: [[f64; 2]; 2]) -> impl Fn(&[f64]) -> f64 {
    let det = sigma[0][0] * sigma[1][1] - sigma[0][1] * sigma[1][0];
    let inv = [
        [sigma[1][1] / det, -sigma[0][1] / det],
        [-sigma[1][0] / det, sigma[0][0] / det],
    ];
    move |x: &[f64]| {
        let q = x[0] * (inv[0][0] * x[0] + inv[0][1] * x[1]) + x[1] * (inv[1][0] * x[0] + inv[1][1] * x[1]);
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }
}

#[test]
fn fd_isotropic_ou() {
    let dm = DiffusionModel::new(
        Arc::new(|x: &[f64]| vec![-x[0], -x[1]]),
        DMatrix::from_diagonal_element(2, 2, 2.0),
        1.0,
    )
    .unwrap();
    let pi = dm_stationary_fd(&dm, &FdOptions::default()).unwrap();
    let l1 = pi.l1_distance(&gaussian2([[1.0, 0.0], [0.0, 1.0]]));
    assert!(l1 < 1e-4, "L1 = {l1:e}");
    assert!(pi.refinement_estimate.unwrap() > l1);
}

#[test]
fn fd_linear_drift_matches_lyapunov_gaussian() {
    // R = [[2,0],[-2,2]], ā(0) from the two-phase serial queue at its center
    let j = [[-2.0, 0.0], [2.0, -2.0]];
    let a = [[2.0, -1.0], [-1.0, 2.0]];
    let dm = DiffusionModel::new(
        Arc::new(move |x: &[f64]| vec![j[0][0] * x[0] + j[0][1] * x[1], j[1][0] * x[0] + j[1][1] * x[1]]),
        DMatrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]]),
        1.0,
    )
    .unwrap();
    let pi = dm_stationary_fd(&dm, &FdOptions::default()).unwrap();
    let sigma = lyap2(j, a);
    let l1 = pi.l1_distance(&gaussian2(sigma));
    assert!(l1 < 1e-4, "L1 = {l1:e}");
    let lib = lyapunov_covariance(&DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 2.0, -2.0]), dm.avar0()).unwrap();
    for r in 0..2 {
        for c in 0..2 {
            assert!((lib[(r, c)] - sigma[r][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn fd_rejects_non_dominant_diffusion() {
    let dm = DiffusionModel::new(
        Arc::new(|x: &[f64]| vec![-x[0], -x[1]]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]),
        1.0,
    )
    .unwrap();
    let opts = FdOptions {
        half_widths: Some(vec![6.0, 1.0]),
        cells: 40,
    };
    assert!(dm_stationary_fd(&dm, &opts).is_err());
}

#[test]
fn phase_type_truncation_mass_small() {
    let p = PhaseTypeParams {
        nu: vec![2.0, 2.0],
        routing: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        theta: 0.5,
        beta: 0.0,
    };
    let n = 50.0;
    let chain = Arc::new(build_mphn(&p).unwrap());
    let sc = scale_chain(chain, n, mphn_center(&p, n).unwrap()).unwrap();
    let d = chain_stationary(&sc, &LatticeBox::around(&sc, 8.0)).unwrap();
    assert!(d.truncation_mass_bound < 1e-8, "{:e}", d.truncation_mass_bound);
    let total: f64 = d.probs.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    let m = d.moment(&|x: &[f64]| x[0] * x[0] + x[1] * x[1]).unwrap();
    assert!(m.value > 0.5 && m.value < 5.0, "{}", m.value);
}

#[test]
fn dumps_carry_schema_header() {
    let sc = mm_inf_scaled(1.0, 25.0);
    let d = chain_stationary_bd(&sc, &LatticeBox::new(vec![0], vec![60]).unwrap()).unwrap();
    assert!(d.to_csv().starts_with("# gaplab-schema: 1\nx1,xhat1,prob\n"));
    assert_eq!(d.summary()["schema_version"], 1);
    let pi = dm_stationary_1d(&ou(2.0), -10.0, 10.0, 100).unwrap();
    assert!(pi.to_csv().starts_with("# gaplab-schema: 1\nx1,density\n"));
}
