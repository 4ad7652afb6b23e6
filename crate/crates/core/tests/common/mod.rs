#![allow(dead_code)]

use std::sync::Arc;

use gaplab::chain::{scale_chain, ChainFamily, Jump, ScaledChain, StateDomain};

/// Birth rate `birth(n, x)`, death rate `death(n, x)` on `[lo, hi]`.
pub fn birth_death(
    name: &str,
    lo: f64,
    hi: f64,
    birth: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    death: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> Arc<ChainFamily> {
    Arc::new(
        ChainFamily::new(
            name,
            1,
            vec![Jump::new("up", vec![1]), Jump::new("down", vec![-1])],
            Arc::new(move |n: f64, x: &[f64], out: &mut [f64]| {
                out[0] = birth(n, x[0]);
                out[1] = death(n, x[0]);
            }),
            Arc::new(move |_n: f64| StateDomain::new(vec![lo], vec![hi])),
        )
        .unwrap(),
    )
}

/// M/M/∞ with arrival rate n and per-customer service rate μ.
pub fn mm_inf(mu: f64) -> Arc<ChainFamily> {
    birth_death("mm-inf", 0.0, f64::INFINITY, |n, _| n, move |_, x| mu * x)
}

pub fn mm_inf_scaled(mu: f64, n: f64) -> ScaledChain {
    scale_chain(mm_inf(mu), n, vec![n / mu]).unwrap()
}

/// ln Γ-free Poisson log-pmf by direct summation of logs.
/// Neumaier-compensated sum.
pub fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for t in terms {
        let u = s + t;
        c += if s.abs() >= t.abs() { (s - u) + t } else { (t - u) + s };
        s = u;
    }
    s + c
}

pub fn poisson_log_pmf(lambda: f64, k: u64) -> f64 {
    let terms = (1..=k).map(|j| lambda.ln() - (j as f64).ln());
    compensated_sum(std::iter::once(-lambda).chain(terms))
}
