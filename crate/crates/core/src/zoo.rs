//! Ready-made model families: the Erlang-A queue and the M/PH/n+M queue.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chain::{ChainFamily, Jump, StateDomain};
use crate::error::{Error, Result};
use crate::fluid::{stationary_point, FluidModel};

/// Number of servers as a function of the scale:
/// N^n = round(load·n + beta·√n), or a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Staffing {
    Constant { servers: f64 },
    Scaled { load: f64, beta: f64 },
}

impl Staffing {
    pub fn servers(&self, n: f64) -> f64 {
        match *self {
            Staffing::Constant { servers } => servers,
            Staffing::Scaled { load, beta } => (load * n + beta * n.sqrt()).round(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErlangAParams {
    pub mu: f64,
    pub theta: f64,
    pub staffing: Staffing,
}

impl ErlangAParams {
    fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Model(format!("service rate must be positive, got {}", self.mu)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Model(format!("patience rate must be positive, got {}", self.theta)));
        }
        Ok(())
    }

    /// Root of n − μ(x∧N) − θ(x−N)⁺.
    pub fn center(&self, n: f64) -> f64 {
        let servers = self.staffing.servers(n);
        if n <= self.mu * servers {
            n / self.mu
        } else {
            servers + (n - self.mu * servers) / self.theta
        }
    }
}

/// Birth rate n, death rate μ(x∧N^n) + θ(x − N^n)⁺ on ℤ₊.
pub fn build_erlang_a(p: &ErlangAParams) -> Result<ChainFamily> {
    p.validate()?;
    let p = *p;
    ChainFamily::new(
        "erlang-a",
        1,
        vec![Jump::new("arrival", vec![1]), Jump::new("departure", vec![-1])],
        Arc::new(move |n: f64, x: &[f64], out: &mut [f64]| {
            let servers = p.staffing.servers(n);
            out[0] = n;
            out[1] = p.mu * x[0].min(servers) + p.theta * (x[0] - servers).max(0.0);
        }),
        Arc::new(|_n: f64| StateDomain::new(vec![0.0], vec![f64::INFINITY])),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTypeParams {
    /// Phase rates ν.
    pub nu: Vec<f64>,
    /// Substochastic routing matrix, row-major.
    pub routing: Vec<Vec<f64>>,
    pub theta: f64,
    /// Halfin–Whitt offset: N^n = round(n + beta·√n).
    #[serde(default)]
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct PhDerived {
    pub r: DMatrix<f64>,
    pub mu: f64,
    pub gamma: Vec<f64>,
}

impl PhaseTypeParams {
    pub fn phases(&self) -> usize {
        self.nu.len()
    }

    pub fn routing_matrix(&self) -> DMatrix<f64> {
        let k = self.phases();
        DMatrix::from_fn(k, k, |i, j| self.routing[i][j])
    }

    pub fn servers(&self, n: f64) -> f64 {
        (n + self.beta * n.sqrt()).round()
    }

    fn validate(&self) -> Result<()> {
        let k = self.phases();
        if k == 0 {
            return Err(Error::Model("at least one phase is required".into()));
        }
        if self.nu.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Model(format!("phase rates must be positive, got {:?}", self.nu)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Model(format!("patience rate must be positive, got {}", self.theta)));
        }
        if self.routing.len() != k || self.routing.iter().any(|r| r.len() != k) {
            return Err(Error::Model(format!("routing matrix must be {k}x{k}")));
        }
        for (i, row) in self.routing.iter().enumerate() {
            if row.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Model(format!("routing row {i} has invalid entries {row:?}")));
            }
            if row[i] != 0.0 {
                return Err(Error::Model(format!("routing P[{i}][{i}] must be zero")));
            }
            let s: f64 = row.iter().sum();
            if s > 1.0 + 1e-12 {
                return Err(Error::Model(format!("routing row {i} sums to {s} > 1")));
            }
        }
        Ok(())
    }
}

/// R = (I − Pᵀ)diag(ν), 1/μ = eᵀR⁻¹p, γ = μR⁻¹p, with p = e₁.
pub fn ph_derived(p: &PhaseTypeParams) -> Result<PhDerived> {
    p.validate()?;
    let k = p.phases();
    let pm = p.routing_matrix();
    let r = (DMatrix::identity(k, k) - pm.transpose()) * DMatrix::from_diagonal(&DVector::from_vec(p.nu.clone()));
    let mut e1 = DVector::zeros(k);
    e1[0] = 1.0;
    let w = r
        .clone()
        .lu()
        .solve(&e1)
        .filter(|w| w.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Model("R = (I - P')diag(nu) is singular".into()))?;
    let mean: f64 = w.iter().sum();
    if !(mean > 0.0) {
        return Err(Error::Model(format!("mean service time {mean} is not positive")));
    }
    let mu = 1.0 / mean;
    let gamma: Vec<f64> = w.iter().map(|v| v * mu).collect();
    let s: f64 = gamma.iter().sum();
    if (s - 1.0).abs() > 1e-12 || gamma.iter().any(|g| *g <= 0.0) {
        return Err(Error::Model(format!("phase occupancy vector {gamma:?} is not a positive distribution")));
    }
    Ok(PhDerived { r, mu, gamma })
}

/// Queue length (eᵀx − N)⁺ and in-service counts per phase.
fn in_service(x: &[f64], servers: f64) -> (f64, Vec<f64>) {
    let total: f64 = x.iter().sum();
    let q = (total - servers).max(0.0);
    let mut s = x.to_vec();
    s[0] -= q;
    (q, s)
}

/// The M/PH/n+M chain: arrivals +e₁ at rate n, phase completions routed
/// −e_k + e_j at rate ν_k s_k P_kj, exits −e_k at rate ν_k s_k (1 − Σ_j P_kj),
/// abandonment −e₁ at rate θ q.
pub fn build_mphn(p: &PhaseTypeParams) -> Result<ChainFamily> {
    p.validate()?;
    let k = p.phases();
    let unit = |i: usize| {
        let mut v = vec![0i64; k];
        v[i] = 1;
        v
    };
    #[derive(Clone, Copy)]
    enum Kind {
        Arrival,
        Route(usize, usize),
        Exit(usize),
        Abandon,
    }
    let mut jumps = vec![Jump::new("arrival", unit(0))];
    let mut kinds = vec![Kind::Arrival];
    for a in 0..k {
        for b in 0..k {
            if p.routing[a][b] > 0.0 {
                let mut v = vec![0i64; k];
                v[a] = -1;
                v[b] = 1;
                jumps.push(Jump::new(format!("route-{}-{}", a + 1, b + 1), v));
                kinds.push(Kind::Route(a, b));
            }
        }
        let exit = 1.0 - p.routing[a].iter().sum::<f64>();
        if exit > 0.0 {
            jumps.push(Jump::new(format!("exit-{}", a + 1), unit(a).iter().map(|v| -v).collect()));
            kinds.push(Kind::Exit(a));
        }
    }
    jumps.push(Jump::new("abandon", unit(0).iter().map(|v| -v).collect()));
    kinds.push(Kind::Abandon);
    let nu = p.nu.clone();
    let routing = p.routing.clone();
    let exit: Vec<f64> = routing.iter().map(|r| 1.0 - r.iter().sum::<f64>()).collect();
    let theta = p.theta;
    let params = p.clone();
    let rate = move |n: f64, x: &[f64], out: &mut [f64]| {
        let servers = params.servers(n);
        let (q, s) = in_service(x, servers);
        for (o, kind) in out.iter_mut().zip(&kinds) {
            *o = match *kind {
                Kind::Arrival => n,
                Kind::Route(a, b) => nu[a] * s[a] * routing[a][b],
                Kind::Exit(a) => nu[a] * s[a] * exit[a],
                Kind::Abandon => theta * q,
            };
        }
    };
    let params = p.clone();
    let domain = move |n: f64| {
        let servers = params.servers(n);
        let mut upper = vec![servers; k];
        upper[0] = f64::INFINITY;
        let d = StateDomain::new(vec![0.0; k], upper);
        if k > 1 {
            d.with_predicate(Arc::new(move |x: &[i64]| x[1..].iter().sum::<i64>() as f64 <= servers))
        } else {
            d
        }
    };
    ChainFamily::new(format!("mphn-{k}"), k, jumps, Arc::new(rate), Arc::new(domain))
}

/// Fluid stationary point of the M/PH/n+M chain: (n/μ)γ when the offered
/// load fits in the server pool, a Newton solve otherwise.
pub fn mphn_center(p: &PhaseTypeParams, n: f64) -> Result<Vec<f64>> {
    let der = ph_derived(p)?;
    let servers = p.servers(n);
    if n / der.mu <= servers {
        return Ok(der.gamma.iter().map(|g| n / der.mu * g).collect());
    }
    let chain = Arc::new(build_mphn(p)?);
    let fm = FluidModel::from_chain(chain, n);
    let guess: Vec<f64> = der.gamma.iter().map(|g| g * servers).collect();
    Ok(stationary_point(&fm, &guess)?.point)
}

/// Drift F(X) = n p − R X + (R − θI) p (eᵀX − N)⁺, evaluated directly from
/// the matrix form.
pub fn mphn_drift_closed(p: &PhaseTypeParams, n: f64, x: &[f64]) -> Result<Vec<f64>> {
    let der = ph_derived(p)?;
    let k = p.phases();
    let q = (x.iter().sum::<f64>() - p.servers(n)).max(0.0);
    let xv = DVector::from_column_slice(x);
    let mut e1 = DVector::zeros(k);
    e1[0] = 1.0;
    let th = DMatrix::identity(k, k) * p.theta;
    let f = &e1 * n - &der.r * xv + (&der.r - th) * &e1 * q;
    Ok(f.iter().copied().collect())
}

/// Quadratic-variation matrix written out entrywise:
/// a₁₁ = n + ν₁s₁ + θq + Σ_{i≠1} P_{i1}ν_i s_i,
/// a_kk = ν_k s_k + Σ_{i≠k} P_{ik}ν_i s_i (k ≥ 2),
/// a_kj = −(P_kj ν_k s_k + P_jk ν_j s_j) (k ≠ j).
pub fn mphn_avar_closed(p: &PhaseTypeParams, n: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    p.validate()?;
    let k = p.phases();
    let (q, s) = in_service(x, p.servers(n));
    let pm = &p.routing;
    let nu = &p.nu;
    let mut a = DMatrix::zeros(k, k);
    for r in 0..k {
        let inflow: f64 = (0..k).filter(|&i| i != r).map(|i| pm[i][r] * nu[i] * s[i]).sum();
        a[(r, r)] = nu[r] * s[r] + inflow;
        for c in 0..k {
            if c != r {
                a[(r, c)] = -(pm[r][c] * nu[r] * s[r] + pm[c][r] * nu[c] * s[c]);
            }
        }
    }
    a[(0, 0)] += n + p.theta * q;
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn serial() -> PhaseTypeParams {
        PhaseTypeParams {
            nu: vec![2.0, 2.0],
            routing: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            theta: 0.5,
            beta: 0.0,
        }
    }

    #[test]
    fn erlang_a_rates() {
        let p = ErlangAParams {
            mu: 1.0,
            theta: 0.5,
            staffing: Staffing::Constant { servers: 120.0 },
        };
        let c = build_erlang_a(&p).unwrap();
        assert_eq!(c.drift(100.0, &[0.0]), vec![100.0]);
        assert_eq!(c.rates(100.0, &[120.0])[1], 120.0);
        assert_eq!(p.center(100.0), 100.0);
        assert_eq!(p.center(150.0), 180.0);
        assert_eq!(c.drift(150.0, &[180.0]), vec![0.0]);
        let bad = ErlangAParams { theta: 0.0, ..p };
        assert!(build_erlang_a(&bad).is_err());
    }

    #[test]
    fn ph_single_phase() {
        let p = PhaseTypeParams {
            nu: vec![3.0],
            routing: vec![vec![0.0]],
            theta: 1.0,
            beta: 0.0,
        };
        let d = ph_derived(&p).unwrap();
        assert_eq!(d.r[(0, 0)], 3.0);
        assert!((d.mu - 3.0).abs() < 1e-15);
        assert_eq!(d.gamma, vec![1.0]);
    }

    #[test]
    fn ph_serial_two_phase() {
        let d = ph_derived(&serial()).unwrap();
        let want = [[2.0, 0.0], [-2.0, 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(d.r[(i, j)], want[i][j]);
            }
        }
        assert!((d.mu - 1.0).abs() < 1e-15);
        assert!((d.gamma[0] - 0.5).abs() < 1e-15 && (d.gamma[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ph_rejects_bad_routing() {
        let mut p = serial();
        p.routing[0][0] = 0.5;
        assert!(ph_derived(&p).is_err());
        let mut p = serial();
        p.routing[0][1] = 1.5;
        assert!(ph_derived(&p).is_err());
        // closed loop: no exit anywhere
        let mut p = serial();
        p.routing[1][0] = 1.0;
        assert!(ph_derived(&p).is_err());
    }

    #[test]
    fn mphn_center_is_drift_zero() {
        let p = serial();
        let c = build_mphn(&p).unwrap();
        for n in [25.0, 100.0] {
            let x = mphn_center(&p, n).unwrap();
            assert!(crate::chain::norm(&c.drift(n, &x)) < 1e-9 * n);
        }
        let over = PhaseTypeParams { beta: -1.0, ..p };
        let x = mphn_center(&over, 100.0).unwrap();
        let c = build_mphn(&over).unwrap();
        assert!(crate::chain::norm(&c.drift(100.0, &x)) < 1e-8);
    }
}
