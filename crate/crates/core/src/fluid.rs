//! The fluid model ẋ = F^n(x): RK4 integration, stationary-point search,
//! and fluid-level Lyapunov checks on the scaled drift F̂^n.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chain::{center_tolerance, dist, norm, ChainFamily};
use crate::error::{Error, Result};
use crate::lyapunov::{Candidate, Structure};
use crate::VectorField;

/// ẋ = F(x) at a fixed scale.
#[derive(Clone)]
pub struct FluidModel {
    drift: VectorField,
    dim: usize,
    n: f64,
}

impl std::fmt::Debug for FluidModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FluidModel")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .finish()
    }
}

impl FluidModel {
    pub fn new(drift: VectorField, dim: usize, n: f64) -> Self {
        Self { drift, dim, n }
    }

    /// Fluid model of `chain` at scale `n`, using the chain's real extension
    /// of F^n.
    pub fn from_chain(chain: Arc<ChainFamily>, n: f64) -> Self {
        let dim = chain.dim();
        Self::new(Arc::new(move |x: &[f64]| chain.drift(n, x)), dim, n)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        (self.drift)(x)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// CSV with columns `t, x1..xd`.
    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, Vec::len);
        let mut s = String::from("# gaplab-schema: 1\nt");
        for i in 1..=d {
            let _ = write!(s, ",x{i}");
        }
        s.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            let _ = write!(s, "{t}");
            for v in x {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn rk4_step(fm: &FluidModel, x: &[f64], h: f64) -> Vec<f64> {
    let k1 = fm.drift(x);
    let k2 = fm.drift(&axpy(x, 0.5 * h, &k1));
    let k3 = fm.drift(&axpy(x, 0.5 * h, &k2));
    let k4 = fm.drift(&axpy(x, h, &k3));
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Classical RK4 from `x0` over `[0, horizon]` with step `h`; the last step
/// is shortened to land on `horizon`.
pub fn integrate_fm(fm: &FluidModel, x0: &[f64], horizon: f64, h: f64) -> Result<Trajectory> {
    if !(horizon > 0.0 && h > 0.0) {
        return Err(Error::Config(format!(
            "horizon and step must be positive (got T = {horizon}, h = {h})"
        )));
    }
    if x0.len() != fm.dim {
        return Err(Error::Dimension {
            expected: fm.dim,
            got: x0.len(),
        });
    }
    let steps = (horizon / h).ceil().max(1.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.to_vec());
    let mut t = 0.0;
    let mut x = x0.to_vec();
    for k in 1..=steps {
        let t_next = if k == steps { horizon } else { k as f64 * h };
        let next = rk4_step(fm, &x, t_next - t);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t_last: t });
        }
        x = next;
        t = t_next;
        times.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryPoint {
    pub point: Vec<f64>,
    pub residual: f64,
    pub newton_iterations: usize,
}

impl StationaryPoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "schema_version": 1,
            "point": self.point,
            "residual": self.residual,
            "iterations": self.newton_iterations,
        }))
        .unwrap_or_default()
    }
}

fn fd_jacobian(fm: &FluidModel, x: &[f64]) -> DMatrix<f64> {
    let d = fm.dim;
    let mut j = DMatrix::zeros(d, d);
    for k in 0..d {
        let step = 1e-6 * (1.0 + x[k].abs());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += step;
        xm[k] -= step;
        let fp = fm.drift(&xp);
        let fm_ = fm.drift(&xm);
        for i in 0..d {
            j[(i, k)] = (fp[i] - fm_[i]) / (2.0 * step);
        }
    }
    j
}

struct NewtonOutcome {
    x: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
}

fn damped_newton(fm: &FluidModel, x0: &[f64], tol: f64, max_iter: usize) -> NewtonOutcome {
    let mut x = x0.to_vec();
    let mut f = fm.drift(&x);
    let mut r = norm(&f);
    let mut it = 0;
    while it < max_iter {
        if r <= tol {
            return NewtonOutcome {
                x,
                residual: r,
                iterations: it,
                converged: true,
            };
        }
        it += 1;
        let j = fd_jacobian(fm, &x);
        let Some(dx) = j.lu().solve(&DVector::from_iterator(x.len(), f.iter().map(|v| -v))) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-10 {
            let trial = axpy(&x, lambda, dx.as_slice());
            let ft = fm.drift(&trial);
            let rt = norm(&ft);
            if rt.is_finite() && rt <= (1.0 - 1e-4 * lambda) * r {
                x = trial;
                f = ft;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    NewtonOutcome {
        converged: r <= tol,
        x,
        residual: r,
        iterations: it,
    }
}

fn lipschitz_guess(fm: &FluidModel, x: &[f64]) -> f64 {
    let j = fd_jacobian(fm, x);
    j.iter().fold(1e-3f64, |m, v| m.max(v.abs()))
}

/// Flow the FM forward until it settles, in chunks of growing horizon.
fn relax(fm: &FluidModel, x0: &[f64], tol: f64) -> Option<Vec<f64>> {
    let mut x = x0.to_vec();
    let h = 0.2 / lipschitz_guess(fm, x0);
    let mut horizon = 10.0 / lipschitz_guess(fm, x0);
    for _ in 0..8 {
        let traj = integrate_fm(fm, &x, horizon, h.min(horizon)).ok()?;
        x = traj.last().to_vec();
        if norm(&fm.drift(&x)) <= tol {
            break;
        }
        horizon *= 2.0;
    }
    Some(x)
}

/// Locate x̄ with F(x̄) = 0 by damped Newton from `x0`, falling back on
/// long-horizon FM integration when Newton stalls. A second search started
/// from the FM flow of `x0` guards against silently returning one of
/// several roots.
pub fn stationary_point(fm: &FluidModel, x0: &[f64]) -> Result<StationaryPoint> {
    stationary_point_with_tol(fm, x0, center_tolerance(fm.n))
}

pub fn stationary_point_with_tol(fm: &FluidModel, x0: &[f64], tol: f64) -> Result<StationaryPoint> {
    if x0.len() != fm.dim {
        return Err(Error::Dimension {
            expected: fm.dim,
            got: x0.len(),
        });
    }
    let mut found: Vec<StationaryPoint> = Vec::new();
    let mut best: Option<NewtonOutcome> = None;
    let mut starts = vec![x0.to_vec()];
    if let Some(flowed) = relax(fm, x0, tol) {
        starts.push(flowed);
    }
    for start in &starts {
        let mut out = damped_newton(fm, start, tol, 100);
        if !out.converged {
            if let Some(flowed) = relax(fm, &out.x, tol) {
                let again = damped_newton(fm, &flowed, tol, 100);
                out = NewtonOutcome {
                    iterations: out.iterations + again.iterations,
                    ..again
                };
            }
        }
        if out.converged {
            let sp = StationaryPoint {
                point: out.x.clone(),
                residual: out.residual,
                newton_iterations: out.iterations,
            };
            let dup = found
                .iter()
                .any(|p| dist(&p.point, &sp.point) <= 1e-6 * (1.0 + norm(&sp.point)));
            if !dup {
                found.push(sp);
            }
        }
        if best.as_ref().is_none_or(|b| out.residual < b.residual) {
            best = Some(out);
        }
    }
    match found.len() {
        1 => Ok(found.pop().unwrap()),
        0 => {
            let b = best.expect("at least one start");
            Err(Error::NoConvergence {
                iterations: b.iterations,
                residual: b.residual,
                best: b.x,
            })
        }
        _ => Err(Error::MultipleRoots(found.into_iter().map(|p| p.point).collect())),
    }
}

/// A scaled drift F̂^n tagged with its scale.
#[derive(Clone)]
pub struct ScaledDrift {
    pub n: f64,
    pub drift: VectorField,
}

#[derive(Debug, Clone, Serialize)]
pub struct FmCounterexample {
    pub n: f64,
    pub x: Vec<f64>,
    /// F̂(x)ᵀ DV(x).
    pub lhs: f64,
    /// V(x) − V(0).
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FmLyapunovReport {
    /// Largest η with F̂ᵀDV ≤ −η (V − V(0)) on the grid, over all scales.
    pub eta: f64,
    /// sup of |D²V|/V over the outer shell of the grid.
    pub d2_ratio_sup: f64,
    /// The same ratio on the inner half of the outer shell, for trend.
    pub d2_ratio_inner: f64,
    /// Polynomial candidates whose Hessian has lower degree than V satisfy
    /// the limsup-zero condition structurally.
    pub limsup_structural: bool,
    pub passed: bool,
    pub counterexample: Option<FmCounterexample>,
}

/// Check F̂^nᵀ DV ≤ −η (V − V(0)) over `grid` for every scale in `family`.
pub fn check_fm_lyapunov(
    cand: &dyn Candidate,
    family: &[ScaledDrift],
    grid: &[Vec<f64>],
) -> Result<FmLyapunovReport> {
    let zero = vec![0.0; cand.dim()];
    let v0 = cand.value(&zero);
    let mut eta = f64::INFINITY;
    let mut counter: Option<FmCounterexample> = None;
    for sd in family {
        for x in grid {
            if x.len() != cand.dim() {
                return Err(Error::Dimension {
                    expected: cand.dim(),
                    got: x.len(),
                });
            }
            if norm(x) == 0.0 {
                continue;
            }
            let dv = cand.gradient(x);
            let f = (sd.drift)(x);
            let lhs: f64 = dv.iter().zip(&f).map(|(a, b)| a * b).sum();
            let rhs = cand.value(x) - v0;
            if rhs <= 0.0 {
                return Err(Error::Hypothesis(format!(
                    "candidate is not above V(0) at {x:?}"
                )));
            }
            let ratio = -lhs / rhs;
            if ratio < eta {
                eta = ratio;
                if ratio <= 0.0 {
                    counter = Some(FmCounterexample {
                        n: sd.n,
                        x: x.clone(),
                        lhs,
                        rhs,
                    });
                }
            }
        }
    }
    let rmax = grid.iter().map(|x| norm(x)).fold(0.0, f64::max);
    let shell = |lo: f64, hi: f64| {
        grid.iter()
            .filter(|x| {
                let r = norm(x);
                r >= lo * rmax && r <= hi * rmax
            })
            .map(|x| cand.hessian(x).norm() / cand.value(x))
            .fold(0.0, f64::max)
    };
    let limsup_structural = matches!(cand.structure(), Structure::Polynomial { degree } if degree >= 1);
    let passed = eta > 0.0 && eta.is_finite();
    Ok(FmLyapunovReport {
        eta,
        d2_ratio_sup: shell(0.8, 1.0),
        d2_ratio_inner: shell(0.4, 0.5),
        limsup_structural,
        passed,
        counterexample: if passed { None } else { counter },
    })
}
