//! One-dimensional Poisson equation A u = −(f − π(f)) of the diffusion model,
//! its Monte-Carlo representation, and empirical gradient-bound constants.

use std::fmt::Write as _;

use serde::Serialize;

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::quad::integrate;
use crate::simulate::{replicate, run_dm};
use crate::steady::ContinuousStationary;

/// Solution on the nodes of the stationary grid, normalized by u(0) = 0.
#[derive(Debug, Clone, Serialize)]
pub struct PoissonSolution {
    pub n: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub d2u: Vec<f64>,
    /// A u + f̌ with u'' from finite differences of u'.
    pub residual: Vec<f64>,
    /// sup |residual| over `valid`.
    pub residual_sup: f64,
    /// Interval where cutting the integrals at the box edges changes u' by
    /// less than 1e-7·(1 + |u'|); outside it u' carries a growing
    /// homogeneous component.
    pub valid: [f64; 2],
    /// π(f) by adaptive quadrature against the unnormalized density.
    pub pi_f: f64,
    /// ∫ f̌ dπ on the stationary grid (should vanish).
    pub centered_mean: f64,
    /// π(u) on the grid; u − π(u) is the solution given by the time-integral
    /// representation.
    pub pi_u: f64,
    /// Mismatch of the left and right representations of u' at the mode,
    /// relative to p(mode).
    pub centering_defect: f64,
    /// Bound on the error in u' caused by cutting the integrals at the box
    /// edges, over `valid`.
    pub tail_bound: f64,
}

impl PoissonSolution {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# gaplab-schema: {}\nx,u,du,d2u,residual\n", crate::SCHEMA_VERSION);
        for i in 0..self.x.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.x[i], self.u[i], self.du[i], self.d2u[i], self.residual[i]
            );
        }
        s
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "n": self.n,
            "nodes": self.x.len(),
            "box": [self.x[0], self.x[self.x.len() - 1]],
            "pi_f": self.pi_f,
            "centered_mean": self.centered_mean,
            "pi_u": self.pi_u,
            "residual_sup": self.residual_sup,
            "valid": self.valid,
            "centering_defect": self.centering_defect,
            "tail_bound": self.tail_bound,
        })
    }

    /// Linear interpolation of u − π(u).
    pub fn representation(&self, x: f64) -> f64 {
        interp(&self.x, &self.u, x) - self.pi_u
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let m = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[m - 1] {
        return ys[m - 1];
    }
    let h = (xs[m - 1] - xs[0]) / (m - 1) as f64;
    let i = (((x - xs[0]) / h) as usize).min(m - 2);
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// u' through the integrating factor, evaluated cell by cell so that no
/// density value is ever formed explicitly (ratios e^{Φ(t) − Φ(y)} only).
struct Representation<'a> {
    dm: &'a DiffusionModel,
    f: &'a dyn Fn(f64) -> f64,
    a: f64,
    c: f64,
    nodes: Vec<f64>,
    phi: Vec<f64>,
    /// ∫_{lo}^{x_i} f̌(t) e^{Φ(t) − Φ(x_i)} dt
    left: Vec<f64>,
    /// ∫_{x_i}^{hi} f̌(t) e^{Φ(t) − Φ(x_i)} dt
    right: Vec<f64>,
    split: usize,
}

const TOL: f64 = 1e-14;

impl<'a> Representation<'a> {
    fn s(&self, y: f64) -> f64 {
        2.0 / self.a * self.dm.drift(&[y])[0]
    }

    /// Φ(y) − Φ(x0).
    fn dphi(&self, x0: f64, y: f64) -> f64 {
        integrate(|t| self.s(t), x0, y, TOL * (1.0 + (y - x0).abs())).0
    }

    fn fc(&self, t: f64) -> f64 {
        (self.f)(t) - self.c
    }

    /// ∫_{x0}^{y} f̌(t) e^{Φ(t) − Φ(anchor)} dt, with anchor ∈ {x0, y}.
    fn weighted(&self, x0: f64, y: f64, anchor: f64) -> f64 {
        integrate(|t| self.fc(t) * self.dphi(anchor, t).exp(), x0, y, TOL * (1.0 + (y - x0).abs())).0
    }

    fn cell(&self, y: f64) -> usize {
        let m = self.nodes.len();
        let h = (self.nodes[m - 1] - self.nodes[0]) / (m - 1) as f64;
        (((y - self.nodes[0]) / h).floor().max(0.0) as usize).min(m - 2)
    }

    fn du(&self, y: f64) -> f64 {
        let i = self.cell(y);
        let (xa, xb) = (self.nodes[i], self.nodes[i + 1]);
        if i < self.split {
            // H(y) = e^{Φ(x_i) − Φ(y)} [H(x_i) + ∫_{x_i}^y f̌ e^{Φ − Φ(x_i)}]
            let h = (-self.dphi(xa, y)).exp() * (self.left[i] + self.weighted(xa, y, xa));
            -2.0 / self.a * h
        } else {
            // G(y) = e^{Φ(x_{i+1}) − Φ(y)} [G(x_{i+1}) + ∫_y^{x_{i+1}} f̌ e^{Φ − Φ(x_{i+1})}]
            let g = self.dphi(y, xb).exp() * (self.right[i + 1] + self.weighted(y, xb, xb));
            2.0 / self.a * g
        }
    }

    fn d2u(&self, y: f64, du: f64) -> f64 {
        -2.0 / self.a * (self.fc(y) + self.dm.drift(&[y])[0] * du)
    }
}

/// Solves A u = −f̌ on the grid of `pi` (a 1-D stationary density of `dm`).
pub fn solve_poisson_1d(dm: &DiffusionModel, f: &dyn Fn(f64) -> f64, pi: &ContinuousStationary) -> Result<PoissonSolution> {
    if dm.dim() != 1 || pi.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: dm.dim().max(pi.dim()),
        });
    }
    let nodes = pi.axes[0].clone();
    let m = nodes.len();
    let a = dm.avar0()[(0, 0)];
    let mut rep = Representation {
        dm,
        f,
        a,
        c: 0.0,
        nodes: nodes.clone(),
        phi: vec![0.0; m],
        left: vec![0.0; m],
        right: vec![0.0; m],
        split: 0,
    };
    for i in 1..m {
        rep.phi[i] = rep.phi[i - 1] + rep.dphi(nodes[i - 1], nodes[i]);
    }
    if rep.phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("potential of the stationary density".into()));
    }
    let mode = (0..m).max_by(|&i, &j| rep.phi[i].total_cmp(&rep.phi[j])).unwrap();
    rep.split = mode.clamp(1, m - 1);
    // centering constant against the continuous density
    let mut z = 0.0;
    let mut zf = 0.0;
    for i in 0..m - 1 {
        let base = rep.phi[i] - rep.phi[mode];
        let (xa, xb) = (nodes[i], nodes[i + 1]);
        let w = |t: f64| (base + rep.dphi(xa, t)).exp();
        z += integrate(w, xa, xb, 1e-15).0;
        zf += integrate(|t| f(t) * w(t), xa, xb, 1e-15).0;
    }
    rep.c = zf / z;
    if !rep.c.is_finite() {
        return Err(Error::NonFinite("π(f)".into()));
    }
    for i in 1..m {
        let decay = (rep.phi[i - 1] - rep.phi[i]).exp();
        rep.left[i] = decay * rep.left[i - 1] + rep.weighted(nodes[i - 1], nodes[i], nodes[i]);
    }
    for i in (0..m - 1).rev() {
        let decay = (rep.phi[i + 1] - rep.phi[i]).exp();
        rep.right[i] = decay * rep.right[i + 1] + rep.weighted(nodes[i], nodes[i + 1], nodes[i]);
    }
    // H(mode) + G(mode) = ∫ f̌ e^{Φ − Φ(mode)} over the box, zero if centered
    let centering_defect = (rep.left[mode] + rep.right[mode]).abs() / z;
    let du: Vec<f64> = nodes.iter().map(|&x| rep.du(x)).collect();
    let d2u: Vec<f64> = nodes.iter().zip(&du).map(|(&x, &g)| rep.d2u(x, g)).collect();
    let mut residual = Vec::with_capacity(m);
    for (i, &x) in nodes.iter().enumerate() {
        let h = 1e-4 * (1.0 + x.abs());
        let central = |h: f64| (rep.du(x + h) - rep.du(x - h)) / (2.0 * h);
        // removes the O(h) term produced by a kink in the drift and leaves
        // O(h²) where u is smooth
        let second = 2.0 * central(0.5 * h) - central(h);
        residual.push(dm.drift(&[x])[0] * du[i] + 0.5 * a * second + rep.fc(x));
    }
    // u by integrating u' from 0
    let zero = (0..m).min_by(|&i, &j| nodes[i].abs().total_cmp(&nodes[j].abs())).unwrap();
    let mut u = vec![0.0; m];
    u[zero] = integrate(|t| rep.du(t), 0.0, nodes[zero], 1e-13).0;
    for i in zero + 1..m {
        u[i] = u[i - 1] + integrate(|t| rep.du(t), nodes[i - 1], nodes[i], 1e-13).0;
    }
    for i in (0..zero).rev() {
        u[i] = u[i + 1] - integrate(|t| rep.du(t), nodes[i], nodes[i + 1], 1e-13).0;
    }
    let weights_mass = |v: &[f64]| -> f64 { (0..m).map(|i| pi.weights[i] * pi.density[i] * v[i]).sum() };
    let fc_nodes: Vec<f64> = nodes.iter().map(|&x| rep.fc(x)).collect();
    let centered_mean = weights_mass(&fc_nodes);
    let pi_u = weights_mass(&u);
    // the mass cut off at either edge changes u'(x) by at most
    // (2/ā)·|f̌(edge)|·(tail mass)/p(x) when |f̌| is monotone beyond the edge
    let p_max = pi.density.iter().copied().fold(0.0, f64::max);
    let edge_f = fc_nodes[0].abs().max(fc_nodes[m - 1].abs());
    let tb: Vec<f64> = (0..m)
        .map(|i| 2.0 / a * edge_f * pi.tail_mass_bound / pi.density[i].max(p_max * f64::MIN_POSITIVE))
        .collect();
    let ok = |i: usize| tb[i] <= 1e-7 * (1.0 + du[i].abs());
    let (first, last) = match ((0..m).find(|&i| ok(i)), (0..m).rev().find(|&i| ok(i))) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::BoxTooSmall("truncation dominates the Poisson solution everywhere".into())),
    };
    let residual_sup = residual[first..=last].iter().fold(0.0f64, |s, r| s.max(r.abs()));
    if !residual_sup.is_finite() {
        return Err(Error::NonFinite("Poisson residual".into()));
    }
    let tail_bound = tb[first..=last].iter().copied().fold(0.0, f64::max);
    let valid = [nodes[first], nodes[last]];
    Ok(PoissonSolution {
        n: dm.n(),
        x: nodes,
        u,
        du,
        d2u,
        residual,
        residual_sup,
        valid,
        pi_f: rep.c,
        centered_mean,
        pi_u,
        centering_defect,
        tail_bound,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McOptions {
    pub horizon: f64,
    pub step: f64,
    pub reps: usize,
    pub seed: u64,
    /// Requested CI half-width; wider intervals are flagged inconclusive.
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McValue {
    pub x: f64,
    pub mean: f64,
    pub std_err: f64,
    /// 95% CI half-width.
    pub half_width: f64,
    pub inconclusive: bool,
}

impl McValue {
    pub fn covers(&self, v: f64) -> bool {
        (self.mean - v).abs() <= self.half_width
    }
}

/// ∫₀^T E_x[f(Ŷ(t)) − pi_f] dt by Euler–Maruyama replication (left-point
/// rule in time). Estimates u(x) − π(u) for the Poisson solution u.
pub fn mc_poisson_value(
    dm: &DiffusionModel,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    pi_f: f64,
    x: &[f64],
    opts: &McOptions,
) -> Result<McValue> {
    if opts.reps < 2 {
        return Err(Error::Config("at least two replicates are required".into()));
    }
    let samples: Result<Vec<f64>> = replicate(opts.seed, opts.reps, |rng, _| {
        let mut acc = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        run_dm(dm, x, opts.horizon, opts.step, false, rng, |t, y| {
            if let Some((t0, v)) = prev {
                acc += v * (t - t0);
            }
            prev = Some((t, f(y) - pi_f));
            true
        })?;
        Ok(acc)
    })
    .into_iter()
    .collect();
    let samples = samples?;
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let std_err = (var / k).sqrt();
    let half_width = 1.96 * std_err;
    Ok(McValue {
        x: x[0],
        mean,
        std_err,
        half_width,
        inconclusive: opts.precision.is_some_and(|p| half_width > p),
    })
}

/// Samples of the closed ball 𝓑_x = B_x(1/(1+|x|)): `per_axis` points along
/// each axis of a cube grid, kept if inside the ball.
fn ball_samples(x: &[f64], radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let d = x.len();
    let k = per_axis.max(2);
    let total = k.pow(d as u32);
    let mut out = Vec::new();
    for idx in 0..total {
        let mut r = idx;
        let mut y = x.to_vec();
        let mut off2 = 0.0;
        for yi in y.iter_mut() {
            let j = r % k;
            r /= k;
            let o = radius * (2.0 * j as f64 / (k - 1) as f64 - 1.0);
            *yi += o;
            off2 += o * o;
        }
        if off2 <= radius * radius * (1.0 + 1e-12) {
            out.push(y);
        }
    }
    out
}

/// Envelope f̄(x) = sup_{𝓑_x}|f| + sup_{y≠z∈𝓑_x}|f(y) − f(z)|/|y − z| by
/// sampling `per_axis` points per axis of the ball (closure included).
pub fn local_lipschitz_profile(f: &dyn Fn(&[f64]) -> f64, xs: &[Vec<f64>], per_axis: usize) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let r = 1.0 / (1.0 + crate::chain::norm(x));
            let pts = ball_samples(x, r, per_axis);
            let vals: Vec<f64> = pts.iter().map(|y| f(y)).collect();
            let sup = vals.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            let mut lip = 0.0f64;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let dist = crate::chain::norm(&pts[i].iter().zip(&pts[j]).map(|(a, b)| a - b).collect::<Vec<_>>());
                    if dist > 0.0 {
                        lip = lip.max((vals[i] - vals[j]).abs() / dist);
                    }
                }
            }
            sup + lip
        })
        .collect()
}

/// Smallest Θ satisfying the three gradient inequalities on the grid, with
/// the weighted local norms evaluated by sampling.
#[derive(Debug, Clone, Serialize)]
pub struct GradientBoundReport {
    pub n: f64,
    pub theta_hat: f64,
    /// Which inequality (1: |Du|, 2: |D²u|, 3: [u]_{2,1}) attains theta_hat.
    pub binding: usize,
    pub at: f64,
    /// Per-node ratios for the three inequalities.
    pub x: Vec<f64>,
    pub ratios: Vec<[f64; 3]>,
}

/// Empirical Θ for a solution over its valid interval. `jump_bound` is ℓ̄ for the Hölder ball
/// B_x(ℓ̄/√n).
pub fn verify_gradient_bounds(
    dm: &DiffusionModel,
    sol: &PoissonSolution,
    f: &dyn Fn(f64) -> f64,
    jump_bound: f64,
) -> Result<GradientBoundReport> {
    let m = sol.x.len();
    let a = dm.avar0()[(0, 0)];
    let fc = |y: f64| f(y) - sol.pi_f;
    let du = |y: f64| interp(&sol.x, &sol.du, y);
    let d2 = |y: f64| -2.0 / a * (fc(y) + dm.drift(&[y])[0] * du(y));
    let urep = |y: f64| sol.representation(y);
    let fsup = sol.x.iter().fold(0.0f64, |s, &y| s.max(fc(y).abs()));
    if fsup <= 1e-12 * (1.0 + sol.pi_f.abs()) {
        // f̌ ≡ 0, so u ≡ 0 and any Θ works
        return Ok(GradientBoundReport {
            n: dm.n(),
            theta_hat: 0.0,
            binding: 0,
            at: 0.0,
            x: Vec::new(),
            ratios: Vec::new(),
        });
    }
    let mut theta = 0.0f64;
    let mut binding = 0;
    let mut at = 0.0;
    let mut xs = Vec::new();
    let mut ratios = Vec::new();
    let stride = (m / 400).max(1);
    for i in (0..m).step_by(stride) {
        let x = sol.x[i];
        if x < sol.valid[0] || x > sol.valid[1] {
            continue;
        }
        let r = 1.0 / (1.0 + x.abs());
        let k = 33;
        let pts: Vec<f64> = (0..k).map(|j| x - r + 2.0 * r * j as f64 / (k - 1) as f64).collect();
        // |u|_{0,𝓑_x} and |f|^{(2)}_{0,1,𝓑_x} with boundary-distance weights
        let u0 = pts.iter().fold(0.0f64, |s, &y| s.max(urep(y).abs()));
        let dist = |y: f64| r - (y - x).abs();
        let mut fw = pts.iter().fold(0.0f64, |s, &y| s.max(dist(y).powi(2) * fc(y).abs()));
        let mut lw = 0.0f64;
        for w in pts.windows(2) {
            let dxy = dist(w[0]).min(dist(w[1]));
            lw = lw.max(dxy.powi(3) * (fc(w[1]) - fc(w[0])).abs() / (w[1] - w[0]));
        }
        fw += lw;
        let scale = u0 + fw;
        // [u]_{2,1} over B_x(ℓ̄/√n)
        let rh = jump_bound / dm.n().sqrt();
        let hp: Vec<f64> = (0..k).map(|j| x - rh + 2.0 * rh * j as f64 / (k - 1) as f64).collect();
        let mut holder = 0.0f64;
        for w in hp.windows(2) {
            holder = holder.max((d2(w[1]) - d2(w[0])).abs() / (w[1] - w[0]));
        }
        let one = 1.0 + x.abs();
        let rr = if scale > 0.0 {
            [
                sol.du[i].abs() / (2.0 * scale * one),
                sol.d2u[i].abs() / (4.0 * scale * one.powi(2)),
                holder / (8.0 * scale * one.powi(3)),
            ]
        } else {
            [0.0; 3]
        };
        for (j, v) in rr.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("gradient ratio at x = {x}")));
            }
            if *v > theta {
                theta = *v;
                binding = j + 1;
                at = x;
            }
        }
        xs.push(x);
        ratios.push(rr);
    }
    Ok(GradientBoundReport {
        n: dm.n(),
        theta_hat: theta,
        binding,
        at,
        x: xs,
        ratios,
    })
}
