//! Uniform Lyapunov condition for the diffusion family, sub-exponential
//! growth, the transfer condition to the chain, and moment bounds.

mod candidate;

pub use candidate::{
    parse_candidate, power_candidate, AsField, Candidate, ExpQuad, ExprCandidate, Poly1, Power,
    QuadForm, Structure,
};

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{norm, ChainFamily};
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};

use candidate::tensor_norm;

/// Unit directions used to sweep ℝ^d radially.
pub fn directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match dim {
        0 => vec![],
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci sphere
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out: Vec<Vec<f64>> = Vec::with_capacity(count + 2 * dim);
            for i in 0..dim {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; dim];
                    e[i] = s;
                    out.push(e);
                }
            }
            while out.len() < count.max(2 * dim) {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let r = norm(&v);
                if r > 1e-12 {
                    out.push(v.into_iter().map(|c| c / r).collect());
                }
            }
            out
        }
    }
}

fn scaled(u: &[f64], r: f64) -> Vec<f64> {
    u.iter().map(|c| c * r).collect()
}

fn av(dm: &DiffusionModel, cand: &dyn Candidate, x: &[f64]) -> f64 {
    dm.generator_from_derivatives(x, &cand.gradient(x), &cand.hessian(x))
}

#[derive(Debug, Clone)]
pub struct UlOptions {
    pub delta_trial: f64,
    pub outer_radius: f64,
    /// Radial nodes per direction on [0, outer_radius].
    pub radial_points: usize,
    /// Directions for d ≥ 2.
    pub directions: usize,
    pub seed: u64,
}

impl Default for UlOptions {
    fn default() -> Self {
        Self {
            delta_trial: 1.0,
            outer_radius: 20.0,
            radial_points: 400,
            directions: 180,
            seed: 0x1ee7,
        }
    }
}

/// How the region beyond the outer radius was handled.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailEvidence {
    /// Along every direction the drift is affine and A V + δV is a
    /// polynomial whose coefficients force it negative for all larger radii.
    Structural,
    /// Only the sampled grid was checked.
    FiniteEvidence { reason: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct UlCertificate {
    pub candidate: String,
    pub delta: f64,
    pub b: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub n_grid: Vec<f64>,
    pub margin: f64,
    /// Largest δ found certifiable when searching above the trial value.
    pub delta_sup: f64,
    pub outer_radius: f64,
    pub tail: TailEvidence,
    pub attestations: Vec<String>,
}

impl UlCertificate {
    /// The moment bound b/δ.
    pub fn moment_bound(&self) -> f64 {
        self.b / self.delta
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "certificate": self,
        }))
        .expect("serializable")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UlCounterexample {
    pub candidate: String,
    pub delta: f64,
    pub n: f64,
    pub x: Vec<f64>,
    /// A V(x) + δ V(x) at the offending point.
    pub value: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum UlOutcome {
    Certified(UlCertificate),
    Counterexample(UlCounterexample),
}

impl UlOutcome {
    pub fn certificate(&self) -> Option<&UlCertificate> {
        match self {
            UlOutcome::Certified(c) => Some(c),
            UlOutcome::Counterexample(_) => None,
        }
    }

    pub fn is_certified(&self) -> bool {
        self.certificate().is_some()
    }
}

/// Polynomial coefficients of t ↦ A V(R + t) and t ↦ V(R + t) along a ray.
#[derive(Debug, Clone)]
struct TailPoly {
    av: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Ray {
    n: f64,
    dm: usize,
    u: Vec<f64>,
    av: Vec<f64>,
    v: Vec<f64>,
    tail: std::result::Result<TailPoly, String>,
}

/// Newton interpolation on nodes 0..=p converted to monomial coefficients in
/// the node variable τ.
fn monomial_from_samples(y: &[f64]) -> Vec<f64> {
    let p = y.len() - 1;
    let mut dd = y.to_vec();
    for k in 1..=p {
        for i in (k..=p).rev() {
            dd[i] = (dd[i] - dd[i - 1]) / k as f64;
        }
    }
    // Horner on Newton form: c(τ) = dd[p]; c = c·(τ − i) + dd[i]
    let mut c = vec![dd[p]];
    for i in (0..p).rev() {
        let mut next = vec![0.0; c.len() + 1];
        for (k, &ck) in c.iter().enumerate() {
            next[k + 1] += ck;
            next[k] -= ck * i as f64;
        }
        next[0] += dd[i];
        c = next;
    }
    c
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)
}

/// Coefficients of τ ↦ c(τ0 + τ).
fn poly_shift(c: &[f64], t0: f64) -> Vec<f64> {
    let mut out = c.to_vec();
    let n = out.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            out[j] += t0 * out[j + 1];
        }
    }
    out
}

/// Sufficient condition for c(τ) ≤ 0 on τ ≥ 0 via weighted AM-GM applied to
/// the positive middle coefficients.
fn poly_nonpositive_on_halfline(c: &[f64]) -> bool {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return true;
    }
    let mut q = c.len() - 1;
    while q > 0 && c[q].abs() <= 1e-12 * scale {
        q -= 1;
    }
    if q == 0 {
        return c[0] <= 0.0;
    }
    let qf = q as f64;
    let mut low = c[0];
    let mut high = c[q];
    for (k, &ck) in c.iter().enumerate().take(q).skip(1) {
        if ck > 0.0 {
            low += ck * (1.0 - k as f64 / qf);
            high += ck * (k as f64 / qf);
        }
    }
    low <= 0.0 && high < 0.0
}

fn build_tail(
    dm: &DiffusionModel,
    cand: &dyn Candidate,
    u: &[f64],
    r: f64,
    degree: u32,
) -> std::result::Result<TailPoly, String> {
    // drift affine along the ray beyond r
    let f: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0]
        .iter()
        .map(|s| dm.drift(&scaled(u, s * r)))
        .collect();
    let scale = f.iter().map(|v| norm(v)).fold(1.0, f64::max);
    for w in f.windows(3) {
        for i in 0..u.len() {
            if (w[2][i] - 2.0 * w[1][i] + w[0][i]).abs() > 1e-9 * scale {
                return Err(format!("drift is not affine beyond radius {r} along {u:?}"));
            }
        }
    }
    let p = degree.max(1) as usize;
    let s = r / p as f64;
    let nodes: Vec<f64> = (0..=p + 1).map(|j| r + s * j as f64).collect();
    let av_y: Vec<f64> = nodes.iter().map(|&t| av(dm, cand, &scaled(u, t))).collect();
    let v_y: Vec<f64> = nodes.iter().map(|&t| cand.value(&scaled(u, t))).collect();
    let av_c = monomial_from_samples(&av_y[..=p]);
    let v_c = monomial_from_samples(&v_y[..=p]);
    for (c, y) in [(&av_c, &av_y), (&v_c, &v_y)] {
        let want = y[p + 1];
        let got = poly_eval(c, (p + 1) as f64);
        let mag = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if (got - want).abs() > 1e-7 * mag {
            return Err(format!("A V is not polynomial of degree {p} along {u:?}"));
        }
    }
    Ok(TailPoly { av: av_c, v: v_c })
}

/// Check the tail polynomial c(τ) = AV + δV for τ ≥ 0, extending the sampled
/// region geometrically when the coefficient test is inconclusive at τ = 0.
fn tail_ok(tail: &TailPoly, delta: f64) -> std::result::Result<(), f64> {
    let c: Vec<f64> = tail.av.iter().zip(&tail.v).map(|(a, v)| a + delta * v).collect();
    let mut t0 = 0.0;
    let mut sampled_to = 0.0;
    for _ in 0..12 {
        // sample the stretch [sampled_to, t0]
        let steps = 200;
        for j in 0..=steps {
            let t = sampled_to + (t0 - sampled_to) * j as f64 / steps as f64;
            if poly_eval(&c, t) > 0.0 {
                return Err(t);
            }
        }
        sampled_to = t0;
        if poly_nonpositive_on_halfline(&poly_shift(&c, t0)) {
            return Ok(());
        }
        t0 = if t0 == 0.0 { 1.0 } else { 2.0 * t0 };
    }
    Err(t0)
}

/// Outcome of one δ trial: (K, b, margin, location of b) or a counterexample.
struct Trial {
    k: f64,
    b: f64,
    b_at: (usize, usize),
    margin: f64,
}

struct Sweep<'a> {
    family: &'a [DiffusionModel],
    cand: &'a dyn Candidate,
    rays: Vec<Ray>,
    radii: Vec<f64>,
    structural: std::result::Result<(), String>,
}

impl Sweep<'_> {
    fn g_at(&self, ray: &Ray, r: f64, delta: f64) -> f64 {
        let x = scaled(&ray.u, r);
        av(&self.family[ray.dm], self.cand, &x) + delta * self.cand.value(&x)
    }

    fn trial(&self, delta: f64) -> std::result::Result<Trial, UlCounterexample> {
        let mut k = 0.0f64;
        let mut b = f64::NEG_INFINITY;
        let mut b_at = (0, 0);
        let m = self.radii.len();
        let counter = |ray: &Ray, r: f64, value: f64, reason: String| UlCounterexample {
            candidate: self.cand.describe(),
            delta,
            n: ray.n,
            x: scaled(&ray.u, r),
            value,
            reason,
        };
        for (ri, ray) in self.rays.iter().enumerate() {
            let g: Vec<f64> = ray.av.iter().zip(&ray.v).map(|(a, v)| a + delta * v).collect();
            if g.iter().any(|v| !v.is_finite()) {
                let j = g.iter().position(|v| !v.is_finite()).unwrap();
                return Err(counter(ray, self.radii[j], g[j], "non-finite generator value".into()));
            }
            if g[m - 1] > 0.0 {
                return Err(counter(
                    ray,
                    self.radii[m - 1],
                    g[m - 1],
                    format!("A V + δV > 0 at the outer radius along direction {:?}", ray.u),
                ));
            }
            if let Ok(tail) = &ray.tail {
                if let Err(t) = tail_ok(tail, delta) {
                    let r = self.radii[m - 1] * (1.0 + t / tail.v.len().max(2) as f64);
                    return Err(counter(
                        ray,
                        r,
                        self.g_at(ray, r, delta),
                        format!("UL not certifiable for this candidate: tail dominance fails along direction {:?}", ray.u),
                    ));
                }
            }
            if let Some(last) = g.iter().rposition(|&v| v > 0.0) {
                // bisection between the last positive node and the next one
                let (mut lo, mut hi) = (self.radii[last], self.radii[last + 1]);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if self.g_at(ray, mid, delta) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                k = k.max(hi);
            }
            for (j, &v) in g.iter().enumerate() {
                if v > b {
                    b = v;
                    b_at = (ri, j);
                }
            }
        }
        let mut margin = f64::INFINITY;
        for ray in &self.rays {
            for (j, &r) in self.radii.iter().enumerate() {
                if r > k {
                    margin = margin.min(-(ray.av[j] + delta * ray.v[j]));
                }
            }
        }
        Ok(Trial { k, b, b_at, margin })
    }

    /// Refine the maximum of g near a grid maximizer by golden-section search.
    fn refine_b(&self, t: &Trial, delta: f64) -> f64 {
        let (ri, j) = t.b_at;
        let ray = &self.rays[ri];
        let lo0 = if j == 0 { 0.0 } else { self.radii[j - 1] };
        let hi0 = self.radii[(j + 1).min(self.radii.len() - 1)];
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo0, hi0);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut gc, mut gd) = (self.g_at(ray, c, delta), self.g_at(ray, d, delta));
        for _ in 0..60 {
            if gc > gd {
                b = d;
                d = c;
                gd = gc;
                c = b - phi * (b - a);
                gc = self.g_at(ray, c, delta);
            } else {
                a = c;
                c = d;
                gc = gd;
                d = a + phi * (b - a);
                gd = self.g_at(ray, d, delta);
            }
        }
        t.b.max(gc).max(gd)
    }
}

fn sweep<'a>(family: &'a [DiffusionModel], cand: &'a dyn Candidate, opts: &UlOptions) -> Result<Sweep<'a>> {
    let Some(first) = family.first() else {
        return Err(Error::Config("empty scale grid".into()));
    };
    let d = first.dim();
    if cand.dim() != d || family.iter().any(|dm| dm.dim() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: cand.dim(),
        });
    }
    if !(opts.outer_radius > 0.0 && opts.outer_radius.is_finite()) || opts.radial_points < 4 {
        return Err(Error::Config("outer radius must be positive with at least 4 radial points".into()));
    }
    let m = opts.radial_points;
    let radii: Vec<f64> = (0..m).map(|j| opts.outer_radius * j as f64 / (m - 1) as f64).collect();
    let dirs = directions(d, opts.directions, opts.seed);
    let jobs: Vec<(usize, Vec<f64>)> = (0..family.len())
        .flat_map(|i| dirs.iter().map(move |u| (i, u.clone())))
        .collect();
    let structure = cand.structure();
    let rays: Vec<Ray> = jobs
        .into_par_iter()
        .map(|(i, u)| {
            let dm = &family[i];
            let mut avs = Vec::with_capacity(m);
            let mut vs = Vec::with_capacity(m);
            for &r in &radii {
                let x = scaled(&u, r);
                avs.push(av(dm, cand, &x));
                vs.push(cand.value(&x));
            }
            let tail = match structure {
                Structure::Polynomial { degree } => build_tail(dm, cand, &u, opts.outer_radius, degree),
                Structure::Smooth => Err("candidate is not polynomial".to_string()),
            };
            Ray {
                n: dm.n(),
                dm: i,
                u,
                av: avs,
                v: vs,
                tail,
            }
        })
        .collect();
    let structural = match rays.iter().find_map(|r| r.tail.as_ref().err()) {
        Some(e) => Err(e.clone()),
        None => Ok(()),
    };
    if let Some(bad) = rays.iter().find(|r| r.v.iter().any(|&v| !(v >= 1.0))) {
        let j = bad.v.iter().position(|&v| !(v >= 1.0)).unwrap();
        return Err(Error::Hypothesis(format!(
            "candidate must satisfy V >= 1; V = {} at {:?}",
            bad.v[j],
            scaled(&bad.u, radii[j])
        )));
    }
    Ok(Sweep {
        family,
        cand,
        rays,
        radii,
        structural,
    })
}

/// Search for (δ, b, K), uniform over `family`, with A V ≤ −δV + b on the
/// ball B̄₀(K) and A V ≤ −δV outside it.
///
/// δ = `delta_trial` is used when certifiable; otherwise δ is bisected down
/// toward 10⁻⁴. The largest certifiable δ up to twice the trial value is
/// reported as `delta_sup`.
pub fn check_ul(family: &[DiffusionModel], cand: &dyn Candidate, opts: &UlOptions) -> Result<UlOutcome> {
    if !(opts.delta_trial > 0.0 && opts.delta_trial.is_finite()) {
        return Err(Error::Config("delta_trial must be positive".into()));
    }
    let sw = sweep(family, cand, opts)?;
    let (delta, trial) = match sw.trial(opts.delta_trial) {
        Ok(t) => (opts.delta_trial, t),
        Err(first_counter) => {
            let floor = 1e-4;
            match sw.trial(floor) {
                Err(_) => return Ok(UlOutcome::Counterexample(first_counter)),
                Ok(t_floor) => {
                    let (mut lo, mut hi) = (floor, opts.delta_trial);
                    let mut best = t_floor;
                    for _ in 0..40 {
                        let mid = 0.5 * (lo + hi);
                        match sw.trial(mid) {
                            Ok(t) => {
                                lo = mid;
                                best = t;
                            }
                            Err(_) => hi = mid,
                        }
                    }
                    (lo, best)
                }
            }
        }
    };
    let mut delta_sup = delta;
    if delta == opts.delta_trial {
        let (mut lo, mut hi) = (delta, 2.0 * delta);
        if sw.trial(hi).is_ok() {
            lo = hi;
        } else {
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if sw.trial(mid).is_ok() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        delta_sup = lo;
    }
    let b = sw.refine_b(&trial, delta).max(0.0);
    let tail = match &sw.structural {
        Ok(()) => TailEvidence::Structural,
        Err(reason) => TailEvidence::FiniteEvidence { reason: reason.clone() },
    };
    Ok(UlOutcome::Certified(UlCertificate {
        candidate: cand.describe(),
        delta,
        b,
        k: trial.k,
        n_grid: family.iter().map(|dm| dm.n()).collect(),
        margin: trial.margin,
        delta_sup,
        outer_radius: opts.outer_radius,
        tail,
        attestations: Vec::new(),
    }))
}

/// Re-check a certificate on `family` (typically a single scale from its grid)
/// with the same (δ, b, K).
pub fn verify_ul(
    family: &[DiffusionModel],
    cand: &dyn Candidate,
    cert: &UlCertificate,
    opts: &UlOptions,
) -> Result<bool> {
    let sw = sweep(family, cand, opts)?;
    let tol = 1e-9 * (1.0 + cert.b.abs());
    for ray in &sw.rays {
        for (j, &r) in sw.radii.iter().enumerate() {
            let g = ray.av[j] + cert.delta * ray.v[j];
            if g > cert.b + tol || (r > cert.k && g > 0.0) {
                return Ok(false);
            }
        }
        if let Ok(tail) = &ray.tail {
            if tail_ok(tail, cert.delta).is_err() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Sub-exponential constants: max(|DV|, |D²V|) ≤ c₁ e^{c₂|x|} and
/// V(x + y) ≤ c₃ V(x) for |y| ≤ 1.
#[derive(Debug, Clone, Serialize)]
pub struct SubexpReport {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub structural: bool,
    pub sample_radius: f64,
}

#[derive(Debug, Clone)]
pub struct GrowthOptions {
    pub radius: f64,
    pub radial_points: usize,
    pub directions: usize,
    pub seed: u64,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        Self {
            radius: 60.0,
            radial_points: 600,
            directions: 72,
            seed: 0x5ab,
        }
    }
}

fn radial_points(dim: usize, opts: &GrowthOptions) -> Vec<Vec<f64>> {
    let dirs = directions(dim, opts.directions, opts.seed);
    let mut pts = vec![vec![0.0; dim]];
    for j in 1..=opts.radial_points {
        let r = opts.radius * j as f64 / opts.radial_points as f64;
        for u in &dirs {
            pts.push(scaled(u, r));
        }
    }
    pts
}

fn envelope(cand: &dyn Candidate, x: &[f64]) -> f64 {
    norm(&cand.gradient(x)).max(cand.hessian(x).norm())
}

pub fn check_subexponential(cand: &dyn Candidate, opts: &GrowthOptions) -> Result<SubexpReport> {
    let d = cand.dim();
    let pts = radial_points(d, opts);
    if let Some(x) = pts.iter().find(|x| !(cand.value(x) >= 1.0)) {
        return Err(Error::Hypothesis(format!(
            "candidate must satisfy V >= 1; V = {} at {x:?}",
            cand.value(x)
        )));
    }
    let structural = matches!(cand.structure(), Structure::Polynomial { .. });
    let c2 = if structural {
        1.0
    } else {
        // growth exponent ln(envelope)/r on doubling shells
        let dirs = directions(d, opts.directions, opts.seed);
        let rates: Vec<f64> = [0.125, 0.25, 0.5, 1.0]
            .iter()
            .map(|s| {
                let r = s * opts.radius;
                dirs.iter()
                    .map(|u| envelope(cand, &scaled(u, r)).max(1.0).ln() / r)
                    .fold(0.0, f64::max)
            })
            .collect();
        if rates.iter().any(|v| !v.is_finite()) || (rates[3] > 1.2 * rates[2] && rates[2] > 1.2 * rates[1]) {
            return Err(Error::Hypothesis(format!(
                "derivatives of {} grow faster than any exponential (log-growth rates {rates:?})",
                cand.describe()
            )));
        }
        1.1 * rates[3] + 1e-3
    };
    let c1 = pts
        .iter()
        .map(|x| envelope(cand, x) * (-c2 * norm(x)).exp())
        .fold(0.0, f64::max);
    let shifts: Vec<Vec<f64>> = {
        let mut s = vec![vec![0.0; d]];
        for u in directions(d, opts.directions.min(36), opts.seed ^ 1) {
            for r in [0.25, 0.5, 0.75, 1.0] {
                s.push(scaled(&u, r));
            }
        }
        s
    };
    let ratio_sup = |lo: f64, hi: f64| {
        pts.iter()
            .filter(|x| {
                let r = norm(x);
                r >= lo && r <= hi
            })
            .map(|x| {
                let v = cand.value(x);
                shifts
                    .iter()
                    .map(|y| {
                        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
                        cand.value(&z) / v
                    })
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };
    let c3 = ratio_sup(0.0, opts.radius);
    if !c3.is_finite() {
        return Err(Error::Hypothesis("V(x+y)/V(x) is not finite on the grid".into()));
    }
    if !structural {
        let outer = ratio_sup(0.5 * opts.radius, opts.radius);
        let mid = ratio_sup(0.25 * opts.radius, 0.5 * opts.radius);
        if outer > 1.05 * mid && outer > 2.0 {
            return Err(Error::Hypothesis(format!(
                "sup V(x+y)/V(x) keeps growing with |x| ({mid:.3e} -> {outer:.3e})"
            )));
        }
    }
    if !(c1.is_finite()) {
        return Err(Error::Hypothesis("derivative envelope is not finite".into()));
    }
    Ok(SubexpReport {
        c1,
        c2,
        c3,
        structural,
        sample_radius: opts.radius,
    })
}

/// Constant C in (|DV| + |D²V| + |D³V|)(1 + |x|) ≤ C V(x).
#[derive(Debug, Clone, Serialize)]
pub struct DmToCtmcReport {
    pub c: f64,
    pub worst_x: Vec<f64>,
    pub structural: bool,
    pub n_grid: Vec<f64>,
    /// max over the grid of ℓ̄/√n, the radius of the Taylor neighbourhood.
    pub neighbourhood_radius: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum DmToCtmcOutcome {
    Certified(DmToCtmcReport),
    Counterexample { x: Vec<f64>, ratio: f64, reason: String },
}

pub fn check_dm_to_ctmc(
    cand: &dyn Candidate,
    n_grid: &[f64],
    jump_bound: f64,
    opts: &GrowthOptions,
) -> Result<DmToCtmcOutcome> {
    let d = cand.dim();
    let pts = radial_points(d, opts);
    let ratio = |x: &[f64]| -> Result<f64> {
        let t = cand.third(x).ok_or_else(|| {
            Error::Hypothesis(format!("candidate {} exposes no third derivative", cand.describe()))
        })?;
        let s = norm(&cand.gradient(x)) + cand.hessian(x).norm() + tensor_norm(&t);
        Ok(s * (1.0 + norm(x)) / cand.value(x))
    };
    let mut c = 0.0;
    let mut worst = pts[0].clone();
    let mut shell = [0.0f64; 2];
    for x in &pts {
        let r = ratio(x)?;
        if !r.is_finite() {
            return Ok(DmToCtmcOutcome::Counterexample {
                x: x.clone(),
                ratio: r,
                reason: "non-finite derivative ratio".into(),
            });
        }
        if r > c {
            c = r;
            worst = x.clone();
        }
        let rx = norm(x);
        if rx >= 0.5 * opts.radius {
            shell[1] = shell[1].max(r);
        } else if rx >= 0.25 * opts.radius {
            shell[0] = shell[0].max(r);
        }
    }
    let structural = matches!(cand.structure(), Structure::Polynomial { .. });
    if !structural && shell[1] > 1.05 * shell[0] {
        return Ok(DmToCtmcOutcome::Counterexample {
            x: worst,
            ratio: c,
            reason: format!(
                "derivative-to-value ratio grows with |x| ({:.3e} -> {:.3e})",
                shell[0], shell[1]
            ),
        });
    }
    let neighbourhood_radius = n_grid
        .iter()
        .map(|n| jump_bound / n.sqrt())
        .fold(0.0, f64::max);
    Ok(DmToCtmcOutcome::Certified(DmToCtmcReport {
        c,
        worst_x: worst,
        structural,
        n_grid: n_grid.to_vec(),
        neighbourhood_radius,
    }))
}

/// Finite-moment attestation for a polynomial candidate on a chain whose
/// total jump rate grows at most linearly.
#[derive(Debug, Clone, Serialize)]
pub struct Attestation {
    pub attested: bool,
    pub note: String,
}

pub fn attest_finite_moments(chain: &ChainFamily, cand: &dyn Candidate, n_grid: &[f64]) -> Attestation {
    if !matches!(cand.structure(), Structure::Polynomial { .. }) {
        return Attestation {
            attested: false,
            note: "candidate is not polynomial; finite moments unverified".into(),
        };
    }
    let d = chain.dim();
    let dirs = directions(d, 32, 7);
    for &n in n_grid {
        let dom = chain.domain(n);
        for u in &dirs {
            let ratio_at = |r: f64| {
                let x: Vec<f64> = u
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (c.abs() * r).clamp(dom.lower[i], dom.upper[i]))
                    .collect();
                let total: f64 = chain.rates(n, &x).iter().sum();
                total / (1.0 + n + norm(&x))
            };
            let (a, b) = (ratio_at(1e3 * (1.0 + n)), ratio_at(1e4 * (1.0 + n)));
            if !(b.is_finite() && b <= 1.5 * a.max(1e-300) + 1e-12) {
                return Attestation {
                    attested: false,
                    note: format!("total jump rate grows superlinearly at n = {n} along {u:?}"),
                };
            }
        }
    }
    Attestation {
        attested: true,
        note: "polynomial V and total jump rate of at most linear growth: finite moments at every t by domination with a linear pure-birth process".into(),
    }
}

/// Outcome of comparing π^n(|f|) with the bound b/δ across scales.
#[derive(Debug, Clone, Serialize)]
pub struct MomentBoundReport {
    pub bound: f64,
    pub values: Vec<(f64, f64)>,
    pub max_value: f64,
    pub passed: bool,
}

/// `values` holds (n, π^n(|f|)) pairs for a test function with |f| ≤ V.
pub fn moment_bound_check(cert: &UlCertificate, values: &[(f64, f64)], tol: f64) -> MomentBoundReport {
    let bound = cert.moment_bound();
    let max_value = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    MomentBoundReport {
        bound,
        values: values.to_vec(),
        max_value,
        passed: values.iter().all(|v| v.1.is_finite() && v.1 <= bound + tol),
    }
}

/// Search ρ + (xᵀQx)^m over a grid of 2×2 matrices Q (normalized Q₁₁ = 1),
/// ordered by distance from the identity; returns the first candidate that
/// certifies. Other dimensions try the identity only.
pub fn search_quadratic_form(
    family: &[DiffusionModel],
    rho: f64,
    m: u32,
    opts: &UlOptions,
) -> Result<(Arc<dyn Candidate>, UlOutcome)> {
    let d = family.first().map(|f| f.dim()).unwrap_or(0);
    let mut qs: Vec<DMatrix<f64>> = vec![DMatrix::identity(d, d)];
    if d == 2 {
        let mut grid = Vec::new();
        for i in -6i32..=6 {
            let q22 = 2f64.powf(i as f64 / 2.0);
            for j in -8i32..=8 {
                let q12 = 0.95 * q22.sqrt() * j as f64 / 8.0;
                let dist = (i as f64 / 2.0).abs() + (j as f64 / 8.0).abs();
                grid.push((dist, DMatrix::from_row_slice(2, 2, &[1.0, q12, q12, q22])));
            }
        }
        grid.sort_by(|a, b| a.0.total_cmp(&b.0));
        qs.extend(grid.into_iter().skip(1).map(|g| g.1));
    }
    let mut last = None;
    for q in qs {
        let cand: Arc<dyn Candidate> = Arc::new(QuadForm::new(rho, q, m)?);
        let out = check_ul(family, cand.as_ref(), opts)?;
        let structural = matches!(
            out.certificate().map(|c| &c.tail),
            Some(TailEvidence::Structural)
        );
        if structural {
            return Ok((cand, out));
        }
        if last.is_none() {
            last = Some((cand, out));
        }
    }
    Ok(last.expect("at least one candidate"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou() -> DiffusionModel {
        DiffusionModel::new(
            Arc::new(|x: &[f64]| vec![-x[0]]),
            DMatrix::from_element(1, 1, 2.0),
            1.0,
        )
        .unwrap()
    }

    fn one_plus_sq() -> Poly1 {
        Poly1::new(vec![1.0, 0.0, 1.0])
    }

    #[test]
    fn newton_to_monomial() {
        let c = monomial_from_samples(&[1.0, 2.0, 5.0, 10.0]);
        // 1 + τ²
        assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12 && (c[2] - 1.0).abs() < 1e-12);
        assert!(c[3].abs() < 1e-12);
        let s = poly_shift(&[1.0, 0.0, 1.0], 2.0);
        assert_eq!(s, vec![5.0, 4.0, 1.0]);
    }

    #[test]
    fn am_gm_test() {
        assert!(poly_nonpositive_on_halfline(&[-1.0, 0.0, -1.0]));
        assert!(poly_nonpositive_on_halfline(&[-1.0, 1.0, -1.0]));
        assert!(!poly_nonpositive_on_halfline(&[-1.0, 3.0, -1.0]));
        assert!(!poly_nonpositive_on_halfline(&[1.0, 0.0, -1.0]));
    }

    #[test]
    fn ou_certificate() {
        let out = check_ul(&[ou()], &one_plus_sq(), &UlOptions::default()).unwrap();
        let c = out.certificate().expect("certified");
        assert_eq!(c.delta, 1.0);
        assert!((c.b - 3.0).abs() < 1e-9, "{}", c.b);
        assert!((c.k - 3f64.sqrt()).abs() < 1e-9, "{}", c.k);
        assert_eq!(c.tail, TailEvidence::Structural);
        assert!(c.margin >= 0.0);
        assert!(c.delta_sup > 1.9 && c.delta_sup <= 2.0, "{}", c.delta_sup);
    }

    #[test]
    fn scaling_v_scales_b() {
        let v = Poly1::new(vec![1.0, 0.0, 1.0]);
        let v3 = Poly1::new(vec![3.0, 0.0, 3.0]);
        let a = check_ul(&[ou()], &v, &UlOptions::default()).unwrap();
        let b = check_ul(&[ou()], &v3, &UlOptions::default()).unwrap();
        let (a, b) = (a.certificate().unwrap(), b.certificate().unwrap());
        assert_eq!(a.delta, b.delta);
        assert!((3.0 * a.b - b.b).abs() < 1e-8);
        assert!((a.k - b.k).abs() < 1e-9);
        assert!((3.0 * a.margin - b.margin).abs() < 1e-8 * (1.0 + b.margin));
    }

    #[test]
    fn unstable_drift_has_counterexample() {
        let dm = DiffusionModel::new(Arc::new(|x: &[f64]| vec![x[0]]), DMatrix::from_element(1, 1, 2.0), 1.0)
            .unwrap();
        match check_ul(&[dm], &one_plus_sq(), &UlOptions::default()).unwrap() {
            UlOutcome::Counterexample(c) => assert!(c.value > 0.0),
            other => panic!("expected counterexample, got {other:?}"),
        }
    }

    #[test]
    fn smooth_candidate_flags_finite_evidence() {
        let v = ExprCandidate::new("1 + x^2", 1).unwrap();
        let out = check_ul(&[ou()], &v, &UlOptions::default()).unwrap();
        let c = out.certificate().unwrap();
        assert!(matches!(c.tail, TailEvidence::FiniteEvidence { .. }));
    }

    #[test]
    fn delta_bisects_down_when_trial_too_large() {
        let opts = UlOptions {
            delta_trial: 3.0,
            ..UlOptions::default()
        };
        let c = check_ul(&[ou()], &one_plus_sq(), &opts).unwrap();
        let c = c.certificate().unwrap();
        assert!(c.delta < 2.0 && c.delta > 1.9, "{}", c.delta);
    }

    #[test]
    fn single_scale_recheck() {
        let fam: Vec<DiffusionModel> = [1.0, 2.0]
            .iter()
            .map(|&k| {
                DiffusionModel::new(
                    Arc::new(move |x: &[f64]| vec![-k * x[0]]),
                    DMatrix::from_element(1, 1, 2.0),
                    k,
                )
                .unwrap()
            })
            .collect();
        let out = check_ul(&fam, &one_plus_sq(), &UlOptions::default()).unwrap();
        let cert = out.certificate().unwrap();
        for dm in &fam {
            assert!(verify_ul(std::slice::from_ref(dm), &one_plus_sq(), cert, &UlOptions::default()).unwrap());
        }
    }

    #[test]
    fn subexp_examples() {
        let r = check_subexponential(&one_plus_sq(), &GrowthOptions::default()).unwrap();
        assert!(r.c3 <= 4.0 && r.c3 > 2.6, "{}", r.c3);
        let one = Poly1::new(vec![1.0]);
        let r = check_subexponential(&one, &GrowthOptions::default()).unwrap();
        assert_eq!(r.c1, 0.0);
        assert_eq!(r.c3, 1.0);
        assert!(check_subexponential(&ExpQuad::new(1, 1.0), &GrowthOptions::default()).is_err());
    }

    #[test]
    fn dm_to_ctmc_examples() {
        let opts = GrowthOptions::default();
        match check_dm_to_ctmc(&one_plus_sq(), &[100.0], 1.0, &opts).unwrap() {
            DmToCtmcOutcome::Certified(r) => {
                assert!(r.c <= 10.0 && r.c > 3.99, "{}", r.c);
                assert!((r.neighbourhood_radius - 0.1).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let quartic = Poly1::new(vec![1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            check_dm_to_ctmc(&quartic, &[100.0], 1.0, &opts).unwrap(),
            DmToCtmcOutcome::Certified(_)
        ));
        let e = ExpQuad::new(1, 1.0);
        let small = GrowthOptions {
            radius: 8.0,
            ..opts
        };
        assert!(matches!(
            check_dm_to_ctmc(&e, &[100.0], 1.0, &small).unwrap(),
            DmToCtmcOutcome::Counterexample { .. }
        ));
    }

    #[test]
    fn moment_bound() {
        let out = check_ul(&[ou()], &one_plus_sq(), &UlOptions::default()).unwrap();
        let cert = out.certificate().unwrap();
        let rep = moment_bound_check(cert, &[(1.0, 1.0)], 1e-9);
        assert!(rep.passed);
        assert!((rep.bound - 3.0).abs() < 1e-9);
        assert!(!moment_bound_check(cert, &[(1.0, 3.5)], 1e-9).passed);
    }

    #[test]
    fn directions_are_unit() {
        for d in 1..=5 {
            for u in directions(d, 50, 3) {
                assert!((norm(&u) - 1.0).abs() < 1e-12);
            }
        }
    }
}
