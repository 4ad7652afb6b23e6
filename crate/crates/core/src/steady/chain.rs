//! Stationary laws of the chain on truncation boxes.

use nalgebra::DMatrix;

use super::solve::{outside_class, stationary_vector, Transition};
use super::{DiscreteStationary, GeometricTail};
use crate::chain::{norm, ScaledChain};
use crate::error::{Error, Result};

/// A rectangle of lattice points `lo ≤ x ≤ hi` (inclusive).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LatticeBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl LatticeBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::Config(format!("invalid lattice box {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// center ± radius·√n in every coordinate, clipped to the domain hull.
    pub fn around(sc: &ScaledChain, radius: f64) -> Self {
        let dom = sc.chain().domain(sc.n());
        let w = radius * sc.sqrt_n();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (k, c) in sc.center().iter().enumerate() {
            let l = (c - w).floor().max(dom.lower[k].ceil());
            let h = (c + w).ceil().min(dom.upper[k].floor());
            lo.push(l as i64);
            hi.push(h.max(l) as i64);
        }
        Self { lo, hi }
    }

    pub fn extents(&self) -> Vec<usize> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a + 1) as usize).collect()
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| v >= a && v <= b)
    }

    pub fn volume(&self) -> usize {
        self.extents().iter().product()
    }
}

fn jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let h = 1e-6 * (1.0 + norm(x));
    let mut j = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    for c in 0..d {
        xp[c] = x[c] + h;
        let fp = f(&xp);
        xp[c] = x[c] - h;
        let fm = f(&xp);
        xp[c] = x[c];
        for r in 0..d {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

/// Largest relaxation time 1/|Re λ| of the drift Jacobian over a few points
/// around the origin (piecewise-linear drifts have a different Jacobian on
/// each side of a kink).
pub fn relaxation_time(drift: &dyn Fn(&[f64]) -> Vec<f64>, dim: usize) -> f64 {
    let mut pts = vec![vec![0.0; dim]];
    for k in 0..dim {
        for s in [0.5, -0.5] {
            let mut e = vec![0.0; dim];
            e[k] = s;
            pts.push(e);
        }
    }
    let mut tau = 0.0f64;
    for p in pts {
        let j = jacobian(drift, &p);
        let slowest = j
            .complex_eigenvalues()
            .iter()
            .map(|z| -z.re)
            .fold(f64::INFINITY, f64::min);
        if slowest > 0.0 && slowest.is_finite() {
            tau = tau.max(1.0 / slowest);
        }
    }
    if tau == 0.0 {
        1.0
    } else {
        tau
    }
}

/// center ± 8·τ·√n, τ the largest drift relaxation time.
pub fn default_box(sc: &ScaledChain, factor: f64) -> LatticeBox {
    let tau = relaxation_time(&|x: &[f64]| sc.drift_hat(x), sc.dim());
    LatticeBox::around(sc, factor * tau)
}

fn clip_to_domain(sc: &ScaledChain, b: &LatticeBox) -> LatticeBox {
    let dom = sc.chain().domain(sc.n());
    let lo: Vec<i64> = b
        .lo
        .iter()
        .enumerate()
        .map(|(k, &v)| (v as f64).max(dom.lower[k].ceil()) as i64)
        .collect();
    let hi: Vec<i64> = b
        .hi
        .iter()
        .enumerate()
        .map(|(k, &v)| ((v as f64).min(dom.upper[k].floor()) as i64).max(lo[k]))
        .collect();
    LatticeBox { lo, hi }
}

fn bd_jumps(sc: &ScaledChain) -> Option<(usize, usize)> {
    let jumps = sc.chain().jumps();
    if sc.dim() != 1 || jumps.len() != 2 {
        return None;
    }
    let up = jumps.iter().position(|j| j.vector == [1])?;
    let down = jumps.iter().position(|j| j.vector == [-1])?;
    Some((up, down))
}

/// Product-form stationary law of a one-dimensional birth–death chain,
/// normalized over `bx`; truncation bounded by a geometric tail at each
/// truncated end.
pub fn chain_stationary_bd(sc: &ScaledChain, bx: &LatticeBox) -> Result<DiscreteStationary> {
    let (up, down) = bd_jumps(sc)
        .ok_or_else(|| Error::Model("product form needs a one-dimensional chain with jumps {+1, -1}".into()))?;
    let chain = sc.chain();
    let n = sc.n();
    let dom = chain.domain(n);
    let bx = clip_to_domain(sc, bx);
    let (lo, hi) = (bx.lo[0], bx.hi[0]);
    let rate = |x: i64| -> Result<(f64, f64)> {
        let r = chain.checked_rates(n, &[x as f64])?;
        Ok((r[up], r[down]))
    };
    let m = (hi - lo + 1) as usize;
    // ratio[k] = p(lo + k) / p(lo + k − 1)
    let mut ratio = vec![1.0; m];
    let mut logp = vec![0.0; m];
    let (mut birth, _) = rate(lo)?;
    for k in 1..m {
        let x = lo + k as i64;
        let (b_next, death) = rate(x)?;
        if death <= 0.0 {
            return Err(Error::NotIrreducible { state: x });
        }
        ratio[k] = birth / death;
        logp[k] = if birth > 0.0 {
            logp[k - 1] + birth.ln() - death.ln()
        } else {
            f64::NEG_INFINITY
        };
        birth = b_next;
    }
    // products of ratios walked outward from the mode keep the relative
    // error of each p at a few ulps per step from the mode
    let mode = (0..m).fold(0, |best, k| if logp[k] > logp[best] { k } else { best });
    let mut probs = vec![0.0; m];
    probs[mode] = 1.0;
    for k in mode + 1..m {
        probs[k] = probs[k - 1] * ratio[k];
    }
    for k in (0..mode).rev() {
        probs[k] = probs[k + 1] / ratio[k + 1];
    }
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    // geometric tails beyond each truncated end
    let mut bound = 0.0;
    let mut boundary = Vec::new();
    let mut tails = Vec::new();
    // the largest of the next few ratios serves as the geometric rate,
    // trusting them to keep decreasing beyond the sampled stretch
    let mut tail = |edge: usize, step: i64, ratios: &[f64]| -> f64 {
        let r = ratios.iter().copied().fold(0.0f64, f64::max);
        if !(r < 1.0) {
            return 1.0;
        }
        tails.push(GeometricTail {
            edge,
            step: vec![step],
            ratio: r,
        });
        probs[edge] * r / (1.0 - r)
    };
    if (hi as f64) < dom.upper[0] {
        let mut ratios = Vec::new();
        for k in 0..8 {
            let x = hi + k;
            let (b, _) = rate(x)?;
            let (_, d) = rate(x + 1)?;
            ratios.push(if d > 0.0 { b / d } else { f64::INFINITY });
        }
        bound += tail(m - 1, 1, &ratios);
        boundary.push(m - 1);
    }
    if (lo as f64) > dom.lower[0] {
        let mut ratios = Vec::new();
        for k in 0..8 {
            let x = lo - k;
            let (_, d) = rate(x)?;
            let (b, _) = rate(x - 1)?;
            ratios.push(if b > 0.0 { d / b } else { f64::INFINITY });
        }
        bound += tail(0, -1, &ratios);
        boundary.push(0);
    }
    Ok(DiscreteStationary {
        n,
        center: sc.center().to_vec(),
        sqrt_n: sc.sqrt_n(),
        states: (lo..=hi).map(|x| vec![x]).collect(),
        probs,
        boundary,
        truncation_mass_bound: bound.min(1.0),
        tails,
        roundoff: 4.0 * f64::EPSILON * (mode.max(m - 1 - mode) as f64 + 2.0),
        method: "birth-death product form",
    })
}

/// Stationary law of the chain censored to `bx` (jumps leaving the box are
/// removed). The truncation bound is the mass of states with censored jumps.
pub fn chain_stationary_general(sc: &ScaledChain, bx: &LatticeBox) -> Result<DiscreteStationary> {
    let chain = sc.chain();
    let n = sc.n();
    let d = sc.dim();
    if bx.lo.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: bx.lo.len(),
        });
    }
    let dom = chain.domain(n);
    let bx = clip_to_domain(sc, bx);
    let ext = bx.extents();
    // slowest axis is the longest one, which keeps the band narrow
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| ext[b].cmp(&ext[a]).then(a.cmp(&b)));
    let vol = bx.volume();
    if vol > 50_000_000 {
        return Err(Error::Refused(format!("truncation box has {vol} lattice points")));
    }
    let mut index = vec![usize::MAX; vol];
    let mut states: Vec<Vec<i64>> = Vec::new();
    let flat = |x: &[i64]| -> usize {
        order
            .iter()
            .fold(0usize, |acc, &k| acc * ext[k] + (x[k] - bx.lo[k]) as usize)
    };
    let mut cur = bx.lo.clone();
    'enumerate: loop {
        if dom.contains(&cur) {
            index[flat(&cur)] = states.len();
            states.push(cur.clone());
        }
        for &k in order.iter().rev() {
            if cur[k] < bx.hi[k] {
                cur[k] += 1;
                continue 'enumerate;
            }
            cur[k] = bx.lo[k];
        }
        break;
    }
    if states.is_empty() {
        return Err(Error::Config("truncation box contains no states".into()));
    }
    let jumps = chain.jumps();
    let mut trans = Vec::new();
    let mut censored = vec![false; states.len()];
    let mut rates = vec![0.0; jumps.len()];
    let mut target = vec![0i64; d];
    for (i, s) in states.iter().enumerate() {
        let x: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        chain.rates_into(n, &x, &mut rates);
        for (j, jump) in jumps.iter().enumerate() {
            let r = rates[j];
            if !r.is_finite() {
                return Err(Error::NonFiniteRate {
                    jump: jump.name.clone(),
                    x,
                });
            }
            if r < 0.0 {
                return Err(Error::NegativeRate {
                    jump: jump.name.clone(),
                    x,
                    rate: r,
                });
            }
            if r == 0.0 {
                continue;
            }
            for k in 0..d {
                target[k] = s[k] + jump.vector[k];
            }
            if !dom.contains(&target) {
                return Err(Error::Model(format!(
                    "jump `{}` has positive rate {r} at {s:?} but leaves the state space",
                    jump.name
                )));
            }
            if bx.contains(&target) {
                trans.push(Transition {
                    from: i,
                    to: index[flat(&target)],
                    rate: r,
                });
            } else {
                censored[i] = true;
            }
        }
    }
    let center = sc.center();
    let anchor = (0..states.len())
        .min_by(|&a, &b| {
            let da: f64 = states[a].iter().zip(center).map(|(&x, c)| (x as f64 - c).powi(2)).sum();
            let db: f64 = states[b].iter().zip(center).map(|(&x, c)| (x as f64 - c).powi(2)).sum();
            da.total_cmp(&db)
        })
        .expect("nonempty");
    let bad = outside_class(states.len(), &trans, anchor);
    if !bad.is_empty() {
        return Err(Error::Reducible {
            count: bad.len(),
            examples: bad.iter().take(5).map(|&i| states[i].clone()).collect(),
        });
    }
    let (probs, method) = stationary_vector(states.len(), &trans, anchor)?;
    let boundary: Vec<usize> = (0..states.len()).filter(|&i| censored[i]).collect();
    let bound = boundary.iter().map(|&i| probs[i]).sum::<f64>();
    // relative L¹ balance defect of the computed vector
    let mut net = vec![0.0; states.len()];
    let mut outflow = 0.0;
    for t in &trans {
        let q = probs[t.from] * t.rate;
        net[t.from] -= q;
        net[t.to] += q;
        outflow += q;
    }
    let defect = net.iter().map(|v| v.abs()).sum::<f64>() / outflow.max(f64::MIN_POSITIVE);
    Ok(DiscreteStationary {
        n,
        center: center.to_vec(),
        sqrt_n: sc.sqrt_n(),
        states,
        probs,
        boundary,
        truncation_mass_bound: bound,
        tails: Vec::new(),
        roundoff: defect.max(4.0 * f64::EPSILON),
        method: if method == "banded-lu" {
            "censored generator, banded LU"
        } else {
            "censored generator, uniformized power iteration"
        },
    })
}

/// Product form for birth–death chains, the general solver otherwise.
pub fn chain_stationary(sc: &ScaledChain, bx: &LatticeBox) -> Result<DiscreteStationary> {
    if bd_jumps(sc).is_some() {
        chain_stationary_bd(sc, bx)
    } else {
        chain_stationary_general(sc, bx)
    }
}

#[derive(Debug, Clone)]
pub struct AutoOptions {
    /// Initial box half-width in units of √n·τ.
    pub radius_factor: f64,
    /// Stop doubling when test moments change by less than this (relative
    /// to 1 + |moment|).
    pub tol: f64,
    pub max_doublings: usize,
    pub max_states: usize,
}

impl Default for AutoOptions {
    fn default() -> Self {
        Self {
            radius_factor: 8.0,
            tol: 1e-10,
            max_doublings: 4,
            max_states: 4_000_000,
        }
    }
}

/// Solve on the default box and keep doubling it until the given test
/// moments stabilize.
pub fn chain_stationary_auto(
    sc: &ScaledChain,
    tests: &[&dyn Fn(&[f64]) -> f64],
    opts: &AutoOptions,
) -> Result<DiscreteStationary> {
    let tau = relaxation_time(&|x: &[f64]| sc.drift_hat(x), sc.dim());
    let mut radius = opts.radius_factor * tau;
    let mut bx = LatticeBox::around(sc, radius);
    if bx.volume() > opts.max_states {
        return Err(Error::Solver(format!(
            "initial box has {} states, over the budget of {}",
            bx.volume(),
            opts.max_states
        )));
    }
    let mut cur = chain_stationary(sc, &bx)?;
    for _ in 0..opts.max_doublings {
        radius *= 2.0;
        let next_box = LatticeBox::around(sc, radius);
        if next_box == bx || next_box.volume() > opts.max_states {
            break;
        }
        let next = chain_stationary(sc, &next_box)?;
        let mut stable = true;
        for f in tests {
            let a = cur.moment(*f)?.value;
            let b = next.moment(*f)?.value;
            if (a - b).abs() > opts.tol * (1.0 + b.abs()) {
                stable = false;
            }
        }
        bx = next_box;
        cur = next;
        if stable {
            break;
        }
    }
    Ok(cur)
}
