//! Sample paths of the chain (exact event-driven) and of the diffusion model
//! (Euler–Maruyama), batch-means steady-state estimates, and distributional
//! path comparisons.
//!
//! Randomness comes from ChaCha8 seeded with the user seed; replicate `i`
//! uses stream `i`, so results do not depend on the thread count.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::ScaledChain;
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};

/// Minimum number of batches for a reported standard error.
pub const MIN_BATCHES: usize = 20;

/// Generator for replicate `stream` of a run seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `f(rng, i)` for i in 0..reps in parallel; results in index order.
pub fn replicate<T: Send>(seed: u64, reps: usize, f: impl Fn(&mut ChaCha8Rng, usize) -> T + Sync) -> Vec<T> {
    (0..reps)
        .into_par_iter()
        .map(|i| f(&mut rng_for(seed, i as u64), i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Chain,
    Diffusion,
}

/// A path in scaled coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct SimPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub seed: u64,
    pub kind: PathKind,
    /// Final time (chain paths stay constant after their last jump).
    pub horizon: f64,
}

impl SimPath {
    /// CSV dump with at most `cap` rows (evenly thinned).
    pub fn to_csv(&self, cap: usize) -> String {
        let d = self.states.first().map_or(0, Vec::len);
        let mut s = format!("# gaplab-schema: {}\n# kind: {:?}, seed: {}\nt", crate::SCHEMA_VERSION, self.kind, self.seed);
        for i in 1..=d {
            let _ = write!(s, ",x{i}");
        }
        s.push('\n');
        let stride = self.times.len().div_ceil(cap.max(1)).max(1);
        for i in (0..self.times.len()).step_by(stride) {
            let _ = write!(s, "{}", self.times[i]);
            for v in &self.states[i] {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Largest |state| along the path.
    pub fn sup_norm(&self) -> f64 {
        self.states.iter().map(|x| crate::chain::norm(x)).fold(0.0, f64::max)
    }
}

/// Exact simulation of the chain from the lattice state nearest
/// center + √n·x0, until time `horizon`; states recorded in scaled units.
pub fn simulate_ctmc(sc: &ScaledChain, x0: &[f64], horizon: f64, seed: u64) -> Result<SimPath> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    run_ctmc(sc, x0, horizon, &mut rng_for(seed, 0), |t, x| {
        times.push(t);
        states.push(x.to_vec());
    })?;
    Ok(SimPath {
        times,
        states,
        seed,
        kind: PathKind::Chain,
        horizon,
    })
}

/// Event loop shared by path recording and streaming estimators: `visit(t, x̂)`
/// is called at time 0 and after every jump.
fn run_ctmc(
    sc: &ScaledChain,
    x0: &[f64],
    horizon: f64,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(f64, &[f64]),
) -> Result<()> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("invalid horizon {horizon}")));
    }
    let chain = sc.chain();
    let n = sc.n();
    let d = sc.dim();
    if x0.len() != d {
        return Err(Error::Dimension { expected: d, got: x0.len() });
    }
    let dom = chain.domain(n);
    let mut lattice: Vec<i64> = sc.unscale(x0).iter().map(|v| v.round() as i64).collect();
    if !dom.contains(&lattice) {
        return Err(Error::Config(format!("initial state {lattice:?} is outside the state space")));
    }
    let jumps: Vec<Vec<i64>> = chain.jumps().iter().map(|j| j.vector.clone()).collect();
    let mut rates = vec![0.0; jumps.len()];
    let mut real = vec![0.0; d];
    let mut scaled = vec![0.0; d];
    let rescale = |lat: &[i64], real: &mut [f64], scaled: &mut [f64]| {
        for k in 0..d {
            real[k] = lat[k] as f64;
            scaled[k] = (real[k] - sc.center()[k]) / sc.sqrt_n();
        }
    };
    rescale(&lattice, &mut real, &mut scaled);
    let mut t = 0.0;
    visit(t, &scaled);
    loop {
        chain.rates_into(n, &real, &mut rates);
        let mut total = 0.0;
        for (r, j) in rates.iter().zip(chain.jumps()) {
            if *r < 0.0 {
                return Err(Error::NegativeRate {
                    jump: j.name.clone(),
                    x: real.clone(),
                    rate: *r,
                });
            }
            total += r;
        }
        if !total.is_finite() {
            return Err(Error::RateOverflow { state: real.clone() });
        }
        if total == 0.0 {
            return Ok(());
        }
        let e: f64 = Exp1.sample(rng);
        t += e / total;
        if t > horizon {
            return Ok(());
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = rates.len() - 1;
        for (i, r) in rates.iter().enumerate() {
            if u < *r {
                pick = i;
                break;
            }
            u -= r;
        }
        // guard against landing on a zero-rate jump through roundoff
        while rates[pick] == 0.0 && pick > 0 {
            pick -= 1;
        }
        for k in 0..d {
            lattice[k] += jumps[pick][k];
        }
        if !dom.contains(&lattice) {
            return Err(Error::Model(format!(
                "jump `{}` left the state space at {lattice:?}",
                chain.jumps()[pick].name
            )));
        }
        rescale(&lattice, &mut real, &mut scaled);
        visit(t, &scaled);
    }
}

/// Euler–Maruyama for the diffusion model: Y += F̂(Y)h + L√h·Z. With
/// `drift_only` the noise is dropped (a plain Euler scheme for the ODE).
pub fn simulate_dm(dm: &DiffusionModel, y0: &[f64], horizon: f64, step: f64, seed: u64, drift_only: bool) -> Result<SimPath> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    run_dm(dm, y0, horizon, step, drift_only, &mut rng_for(seed, 0), |t, y| {
        times.push(t);
        states.push(y.to_vec());
        true
    })?;
    Ok(SimPath {
        times,
        states,
        seed,
        kind: PathKind::Diffusion,
        horizon,
    })
}

/// Steps the diffusion model, calling `visit(t, y)` at every grid time
/// including 0 and the horizon; stops early when `visit` returns false.
pub(crate) fn run_dm(
    dm: &DiffusionModel,
    y0: &[f64],
    horizon: f64,
    step: f64,
    drift_only: bool,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(f64, &[f64]) -> bool,
) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("invalid horizon {horizon}")));
    }
    let d = dm.dim();
    if y0.len() != d {
        return Err(Error::Dimension { expected: d, got: y0.len() });
    }
    let l = dm.sqrt_avar0();
    let steps = (horizon / step).ceil() as usize;
    let mut y = y0.to_vec();
    let mut z = vec![0.0; d];
    if !visit(0.0, &y) {
        return Ok(());
    }
    let mut t = 0.0;
    for k in 0..steps {
        let h = if k + 1 == steps { horizon - t } else { step };
        let f = dm.drift(&y);
        let sh = h.sqrt();
        if !drift_only {
            for v in &mut z {
                *v = rng.sample(StandardNormal);
            }
        }
        for i in 0..d {
            let mut noise = 0.0;
            if !drift_only {
                for j in 0..d {
                    noise += l[(i, j)] * z[j];
                }
            }
            y[i] += f[i] * h + noise * sh;
        }
        t = if k + 1 == steps { horizon } else { t + h };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { t });
        }
        if !visit(t, &y) {
            return Ok(());
        }
    }
    Ok(())
}

/// Time average with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub batches: usize,
    pub warmup_fraction: f64,
}

impl BatchEstimate {
    /// Half-width of the 95% normal confidence interval.
    pub fn half_width(&self) -> f64 {
        1.96 * self.std_err
    }
}

/// Accumulates ∫ f(path) dt into equal-length batches after a warmup.
struct Batches {
    start: f64,
    len: f64,
    sums: Vec<f64>,
}

impl Batches {
    fn new(horizon: f64, warmup_fraction: f64, batches: usize) -> Result<Self> {
        if batches < MIN_BATCHES {
            return Err(Error::TooFewBatches {
                got: batches,
                min: MIN_BATCHES,
            });
        }
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(Error::Config(format!("warmup fraction {warmup_fraction} not in [0, 1)")));
        }
        let start = horizon * warmup_fraction;
        let len = (horizon - start) / batches as f64;
        if !(len > 0.0) {
            return Err(Error::Config("horizon leaves no time after warmup".into()));
        }
        Ok(Self {
            start,
            len,
            sums: vec![0.0; batches],
        })
    }

    /// Adds value·|[a, b] ∩ batches| to the batches overlapping [a, b].
    fn add(&mut self, a: f64, b: f64, value: f64) {
        let a = a.max(self.start);
        if b <= a {
            return;
        }
        let nb = self.sums.len();
        let mut i = (((a - self.start) / self.len) as usize).min(nb - 1);
        let mut lo = a;
        while lo < b && i < nb {
            let edge = if i + 1 == nb { f64::INFINITY } else { self.start + (i + 1) as f64 * self.len };
            let hi = b.min(edge);
            self.sums[i] += value * (hi - lo);
            lo = hi;
            i += 1;
        }
    }

    fn finish(&self, warmup_fraction: f64) -> BatchEstimate {
        let k = self.sums.len() as f64;
        let means: Vec<f64> = self.sums.iter().map(|s| s / self.len).collect();
        let mean = means.iter().sum::<f64>() / k;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
        BatchEstimate {
            mean,
            std_err: (var / k).sqrt(),
            batches: self.sums.len(),
            warmup_fraction,
        }
    }
}

/// Time average of `f` along a recorded path. Chain paths are piecewise
/// constant; diffusion paths use the left-point rule on their time grid.
pub fn steady_estimate(path: &SimPath, f: &dyn Fn(&[f64]) -> f64, warmup_fraction: f64, batches: usize) -> Result<BatchEstimate> {
    let mut acc = Batches::new(path.horizon, warmup_fraction, batches)?;
    for i in 0..path.times.len() {
        let a = path.times[i];
        let b = path.times.get(i + 1).copied().unwrap_or(path.horizon);
        let v = f(&path.states[i]);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("test function at {:?}", path.states[i])));
        }
        acc.add(a, b, v);
    }
    Ok(acc.finish(warmup_fraction))
}

pub type TestFn<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Streaming chain estimate of several test functions from one long run
/// (no path is stored).
pub fn ctmc_steady_estimate(
    sc: &ScaledChain,
    x0: &[f64],
    horizon: f64,
    warmup_fraction: f64,
    batches: usize,
    fs: &[TestFn],
    seed: u64,
) -> Result<Vec<BatchEstimate>> {
    let mut accs = fs
        .iter()
        .map(|_| Batches::new(horizon, warmup_fraction, batches))
        .collect::<Result<Vec<_>>>()?;
    let mut last: Option<(f64, Vec<f64>)> = None;
    let flush = |accs: &mut [Batches], a: f64, b: f64, x: &[f64]| {
        for (acc, f) in accs.iter_mut().zip(fs) {
            acc.add(a, b, f(x));
        }
    };
    run_ctmc(sc, x0, horizon, &mut rng_for(seed, 0), |t, x| {
        if let Some((a, y)) = &last {
            flush(&mut accs, *a, t, y);
        }
        last = Some((t, x.to_vec()));
    })?;
    if let Some((a, y)) = &last {
        flush(&mut accs, *a, horizon, y);
    }
    Ok(accs.iter().map(|a| a.finish(warmup_fraction)).collect())
}

/// Streaming diffusion-model estimate of several test functions.
#[allow(clippy::too_many_arguments)]
pub fn dm_steady_estimate(
    dm: &DiffusionModel,
    y0: &[f64],
    horizon: f64,
    step: f64,
    warmup_fraction: f64,
    batches: usize,
    fs: &[TestFn],
    seed: u64,
) -> Result<Vec<BatchEstimate>> {
    let mut accs = fs
        .iter()
        .map(|_| Batches::new(horizon, warmup_fraction, batches))
        .collect::<Result<Vec<_>>>()?;
    let mut last: Option<(f64, Vec<f64>)> = None;
    run_dm(dm, y0, horizon, step, false, &mut rng_for(seed, 0), |t, y| {
        if let Some((a, x)) = &last {
            for (acc, f) in accs.iter_mut().zip(fs) {
                acc.add(*a, t, f(x));
            }
        }
        last = Some((t, y.to_vec()));
        true
    })?;
    Ok(accs.iter().map(|a| a.finish(warmup_fraction)).collect())
}

/// Quantiles of sup_{t≤T}|path(t)| for one scale.
#[derive(Debug, Clone, Serialize)]
pub struct PathGapRow {
    pub n: f64,
    pub probs: Vec<f64>,
    pub chain: Vec<f64>,
    pub diffusion: Vec<f64>,
    /// Unscaled chain quantiles (√n times the scaled ones).
    pub chain_unscaled: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathComparison {
    pub schema_version: u32,
    pub horizon: f64,
    pub reps: usize,
    pub seed: u64,
    pub note: &'static str,
    pub rows: Vec<PathGapRow>,
}

/// Empirical `p`-quantile (type 7 interpolation) of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// For each (chain, diffusion) pair, quantiles of the sup-norm of `reps`
/// independent paths started at 0. The two mechanisms are not coupled; the
/// comparison is between distributions.
pub fn compare_paths(
    pairs: &[(ScaledChain, DiffusionModel)],
    horizon: f64,
    step: f64,
    reps: usize,
    seed: u64,
) -> Result<PathComparison> {
    let probs = vec![0.5, 0.9, 0.99];
    let mut rows = Vec::new();
    for (k, (sc, dm)) in pairs.iter().enumerate() {
        let zero = vec![0.0; sc.dim()];
        let base = seed.wrapping_add(2 * k as u64);
        let chain: Result<Vec<f64>> = replicate(base, reps, |rng, _| {
            let mut sup = 0.0f64;
            run_ctmc(sc, &zero, horizon, rng, |_, x| sup = sup.max(crate::chain::norm(x)))?;
            Ok(sup)
        })
        .into_iter()
        .collect();
        let diff: Result<Vec<f64>> = replicate(base + 1, reps, |rng, _| {
            let mut sup = 0.0f64;
            run_dm(dm, &zero, horizon, step, false, rng, |_, y| {
                sup = sup.max(crate::chain::norm(y));
                true
            })?;
            Ok(sup)
        })
        .into_iter()
        .collect();
        let mut chain = chain?;
        let mut diff = diff?;
        chain.sort_by(f64::total_cmp);
        diff.sort_by(f64::total_cmp);
        let cq: Vec<f64> = probs.iter().map(|p| quantile(&chain, *p)).collect();
        rows.push(PathGapRow {
            n: sc.n(),
            chain_unscaled: cq.iter().map(|q| q * sc.sqrt_n()).collect(),
            chain: cq,
            diffusion: probs.iter().map(|p| quantile(&diff, *p)).collect(),
            probs: probs.clone(),
        });
    }
    Ok(PathComparison {
        schema_version: crate::SCHEMA_VERSION,
        horizon,
        reps,
        seed,
        note: "distributional comparison of uncoupled paths",
        rows,
    })
}
