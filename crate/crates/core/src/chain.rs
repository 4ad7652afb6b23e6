//! Scale-indexed Markov chain families: jump vectors, state-dependent rates,
//! the induced drift and local quadratic variation, and the centered,
//! √n-scaled versions used by the fluid and diffusion models.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// A jump vector ℓ ∈ ℤ^d with a human-readable name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Jump {
    pub name: String,
    pub vector: Vec<i64>,
}

impl Jump {
    pub fn new(name: impl Into<String>, vector: Vec<i64>) -> Self {
        Self {
            name: name.into(),
            vector,
        }
    }

    pub fn norm(&self) -> f64 {
        self.vector
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-jump rates β_ℓ^n(x), written into `out` in jump order.
pub type RateFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Extra membership test for lattice states beyond the box bounds.
pub type LatticePredicate = dyn Fn(&[i64]) -> bool + Send + Sync;

/// The state space E^n: a (possibly unbounded) lattice box, optionally
/// thinned by a predicate.
#[derive(Clone)]
pub struct StateDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    predicate: Option<Arc<LatticePredicate>>,
}

impl fmt::Debug for StateDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateDomain")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("predicate", &self.predicate.is_some())
            .finish()
    }
}

impl StateDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            predicate: None,
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::new(vec![f64::NEG_INFINITY; dim], vec![f64::INFINITY; dim])
    }

    pub fn with_predicate(mut self, p: Arc<LatticePredicate>) -> Self {
        self.predicate = Some(p);
        self
    }

    /// Whether a real point lies in the box hull of the domain.
    pub fn contains_real(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        let in_box = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| (v as f64) >= lo && (v as f64) <= hi);
        in_box && self.predicate.as_ref().is_none_or(|p| p(x))
    }
}

/// Domain as a function of the scale index.
pub type DomainFn = dyn Fn(f64) -> StateDomain + Send + Sync;

/// A family of CTMCs indexed by the scale `n`.
///
/// Rates are black-box functions of `(n, x)` evaluated at real `x`; their
/// evaluation off the lattice is the model's declared extension of F^n and
/// a^n to ℝ^d.
#[derive(Clone)]
pub struct ChainFamily {
    name: String,
    dim: usize,
    jumps: Vec<Jump>,
    rate: Arc<RateFn>,
    domain: Arc<DomainFn>,
    jump_bound: f64,
}

impl fmt::Debug for ChainFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChainFamily")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("jumps", &self.jumps)
            .field("jump_bound", &self.jump_bound)
            .finish()
    }
}

impl ChainFamily {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        jumps: Vec<Jump>,
        rate: Arc<RateFn>,
        domain: Arc<DomainFn>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Model("dimension must be positive".into()));
        }
        if jumps.is_empty() {
            return Err(Error::Model("jump set is empty".into()));
        }
        for j in &jumps {
            if j.vector.len() != dim {
                return Err(Error::Model(format!(
                    "jump `{}` has length {}, expected {dim}",
                    j.name,
                    j.vector.len()
                )));
            }
            if j.vector.iter().all(|&v| v == 0) {
                return Err(Error::Model(format!("jump `{}` is the zero vector", j.name)));
            }
        }
        let jump_bound = jumps.iter().map(Jump::norm).fold(0.0, f64::max);
        Ok(Self {
            name: name.into(),
            dim,
            jumps,
            rate,
            domain,
            jump_bound,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// ℓ̄ = max |ℓ|; fixed at construction and therefore independent of n.
    pub fn jump_bound(&self) -> f64 {
        self.jump_bound
    }

    pub fn domain(&self, n: f64) -> StateDomain {
        (self.domain)(n)
    }

    /// Raw rates at `x`, in jump order. No sign checks.
    pub fn rates_into(&self, n: f64, x: &[f64], out: &mut [f64]) {
        (self.rate)(n, x, out)
    }

    pub fn rates(&self, n: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.jumps.len()];
        (self.rate)(n, x, &mut out);
        out
    }

    /// Rates with validation: finite everywhere, nonnegative on the domain.
    pub fn checked_rates(&self, n: f64, x: &[f64]) -> Result<Vec<f64>> {
        let rates = self.rates(n, x);
        let in_domain = self.domain(n).contains_real(x);
        for (r, j) in rates.iter().zip(&self.jumps) {
            if !r.is_finite() {
                return Err(Error::NonFiniteRate {
                    jump: j.name.clone(),
                    x: x.to_vec(),
                });
            }
            if in_domain && *r < 0.0 {
                return Err(Error::NegativeRate {
                    jump: j.name.clone(),
                    x: x.to_vec(),
                    rate: *r,
                });
            }
        }
        Ok(rates)
    }

    fn drift_from_rates(&self, rates: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.dim];
        for (j, &r) in self.jumps.iter().zip(rates) {
            for (fi, &li) in f.iter_mut().zip(&j.vector) {
                *fi += li as f64 * r;
            }
        }
        f
    }

    fn avar_from_rates(&self, rates: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let mut a = DMatrix::zeros(d, d);
        for (j, &r) in self.jumps.iter().zip(rates) {
            for i in 0..d {
                let li = j.vector[i];
                if li == 0 {
                    continue;
                }
                for k in 0..d {
                    a[(i, k)] += (li * j.vector[k]) as f64 * r;
                }
            }
        }
        a
    }

    /// F^n(x) = Σ_ℓ ℓ β_ℓ^n(x) using the model's real extension, unchecked.
    pub fn drift(&self, n: f64, x: &[f64]) -> Vec<f64> {
        self.drift_from_rates(&self.rates(n, x))
    }

    /// a^n(x) = Σ_ℓ ℓℓᵀ β_ℓ^n(x), unchecked.
    pub fn avar(&self, n: f64, x: &[f64]) -> DMatrix<f64> {
        self.avar_from_rates(&self.rates(n, x))
    }

    /// Checked drift: fails on non-finite rates anywhere and on negative
    /// rates inside the state domain.
    pub fn derive_drift(&self, n: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.drift_from_rates(&self.checked_rates(n, x)?))
    }

    /// Checked local quadratic variation.
    pub fn derive_avar(&self, n: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        Ok(self.avar_from_rates(&self.checked_rates(n, x)?))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Default drift-zero tolerance for a center at scale `n`.
pub fn center_tolerance(n: f64) -> f64 {
    1e-10 * n.max(1.0)
}

/// The centered and √n-scaled chain at a fixed scale.
#[derive(Debug, Clone)]
pub struct ScaledChain {
    chain: Arc<ChainFamily>,
    n: f64,
    sqrt_n: f64,
    center: Vec<f64>,
    avar0: DMatrix<f64>,
}

/// Build the scaled chain around `center`, which must be a drift zero to
/// within [`center_tolerance`].
pub fn scale_chain(chain: Arc<ChainFamily>, n: f64, center: Vec<f64>) -> Result<ScaledChain> {
    scale_chain_with_tol(chain, n, center, center_tolerance(n))
}

pub fn scale_chain_with_tol(
    chain: Arc<ChainFamily>,
    n: f64,
    center: Vec<f64>,
    tol: f64,
) -> Result<ScaledChain> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Model(format!("scale must be positive, got {n}")));
    }
    if center.len() != chain.dim() {
        return Err(Error::Dimension {
            expected: chain.dim(),
            got: center.len(),
        });
    }
    let residual = norm(&chain.drift(n, &center));
    if !(residual <= tol) {
        return Err(Error::NotStationary { residual, tol });
    }
    let avar0 = chain.avar(n, &center) / n;
    Ok(ScaledChain {
        chain,
        n,
        sqrt_n: n.sqrt(),
        center,
        avar0,
    })
}

impl ScaledChain {
    pub fn chain(&self) -> &Arc<ChainFamily> {
        &self.chain
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.chain.dim()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn sqrt_n(&self) -> f64 {
        self.sqrt_n
    }

    /// x̄ + √n·x.
    pub fn unscale(&self, x: &[f64]) -> Vec<f64> {
        self.center
            .iter()
            .zip(x)
            .map(|(c, xi)| c + self.sqrt_n * xi)
            .collect()
    }

    /// (X − x̄)/√n for a lattice state.
    pub fn scale_lattice(&self, x: &[i64]) -> Vec<f64> {
        x.iter()
            .zip(&self.center)
            .map(|(&xi, c)| (xi as f64 - c) / self.sqrt_n)
            .collect()
    }

    /// F̂^n(x) = F^n(x̄ + √n x)/√n.
    pub fn drift_hat(&self, x: &[f64]) -> Vec<f64> {
        let y = self.unscale(x);
        let mut f = self.chain.drift(self.n, &y);
        for v in &mut f {
            *v /= self.sqrt_n;
        }
        f
    }

    /// ā^n(x) = a^n(x̄ + √n x)/n.
    pub fn avar_bar(&self, x: &[f64]) -> DMatrix<f64> {
        self.chain.avar(self.n, &self.unscale(x)) / self.n
    }

    /// ā^n(0).
    pub fn avar0(&self) -> &DMatrix<f64> {
        &self.avar0
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Axis-aligned region for sampling, one `(lo, hi)` per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBox {
    pub bounds: Vec<(f64, f64)>,
}

impl SampleBox {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        Self {
            bounds: vec![(-half_width, half_width); dim],
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.bounds.len() != dim {
            return Err(Error::DegenerateBox(format!(
                "box has {} coordinates, chain has {dim}",
                self.bounds.len()
            )));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::DegenerateBox(format!(
                    "coordinate {i} has bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleRow {
    pub n: f64,
    pub k_f: f64,
    pub worst_pair: (Vec<f64>, Vec<f64>),
    pub k_a: f64,
    pub avar0_min_eig: f64,
    pub avar0: Vec<Vec<f64>>,
}

/// Sampled evidence for uniform Lipschitz drift, linear growth of ā^n
/// around 0, positive-definite ā^n(0) and bounded jumps.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub rows: Vec<ScaleRow>,
    pub lipschitz_k_f: f64,
    pub avar_growth_k_a: f64,
    pub avar0_min_eig: f64,
    pub jump_bound: f64,
    pub growth_factor: f64,
    pub sample_box: SampleBox,
    pub samples: usize,
    pub seed: u64,
    pub lipschitz: Verdict,
    pub avar_growth: Verdict,
    pub avar0_pd: Verdict,
    pub bounded_jumps: Verdict,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.lipschitz.passed()
            && self.avar_growth.passed()
            && self.avar0_pd.passed()
            && self.bounded_jumps.passed()
    }
}

/// Options for [`validate_assumptions`].
#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub samples: usize,
    pub seed: u64,
    /// Largest tolerated ratio between estimates at consecutive scales.
    pub growth_factor: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 0x5eed,
            growth_factor: 1.05,
        }
    }
}

/// Estimate K_F and K_a over a family of scaled chains (one per scale, in
/// increasing order of n) by sampling `opts.samples` points and pairs in
/// `sample_box`.
pub fn validate_assumptions(
    family: &[ScaledChain],
    sample_box: &SampleBox,
    opts: &ValidateOptions,
) -> Result<AssumptionReport> {
    let Some(first) = family.first() else {
        return Err(Error::Config("empty scale grid".into()));
    };
    let dim = first.dim();
    sample_box.validate(dim)?;
    if opts.samples == 0 {
        return Err(Error::DegenerateBox("zero samples requested".into()));
    }
    let mut notes = Vec::new();
    let mut rows = Vec::with_capacity(family.len());
    for sc in family {
        // identical sample sets at every n keep the per-n estimates comparable
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut k_f = 0.0f64;
        let mut worst = (vec![0.0; dim], vec![0.0; dim]);
        let mut k_a = 0.0f64;
        let a0 = sc.avar0().clone();
        for _ in 0..opts.samples {
            let x = sample_box.sample(&mut rng);
            let y = sample_box.sample(&mut rng);
            let dxy = dist(&x, &y);
            if dxy > 0.0 {
                let q = dist(&sc.drift_hat(&x), &sc.drift_hat(&y)) / dxy;
                if q > k_f {
                    k_f = q;
                    worst = (x.clone(), y);
                }
            }
            let nx = norm(&x);
            if nx > 0.0 {
                let diff = (sc.avar_bar(&x) - &a0).norm();
                k_a = k_a.max(sc.sqrt_n() * diff / nx);
            }
        }
        rows.push(ScaleRow {
            n: sc.n(),
            k_f,
            worst_pair: worst,
            k_a,
            avar0_min_eig: min_eigenvalue(&a0),
            avar0: (0..dim)
                .map(|i| (0..dim).map(|j| a0[(i, j)]).collect())
                .collect(),
        });
    }
    let grows = |sel: fn(&ScaleRow) -> f64| {
        rows.windows(2)
            .all(|w| sel(&w[1]) <= opts.growth_factor * sel(&w[0]) + 1e-12)
    };
    let lipschitz = Verdict::from_bool(grows(|r| r.k_f) && rows.iter().all(|r| r.k_f.is_finite()));
    let avar_growth = Verdict::from_bool(grows(|r| r.k_a) && rows.iter().all(|r| r.k_a.is_finite()));
    let min_eig = rows.iter().map(|r| r.avar0_min_eig).fold(f64::INFINITY, f64::min);
    let avar0_pd = Verdict::from_bool(min_eig > 0.0);
    let jump_bound = first.chain().jump_bound();
    let small_n: Vec<f64> = rows
        .iter()
        .filter(|r| jump_bound / r.n.sqrt() > 1.0)
        .map(|r| r.n)
        .collect();
    if !small_n.is_empty() {
        notes.push(format!(
            "jump bound {jump_bound} exceeds sqrt(n) at n = {small_n:?}"
        ));
    }
    let bounded_jumps = Verdict::from_bool(jump_bound.is_finite() && small_n.is_empty());
    if !family.windows(2).all(|w| w[0].n() < w[1].n()) {
        notes.push("scale grid is not strictly increasing; growth verdicts compare in given order".into());
    }
    Ok(AssumptionReport {
        lipschitz_k_f: rows.iter().map(|r| r.k_f).fold(0.0, f64::max),
        avar_growth_k_a: rows.iter().map(|r| r.k_a).fold(0.0, f64::max),
        avar0_min_eig: min_eig,
        rows,
        jump_bound,
        growth_factor: opts.growth_factor,
        sample_box: sample_box.clone(),
        samples: opts.samples,
        seed: opts.seed,
        lipschitz,
        avar_growth,
        avar0_pd,
        bounded_jumps,
        notes,
    })
}
