//! Lyapunov candidates: smooth functions V ≥ 1 with analytic first, second
//! and (where available) third derivatives.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::diffusion::{fd_gradient, fd_hessian, FnField, ScalarField};
use crate::error::{Error, Result};
use crate::expr::{Expr, Scope};

/// What is known about a candidate's growth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Structure {
    /// A polynomial of the given total degree.
    Polynomial { degree: u32 },
    /// Smooth, with no structural growth information.
    Smooth,
}

pub trait Candidate: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
    /// Third derivative tensor, flattened as `(i * d + j) * d + k`.
    fn third(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn structure(&self) -> Structure;
    fn describe(&self) -> String;
    fn as_poly1(&self) -> Option<&Poly1> {
        None
    }
}

/// Adapter exposing a candidate as a [`ScalarField`] with derivatives.
pub struct AsField<'a>(pub &'a dyn Candidate);

impl ScalarField for AsField<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.0.gradient(x))
    }
    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.0.hessian(x))
    }
}

/// Frobenius norm of a flattened tensor.
pub(crate) fn tensor_norm(t: &[f64]) -> f64 {
    t.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One-dimensional polynomial Σ c_k x^k.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly1 {
    coeffs: Vec<f64>,
}

impl Poly1 {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> u32 {
        (self.coeffs.len() - 1) as u32
    }

    /// The k-th derivative evaluated at `x`.
    pub fn eval_deriv(&self, x: f64, k: usize) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in self.coeffs.iter().enumerate().skip(k).rev() {
            let falling: f64 = ((j - k + 1)..=j).map(|t| t as f64).product();
            acc = acc * x + c * falling;
        }
        acc
    }

    pub fn mul(&self, other: &Poly1) -> Poly1 {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly1::new(out)
    }
}

impl Candidate for Poly1 {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.eval_deriv(x[0], 0)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![self.eval_deriv(x[0], 1)]
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.eval_deriv(x[0], 2))
    }
    fn third(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![self.eval_deriv(x[0], 3)])
    }
    fn structure(&self) -> Structure {
        Structure::Polynomial {
            degree: self.degree(),
        }
    }
    fn describe(&self) -> String {
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| match k {
                0 => format!("{c}"),
                1 => format!("{c}*x"),
                _ => format!("{c}*x^{k}"),
            })
            .collect();
        if terms.is_empty() {
            "0".into()
        } else {
            terms.join(" + ")
        }
    }
    fn as_poly1(&self) -> Option<&Poly1> {
        Some(self)
    }
}

/// `s^k` with the convention that a vanishing coefficient wins over a
/// singular power.
fn coef_pow(coef: f64, s: f64, k: i32) -> f64 {
    if coef == 0.0 {
        0.0
    } else {
        coef * s.powi(k)
    }
}

/// V(x) = ρ + (xᵀQx)^m with Q symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadForm {
    rho: f64,
    q: DMatrix<f64>,
    m: u32,
}

impl QuadForm {
    pub fn new(rho: f64, q: DMatrix<f64>, m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("quadratic-form power must be at least 1".into()));
        }
        crate::diffusion::sqrt_psd(&q)?;
        Ok(Self { rho, q, m })
    }

    pub fn identity(dim: usize, rho: f64, m: u32) -> Self {
        Self::new(rho, DMatrix::identity(dim, dim), m).expect("identity is SPD")
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    fn parts(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = x.len();
        let mut g = vec![0.0; d];
        let mut s = 0.0;
        for i in 0..d {
            let mut qi = 0.0;
            for j in 0..d {
                qi += self.q[(i, j)] * x[j];
            }
            g[i] = 2.0 * qi;
            s += x[i] * qi;
        }
        (s, g)
    }
}

impl Candidate for QuadForm {
    fn dim(&self) -> usize {
        self.q.nrows()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let (s, _) = self.parts(x);
        self.rho + s.powi(self.m as i32)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (s, g) = self.parts(x);
        let m = self.m as f64;
        let c = coef_pow(m, s, self.m as i32 - 1);
        g.into_iter().map(|gi| c * gi).collect()
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (s, g) = self.parts(x);
        let m = self.m as i32;
        let mf = m as f64;
        let c1 = coef_pow(mf, s, m - 1);
        let c2 = coef_pow(mf * (mf - 1.0), s, m - 2);
        let d = g.len();
        DMatrix::from_fn(d, d, |i, j| c1 * 2.0 * self.q[(i, j)] + c2 * g[i] * g[j])
    }
    fn third(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (s, g) = self.parts(x);
        let m = self.m as i32;
        let mf = m as f64;
        let c2 = coef_pow(mf * (mf - 1.0), s, m - 2);
        let c3 = coef_pow(mf * (mf - 1.0) * (mf - 2.0), s, m - 3);
        let d = g.len();
        let q2 = |a: usize, b: usize| 2.0 * self.q[(a, b)];
        let mut t = vec![0.0; d * d * d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    t[(i * d + j) * d + k] = c2 * (g[k] * q2(i, j) + q2(i, k) * g[j] + g[i] * q2(j, k))
                        + c3 * g[i] * g[j] * g[k];
                }
            }
        }
        Some(t)
    }
    fn structure(&self) -> Structure {
        Structure::Polynomial { degree: 2 * self.m }
    }
    fn describe(&self) -> String {
        let rows: Vec<String> = (0..self.q.nrows())
            .map(|i| {
                let r: Vec<String> = (0..self.q.ncols()).map(|j| format!("{}", self.q[(i, j)])).collect();
                format!("[{}]", r.join(", "))
            })
            .collect();
        format!("{} + (x'Qx)^{} with Q = [{}]", self.rho, self.m, rows.join(", "))
    }
}

/// V^m for a base candidate V, with derivatives composed by the chain rule.
#[derive(Clone)]
pub struct Power {
    base: Arc<dyn Candidate>,
    m: u32,
}

impl Power {
    pub fn new(base: Arc<dyn Candidate>, m: u32) -> Self {
        Self { base, m }
    }

    /// φ(v), φ'(v), φ''(v), φ'''(v) for φ(v) = v^m.
    fn phi(&self, v: f64) -> [f64; 4] {
        let m = self.m as i32;
        let mf = m as f64;
        [
            v.powi(m),
            coef_pow(mf, v, m - 1),
            coef_pow(mf * (mf - 1.0), v, m - 2),
            coef_pow(mf * (mf - 1.0) * (mf - 2.0), v, m - 3),
        ]
    }
}

impl Candidate for Power {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.base.value(x).powi(self.m as i32)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = self.phi(self.base.value(x));
        self.base.gradient(x).into_iter().map(|g| p[1] * g).collect()
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.phi(self.base.value(x));
        let g = self.base.gradient(x);
        let h = self.base.hessian(x);
        let d = g.len();
        DMatrix::from_fn(d, d, |i, j| p[2] * g[i] * g[j] + p[1] * h[(i, j)])
    }
    fn third(&self, x: &[f64]) -> Option<Vec<f64>> {
        let t = self.base.third(x)?;
        let p = self.phi(self.base.value(x));
        let g = self.base.gradient(x);
        let h = self.base.hessian(x);
        let d = g.len();
        let mut out = vec![0.0; d * d * d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let at = (i * d + j) * d + k;
                    out[at] = p[3] * g[i] * g[j] * g[k]
                        + p[2] * (h[(i, k)] * g[j] + g[i] * h[(j, k)] + h[(i, j)] * g[k])
                        + p[1] * t[at];
                }
            }
        }
        Some(out)
    }
    fn structure(&self) -> Structure {
        match self.base.structure() {
            Structure::Polynomial { degree } => Structure::Polynomial {
                degree: degree * self.m,
            },
            Structure::Smooth => Structure::Smooth,
        }
    }
    fn describe(&self) -> String {
        format!("({})^{}", self.base.describe(), self.m)
    }
}

/// V(x) = exp(c|x|²); norm-like but not sub-exponential.
#[derive(Debug, Clone)]
pub struct ExpQuad {
    dim: usize,
    c: f64,
}

impl ExpQuad {
    pub fn new(dim: usize, c: f64) -> Self {
        Self { dim, c }
    }
}

impl Candidate for ExpQuad {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.c * x.iter().map(|v| v * v).sum::<f64>()).exp()
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let v = self.value(x);
        x.iter().map(|xi| 2.0 * self.c * xi * v).collect()
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let v = self.value(x);
        let c = self.c;
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| {
            v * (if i == j { 2.0 * c } else { 0.0 } + 4.0 * c * c * x[i] * x[j])
        })
    }
    fn third(&self, x: &[f64]) -> Option<Vec<f64>> {
        let v = self.value(x);
        let c = self.c;
        let d = self.dim;
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let mut t = vec![0.0; d * d * d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    t[(i * d + j) * d + k] = v
                        * (2.0 * c * x[k] * (2.0 * c * delta(i, j) + 4.0 * c * c * x[i] * x[j])
                            + 4.0 * c * c * (delta(i, k) * x[j] + x[i] * delta(j, k)));
                }
            }
        }
        Some(t)
    }
    fn structure(&self) -> Structure {
        Structure::Smooth
    }
    fn describe(&self) -> String {
        format!("exp({}*|x|^2)", self.c)
    }
}

/// A candidate given as an expression in x1..xd; derivatives by finite
/// differences, no structural information.
#[derive(Clone)]
pub struct ExprCandidate {
    dim: usize,
    expr: Expr,
}

impl ExprCandidate {
    pub fn new(src: &str, dim: usize) -> Result<Self> {
        let mut scope = Scope::new();
        for i in 1..=dim {
            scope.push(format!("x{i}"));
        }
        if dim == 1 {
            scope.push("x");
        }
        let expr = Expr::compile(src, &scope)?;
        Ok(Self { dim, expr })
    }

    fn env(&self, x: &[f64]) -> Vec<f64> {
        let mut env = x.to_vec();
        if self.dim == 1 {
            env.push(x[0]);
        }
        env
    }

    fn field(&self) -> FnField<impl Fn(&[f64]) -> f64 + Send + Sync + '_> {
        FnField::new(self.dim, move |y: &[f64]| self.expr.eval(&self.env(y)))
    }
}

impl Candidate for ExprCandidate {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.expr.eval(&self.env(x))
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        fd_gradient(&self.field(), x)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        fd_hessian(&self.field(), x)
    }
    fn structure(&self) -> Structure {
        Structure::Smooth
    }
    fn describe(&self) -> String {
        self.expr.source().to_string()
    }
}

/// V^m; one-dimensional polynomials are expanded exactly, other candidates
/// are wrapped with composed derivatives.
pub fn power_candidate(cand: Arc<dyn Candidate>, m: u32) -> Arc<dyn Candidate> {
    if m == 1 {
        return cand;
    }
    if let Some(p) = cand.as_poly1() {
        let mut acc = Poly1::new(vec![1.0]);
        for _ in 0..m {
            acc = acc.mul(p);
        }
        return Arc::new(acc);
    }
    Arc::new(Power::new(cand, m))
}

/// Parse a candidate description:
///
/// * `poly:c0,c1,...` one-dimensional polynomial Σ c_k x^k
/// * `quad:rho,m` the form ρ + |x|^{2m}
/// * `quad:rho,m,q11,q12,...` the form ρ + (xᵀQx)^m with Q given row-major
/// * `exp:c` exp(c|x|²)
/// * `expr:<expression>` an expression in x1..xd (or x when d = 1)
pub fn parse_candidate(src: &str, dim: usize) -> Result<Arc<dyn Candidate>> {
    let bad = |msg: String| Error::Config(format!("candidate `{src}`: {msg}"));
    let (kind, rest) = src
        .split_once(':')
        .ok_or_else(|| bad("expected `kind:arguments`".into()))?;
    let numbers = |s: &str| -> Result<Vec<f64>> {
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("`{}` is not a finite number", t.trim())))
            })
            .collect()
    };
    match kind.trim() {
        "poly" => {
            if dim != 1 {
                return Err(bad(format!("polynomial candidates are one-dimensional, model has d = {dim}")));
            }
            Ok(Arc::new(Poly1::new(numbers(rest)?)))
        }
        "quad" => {
            let v = numbers(rest)?;
            if v.len() < 2 {
                return Err(bad("expected rho,m[,Q entries]".into()));
            }
            let m = v[1];
            if !(m >= 1.0 && m.fract() == 0.0 && m <= 16.0) {
                return Err(bad(format!("power {m} must be an integer in 1..=16")));
            }
            let q = if v.len() == 2 {
                DMatrix::identity(dim, dim)
            } else if v.len() == 2 + dim * dim {
                DMatrix::from_row_slice(dim, dim, &v[2..])
            } else {
                return Err(bad(format!("expected {} matrix entries, got {}", dim * dim, v.len() - 2)));
            };
            Ok(Arc::new(QuadForm::new(v[0], q, m as u32)?))
        }
        "exp" => {
            let v = numbers(rest)?;
            if v.len() != 1 {
                return Err(bad("expected a single coefficient".into()));
            }
            Ok(Arc::new(ExpQuad::new(dim, v[0])))
        }
        "expr" => Ok(Arc::new(ExprCandidate::new(rest, dim)?)),
        other => Err(bad(format!("unknown kind `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_check(c: &dyn Candidate, x: &[f64]) {
        let d = c.dim();
        let h = 1e-5 * (1.0 + crate::chain::norm(x));
        let g = c.gradient(x);
        let hs = c.hessian(x);
        let t = c.third(x);
        for k in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let dv = (c.value(&xp) - c.value(&xm)) / (2.0 * h);
            let scale = 1.0 + c.value(x).abs();
            assert!((dv - g[k]).abs() <= 1e-6 * scale, "grad {k} at {x:?}: {dv} vs {}", g[k]);
            let (gp, gm) = (c.gradient(&xp), c.gradient(&xm));
            let (hp, hm) = (c.hessian(&xp), c.hessian(&xm));
            for i in 0..d {
                let dh = (gp[i] - gm[i]) / (2.0 * h);
                assert!((dh - hs[(i, k)]).abs() <= 1e-6 * (1.0 + hs.norm()), "hess at {x:?}");
                if let Some(t) = &t {
                    for j in 0..d {
                        let dt = (hp[(i, j)] - hm[(i, j)]) / (2.0 * h);
                        let want = t[(i * d + j) * d + k];
                        assert!((dt - want).abs() <= 1e-6 * (1.0 + tensor_norm(t)), "third at {x:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn poly_derivatives() {
        let p = Poly1::new(vec![1.0, -2.0, 0.5, 3.0]);
        assert_eq!(p.value(&[2.0]), 1.0 - 4.0 + 2.0 + 24.0);
        assert_eq!(p.gradient(&[2.0])[0], -2.0 + 2.0 + 36.0);
        assert_eq!(p.hessian(&[2.0])[(0, 0)], 1.0 + 36.0);
        assert_eq!(p.third(&[2.0]).unwrap()[0], 18.0);
        assert_eq!(p.eval_deriv(2.0, 4), 0.0);
        assert_eq!(Poly1::new(vec![3.0, 0.0, 0.0]).degree(), 0);
    }

    #[test]
    fn power_of_one_plus_square() {
        let v: Arc<dyn Candidate> = Arc::new(Poly1::new(vec![1.0, 0.0, 1.0]));
        let v2 = power_candidate(v.clone(), 2);
        assert_eq!(v2.value(&[1.0]), 4.0);
        assert_eq!(v2.gradient(&[1.0])[0], 8.0);
        let v1 = power_candidate(v.clone(), 1);
        assert!(Arc::ptr_eq(&v1, &v));
        let wrapped = Power::new(v, 2);
        assert_eq!(wrapped.value(&[1.0]), 4.0);
        assert_eq!(wrapped.gradient(&[1.0])[0], 8.0);
        assert_eq!(wrapped.structure(), Structure::Polynomial { degree: 4 });
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let base: Arc<dyn Candidate> = Arc::new(QuadForm::new(1.0, q.clone(), 1).unwrap());
        let cands: Vec<Arc<dyn Candidate>> = vec![
            Arc::new(QuadForm::new(1.0, q.clone(), 1).unwrap()),
            Arc::new(QuadForm::new(2.0, q, 3).unwrap()),
            Arc::new(Power::new(base, 3)),
            Arc::new(ExpQuad::new(2, 0.1)),
        ];
        for c in &cands {
            for _ in 0..100 {
                let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                fd_check(c.as_ref(), &x);
            }
        }
        let p: Arc<dyn Candidate> = Arc::new(Poly1::new(vec![1.0, 0.0, 1.0]));
        let p4 = Power::new(p, 4);
        for _ in 0..100 {
            fd_check(&p4, &[rng.random_range(-2.0..2.0)]);
        }
    }

    #[test]
    fn quad_form_at_origin_is_finite() {
        for m in 1..=4 {
            let v = QuadForm::identity(2, 1.0, m);
            assert_eq!(v.value(&[0.0, 0.0]), 1.0);
            assert!(v.hessian(&[0.0, 0.0]).iter().all(|h| h.is_finite()));
            assert!(v.third(&[0.0, 0.0]).unwrap().iter().all(|h| h.is_finite()));
        }
    }

    #[test]
    fn parse_candidates() {
        let p = parse_candidate("poly:1,0,1", 1).unwrap();
        assert_eq!(p.value(&[2.0]), 5.0);
        let q = parse_candidate("quad:1,2", 2).unwrap();
        assert_eq!(q.value(&[1.0, 1.0]), 5.0);
        let q = parse_candidate("quad:1,1,2,0,0,1", 2).unwrap();
        assert_eq!(q.value(&[1.0, 1.0]), 4.0);
        let e = parse_candidate("expr:1+x^2", 1).unwrap();
        assert!((e.gradient(&[1.0])[0] - 2.0).abs() < 1e-6);
        assert!(parse_candidate("poly:1,0,1", 2).is_err());
        assert!(parse_candidate("quad:1,1.5", 1).is_err());
        assert!(parse_candidate("quad:1,1,1,2,2,-1", 2).is_err());
        assert!(parse_candidate("nope", 1).is_err());
        assert!(parse_candidate("poly:1,x", 1).is_err());
    }
}
