//! The diffusion model dŶ = F̂^n(Ŷ) dt + √(ā^n(0)) dB: construction from a
//! scaled chain, its second-order generator, and the symmetric PSD square
//! root of the frozen diffusion matrix.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::chain::{min_eigenvalue, norm, ScaledChain};
use crate::error::{Error, Result};
use crate::fluid::ScaledDrift;
use crate::VectorField;

/// A scalar function with optional analytic derivatives.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Wrap a plain closure as a [`ScalarField`] without derivatives.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> ScalarField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Clone)]
pub struct DiffusionModel {
    drift: VectorField,
    avar0: DMatrix<f64>,
    sqrt_avar0: DMatrix<f64>,
    n: f64,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("n", &self.n)
            .field("avar0", &self.avar0)
            .finish()
    }
}

impl DiffusionModel {
    /// A diffusion model with drift `drift` and constant diffusion matrix
    /// `avar0`, which must be symmetric positive definite.
    pub fn new(drift: VectorField, avar0: DMatrix<f64>, n: f64) -> Result<Self> {
        let sqrt_avar0 = sqrt_psd(&avar0)?;
        Ok(Self {
            drift,
            avar0,
            sqrt_avar0,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.avar0.nrows()
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        (self.drift)(x)
    }

    pub fn drift_field(&self) -> &VectorField {
        &self.drift
    }

    pub fn avar0(&self) -> &DMatrix<f64> {
        &self.avar0
    }

    /// The symmetric square root L with L·L = ā^n(0).
    pub fn sqrt_avar0(&self) -> &DMatrix<f64> {
        &self.sqrt_avar0
    }

    pub fn scaled_drift(&self) -> ScaledDrift {
        ScaledDrift {
            n: self.n,
            drift: self.drift.clone(),
        }
    }

    /// Σ F̂_i g_i + ½ Σ ā_ij(0) H_ij for given gradient `g` and Hessian `h`.
    pub fn generator_from_derivatives(&self, x: &[f64], g: &[f64], h: &DMatrix<f64>) -> f64 {
        let f = self.drift(x);
        let first: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
        let d = self.dim();
        let mut second = 0.0;
        for i in 0..d {
            for j in 0..d {
                second += self.avar0[(i, j)] * h[(i, j)];
            }
        }
        first + 0.5 * second
    }
}

/// Freeze the diffusion coefficient of `sc` at ā^n(0).
pub fn build_dm(sc: &ScaledChain) -> Result<DiffusionModel> {
    let sc2 = sc.clone();
    let drift: VectorField = Arc::new(move |x: &[f64]| sc2.drift_hat(x));
    DiffusionModel::new(drift, sc.avar0().clone(), sc.n())
}

fn fd_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + norm(x))
}

/// Central-difference gradient.
pub fn fd_gradient(u: &dyn ScalarField, x: &[f64]) -> Vec<f64> {
    let h = fd_step(x);
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = u.value(&xp);
            xp[i] = x[i] - h;
            let um = u.value(&xp);
            xp[i] = x[i];
            (up - um) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference Hessian; each coordinate pair uses the 3×3 (9-point)
/// stencil around `x`.
pub fn fd_hessian(u: &dyn ScalarField, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let h = 1e2 * fd_step(x);
    let u0 = u.value(x);
    let at = |shifts: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in shifts {
            y[i] += s * h;
        }
        u.value(&y)
    };
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        hess[(i, i)] = (at(&[(i, 1.0)]) - 2.0 * u0 + at(&[(i, -1.0)])) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, 1.0), (j, 1.0)]) - at(&[(i, 1.0), (j, -1.0)]) - at(&[(i, -1.0), (j, 1.0)])
                + at(&[(i, -1.0), (j, -1.0)]))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// A^n u(x) = Σ F̂_i ∂_i u + ½ Σ ā_ij(0) ∂_ij u, using analytic derivatives
/// where `u` provides them and finite differences otherwise.
pub fn apply_generator(dm: &DiffusionModel, u: &dyn ScalarField, x: &[f64]) -> Result<f64> {
    if x.len() != dm.dim() || u.dim() != dm.dim() {
        return Err(Error::Dimension {
            expected: dm.dim(),
            got: x.len().min(u.dim()),
        });
    }
    let g = u.gradient(x).unwrap_or_else(|| fd_gradient(u, x));
    let h = u.hessian(x).unwrap_or_else(|| fd_hessian(u, x));
    if g.iter().any(|v| !v.is_finite()) || h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("derivative of test function at {x:?}")));
    }
    let v = dm.generator_from_derivatives(x, &g, &h);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("generator value at {x:?}")));
    }
    Ok(v)
}

/// Symmetric PSD square root via eigendecomposition.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::NotSpd(format!("{}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd("non-finite entries".into()));
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).norm();
    if asym > 1e-10 * scale {
        return Err(Error::NotSpd(format!("asymmetry {asym:e}")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NotSpd(format!("minimum eigenvalue {min:e}")));
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    let l = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok((&l + l.transpose()) * 0.5)
}

/// Minimum eigenvalue of ā^n(0) for reporting.
pub fn avar0_min_eig(dm: &DiffusionModel) -> f64 {
    min_eigenvalue(dm.avar0())
}
