//! Stationary distributions of the chain (product form or truncated
//! generator solve) and of the diffusion model (1-D closed form, 2-D finite
//! differences), with moment functionals carrying error bounds.

mod chain;
mod dm;
mod solve;

pub use chain::{
    chain_stationary, chain_stationary_auto, chain_stationary_bd, chain_stationary_general, default_box,
    relaxation_time, AutoOptions, LatticeBox,
};
pub use dm::{
    dm_stationary_1d, dm_stationary_1d_auto, dm_stationary_fd, lyapunov_covariance, FdOptions,
};

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// An expectation together with the error bounds attached to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moment {
    pub value: f64,
    /// Bound on the contribution of mass outside the computational box.
    pub truncation_bound: f64,
    /// Estimated quadrature/discretization error.
    pub discretization_bound: f64,
}

impl Moment {
    pub fn budget(&self) -> f64 {
        self.truncation_bound + self.discretization_bound
    }
}

/// Stationary law of the chain on a finite set of lattice states.
#[derive(Debug, Clone)]
pub struct DiscreteStationary {
    pub n: f64,
    pub center: Vec<f64>,
    pub sqrt_n: f64,
    pub states: Vec<Vec<i64>>,
    pub probs: Vec<f64>,
    /// States adjacent to the truncation boundary.
    pub boundary: Vec<usize>,
    pub truncation_mass_bound: f64,
    /// Geometric majorants of the mass beyond each truncated end, when known.
    pub tails: Vec<GeometricTail>,
    /// Relative accuracy of the computed probabilities.
    pub roundoff: f64,
    pub method: &'static str,
}

/// Beyond state `edge`, stepping by `step`, masses are bounded by
/// p(edge)·ratio^k.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricTail {
    pub edge: usize,
    pub step: Vec<i64>,
    pub ratio: f64,
}

impl DiscreteStationary {
    /// (X − x̄)/√n for state `i`.
    pub fn scaled(&self, i: usize) -> Vec<f64> {
        self.states[i]
            .iter()
            .zip(&self.center)
            .map(|(&x, c)| (x as f64 - c) / self.sqrt_n)
            .collect()
    }

    /// Σ f(x̂)·p over the support, with f evaluated in scaled coordinates.
    pub fn moment(&self, f: &dyn Fn(&[f64]) -> f64) -> Result<Moment> {
        // pairwise-free compensated sum for the 1e-10 regime
        let mut sum = 0.0;
        let mut comp = 0.0;
        let mut abs_sum = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let v = f(&self.scaled(i));
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("test function at {:?}", self.scaled(i))));
            }
            abs_sum += (v * p).abs();
            let y = v * p - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        let truncation_bound = if !self.tails.is_empty() && self.tails.iter().all(|t| t.ratio < 1.0) {
            // Σ_k p(edge) r^k |f(edge + k·step)|, plus the renormalization
            // effect |ν(f)|·(missing mass)
            let mut b = sum.abs() * self.truncation_mass_bound;
            for t in &self.tails {
                let p = self.probs[t.edge];
                let mut state = self.states[t.edge].clone();
                let mut w = p;
                for k in 1..=1_000_000 {
                    for (s, d) in state.iter_mut().zip(&t.step) {
                        *s += d;
                    }
                    w *= t.ratio;
                    let x: Vec<f64> = state
                        .iter()
                        .zip(&self.center)
                        .map(|(&x, c)| (x as f64 - c) / self.sqrt_n)
                        .collect();
                    let term = w * f(&x).abs();
                    b += term;
                    if k > 16 && term <= 1e-17 * b.max(f64::MIN_POSITIVE) || w == 0.0 {
                        break;
                    }
                }
            }
            b
        } else {
            let edge = self
                .boundary
                .iter()
                .map(|&i| f(&self.scaled(i)).abs())
                .fold(0.0, f64::max);
            edge.max(sum.abs()) * self.truncation_mass_bound
        };
        Ok(Moment {
            value: sum,
            truncation_bound,
            // relative errors in p (and in their normalization) move the sum
            // by at most twice this
            discretization_bound: 2.0 * self.roundoff * abs_sum,
        })
    }

    pub fn total_variation(&self, other: &DiscreteStationary) -> f64 {
        use std::collections::HashMap;
        let mut m: HashMap<&[i64], f64> = HashMap::new();
        for (s, p) in self.states.iter().zip(&self.probs) {
            *m.entry(s.as_slice()).or_default() += p;
        }
        for (s, p) in other.states.iter().zip(&other.probs) {
            *m.entry(s.as_slice()).or_default() -= p;
        }
        0.5 * m.values().map(|v| v.abs()).sum::<f64>()
    }

    /// CSV dump: lattice coordinates, scaled coordinates, probability.
    pub fn to_csv(&self) -> String {
        let d = self.center.len();
        let mut s = format!("# gaplab-schema: {}\n", crate::SCHEMA_VERSION);
        for i in 1..=d {
            let _ = write!(s, "x{i},");
        }
        for i in 1..=d {
            let _ = write!(s, "xhat{i},");
        }
        s.push_str("prob\n");
        for (i, st) in self.states.iter().enumerate() {
            for v in st {
                let _ = write!(s, "{v},");
            }
            for v in self.scaled(i) {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{}", self.probs[i]);
        }
        s
    }

    pub fn summary(&self) -> serde_json::Value {
        let d = self.center.len();
        let means: Vec<f64> = (0..d)
            .map(|k| self.moment(&|x: &[f64]| x[k]).map(|m| m.value).unwrap_or(f64::NAN))
            .collect();
        let second: Vec<f64> = (0..d)
            .map(|k| self.moment(&|x: &[f64]| x[k] * x[k]).map(|m| m.value).unwrap_or(f64::NAN))
            .collect();
        serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "kind": "chain",
            "n": self.n,
            "method": self.method,
            "states": self.states.len(),
            "center": self.center,
            "scaled_mean": means,
            "scaled_second_moment": second,
            "truncation_mass_bound": self.truncation_mass_bound,
        })
    }
}

/// Stationary density on a rectangular grid (last axis fastest).
#[derive(Debug, Clone)]
pub struct ContinuousStationary {
    pub n: f64,
    pub axes: Vec<Vec<f64>>,
    pub density: Vec<f64>,
    /// Quadrature weights, one per node.
    pub weights: Vec<f64>,
    pub rule: &'static str,
    /// A second, independent estimate of weight·density used to bound the
    /// discretization error of moments.
    pub alt_mass: Option<Vec<f64>>,
    /// Mass beyond the box.
    pub tail_mass_bound: f64,
    /// L¹ difference between the two grid levels (finite differences only).
    pub refinement_estimate: Option<f64>,
}

impl ContinuousStationary {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    /// Coordinates of node `i`.
    pub fn node(&self, mut i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for k in (0..self.dim()).rev() {
            let m = self.axes[k].len();
            x[k] = self.axes[k][i % m];
            i /= m;
        }
        x
    }

    /// Index of the node with the given per-axis indices.
    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, ax)| acc * ax.len() + i)
    }

    fn is_edge(&self, mut i: usize) -> bool {
        for k in (0..self.dim()).rev() {
            let m = self.axes[k].len();
            let j = i % m;
            if j == 0 || j + 1 == m {
                return true;
            }
            i /= m;
        }
        false
    }

    pub fn moment(&self, f: &dyn Fn(&[f64]) -> f64) -> Result<Moment> {
        let mut value = 0.0;
        let mut alt = 0.0;
        let mut edge = 0.0f64;
        for i in 0..self.len() {
            let x = self.node(i);
            let v = f(&x);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("test function at {x:?}")));
            }
            value += self.weights[i] * self.density[i] * v;
            if let Some(a) = &self.alt_mass {
                alt += a[i] * v;
            }
            if self.is_edge(i) {
                edge = edge.max(v.abs());
            }
        }
        let discretization_bound = if self.alt_mass.is_some() {
            (value - alt).abs()
        } else {
            0.0
        };
        Ok(Moment {
            value,
            truncation_bound: edge * self.tail_mass_bound,
            discretization_bound,
        })
    }

    /// ∫ |p − q| against another density on the same grid.
    pub fn l1_distance(&self, q: &dyn Fn(&[f64]) -> f64) -> f64 {
        (0..self.len())
            .map(|i| self.weights[i] * (self.density[i] - q(&self.node(i))).abs())
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# gaplab-schema: {}\n", crate::SCHEMA_VERSION);
        for i in 1..=self.dim() {
            let _ = write!(s, "x{i},");
        }
        s.push_str("density\n");
        for i in 0..self.len() {
            for v in self.node(i) {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{}", self.density[i]);
        }
        s
    }

    pub fn summary(&self) -> serde_json::Value {
        let d = self.dim();
        let means: Vec<f64> = (0..d)
            .map(|k| self.moment(&|x: &[f64]| x[k]).map(|m| m.value).unwrap_or(f64::NAN))
            .collect();
        let second: Vec<f64> = (0..d)
            .map(|k| self.moment(&|x: &[f64]| x[k] * x[k]).map(|m| m.value).unwrap_or(f64::NAN))
            .collect();
        serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "kind": "diffusion",
            "n": self.n,
            "rule": self.rule,
            "nodes": self.len(),
            "box": self.axes.iter().map(|a| (a[0], a[a.len() - 1])).collect::<Vec<_>>(),
            "mean": means,
            "second_moment": second,
            "tail_mass_bound": self.tail_mass_bound,
            "refinement_estimate": self.refinement_estimate,
        })
    }
}
