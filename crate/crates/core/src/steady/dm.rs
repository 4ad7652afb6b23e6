//! Stationary densities of the diffusion model.

use nalgebra::{DMatrix, DVector};

use super::solve::{outside_class, stationary_vector, Transition};
use super::ContinuousStationary;
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::quad::{integrate, simpson_weights};

/// Density p ∝ exp((2/ā)∫₀^x F̂) on `points` uniform nodes over [lo, hi]
/// (rounded up to 4k+1 nodes so that a half-resolution Simpson rule exists
/// for the error estimate).
pub fn dm_stationary_1d(dm: &DiffusionModel, lo: f64, hi: f64, points: usize) -> Result<ContinuousStationary> {
    if dm.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: dm.dim(),
        });
    }
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Config(format!("invalid interval [{lo}, {hi}]")));
    }
    let m = 4 * points.max(8).div_ceil(4) + 1;
    let h = (hi - lo) / (m - 1) as f64;
    let axis: Vec<f64> = (0..m).map(|i| lo + h * i as f64).collect();
    let a = dm.avar0()[(0, 0)];
    let f = |y: f64| dm.drift(&[y])[0];
    // potential relative to the node closest to 0
    let zero = axis
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
        .map(|(i, _)| i)
        .unwrap();
    let mut phi = vec![0.0; m];
    for i in zero + 1..m {
        phi[i] = phi[i - 1] + integrate(f, axis[i - 1], axis[i], 1e-13 * h).0;
    }
    for i in (0..zero).rev() {
        phi[i] = phi[i + 1] - integrate(f, axis[i], axis[i + 1], 1e-13 * h).0;
    }
    let logp: Vec<f64> = phi.iter().map(|v| 2.0 / a * v).collect();
    if logp.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-density".into()));
    }
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
    let edge = p[0].max(p[m - 1]);
    if edge > 1e-10 {
        return Err(Error::BoxTooSmall(format!(
            "density at the edge of [{lo}, {hi}] is {edge:.3e} of its peak"
        )));
    }
    let w = simpson_weights(m, h);
    let z: f64 = w.iter().zip(&p).map(|(w, p)| w * p).sum();
    for v in &mut p {
        *v /= z;
    }
    // Simpson on every other node
    let wc = simpson_weights(m.div_ceil(2), 2.0 * h);
    let mut alt = vec![0.0; m];
    for (k, wk) in wc.iter().enumerate() {
        alt[2 * k] = wk * p[2 * k];
    }
    let zc: f64 = alt.iter().sum();
    for v in &mut alt {
        *v /= zc;
    }
    // ∫_hi^∞ e^{Φ} ≤ p(hi)/|Φ'(hi)| when the log-density is concave beyond
    let tail = |x: f64, pe: f64, outward: f64| {
        let slope = 2.0 / a * f(x) * outward;
        if slope < 0.0 {
            pe / -slope
        } else {
            1.0
        }
    };
    let tail_mass_bound = (tail(lo, p[0], -1.0) + tail(hi, p[m - 1], 1.0)).min(1.0);
    Ok(ContinuousStationary {
        n: dm.n(),
        axes: vec![axis],
        density: p,
        weights: w,
        rule: "composite Simpson",
        alt_mass: Some(alt),
        tail_mass_bound,
        refinement_estimate: None,
    })
}

/// [`dm_stationary_1d`] on [−L, L], doubling L from 8 until the edge test
/// passes; `per_unit` nodes per unit length.
pub fn dm_stationary_1d_auto(dm: &DiffusionModel, per_unit: usize) -> Result<ContinuousStationary> {
    let mut half = 8.0;
    let mut last = None;
    for _ in 0..8 {
        let points = (2.0 * half * per_unit as f64) as usize;
        match dm_stationary_1d(dm, -half, half, points) {
            Ok(s) => return Ok(s),
            Err(Error::BoxTooSmall(msg)) => last = Some(msg),
            Err(e) => return Err(e),
        }
        half *= 2.0;
    }
    Err(Error::BoxTooSmall(last.unwrap_or_default()))
}

/// Stationary covariance Σ of dY = JY dt + √a dB: JΣ + ΣJᵀ + a = 0.
pub fn lyapunov_covariance(j: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = j.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let k = id.kronecker(j) + j.kronecker(&id);
    let rhs = -DVector::from_column_slice(a.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular Lyapunov equation".into()))?;
    let s = DMatrix::from_column_slice(d, d, sol.as_slice());
    Ok((&s + s.transpose()) * 0.5)
}

#[derive(Debug, Clone)]
pub struct FdOptions {
    /// Box half-widths per axis; derived from the linearized covariance
    /// when absent.
    pub half_widths: Option<Vec<f64>>,
    /// Coarse-grid intervals per axis (the fine grid has twice as many).
    pub cells: usize,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            half_widths: None,
            cells: 80,
        }
    }
}

/// Node masses of the Markov-chain approximation on a (cells+1)² grid.
fn kushner_masses(dm: &DiffusionModel, half: &[f64], cells: usize) -> Result<Vec<f64>> {
    let m = cells + 1;
    let h = [2.0 * half[0] / cells as f64, 2.0 * half[1] / cells as f64];
    let a = dm.avar0();
    let a12 = a[(0, 1)];
    let coord = |i: usize, k: usize| -half[k] + h[k] * i as f64;
    // axis diffusion coefficients after moving the cross term to diagonals
    let cx = (a[(0, 0)] - a12.abs() * h[0] / h[1]) / (2.0 * h[0] * h[0]);
    let cy = (a[(1, 1)] - a12.abs() * h[1] / h[0]) / (2.0 * h[1] * h[1]);
    if cx < 0.0 || cy < 0.0 {
        return Err(Error::Solver(
            "diffusion matrix is not diagonally dominant on this grid; the finite-difference chain would have negative rates".into(),
        ));
    }
    let cross = a12.abs() / (2.0 * h[0] * h[1]);
    let idx = |i: usize, j: usize| i * m + j;
    let mut trans = Vec::with_capacity(m * m * 8);
    for i in 0..m {
        for j in 0..m {
            let x = [coord(i, 0), coord(j, 1)];
            let f = dm.drift(&x);
            let from = idx(i, j);
            let mut push = |ti: isize, tj: isize, r: f64| {
                if r > 0.0 && ti >= 0 && tj >= 0 && (ti as usize) < m && (tj as usize) < m {
                    trans.push(Transition {
                        from,
                        to: idx(ti as usize, tj as usize),
                        rate: r,
                    });
                }
            };
            let (ii, jj) = (i as isize, j as isize);
            for (k, c) in [(0usize, cx), (1usize, cy)] {
                let (plus, minus) = if f[k].abs() * h[k] <= 2.0 * c * h[k] * h[k] {
                    (c + f[k] / (2.0 * h[k]), c - f[k] / (2.0 * h[k]))
                } else {
                    (c + f[k].max(0.0) / h[k], c + (-f[k]).max(0.0) / h[k])
                };
                if k == 0 {
                    push(ii + 1, jj, plus);
                    push(ii - 1, jj, minus);
                } else {
                    push(ii, jj + 1, plus);
                    push(ii, jj - 1, minus);
                }
            }
            if a12 > 0.0 {
                push(ii + 1, jj + 1, cross);
                push(ii - 1, jj - 1, cross);
            } else if a12 < 0.0 {
                push(ii + 1, jj - 1, cross);
                push(ii - 1, jj + 1, cross);
            }
        }
    }
    let anchor = idx(cells / 2, cells / 2);
    let bad = outside_class(m * m, &trans, anchor);
    if !bad.is_empty() {
        return Err(Error::Solver(format!("{} grid nodes unreachable", bad.len())));
    }
    let (p, _) = stationary_vector(m * m, &trans, anchor)?;
    Ok(p)
}

/// Two-dimensional stationary density by a Markov-chain approximation of
/// the generator (central differences, upwinded where the cell Péclet
/// number exceeds 2; no-flux boundary), solved on two grids and combined by
/// Richardson extrapolation.
pub fn dm_stationary_fd(dm: &DiffusionModel, opts: &FdOptions) -> Result<ContinuousStationary> {
    if dm.dim() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: dm.dim(),
        });
    }
    let cells = 2 * opts.cells.max(8).div_ceil(2);
    let half = match &opts.half_widths {
        Some(h) if h.len() == 2 && h.iter().all(|v| *v > 0.0 && v.is_finite()) => h.clone(),
        Some(h) => return Err(Error::Config(format!("invalid half-widths {h:?}"))),
        None => default_half_widths(dm)?,
    };
    let coarse = kushner_masses(dm, &half, cells)?;
    let fine = kushner_masses(dm, &half, 2 * cells)?;
    let m = cells + 1;
    let mf = 2 * cells + 1;
    let h = [2.0 * half[0] / cells as f64, 2.0 * half[1] / cells as f64];
    let cell_area = h[0] * h[1];
    let axes: Vec<Vec<f64>> = (0..2)
        .map(|k| (0..m).map(|i| -half[k] + h[k] * i as f64).collect())
        .collect();
    let trap = |i: usize| if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
    let weights: Vec<f64> = (0..m * m)
        .map(|k| cell_area * trap(k / m) * trap(k % m))
        .collect();
    let dens_c: Vec<f64> = coarse.iter().map(|p| p / cell_area).collect();
    let dens_f: Vec<f64> = (0..m * m)
        .map(|k| fine[(2 * (k / m)) * mf + 2 * (k % m)] * 4.0 / cell_area)
        .collect();
    if let Some(v) = dens_f.iter().chain(&dens_c).copied().find(|&v| v < -1e-8) {
        return Err(Error::Solver(format!("negative density {v:e}")));
    }
    // extrapolate; in far-tail cells where that would turn negative keep the
    // (nonnegative) fine-grid value
    let mut rich: Vec<f64> = dens_c
        .iter()
        .zip(&dens_f)
        .map(|(c, f)| {
            let r = (4.0 * f - c) / 3.0;
            if r < 0.0 {
                f.max(0.0)
            } else {
                r
            }
        })
        .collect();
    let normalize = |d: &mut Vec<f64>| {
        let z: f64 = d.iter().zip(&weights).map(|(d, w)| d * w).sum();
        for v in d.iter_mut() {
            *v /= z;
        }
    };
    let mut dens_f = dens_f;
    let mut dens_c = dens_c;
    normalize(&mut rich);
    normalize(&mut dens_f);
    normalize(&mut dens_c);
    let edge_max = (0..m * m)
        .filter(|&k| k / m == 0 || k / m == m - 1 || k % m == 0 || k % m == m - 1)
        .map(|k| rich[k])
        .fold(0.0f64, f64::max);
    let peak = rich.iter().copied().fold(0.0f64, f64::max);
    if edge_max > 1e-8 * peak {
        return Err(Error::BoxTooSmall(format!(
            "density on the box edge is {:.3e} of its peak",
            edge_max / peak
        )));
    }
    let refinement: f64 = (0..m * m).map(|k| weights[k] * (dens_f[k] - dens_c[k]).abs()).sum();
    let alt_mass: Vec<f64> = (0..m * m).map(|k| weights[k] * dens_f[k]).collect();
    let perimeter = 4.0 * (half[0] + half[1]);
    Ok(ContinuousStationary {
        n: dm.n(),
        axes,
        density: rich,
        weights,
        rule: "trapezoid on Richardson-extrapolated Markov-chain approximation",
        alt_mass: Some(alt_mass),
        tail_mass_bound: (edge_max * perimeter).min(1.0),
        refinement_estimate: Some(refinement),
    })
}

/// 8 standard deviations of the widest linearized covariance.
fn default_half_widths(dm: &DiffusionModel) -> Result<Vec<f64>> {
    let d = dm.dim();
    let mut sd = vec![0.0f64; d];
    let mut pts = vec![vec![0.0; d]];
    for k in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[k] = s;
            pts.push(e);
        }
    }
    for p in pts {
        let hstep = 1e-6 * (1.0 + crate::chain::norm(&p));
        let mut j = DMatrix::zeros(d, d);
        let mut xp = p.clone();
        for c in 0..d {
            xp[c] = p[c] + hstep;
            let fp = dm.drift(&xp);
            xp[c] = p[c] - hstep;
            let fm = dm.drift(&xp);
            xp[c] = p[c];
            for r in 0..d {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * hstep);
            }
        }
        if j.complex_eigenvalues().iter().any(|z| z.re >= 0.0) {
            continue;
        }
        if let Ok(s) = lyapunov_covariance(&j, dm.avar0()) {
            for k in 0..d {
                sd[k] = sd[k].max(s[(k, k)].max(0.0).sqrt());
            }
        }
    }
    if sd.contains(&0.0) {
        return Err(Error::Solver("could not size the box from the linearized drift".into()));
    }
    Ok(sd.iter().map(|s| 8.0 * s).collect())
}
