//! Stationary vector of a finite generator given as a transition list.

use std::collections::VecDeque;

use crate::banded::BandMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Transition {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// Indices not in the same communicating class as `anchor`.
pub(crate) fn outside_class(n: usize, trans: &[Transition], anchor: usize) -> Vec<usize> {
    let mut fwd = vec![Vec::new(); n];
    let mut bwd = vec![Vec::new(); n];
    for t in trans {
        if t.rate > 0.0 && t.from != t.to {
            fwd[t.from].push(t.to);
            bwd[t.to].push(t.from);
        }
    }
    let reach = |adj: &[Vec<usize>]| {
        let mut seen = vec![false; n];
        let mut q = VecDeque::from([anchor]);
        seen[anchor] = true;
        while let Some(i) = q.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    q.push_back(j);
                }
            }
        }
        seen
    };
    let f = reach(&fwd);
    let b = reach(&bwd);
    (0..n).filter(|&i| !(f[i] && b[i])).collect()
}

/// Solve νQ = 0, Σν = 1 for an irreducible generator. The balance equation
/// of `anchor` is replaced by ν_anchor = 1 before normalizing; the matrix is
/// then column diagonally dominant, so banded elimination without pivoting
/// is safe. Uniformized power iteration is the fallback.
pub(crate) fn stationary_vector(n: usize, trans: &[Transition], anchor: usize) -> Result<(Vec<f64>, &'static str)> {
    if n == 1 {
        return Ok((vec![1.0], "trivial"));
    }
    let mut out = vec![0.0; n];
    let (mut kl, mut ku) = (0usize, 0usize);
    for t in trans {
        out[t.from] += t.rate;
        if t.to > t.from {
            kl = kl.max(t.to - t.from);
        } else {
            ku = ku.max(t.from - t.to);
        }
    }
    let mut a = BandMatrix::zeros(n, kl, ku);
    for (i, &q) in out.iter().enumerate() {
        a.set(i, i, q);
    }
    for t in trans {
        if t.from != t.to {
            a.add(t.to, t.from, -t.rate);
        }
    }
    a.clear_row(anchor);
    let d = out[anchor] + 1.0;
    a.set(anchor, anchor, d);
    let mut b = vec![0.0; n];
    b[anchor] = d;
    if let Ok(()) = a.solve(&mut b) {
        let total: f64 = b.iter().sum();
        let max = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = b.iter().copied().fold(f64::INFINITY, f64::min);
        if total > 0.0 && min >= -1e-12 * max {
            for v in &mut b {
                *v = v.max(0.0) / total;
            }
            return Ok((b, "banded-lu"));
        }
    }
    power_iteration(n, trans, &out)
}

fn power_iteration(n: usize, trans: &[Transition], out: &[f64]) -> Result<(Vec<f64>, &'static str)> {
    let lambda = 1.05 * out.iter().fold(0.0f64, |m, &v| m.max(v));
    if !(lambda > 0.0) {
        return Err(Error::Solver("generator has no transitions".into()));
    }
    let mut nu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..200_000 {
        for i in 0..n {
            next[i] = nu[i] * (1.0 - out[i] / lambda);
        }
        for t in trans {
            if t.from != t.to {
                next[t.to] += nu[t.from] * t.rate / lambda;
            }
        }
        let total: f64 = next.iter().sum();
        let mut diff = 0.0;
        for i in 0..n {
            next[i] /= total;
            diff += (next[i] - nu[i]).abs();
        }
        std::mem::swap(&mut nu, &mut next);
        if diff < 1e-15 {
            return Ok((nu, "uniformized-power"));
        }
    }
    Err(Error::Solver("uniformized power iteration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state() {
        let (a, b) = (2.0, 3.0);
        let t = [
            Transition { from: 0, to: 1, rate: a },
            Transition { from: 1, to: 0, rate: b },
        ];
        let (nu, _) = stationary_vector(2, &t, 0).unwrap();
        assert!((nu[0] - b / (a + b)).abs() < 1e-15);
        assert!((nu[1] - a / (a + b)).abs() < 1e-15);
    }

    #[test]
    fn power_matches_direct() {
        let mut t = Vec::new();
        for i in 0..10usize {
            t.push(Transition { from: i, to: (i + 1) % 10, rate: 1.0 + i as f64 });
            t.push(Transition { from: (i + 1) % 10, to: i, rate: 0.5 });
        }
        let (a, _) = stationary_vector(10, &t, 3).unwrap();
        let out: Vec<f64> = (0..10)
            .map(|i| t.iter().filter(|x| x.from == i).map(|x| x.rate).sum())
            .collect();
        let (b, _) = power_iteration(10, &t, &out).unwrap();
        for i in 0..10 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reducibility_detected() {
        let t = [Transition { from: 0, to: 1, rate: 1.0 }];
        assert_eq!(outside_class(2, &t, 0), vec![1]);
    }
}
