//! Banded LU factorization without pivoting.
//!
//! Used for generator-type systems whose matrices are column diagonally
//! dominant, for which Gaussian elimination without pivoting is stable and
//! preserves the band.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Zero row `i` within the band.
    pub fn clear_row(&mut self, i: usize) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        for j in lo..=hi {
            self.set(i, j, 0.0);
        }
    }

    /// Solve `A x = b` in place (A is consumed by the factorization).
    pub fn solve(mut self, b: &mut [f64]) -> Result<()> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * 1e-300_f64.max(f64::EPSILON * 1e-6);
        for k in 0..n {
            let pivot = self.get(k, k);
            if !(pivot.abs() > tiny) || !pivot.is_finite() {
                return Err(Error::Solver(format!("zero pivot at row {k}")));
            }
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.ku).min(n - 1);
            for i in k + 1..=last_row {
                let lik = self.get(i, k) / pivot;
                if lik == 0.0 {
                    continue;
                }
                self.set(i, k, lik);
                for j in k + 1..=last_col {
                    let ukj = self.data[self.idx(k, j)];
                    if ukj != 0.0 {
                        let at = self.idx(i, j);
                        self.data[at] -= lik * ukj;
                    }
                }
                b[i] -= lik * b[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + self.ku).min(n - 1);
            let mut s = b[k];
            for j in k + 1..=last_col {
                s -= self.get(k, j) * b[j];
            }
            b[k] = s / self.get(k, k);
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("non-finite solution".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve() {
        let n = 6;
        let mut a = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            a.set(i, i, 4.0);
            if i > 0 {
                a.set(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.set(i, i + 1, -1.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| {
                (0..n).map(|j| a.get(i, j) * x[j]).sum()
            })
            .collect();
        a.solve(&mut b).unwrap();
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn wide_band_matches_dense() {
        let n = 30;
        let (kl, ku) = (5, 3);
        let mut a = BandMatrix::zeros(n, kl, ku);
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v = if i == j { 20.0 } else { ((i * 7 + j * 3) % 5) as f64 - 2.0 };
                a.set(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = rhs.clone();
        a.solve(&mut b).unwrap();
        let want = dense.lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert!((b[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_reports_error() {
        let a = BandMatrix::zeros(3, 1, 1);
        let mut b = vec![1.0; 3];
        assert!(a.solve(&mut b).is_err());
    }
}
