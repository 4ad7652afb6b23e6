//! Quadrature helpers: adaptive Gauss–Kronrod (7/15) and composite Simpson
//! weights on uniform grids.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One G7/K15 panel: (Kronrod estimate, |Kronrod − Gauss|).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive integration of `f` over `[a, b]` to absolute tolerance `tol`.
/// Returns `(value, error_estimate)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let mut total = 0.0;
    let mut err = 0.0;
    let mut stack = vec![(a, b, tol, 0u32)];
    while let Some((lo, hi, t, depth)) = stack.pop() {
        let (v, e) = gk15(&f, lo, hi);
        if e <= t.max(50.0 * f64::EPSILON * v.abs()).max(1e-300) || depth >= 40 || !v.is_finite() {
            total += v;
            err += e;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, 0.5 * t, depth + 1));
            stack.push((lo, mid, 0.5 * t, depth + 1));
        }
    }
    (total, err)
}

/// Composite Simpson weights for `m` uniform nodes with spacing `h`.
/// With an even number of intervals the rule is Simpson throughout; with an
/// odd count the last three intervals use Simpson's 3/8 rule.
pub fn simpson_weights(m: usize, h: f64) -> Vec<f64> {
    assert!(m >= 2, "need at least two nodes");
    let mut w = vec![0.0; m];
    let intervals = m - 1;
    if intervals == 1 {
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    let (simpson_end, tail) = if intervals.is_multiple_of(2) {
        (intervals, false)
    } else {
        (intervals - 3, true)
    };
    let mut i = 0;
    while i + 2 <= simpson_end {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if tail {
        let s = simpson_end;
        let c = 3.0 * h / 8.0;
        w[s] += c;
        w[s + 1] += 3.0 * c;
        w[s + 2] += 3.0 * c;
        w[s + 3] += c;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_polynomials_exact() {
        let (v, _) = integrate(|x| x.powi(5) - 3.0 * x * x + 1.0, -1.0, 2.0, 1e-14);
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0) + 3.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn gk_kink() {
        let (v, _) = integrate(|x: f64| x.abs(), -1.0, 3.0, 1e-13);
        assert!((v - 5.0).abs() < 1e-11, "{v}");
    }

    #[test]
    fn gk_gaussian() {
        let (v, _) = integrate(|x: f64| (-0.5 * x * x).exp(), -12.0, 12.0, 1e-14);
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12, "{v:e}");
    }

    #[test]
    fn simpson_weights_sum_to_length() {
        for m in 2..12 {
            let w = simpson_weights(m, 0.1);
            let s: f64 = w.iter().sum();
            assert!((s - 0.1 * (m - 1) as f64).abs() < 1e-14, "m={m}");
        }
    }

    #[test]
    fn simpson_cubic_exact() {
        for m in [5usize, 6, 9, 10] {
            let h = 2.0 / (m - 1) as f64;
            let w = simpson_weights(m, h);
            let v: f64 = (0..m)
                .map(|i| {
                    let x = -1.0 + h * i as f64;
                    w[i] * (x * x * x + x * x)
                })
                .sum();
            assert!((v - 2.0 / 3.0).abs() < 1e-13, "m={m}: {v}");
        }
    }
}
