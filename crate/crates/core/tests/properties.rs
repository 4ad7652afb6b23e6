mod common;

use gaplab::chain::scale_chain;
use gaplab::expr::{parse, Expr, Scope};
use gaplab::lab::fit_rate;
use gaplab::lyapunov::parse_candidate;
use gaplab::steady::{chain_stationary_bd, LatticeBox};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parser_never_panics(src in "\\PC{0,40}") {
        let _ = parse(&src);
    }

    #[test]
    fn candidate_parser_never_panics(src in "(poly|quad|exp|expr|x):[-0-9.,e x+*^()]{0,24}", dim in 1usize..4) {
        let _ = parse_candidate(&src, dim);
    }

    #[test]
    fn compiled_polynomial_matches_direct(a in -5.0f64..5.0, b in -5.0f64..5.0, x in -10.0f64..10.0) {
        let mut scope = Scope::new();
        scope.push("x");
        let e = Expr::compile(&format!("{a:?}*x^2 + {b:?}*x - 1"), &scope).unwrap();
        let want = a * x * x + b * x - 1.0;
        prop_assert!((e.eval(&[x]) - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn power_law_gaps_recover_exponent(c in 0.01f64..100.0, s in -2.0f64..0.5) {
        let rows: Vec<(f64, f64)> = [10.0, 100.0, 1000.0, 10000.0].iter().map(|&n: &f64| (n, c * n.powf(s))).collect();
        let fit = fit_rate(&rows).unwrap();
        prop_assert!((fit.slope - s).abs() < 1e-9);
        prop_assert!(fit.stderr < 1e-9);
    }

    #[test]
    fn quadratic_candidate_is_at_least_rho(rho in 1.0f64..10.0, m in 1u32..4, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let v = parse_candidate(&format!("quad:{rho},{m}"), 2).unwrap();
        prop_assert!(v.value(&[x, y]) >= rho);
    }

    #[test]
    fn product_form_satisfies_detailed_balance(b0 in 1.0f64..20.0, d1 in 0.5f64..3.0, d2 in 0.0f64..0.05) {
        let chain = common::birth_death("bd", 0.0, f64::INFINITY, move |_, _| b0, move |_, x| d1 * x + d2 * x * x);
        // positive root of b0 = d1 x + d2 x², in the cancellation-free form
        let center = 2.0 * b0 / (d1 + (d1 * d1 + 4.0 * d2 * b0).sqrt());
        let sc = scale_chain(chain, 1.0, vec![center]).unwrap();
        let d = chain_stationary_bd(&sc, &LatticeBox::new(vec![0], vec![120]).unwrap()).unwrap();
        let total: f64 = d.probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for k in 0..d.probs.len() - 1 {
            let x = d.states[k][0] as f64;
            let flow_up = d.probs[k] * b0;
            let flow_down = d.probs[k + 1] * (d1 * (x + 1.0) + d2 * (x + 1.0) * (x + 1.0));
            prop_assert!((flow_up - flow_down).abs() <= 1e-12 * flow_up.max(1e-300), "k = {k}");
        }
    }
}
