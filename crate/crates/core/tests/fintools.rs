mod common;

use common::oracles::{phi_by_quadrature, random_expr, to_f64, IntSystem, OracleError};
use meff_core::fintools::{self, expr, standard_normal_cdf, OutcomeValue, ToolError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn compound_growth_matches_repeated_multiplication() {
    // Ten multiplications carried out exactly in rationals.
    let exact = (0..10).fold(
        num_rational::BigRational::from_integer(1.into()),
        |acc, _| acc * common::oracles::parse_decimal("1.05"),
    );
    let expected = to_f64(&exact);
    assert!((expected - 1.62889462677744).abs() < 1e-14);
    let got = fintools::eval_expression("(1+0.05)^10").unwrap();
    match got.value {
        OutcomeValue::Number(v) => assert!(((v - expected) / expected).abs() <= 1e-12),
        other => panic!("{other:?}"),
    }
    assert_eq!(got.rendered, "1.62889462678");
}

#[test]
fn random_expressions_match_rational_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for _ in 0..300 {
        let tree = random_expr(&mut rng, 6);
        let src = tree.render();
        let got = expr::parse(&src).and_then(|e| e.eval());
        match (tree.eval(), got) {
            (Ok(r), Ok(v)) => {
                let want = to_f64(&r);
                let err = if want == 0.0 { v.abs() } else { ((v - want) / want).abs() };
                assert!(err <= 1e-9, "{src}: {v} vs {want}");
                checked += 1;
            }
            (Err(OracleError::DivisionByZero), Err(ToolError::Math(_))) => {}
            (Err(OracleError::Overflow), Err(ToolError::Math(_))) => {}
            (o, g) => panic!("{src}: oracle {o:?} vs {g:?}"),
        }
    }
    assert!(checked > 200);
}

#[test]
fn normal_cdf_matches_quadrature_on_grid() {
    for i in -400..=400 {
        let x = i as f64 / 100.0;
        let want = phi_by_quadrature(x);
        assert!((standard_normal_cdf(x) - want).abs() <= 1e-7, "x={x}");
    }
    assert!((phi_by_quadrature(1.96) - 0.9750).abs() < 1e-4);
}

#[test]
fn normal_cdf_reflection_identity() {
    let a = standard_normal_cdf(-2.0);
    let b = 1.0 - standard_normal_cdf(2.0);
    assert!((a - b).abs() <= 1e-9);
}

#[test]
fn random_nonsingular_systems_have_small_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=8 {
        for _ in 0..5 {
            let sys = IntSystem::random(&mut rng, n);
            let out = fintools::solve_linear_system(&sys.equations()).unwrap();
            let OutcomeValue::Solution(sol) = out.value else { panic!() };
            assert!(sys.max_scaled_residual(&sol) <= 1e-9);
        }
    }
}

fn classify(eqs: &[String]) -> &'static str {
    match fintools::solve_linear_system(eqs) {
        Ok(_) => "unique",
        Err(ToolError::Inconsistent) => "inconsistent",
        Err(ToolError::Underdetermined) => "underdetermined",
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #[test]
    fn reflection_and_monotonicity(x in -10.0f64..10.0) {
        let p = standard_normal_cdf(x);
        prop_assert!((p + standard_normal_cdf(-x) - 1.0).abs() <= 1e-9);
        prop_assert!(standard_normal_cdf(x + 0.01) >= p);
    }

    #[test]
    fn permuting_equations_keeps_classification(
        rows in prop::collection::vec(prop::collection::vec(-3i64..=3, 3), 1..5),
        rhs in prop::collection::vec(-5i64..=5, 5),
        rot in 0usize..5,
    ) {
        let eqs: Vec<String> = rows.iter().zip(&rhs).map(|(r, b)| {
            format!("({})*x + ({})*y + ({})*z = {b}", r[0], r[1], r[2])
        }).collect();
        // Variables must all appear for the classification to be comparable.
        let mut eqs = eqs;
        eqs.push("0*x + 0*y + 0*z = 0".into());
        let mut permuted = eqs.clone();
        permuted.rotate_left(rot % eqs.len());
        permuted.reverse();
        prop_assert_eq!(classify(&eqs), classify(&permuted));
    }

    #[test]
    fn counting_is_additive(a in prop::collection::vec(-1e6f64..1e6, 0..20), b in prop::collection::vec(-1e6f64..1e6, 0..20)) {
        let fmt = |v: &[f64]| format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "));
        let both: Vec<f64> = a.iter().chain(&b).copied().collect();
        let count = |s: String| match fintools::count_samples(&s).unwrap().value {
            OutcomeValue::Count(n) => n,
            _ => unreachable!(),
        };
        prop_assert_eq!(count(fmt(&both)), count(fmt(&a)) + count(fmt(&b)));
    }

    #[test]
    fn rendered_numbers_reparse_within_rendering_precision(v in -1e12f64..1e12) {
        let s = fintools::render_number(v);
        let back: f64 = expr::parse(&s).unwrap().eval().unwrap();
        prop_assert!((back - v).abs() <= 1e-11 * v.abs().max(1e-300) + 1e-300);
    }
}
