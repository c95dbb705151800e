use approx::assert_relative_eq;
use gpnn_core::bounds::*;
use gpnn_core::kernels::{Family, HyperParams, KernelSpec};
use gpnn_core::Error;
use proptest::prelude::*;

fn params(sf2: f64, sn2: f64) -> HyperParams {
    HyperParams::new(1.0, sf2, sn2).unwrap()
}

#[test]
fn wellspec_bound_example() {
    let rc = RateConstants::new(2.0, 2.0, 2, 10).unwrap();
    let p = params(0.9, 0.1);
    // floor 0.11, rate term 2·2·(1000/10)^-1 = 0.04
    assert_relative_eq!(
        mse_bound_wellspec(&rc, &p, 1000.0).unwrap(),
        0.15,
        max_relative = 1e-14
    );
    assert_relative_eq!(mse_floor(&p, 10), 0.11, max_relative = 1e-14);
}

#[test]
fn bounds_reject_n_below_m() {
    let rc = RateConstants::new(1.0, 2.0, 2, 10).unwrap();
    assert!(matches!(
        mse_bound_wellspec(&rc, &params(0.9, 0.1), 5.0),
        Err(Error::Domain(_))
    ));
}

#[test]
fn rate_constants_validate() {
    assert!(RateConstants::new(0.0, 2.0, 2, 10).is_err());
    assert!(RateConstants::new(1.0, 2.5, 2, 10).is_err());
    assert!(RateConstants::new(1.0, 2.0, 0, 10).is_err());
    let rc = RateConstants::new(1.0, 2.0, 2, 10).unwrap();
    assert!(!rc.dimension_exceeds_exponent());
    assert!(RateConstants::new(1.0, 2.0, 3, 10)
        .unwrap()
        .dimension_exceeds_exponent());
    assert!(GuaranteeQuery::new(0.1, 1.0).is_err());
    assert!(GuaranteeQuery::new(-0.1, 0.5).is_err());
}

#[test]
fn misspec_reduces_to_twice_the_rate_when_matched() {
    let rc = RateConstants::new(1.5, 2.0, 3, 8).unwrap();
    let p = params(0.8, 0.2);
    let well = mse_bound_wellspec(&rc, &p, 5000.0).unwrap();
    let mis = mse_bound_misspec(&rc, &rc, &p, &p, 5000.0).unwrap();
    assert_relative_eq!(
        mis - mse_floor(&p, 8),
        2.0 * (well - mse_floor(&p, 8)),
        max_relative = 1e-12
    );
    let other = RateConstants::new(1.5, 2.0, 3, 9).unwrap();
    assert!(matches!(
        mse_bound_misspec(&rc, &other, &p, &p, 5000.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn variance_bound_example() {
    let rc = RateConstants::new(1.0, 2.0, 2, 10).unwrap();
    let p = params(0.9, 0.1);
    // 4·0.11·1·(100)^-1
    assert_relative_eq!(
        mse_variance_bound(&rc, &p, 1000.0, None).unwrap(),
        0.0044,
        max_relative = 1e-12
    );
    let two = mse_variance_bound(&rc, &p, 1000.0, Some((&rc, &p))).unwrap();
    // 2·0.0044 + 2·(2·0.11·1·1)·0.01
    assert_relative_eq!(two, 0.0088 + 0.0044, max_relative = 1e-12);
}

#[test]
fn min_n_wellspec_example() {
    let q = GuaranteeQuery::new(0.02, 0.5).unwrap();
    let rc = RateConstants::new(1.0, 2.0, 2, 10).unwrap();
    let p = params(0.9, 0.1);
    let bracket = 3.0 * 0.02 / 2.0 + 0.11 / 0.5;
    assert_relative_eq!(
        min_n_wellspec(&q, &rc, &p),
        10.0 / bracket,
        max_relative = 1e-12
    );
}

#[test]
fn min_n_misspec_agrees_with_closed_form_when_terms_coincide() {
    // With identical constants the implicit equation is 4C(n/m)^{-p/d} = target.
    let q = GuaranteeQuery::new(0.05, 0.2).unwrap();
    let rc = RateConstants::new(3.0, 2.0, 4, 10).unwrap();
    let p = params(0.9, 0.1);
    let target: f64 = 3.0 * 0.05 + 2.0 * 0.11 / 0.2;
    let expected = 10.0 * (target / 12.0f64).powf(-2.0);
    let sol = min_n_misspec(&q, &rc, &rc, &p, &p).unwrap();
    assert_relative_eq!(sol.n, expected, max_relative = 1e-5);
}

#[test]
fn min_n_misspec_solves_the_implicit_equation() {
    let q = GuaranteeQuery::new(0.01, 0.1).unwrap();
    let gen = RateConstants::new(2.0, 2.0, 3, 10).unwrap();
    let model = RateConstants::new(5.0, 1.0, 3, 10).unwrap();
    let pg = params(0.9, 0.1);
    let pm = params(0.6, 0.2);
    let sol = min_n_misspec(&q, &gen, &model, &pg, &pm).unwrap();
    let lhs = 2.0 * (gen.term(sol.n) + 1.5 * model.term(sol.n));
    let target = 3.0 * 0.01 + 2.0 * mse_floor(&pg, 10) / 0.1;
    assert_relative_eq!(lhs, target, max_relative = 1e-5);
}

#[test]
fn cal_bounds_example() {
    let rc = RateConstants::new(1.0, 2.0, 2, 10).unwrap();
    let gen = params(0.9, 0.1);
    let model = params(0.9, 0.2);
    let (lo, hi) = cal_bounds(&rc, &rc, &gen, &model, 1000.0).unwrap();
    let term = 0.01;
    assert_relative_eq!(lo, 0.5 / (1.0 + 2.0 * term / 0.22), max_relative = 1e-12);
    assert_relative_eq!(hi, 0.5 + 10.0 * (term + term), max_relative = 1e-12);
    assert!(lo < 0.5 && 0.5 < hi);
}

#[test]
fn fluctuation_bound_example_and_clipping() {
    assert_relative_eq!(
        fluctuation_bound(0.5, 1.0, 50, 0.5).unwrap(),
        8.0 * 0.25 / (0.25 * 50.0)
    );
    assert_eq!(fluctuation_bound(0.5, 1.0, 1, 0.01).unwrap(), 1.0);
    let exp = KernelSpec::new(Family::Exponential, params(1.0, 0.1)).unwrap();
    assert!(matches!(
        fluctuation_bound_for(&exp, 10, 0.5),
        Err(Error::UnsupportedBound(_))
    ));
}

#[test]
fn epsilon_curve_decreases_and_c_dominates_it() {
    let k = KernelSpec::squared_exponential(HyperParams::new(0.5, 0.9, 0.1).unwrap()).unwrap();
    let grid = [100, 400, 1600];
    let curve = epsilon_curve(&k, 2, 5, &grid, 4, 1).unwrap();
    assert!(curve.mean.windows(2).all(|w| w[1] < w[0]));
    let rc = estimate_c(&k, 2, 5, &grid, 4, 1).unwrap();
    assert_eq!(rc.p, 2.0);
    for (&n, &e) in curve.n.iter().zip(&curve.mean) {
        assert!(e <= rc.term(n as f64) * (1.0 + 1e-12));
    }
    // ε̄ ≈ C(m/n) on a uniform-ish density, so the grid-wise products agree
    // to within a small factor.
    let products: Vec<f64> = curve
        .n
        .iter()
        .zip(&curve.mean)
        .map(|(&n, &e)| e * n as f64 / 5.0)
        .collect();
    let ratio = products.iter().cloned().fold(0.0, f64::max)
        / products.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(ratio < 2.0, "{products:?}");
}

#[test]
fn estimate_c_is_reproducible_and_validates_input() {
    let k = KernelSpec::squared_exponential(HyperParams::new(1.0, 0.9, 0.1).unwrap()).unwrap();
    let a = estimate_c(&k, 2, 5, &[50, 500], 3, 9).unwrap();
    let b = estimate_c(&k, 2, 5, &[50, 500], 3, 9).unwrap();
    assert_eq!(a, b);
    assert!(estimate_c(&k, 2, 5, &[50, 400], 3, 9).is_err());
    assert!(estimate_c(&k, 2, 5, &[50, 500], 2, 9).is_err());
    assert!(estimate_c(&k, 2, 5, &[3, 500], 3, 9).is_err());
}

proptest! {
    #[test]
    fn bound_decreases_in_n(c in 0.01f64..10.0, p in 0.1f64..2.0, d in 1usize..20, m in 1usize..50,
                            n in 100.0f64..1e6) {
        let rc = RateConstants::new(c, p, d, m).unwrap();
        let pr = params(0.9, 0.1);
        let a = mse_bound_wellspec(&rc, &pr, n).unwrap();
        let b = mse_bound_wellspec(&rc, &pr, 2.0 * n).unwrap();
        prop_assert!(b < a);
        prop_assert!(b > mse_floor(&pr, m));
    }

    #[test]
    fn min_n_monotone_in_epsilon(c in 0.1f64..10.0, d in 1usize..8, eps in 0.001f64..0.5, delta in 0.05f64..0.95) {
        let rc = RateConstants::new(c, 2.0, d, 10).unwrap();
        let pr = params(0.9, 0.1);
        let a = min_n_wellspec(&GuaranteeQuery::new(eps, delta).unwrap(), &rc, &pr);
        let b = min_n_wellspec(&GuaranteeQuery::new(2.0 * eps, delta).unwrap(), &rc, &pr);
        prop_assert!(b < a);
    }

    #[test]
    fn min_n_misspec_root_satisfies_equation_across_exponents(c in 0.5f64..5.0, ch in 0.5f64..5.0,
                                                        ph in 0.5f64..2.0, d in 1usize..6) {
        let q = GuaranteeQuery::new(0.01, 0.1).unwrap();
        let gen = RateConstants::new(c, 2.0, d, 10).unwrap();
        let model = RateConstants::new(ch, ph, d, 10).unwrap();
        let pr = params(0.9, 0.1);
        let sol = min_n_misspec(&q, &gen, &model, &pr, &pr).unwrap();
        let target = 3.0 * 0.01 + 2.0 * mse_floor(&pr, 10) / 0.1;
        let lhs = 2.0 * (gen.term(sol.n) + model.term(sol.n));
        prop_assert!((lhs / target - 1.0).abs() < 1e-4);
    }
}
