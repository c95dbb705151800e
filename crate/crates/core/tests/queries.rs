use approx::assert_relative_eq;
use gpnn_core::bounds::{mse_floor, RateConstants};
use gpnn_core::harness::queries::*;

const SE: &str = r#"{"family":"se","lengthscale":0.5,"signal_var":0.9,"noise_var":0.1}"#;

#[test]
fn bounds_request_with_supplied_constant() {
    let text =
        format!(r#"{{"kernel_gen": {SE}, "d": 2, "m": 10, "c_gen": 2.0, "n": [1000, 10000]}}"#);
    let req: BoundsRequest = serde_json::from_str(&text).unwrap();
    let out = evaluate_bounds(&req).unwrap();
    assert_eq!(out.formula, "mse_bound_wellspec");
    assert!(!out.constants.gen_estimated);
    let rc = RateConstants::new(2.0, 2.0, 2, 10).unwrap();
    let floor = mse_floor(&req.constants.kernel_gen.params(), 10);
    assert_relative_eq!(
        out.points[0].mse_bound,
        floor + 2.0 * rc.term(1000.0),
        max_relative = 1e-12
    );
    assert!(out.points[1].mse_bound < out.points[0].mse_bound);
    assert!(!out.advisories.is_empty());
    let json = serde_json::to_value(&out).unwrap();
    assert!(json.get("inputs").is_some() && json.get("formula").is_some());
}

#[test]
fn misspecified_bounds_use_two_constants() {
    let model = r#"{"family":"se","lengthscale":0.5,"signal_var":0.9,"noise_var":0.2}"#;
    let text = format!(
        r#"{{"kernel_gen": {SE}, "kernel_model": {model}, "d": 3, "m": 10, "c_gen": 1.0, "c_model": 1.5, "n": [5000]}}"#
    );
    let out = evaluate_bounds(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(out.formula, "mse_bound_misspec");
    assert_eq!(out.constants.model.c, 1.5);
    let p = &out.points[0];
    assert!(p.cal_lower < 0.5 && 0.5 < p.cal_upper);
}

#[test]
fn estimated_constant_is_reproducible() {
    let text = format!(
        r#"{{"kernel_gen": {SE}, "d": 2, "m": 5, "n": [500], "estimation": {{"trials": 3, "seed": 4}}}}"#
    );
    let req: BoundsRequest = serde_json::from_str(&text).unwrap();
    let a = evaluate_bounds(&req).unwrap();
    let b = evaluate_bounds(&req).unwrap();
    assert!(a.constants.gen_estimated);
    assert_eq!(a.constants.gen, b.constants.gen);
}

#[test]
fn sample_size_requests() {
    let text = format!(
        r#"{{"kernel_gen": {SE}, "d": 4, "m": 10, "c_gen": 1.0, "epsilon": 0.01, "delta": 0.5}}"#
    );
    let out = evaluate_sample_size(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(out.formula, "min_n_wellspec");
    let bracket: f64 = 3.0 * 0.01 / 2.0 + 0.11 / 0.5;
    assert_relative_eq!(out.n, 10.0 * bracket.powf(-2.0), max_relative = 1e-12);
    assert_eq!(out.n_ceil, out.n.ceil() as u64);

    let model = r#"{"family":"exp","lengthscale":0.5,"signal_var":0.9,"noise_var":0.1}"#;
    let text = format!(
        r#"{{"kernel_gen": {SE}, "kernel_model": {model}, "d": 4, "m": 10, "c_gen": 1.0, "c_model": 1.0, "epsilon": 0.01, "delta": 0.5}}"#
    );
    let out = evaluate_sample_size(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(out.formula, "min_n_misspec");

    let bad = format!(
        r#"{{"kernel_gen": {SE}, "d": 4, "m": 10, "c_gen": 1.0, "epsilon": 0.01, "delta": 1.5}}"#
    );
    assert!(evaluate_sample_size(&serde_json::from_str(&bad).unwrap()).is_err());
}
