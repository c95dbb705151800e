use approx::assert_relative_eq;
use gpnn_core::kernels::{Family, HyperParams, KernelSpec};
use gpnn_core::neighbours::Dataset;
use gpnn_core::predictor::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn kernel(family: Family, l: f64, sf2: f64, sn2: f64) -> KernelSpec {
    KernelSpec::new(family, HyperParams::new(l, sf2, sn2).unwrap()).unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .collect()
}

/// Textbook GP solve by explicit matrix inversion.
fn explicit_inverse(k: &KernelSpec, pts: &[Vec<f64>], y: &[f64], q: &[f64]) -> (f64, f64) {
    let p = k.params();
    let n = pts.len();
    let mut gram = DMatrix::zeros(n, n);
    let mut ks = DVector::zeros(n);
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] = k.covariance(&pts[i], &pts[j], i == j).unwrap();
        }
        ks[i] = k.covariance(&pts[i], q, false).unwrap();
    }
    let inv = gram.try_inverse().unwrap();
    let mean = (ks.transpose() * &inv * DVector::from_column_slice(y))[(0, 0)];
    let var = p.signal_variance + p.noise_variance - (ks.transpose() * &inv * &ks)[(0, 0)];
    (mean, var)
}

#[test]
fn gram_examples() {
    let k = kernel(Family::SquaredExponential, 1.0, 0.9, 0.1);
    let g = build_gram(&k, &[&[0.0]], &[0.3]).unwrap();
    assert_eq!(g.k[(0, 0)], 1.0);
    assert_relative_eq!(g.k_star[0], 0.9 * (-0.045f64).exp());
    let dup = build_gram(&k, &[&[0.2, 0.2], &[0.2, 0.2]], &[0.0, 0.0]).unwrap();
    assert_eq!(dup.k[(0, 1)], 0.9);
    assert!(dup.k.clone().cholesky().is_some());
    let r = (2.0 * 2f64.ln()).sqrt();
    let g = build_gram(&k, &[&[0.0], &[r]], &[0.0]).unwrap();
    assert_relative_eq!(g.k[(0, 1)], 0.45, epsilon = 1e-15);
}

#[test]
fn far_query_reverts_to_prior() {
    let k = kernel(Family::SquaredExponential, 0.5, 0.9, 0.1);
    let p = gpnn_predict(&k, &[&[0.0], &[0.1]], &[3.0, -1.0], &[50.0]).unwrap();
    assert!(p.mean.abs() < 1e-12);
    assert_relative_eq!(p.variance, 1.0, epsilon = 1e-12);
}

#[test]
fn matches_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for family in [
        Family::SquaredExponential,
        Family::Matern { nu: 1.5 },
        Family::RationalQuadratic { alpha: 1.0 },
    ] {
        for _ in 0..20 {
            let k = kernel(family, 0.7, 0.9, 0.1);
            let pts = random_points(&mut rng, 5, 3);
            let y: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let q: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let p = gpnn_predict(&k, &refs, &y, &q).unwrap();
            let (mean, var) = explicit_inverse(&k, &pts, &y, &q);
            assert_relative_eq!(p.mean, mean, max_relative = 1e-9, epsilon = 1e-12);
            assert_relative_eq!(p.variance, var, max_relative = 1e-9);
        }
    }
}

#[test]
fn exact_gp_matches_explicit_inverse_and_full_gpnn() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = kernel(Family::Exponential, 0.6, 1.2, 0.2);
    let pts = random_points(&mut rng, 50, 2);
    let y: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
    let data = Dataset::new(pts.concat(), y.clone(), 2).unwrap();
    let gp = ExactGp::fit(&k, &data).unwrap();
    let all = GpnnPredictor::new(&data, k, 50).unwrap();
    for _ in 0..10 {
        let q: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
        let e = gp.predict(&q).unwrap();
        let (mean, var) = explicit_inverse(&k, &pts, &y, &q);
        assert_relative_eq!(e.mean, mean, max_relative = 1e-9);
        assert_relative_eq!(e.variance, var, max_relative = 1e-9);
        let g = all.predict(&q).unwrap();
        assert_relative_eq!(g.mean, e.mean, max_relative = 1e-9);
        assert_relative_eq!(g.variance, e.variance, max_relative = 1e-9);
    }
}

#[test]
fn exact_gp_single_point_and_cap() {
    let k = kernel(Family::SquaredExponential, 1.0, 0.9, 0.1);
    let data = Dataset::new(vec![0.5], vec![2.0], 1).unwrap();
    let p = exact_gp_predict(&k, &data, &[0.5]).unwrap();
    assert_relative_eq!(p.mean, 1.8, epsilon = 1e-14);
    let big = Dataset::new(vec![0.0; 11], vec![0.0; 11], 1).unwrap();
    assert!(ExactGp::fit_with_cap(&k, &big, 10).is_err());
}

#[test]
fn infinite_lengthscale_examples() {
    let tiny_noise = kernel(Family::SquaredExponential, 1.0, 1.0, 1e-12);
    let p = gpnn_predict_infinite_lengthscale(&tiny_noise, &[1.0, 2.0, 6.0]).unwrap();
    assert_relative_eq!(p.mean, 3.0, epsilon = 1e-10);
    let k = kernel(Family::SquaredExponential, 1.0, 0.9, 0.1);
    let p = gpnn_predict_infinite_lengthscale(&k, &[2.0]).unwrap();
    assert_relative_eq!(p.mean, 1.8, epsilon = 1e-14);
    assert_relative_eq!(p.variance, 0.19, epsilon = 1e-14);
}

#[test]
fn huge_lengthscale_matches_shrunk_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let m = rng.random_range(1..30);
        let k = kernel(Family::SquaredExponential, 1e6, 0.9, 0.1);
        let pts = random_points(&mut rng, m, 4);
        let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let q: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let a = gpnn_predict(&k, &refs, &y, &q).unwrap();
        let b = gpnn_predict_infinite_lengthscale(&k, &y).unwrap();
        assert!((a.mean - b.mean).abs() <= 1e-6);
        assert!((a.variance - b.variance).abs() <= 1e-6);
    }
}

#[test]
fn uniform_weights_minimise_limit_mse() {
    // Neighbours collapsed onto the query: y_i = f + ξ_i, y* = f + ξ*.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = 5;
    let noise = Normal::new(0.0, 0.1f64.sqrt()).unwrap();
    let field = Normal::new(0.0, 0.9f64.sqrt()).unwrap();
    let draws: Vec<(Vec<f64>, f64)> = (0..20_000)
        .map(|_| {
            let f = field.sample(&mut rng);
            let ys = (0..m).map(|_| f + noise.sample(&mut rng)).collect();
            (ys, f + noise.sample(&mut rng))
        })
        .collect();
    let mse = |w: &[f64]| {
        draws
            .iter()
            .map(|(ys, t)| (t - ys.iter().zip(w).map(|(y, w)| y * w).sum::<f64>()).powi(2))
            .sum::<f64>()
            / draws.len() as f64
    };
    let uniform = vec![1.0 / m as f64; m];
    let best = mse(&uniform);
    for _ in 0..200 {
        let mut w: Vec<f64> = uniform
            .iter()
            .map(|u| u + 0.1 * (rng.random::<f64>() - 0.5))
            .collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        assert!(mse(&w) >= best - 1e-12);
    }
    assert_relative_eq!(best, 0.1 * (1.0 + 1.0 / m as f64), max_relative = 0.05);
}

#[test]
fn periodic_model_ranks_by_kernel_metric() {
    let k = kernel(Family::Periodic { period: 1.0 }, 0.5, 1.0, 0.1);
    let data = Dataset::new(vec![0.0, 0.45, 1.02], vec![1.0, 2.0, 3.0], 1).unwrap();
    let pred = GpnnPredictor::new(&data, k, 1).unwrap();
    // 1.02 is one period from 0.02, closer in the kernel metric than 0.45
    assert_eq!(pred.neighbours(&[0.0]).unwrap().indices, vec![0]);
    assert_eq!(pred.neighbours(&[0.03]).unwrap().indices, vec![2]);
}

proptest! {
    #[test]
    fn variance_bounds_and_permutation_invariance(
        seed in any::<u64>(),
        m in 1usize..15,
        l in 0.05f64..3.0,
        sf2 in 0.1f64..2.0,
        sn2 in 0.01f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = kernel(Family::Matern { nu: 2.5 }, l, sf2, sn2);
        let pts = random_points(&mut rng, m, 2);
        let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let q = [rng.random::<f64>(), rng.random::<f64>()];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let p = gpnn_predict(&k, &refs, &y, &q).unwrap();
        prop_assert!(p.variance > sn2 && p.variance <= sf2 + sn2 + 1e-12);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.reverse();
        perm.rotate_left(m / 3);
        let prefs: Vec<&[f64]> = perm.iter().map(|&i| refs[i]).collect();
        let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let pp = gpnn_predict(&k, &prefs, &py, &q).unwrap();
        prop_assert!((p.mean - pp.mean).abs() <= 1e-12);
        prop_assert!((p.variance - pp.variance).abs() <= 1e-12);
    }

    #[test]
    fn interpolates_as_noise_vanishes(seed in any::<u64>(), m in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = kernel(Family::SquaredExponential, 0.3, 1.0, 1e-9);
        let pts = random_points(&mut rng, m, 2);
        let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let p = gpnn_predict(&k, &refs, &y, &pts[0]).unwrap();
        prop_assert!((p.mean - y[0]).abs() < 1e-4);
    }
}
