use approx::assert_relative_eq;
use gpnn_core::kernels::{Family, HyperParams, KernelSpec};
use gpnn_core::matrix_analysis::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernel(l: f64, sf2: f64, sn2: f64) -> KernelSpec {
    KernelSpec::new(
        Family::SquaredExponential,
        HyperParams::new(l, sf2, sn2).unwrap(),
    )
    .unwrap()
}

fn cluster(rng: &mut ChaCha8Rng, m: usize, d: usize, radius: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let pts = (0..m)
        .map(|_| {
            (0..d)
                .map(|_| radius * (rng.random::<f64>() * 2.0 - 1.0))
                .collect()
        })
        .collect();
    (pts, vec![0.0; d])
}

fn stats_for(k: &KernelSpec, pts: &[Vec<f64>], q: &[f64]) -> EpsilonStats {
    let rows: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
    epsilon_stats(k, &rows, q).unwrap()
}

fn gram(k: &KernelSpec, pts: &[Vec<f64>]) -> DMatrix<f64> {
    let m = pts.len();
    DMatrix::from_fn(m, m, |i, j| k.covariance(&pts[i], &pts[j], i == j).unwrap())
}

#[test]
fn stats_example() {
    let k = kernel(1.0, 1.0, 0.1);
    let s = stats_for(&k, &[vec![1.0], vec![-1.0]], &[0.0]);
    let e1 = 1.0 - (-0.5f64).exp();
    let e2 = 1.0 - (-2.0f64).exp();
    assert_relative_eq!(s.to_query[0], e1, max_relative = 1e-14);
    assert_relative_eq!(s.mean_to_query, e1, max_relative = 1e-14);
    assert_relative_eq!(s.pairwise[(0, 1)], e2, max_relative = 1e-14);
    assert_eq!(s.mean_pairwise, Some(e2));
    assert_eq!(s.min_pairwise, Some(e2));
}

#[test]
fn single_neighbour_has_no_pairwise_statistics() {
    let k = kernel(1.0, 1.0, 0.1);
    let s = stats_for(&k, &[vec![0.5]], &[0.0]);
    assert_eq!(s.mean_pairwise, None);
    let a4 = check_a4(&s, &k.params(), 1);
    assert!(a4.holds && a4.vacuous);
}

#[test]
fn from_parts_rejects_mismatch_and_empty() {
    assert!(EpsilonStats::from_parts(vec![], DMatrix::zeros(0, 0)).is_err());
    assert!(EpsilonStats::from_parts(vec![0.1, 0.2], DMatrix::zeros(3, 3)).is_err());
}

#[test]
fn limit_inverse_is_exact() {
    let p = HyperParams::new(1.0, 0.7, 0.3).unwrap();
    for m in [1usize, 2, 5, 17] {
        let k = DMatrix::from_fn(m, m, |i, j| 0.7 + if i == j { 0.3 } else { 0.0 });
        let lim = LimitMatrices::new(&k, &p).unwrap();
        let id = &lim.k_inf * &lim.q;
        assert!((id - DMatrix::identity(m, m)).amax() < 1e-12);
        assert!(lim.e.amax() < 1e-15);
        assert_relative_eq!(
            lim.eq_norm_reference(),
            m as f64 * 0.7 / (0.3 + m as f64 * 0.7)
        );
    }
}

#[test]
fn gram_from_stats_matches_kernel_gram() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = kernel(0.7, 0.8, 0.2);
    let (pts, q) = cluster(&mut rng, 9, 3, 0.5);
    let s = stats_for(&k, &pts, &q);
    let diff = gram_from_stats(&s, &k.params()) - gram(&k, &pts);
    assert!(diff.amax() < 1e-14);
}

#[test]
fn e_norm_exact_is_row_sum_of_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = kernel(1.0, 0.9, 0.1);
    let (pts, q) = cluster(&mut rng, 6, 2, 0.8);
    let s = stats_for(&k, &pts, &q);
    let lim = LimitMatrices::new(&gram(&k, &pts), &k.params()).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..6 {
        worst = worst.max((0..6).map(|i| lim.e[(i, j)].abs()).sum());
    }
    assert_relative_eq!(e_norm_exact(&s), worst, max_relative = 1e-12);
}

#[test]
fn neumann_error_shrinks_cubically() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = (0.9, 0.1);
    let (pts, _) = cluster(&mut rng, 8, 2, 1.0);
    let mut errs = Vec::new();
    for l in [20.0, 40.0, 80.0] {
        let k = kernel(l, p.0, p.1);
        let g = gram(&k, &pts);
        let lim = LimitMatrices::new(&g, &k.params()).unwrap();
        let approx = neumann_inverse(&g, &lim).unwrap();
        let exact = g.clone().try_inverse().unwrap();
        errs.push((approx - exact).amax());
    }
    // Doubling l quarters every ε, so the cubic residual falls by 64.
    for w in errs.windows(2) {
        let r = w[0] / w[1];
        assert!((40.0..90.0).contains(&r), "ratio {r}");
    }
}

#[test]
fn neumann_refuses_divergent_expansion() {
    let k = kernel(0.01, 0.9, 0.1);
    let pts = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
    let g = gram(&k, &pts);
    let lim = LimitMatrices::new(&g, &k.params()).unwrap();
    assert!(lim.eq_norm() >= 1.0);
    assert!(matches!(
        neumann_inverse(&g, &lim),
        Err(gpnn_core::Error::Divergence { .. })
    ));
}

#[test]
fn quadratic_gap_is_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (pts, _) = cluster(&mut rng, 10, 3, 1.0);
    let gaps: Vec<f64> = [30.0, 60.0, 120.0]
        .iter()
        .map(|&l| one_k_sq_one_gap(&gram(&kernel(l, 0.9, 0.1), &pts)))
        .collect();
    for w in gaps.windows(2) {
        let r = w[0] / w[1];
        assert!((14.0..18.0).contains(&r), "ratio {r}");
    }
}

#[test]
fn sum_approximation_error_is_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (pts, q) = cluster(&mut rng, 12, 2, 1.0);
    let err = |l: f64| {
        let k = kernel(l, 0.9, 0.1);
        let s = stats_for(&k, &pts, &q);
        let g = gram(&k, &pts);
        (one_k_inv_one_exact(&g, &k.params()).unwrap() - one_k_inv_one_approx(&s, &k.params(), 12))
            .abs()
    };
    // The residual carries an O(σ_ξ²/m²) term besides the O(ε²) one, so
    // only compare against the approximation's own first-order correction.
    let k = kernel(50.0, 0.9, 0.1);
    let s = stats_for(&k, &pts, &q);
    let first_order = s.mean_pairwise.unwrap() / 0.81;
    assert!(err(50.0) < first_order);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gershgorin_sandwich_and_e_norm_bound(seed in 0u64..10_000, m in 2usize..25, d in 1usize..6,
                                            l in 0.2f64..3.0, sf2 in 0.5f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = kernel(l, sf2, 1.0 - sf2);
        let (pts, q) = cluster(&mut rng, m, d, 1.0);
        let s = stats_for(&k, &pts, &q);
        let g = gram(&k, &pts);
        let mean = one_k_inv_one_exact(&g, &k.params()).unwrap() / m as f64;
        let (lo, hi) = gershgorin_sum_bounds(&s, &k.params(), m);
        prop_assert!(lo <= mean * (1.0 + 1e-12) && mean <= hi * (1.0 + 1e-12), "{lo} {mean} {hi}");
        prop_assert!(e_norm_exact(&s) <= e_norm_bound(&s, m) * (1.0 + 1e-12));
    }

    #[test]
    fn a4_holds_under_unit_total_variance(seed in 0u64..10_000, m in 2usize..30, d in 1usize..10,
                                           l in 0.2f64..2.0, sf2 in 0.5f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = kernel(l, sf2, 1.0 - sf2);
        let (pts, q) = cluster(&mut rng, m, d, 3.0);
        let s = stats_for(&k, &pts, &q);
        prop_assert!(check_a4(&s, &k.params(), m).holds);
    }
}
