//! Randomised checks of the matrix inequalities and metric bounds on
//! realistic nearest-neighbour configurations.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::kernels::{Family, HyperParams, KernelSpec};
use crate::linalg::{norm1, SpdFactor};
use crate::matrix_analysis::{
    check_a4, e_norm_bound, e_norm_exact, epsilon_stats, gershgorin_sum_bounds, gram_from_stats,
    neumann_inverse, one_k_inv_one_approx, one_k_inv_one_exact, one_k_sq_one_gap, EpsilonStats,
    LimitMatrices,
};
use crate::neighbours::KdTree;
use crate::rng::{self, derive_seed};
use crate::simulate::sample_inputs;

/// Relative slack for floating-point comparisons against closed-form bounds.
pub const FLOAT_SLACK: f64 = 1e-12;

/// Families exercised by the suite; every one has a metric bound.
pub fn bounded_families() -> Vec<Family> {
    vec![
        Family::SquaredExponential,
        Family::Exponential,
        Family::Matern { nu: 0.4 },
        Family::Matern { nu: 1.5 },
        Family::Matern { nu: 2.5 },
        Family::RationalQuadratic { alpha: 1.0 },
        Family::RationalQuadratic { alpha: 4.0 },
        Family::Periodic { period: 2.0 },
    ]
}

/// A query, its m nearest neighbours and a kernel with `σ_f² + σ_ξ² = 1`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub kernel: KernelSpec,
    pub query: Vec<f64>,
    pub neighbours: Vec<Vec<f64>>,
}

impl Instance {
    pub fn rows(&self) -> Vec<&[f64]> {
        self.neighbours.iter().map(|v| v.as_slice()).collect()
    }

    pub fn stats(&self) -> Result<EpsilonStats> {
        epsilon_stats(&self.kernel, &self.rows(), &self.query)
    }
}

/// Draws instance `index` of the stream identified by `seed`. Families that
/// are only positive definite on the line get one-dimensional inputs.
pub fn random_instance(seed: u64, index: u64, max_m: usize, max_d: usize) -> Result<Instance> {
    let mut rng = rng::rng(derive_seed(seed, &[index]));
    let families = bounded_families();
    let family = families[rng.random_range(0..families.len())];
    let d = if family.is_valid_in(max_d) {
        rng.random_range(1..=max_d)
    } else {
        1
    };
    let m = rng.random_range(2..=max_m);
    let pool = m * rng.random_range(1..=60);
    let lengthscale = (rng.random_range(0.2f64.ln()..2.0f64.ln())).exp();
    let signal = rng.random_range(0.5..0.95);
    let kernel = KernelSpec::new(family, HyperParams::new(lengthscale, signal, 1.0 - signal)?)?;
    let x = sample_inputs(pool, d, &mut rng);
    let query = sample_inputs(1, d, &mut rng);
    let tree = KdTree::from_points(&x, d, None)?;
    let set = tree.query(&query, m)?;
    let neighbours = set
        .indices
        .iter()
        .map(|&i| x[i * d..(i + 1) * d].to_vec())
        .collect();
    Ok(Instance {
        kernel,
        query,
        neighbours,
    })
}

/// Pass/fail counts for one inequality.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    /// Smallest relative margin `(limit − value)/|limit|`; negative when violated.
    pub worst_margin: f64,
    /// Largest `value/limit` ratio seen.
    pub worst_ratio: f64,
}

impl PropertyReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            worst_ratio: f64::NEG_INFINITY,
        }
    }

    fn record(&mut self, check: &Check) {
        self.checked += 1;
        if !check.holds {
            self.violations += 1;
        }
        self.worst_margin = self.worst_margin.min(check.margin);
        if check.ratio.is_finite() {
            self.worst_ratio = self.worst_ratio.max(check.ratio);
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.violations == 0
    }
}

/// Outcome of a single inequality on a single instance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Check {
    pub holds: bool,
    pub margin: f64,
    pub ratio: f64,
}

impl Check {
    /// `value ≤ limit` up to a relative slack.
    fn at_most(value: f64, limit: f64, slack: f64) -> Self {
        let scale = limit.abs().max(f64::MIN_POSITIVE);
        Self {
            holds: value <= limit + slack * scale,
            margin: (limit - value) / scale,
            ratio: value / limit,
        }
    }

    fn strictly_below(value: f64, limit: f64) -> Self {
        let scale = limit.abs().max(f64::MIN_POSITIVE);
        Self {
            holds: value < limit,
            margin: (limit - value) / scale,
            ratio: value / limit,
        }
    }

    fn combine(a: Check, b: Check) -> Self {
        Self {
            holds: a.holds && b.holds,
            margin: a.margin.min(b.margin),
            ratio: a.ratio.max(b.ratio),
        }
    }
}

/// Every per-instance check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InstanceChecks {
    pub admissible: Check,
    pub gershgorin: Check,
    pub e_norm: Check,
    pub eq_norm: Check,
    pub a1: Check,
    pub a4: Check,
}

/// Runs every inequality on one set of statistics. `distances` gives the
/// Euclidean query and pair distances behind `stats` for the metric-bound check.
pub fn check_instance(
    kernel: &KernelSpec,
    stats: &EpsilonStats,
    distances: Option<(&[f64], &DMatrix<f64>)>,
) -> Result<InstanceChecks> {
    let params = kernel.params();
    let m = stats.m();
    let sf2 = params.signal_variance;
    let entries = stats.to_query.iter().chain(stats.pairwise.iter());
    let (lo_e, hi_e) = entries.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let admissible = Check::combine(
        Check::at_most(-lo_e, 0.0, 0.0),
        Check::at_most(hi_e, sf2, FLOAT_SLACK),
    );

    let k = gram_from_stats(stats, &params);
    let (lo, hi) = gershgorin_sum_bounds(stats, &params, m);
    let gershgorin = match one_k_inv_one_exact(&k, &params) {
        Ok(total) => {
            let v = total / m as f64;
            Check::combine(
                Check::at_most(lo, v, FLOAT_SLACK),
                Check::at_most(v, hi, FLOAT_SLACK),
            )
        }
        Err(_) => Check {
            holds: false,
            margin: f64::NEG_INFINITY,
            ratio: f64::INFINITY,
        },
    };
    let e_norm = Check::at_most(e_norm_exact(stats), e_norm_bound(stats, m), FLOAT_SLACK);
    let limits = LimitMatrices::new(&k, &params)?;
    let eq_norm = Check::at_most(limits.eq_norm(), limits.eq_norm_reference(), 0.0);

    let mut a1 = Check {
        holds: true,
        margin: f64::INFINITY,
        ratio: 0.0,
    };
    if let (Some((to_query, pair)), Ok(bound)) = (distances, kernel.metric_bound()) {
        let l = params.lengthscale;
        let mut visit = |delta: f64, rho2: f64| {
            let t = delta / l;
            if t > 0.0 && t < bound.domain_limit {
                a1 = Check::combine(a1, Check::at_most(rho2 / sf2, bound.eval(t), 0.0));
            }
        };
        for (i, &dq) in to_query.iter().enumerate() {
            visit(dq, stats.to_query[i]);
            for j in 0..i {
                visit(pair[(i, j)], stats.pairwise[(i, j)]);
            }
        }
    }
    let a4c = check_a4(stats, &params, m);
    let a4 = if a4c.vacuous {
        Check {
            holds: true,
            margin: f64::INFINITY,
            ratio: 0.0,
        }
    } else {
        Check::strictly_below(stats.min_pairwise.unwrap_or(0.0), a4c.threshold)
    };
    Ok(InstanceChecks {
        admissible,
        gershgorin,
        e_norm,
        eq_norm,
        a1,
        a4,
    })
}

fn euclidean(inst: &Instance) -> (Vec<f64>, DMatrix<f64>) {
    let m = inst.neighbours.len();
    let dist = |a: &[f64], b: &[f64]| crate::kernels::distance(a, b).unwrap_or(f64::NAN);
    let to_query = inst
        .neighbours
        .iter()
        .map(|p| dist(p, &inst.query))
        .collect();
    let pair = DMatrix::from_fn(m, m, |i, j| dist(&inst.neighbours[i], &inst.neighbours[j]));
    (to_query, pair)
}

/// Median and spread of a scaling ratio.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub name: String,
    pub instances: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub expected: f64,
    pub accepted: (f64, f64),
}

impl ScalingReport {
    fn from_ratios(name: &str, mut ratios: Vec<f64>, expected: f64, accepted: (f64, f64)) -> Self {
        ratios.sort_by(f64::total_cmp);
        let n = ratios.len();
        let median = match n {
            0 => f64::NAN,
            _ if n % 2 == 1 => ratios[n / 2],
            _ => 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]),
        };
        Self {
            name: name.into(),
            instances: n,
            median,
            min: ratios.first().copied().unwrap_or(f64::NAN),
            max: ratios.last().copied().unwrap_or(f64::NAN),
            expected,
            accepted,
        }
    }

    pub fn passed(&self) -> bool {
        self.median >= self.accepted.0 && self.median <= self.accepted.1
    }
}

/// Ratio of third-order expansion residuals at full and half perturbation,
/// or `None` if the expansion diverges or the half residual is round-off.
pub fn neumann_ratio(k: &DMatrix<f64>, params: &HyperParams) -> Result<Option<f64>> {
    let limits = LimitMatrices::new(k, params)?;
    if !(limits.eq_norm() < 1.0) {
        return Ok(None);
    }
    let residual = |kk: &DMatrix<f64>| -> Result<(f64, f64)> {
        let lim = LimitMatrices::new(kk, params)?;
        let approx = neumann_inverse(kk, &lim)?;
        let exact = SpdFactor::new(kk.clone(), params.total_variance())?.inverse();
        Ok((norm1(&(exact.clone() - approx)), norm1(&exact)))
    };
    let half = &limits.k_inf + &limits.e * 0.5;
    let (r_full, _) = residual(k)?;
    let (r_half, scale) = residual(&half)?;
    if r_half < 1e-9 * scale {
        return Ok(None);
    }
    Ok(Some(r_full / r_half))
}

/// Errors of the second-order `1ᵀK⁻¹1` approximation on a `(m, scale)` grid.
#[derive(Debug, Clone, Serialize)]
pub struct TrendReport {
    pub m: Vec<usize>,
    pub scale: Vec<f64>,
    /// `errors[i]` pairs `m[i]` with `scale[i]`: m doubles as the scale halves.
    pub errors: Vec<f64>,
    pub monotone: bool,
    /// Median ratio of the first-order deviation under halving the distances (expected 2).
    pub first_order_ratio: f64,
}

/// Full validation output.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub instances: usize,
    pub properties: Vec<PropertyReport>,
    pub a1_sampling: Vec<PropertyReport>,
    pub neumann: ScalingReport,
    pub quadratic_gap: ScalingReport,
    pub sum_approximation: TrendReport,
    /// `|approx − exact|` for `1ᵀK⁻¹1` at m = 1; informational only.
    pub single_neighbour_gap: f64,
}

impl ValidationReport {
    pub fn property(&self, name: &str) -> Option<&PropertyReport> {
        self.properties.iter().find(|p| p.name == name)
    }
}

/// Number of scaling instances used by the third-order check.
pub const NEUMANN_INSTANCES: usize = 200;

pub fn run_validation_suite(seed: u64, instances: usize) -> Result<ValidationReport> {
    run_validation_suite_with(seed, instances, NEUMANN_INSTANCES)
}

pub fn run_validation_suite_with(
    seed: u64,
    instances: usize,
    neumann_target: usize,
) -> Result<ValidationReport> {
    let checks: Vec<InstanceChecks> = (0..instances as u64)
        .into_par_iter()
        .map(|i| {
            let inst = random_instance(seed, i, 30, 10)?;
            let stats = inst.stats()?;
            let (q, p) = euclidean(&inst);
            check_instance(&inst.kernel, &stats, Some((&q, &p)))
        })
        .collect::<Result<_>>()?;
    let mut reports: Vec<PropertyReport> =
        ["admissible", "gershgorin", "e_norm", "eq_norm", "a1", "a4"]
            .iter()
            .map(|n| PropertyReport::new(n))
            .collect();
    for c in &checks {
        for (r, chk) in
            reports
                .iter_mut()
                .zip([c.admissible, c.gershgorin, c.e_norm, c.eq_norm, c.a1, c.a4])
        {
            r.record(&chk);
        }
    }

    let a1_sampling = bounded_families()
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let kernel = KernelSpec::new(f, HyperParams::new(1.0, 1.0, 0.1)?)?;
            let rep = kernel.check_a1(20_000, derive_seed(seed, &[u64::MAX, i as u64]))?;
            Ok(PropertyReport {
                name: kernel.label(),
                checked: rep.samples,
                violations: rep.violations.len(),
                worst_margin: rep.worst_margin,
                worst_ratio: f64::NAN,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Third-order scaling on a separate stream, drawing until enough usable instances.
    let stream = derive_seed(seed, &[1]);
    let mut ratios = Vec::new();
    let mut idx = 0u64;
    while ratios.len() < neumann_target && idx < 200 * neumann_target as u64 {
        let batch: Vec<Option<f64>> = (idx..idx + 64)
            .into_par_iter()
            .map(|i| {
                let inst = random_instance(stream, i, 30, 10).ok()?;
                let stats = inst.stats().ok()?;
                let params = inst.kernel.params();
                neumann_ratio(&gram_from_stats(&stats, &params), &params)
                    .ok()
                    .flatten()
            })
            .collect();
        ratios.extend(batch.into_iter().flatten());
        idx += 64;
    }
    ratios.truncate(neumann_target);
    let neumann = ScalingReport::from_ratios("neumann_third_order", ratios, 8.0, (6.0, 10.0));

    let gap_ratios: Vec<f64> = (0..instances.min(500) as u64)
        .filter_map(|i| {
            let inst = random_instance(derive_seed(seed, &[2]), i, 30, 10).ok()?;
            let stats = inst.stats().ok()?;
            let params = inst.kernel.params();
            let lim = LimitMatrices::new(&gram_from_stats(&stats, &params), &params).ok()?;
            let full = one_k_sq_one_gap(&(&lim.k_inf + &lim.e));
            let half = one_k_sq_one_gap(&(&lim.k_inf + &lim.e * 0.5));
            (half > 0.0).then(|| full / half)
        })
        .collect();
    let quadratic_gap = ScalingReport::from_ratios("one_k_sq_one_gap", gap_ratios, 4.0, (3.9, 4.1));

    let sum_approximation = sum_trend(derive_seed(seed, &[3]))?;
    let single = {
        let params = HyperParams::new(1.0, 0.9, 0.1)?;
        let stats = EpsilonStats::from_parts(vec![0.0], DMatrix::zeros(1, 1))?;
        let k = gram_from_stats(&stats, &params);
        (one_k_inv_one_approx(&stats, &params, 1) - one_k_inv_one_exact(&k, &params)?).abs()
    };

    Ok(ValidationReport {
        seed,
        instances,
        properties: reports,
        a1_sampling,
        neumann,
        quadratic_gap,
        sum_approximation,
        single_neighbour_gap: single,
    })
}

fn scaled_stats(stats: &EpsilonStats, s: f64) -> Result<EpsilonStats> {
    EpsilonStats::from_parts(
        stats.to_query.iter().map(|v| v * s).collect(),
        &stats.pairwise * s,
    )
}

fn sum_trend(seed: u64) -> Result<TrendReport> {
    let params = HyperParams::new(0.5, 0.9, 0.1)?;
    let kernel = KernelSpec::squared_exponential(params)?;
    let ms = [5usize, 10, 20, 40];
    let scales = [1.0, 0.5, 0.25, 0.125];
    let reps = 40;
    let mut errors = Vec::new();
    let mut first_order = Vec::new();
    for (step, (&m, &s)) in ms.iter().zip(&scales).enumerate() {
        let mut acc = 0.0;
        for r in 0..reps {
            let mut rng = rng::rng(derive_seed(seed, &[step as u64, r]));
            let d = 3;
            let x = sample_inputs(20 * m, d, &mut rng);
            let q = sample_inputs(1, d, &mut rng);
            let tree = KdTree::from_points(&x, d, None)?;
            let set = tree.query(&q, m)?;
            let rows: Vec<&[f64]> = set
                .indices
                .iter()
                .map(|&i| &x[i * d..(i + 1) * d])
                .collect();
            let base = epsilon_stats(&kernel, &rows, &q)?;
            let st = scaled_stats(&base, s)?;
            let exact = one_k_inv_one_exact(&gram_from_stats(&st, &params), &params)?;
            acc += (one_k_inv_one_approx(&st, &params, m) - exact).abs();
            if step == 0 {
                let zero = scaled_stats(&base, 0.0)?;
                let at0 = one_k_inv_one_exact(&gram_from_stats(&zero, &params), &params)?;
                let fine = scaled_stats(&base, 0.01)?;
                let at_fine = one_k_inv_one_exact(&gram_from_stats(&fine, &params), &params)?;
                let fine_half = scaled_stats(&base, 0.005)?;
                let at_fine_half =
                    one_k_inv_one_exact(&gram_from_stats(&fine_half, &params), &params)?;
                first_order.push((at_fine - at0) / (at_fine_half - at0));
            }
        }
        errors.push(acc / reps as f64);
    }
    first_order.sort_by(f64::total_cmp);
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    Ok(TrendReport {
        m: ms.to_vec(),
        scale: scales.to_vec(),
        errors,
        monotone,
        first_order_ratio: first_order[first_order.len() / 2],
    })
}
