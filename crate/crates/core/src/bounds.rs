//! Closed-form MSE, variance and calibration envelopes, the sample-size
//! thresholds derived from them, and a Monte Carlo calibrator for the
//! rate prefactor `C`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{HyperParams, KernelSpec, MetricBound};
use crate::neighbours::KdTree;
use crate::rng::{self, derive_seed};
use crate::simulate::sample_inputs;

/// Prefactor and exponents of the `C (n/m)^{-p/d}` rate term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub c: f64,
    pub p: f64,
    pub d: usize,
    pub m: usize,
}

impl RateConstants {
    pub fn new(c: f64, p: f64, d: usize, m: usize) -> Result<Self> {
        let rc = Self { c, p, d, m };
        rc.validate()?;
        Ok(rc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Parameter {
                name: "C",
                value: self.c,
                reason: "must be finite and positive",
            });
        }
        if !(self.p > 0.0 && self.p <= 2.0) {
            return Err(Error::Parameter {
                name: "p",
                value: self.p,
                reason: "must lie in (0, 2]",
            });
        }
        if self.d == 0 || self.m == 0 {
            return Err(Error::Config("d and m must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether the input dimension exceeds the bound exponent (`d > p`).
    /// Rates remain computable otherwise; callers report this as advisory.
    pub fn dimension_exceeds_exponent(&self) -> bool {
        self.d as f64 > self.p
    }

    /// `(n/m)^{-p/d}`
    pub fn decay(&self, n: f64) -> f64 {
        (n / self.m as f64).powf(-self.p / self.d as f64)
    }

    /// `C (n/m)^{-p/d}`
    pub fn term(&self, n: f64) -> f64 {
        self.c * self.decay(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeQuery {
    pub epsilon: f64,
    pub delta: f64,
}

impl GuaranteeQuery {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Parameter {
                name: "epsilon",
                value: epsilon,
                reason: "must be positive",
            });
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Parameter {
                name: "delta",
                value: delta,
                reason: "must lie in (0, 1)",
            });
        }
        Ok(Self { epsilon, delta })
    }
}

fn check_n(rc: &RateConstants, n: f64) -> Result<()> {
    if n < rc.m as f64 {
        return Err(Error::Domain(format!("n = {n} is below m = {}", rc.m)));
    }
    Ok(())
}

fn check_same_m(a: &RateConstants, b: &RateConstants) -> Result<()> {
    if a.m != b.m {
        return Err(Error::Config(format!(
            "generative and model constants disagree on m ({} vs {})",
            a.m, b.m
        )));
    }
    Ok(())
}

/// `σ_ξ²(1 + 1/m)`, the MSE of the best unbiased m-point average.
pub fn mse_floor(params: &HyperParams, m: usize) -> f64 {
    params.noise_variance * (1.0 + 1.0 / m as f64)
}

/// `σ_ξ²(1 + 1/m) + 2C(n/m)^{-p/d}`
pub fn mse_bound_wellspec(rc: &RateConstants, params: &HyperParams, n: f64) -> Result<f64> {
    check_n(rc, n)?;
    Ok(mse_floor(params, rc.m) + 2.0 * rc.term(n))
}

/// Adds `2(σ_f²/σ̂_f²) Ĉ (n/m)^{-p̂/d}` to the well-specified bound.
pub fn mse_bound_misspec(
    rc_gen: &RateConstants,
    rc_model: &RateConstants,
    gen: &HyperParams,
    model: &HyperParams,
    n: f64,
) -> Result<f64> {
    check_same_m(rc_gen, rc_model)?;
    let base = mse_bound_wellspec(rc_gen, gen, n)?;
    Ok(base + 2.0 * signal_ratio(gen, model) * rc_model.term(n))
}

fn signal_ratio(gen: &HyperParams, model: &HyperParams) -> f64 {
    gen.signal_variance / model.signal_variance
}

/// Leading term of the MSE variance. With `misspec = Some((Ĉ-constants, θ̂))`
/// the two-term form is returned.
pub fn mse_variance_bound(
    rc: &RateConstants,
    params: &HyperParams,
    n: f64,
    misspec: Option<(&RateConstants, &HyperParams)>,
) -> Result<f64> {
    check_n(rc, n)?;
    let floor = mse_floor(params, rc.m);
    let c_gen = 4.0 * floor * rc.c;
    match misspec {
        None => Ok(c_gen * rc.decay(n)),
        Some((rc_model, model)) => {
            check_same_m(rc, rc_model)?;
            let c_model = 2.0 * floor * signal_ratio(params, model) * rc_model.c;
            Ok(2.0 * c_gen * rc.decay(n) + 2.0 * c_model * rc_model.decay(n))
        }
    }
}

/// Training size above which `MSE < σ_ξ²(1+1/m) + ε` with probability at
/// least `1 − δ`: `m[3ε/(2C) + σ_ξ²(1+1/m)/(Cδ)]^{-d/p}`.
pub fn min_n_wellspec(q: &GuaranteeQuery, rc: &RateConstants, params: &HyperParams) -> f64 {
    let bracket = 3.0 * q.epsilon / (2.0 * rc.c) + mse_floor(params, rc.m) / (rc.c * q.delta);
    rc.m as f64 * bracket.powf(-(rc.d as f64) / rc.p)
}

/// Diagnostics from the implicit sample-size solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveReport {
    pub n: f64,
    pub iterations: usize,
    pub used_bisection: bool,
}

/// Misspecified analogue of [`min_n_wellspec`], solving
/// `2[C(n/m)^{-p/d} + (σ_f²/σ̂_f²)Ĉ(n/m)^{-p̂/d}] = 3ε + 2σ_ξ²(1+1/m)/δ` for `n`.
pub fn min_n_misspec(
    q: &GuaranteeQuery,
    rc_gen: &RateConstants,
    rc_model: &RateConstants,
    gen: &HyperParams,
    model: &HyperParams,
) -> Result<SolveReport> {
    check_same_m(rc_gen, rc_model)?;
    // The slower-decaying term leads; the lemma swaps roles when p̂ < p.
    let coeff = signal_ratio(gen, model);
    let (lead, lead_c, other, other_c) = if rc_model.p >= rc_gen.p {
        (rc_gen, rc_gen.c, rc_model, coeff * rc_model.c)
    } else {
        (rc_model, coeff * rc_model.c, rc_gen, rc_gen.c)
    };
    let target = 3.0 * q.epsilon + 2.0 * mse_floor(gen, rc_gen.m) / q.delta;
    let m = rc_gen.m as f64;
    let u = |log_n: f64| {
        let n = log_n.exp();
        2.0 * (lead_c * lead.decay(n) + other_c * other.decay(n))
    };
    let tol = 1e-6;

    // Damped fixed point on log n, isolating the leading term.
    let mut log_n = (m * (target / (2.0 * lead_c)).powf(-(lead.d as f64) / lead.p)).ln();
    let damping = 0.5;
    for it in 1..=200 {
        let rest = target / 2.0 - other_c * other.decay(log_n.exp());
        if !(rest > 0.0) {
            break;
        }
        let next = m.ln() - (lead.d as f64 / lead.p) * (rest / lead_c).ln();
        let updated = (1.0 - damping) * log_n + damping * next;
        if !updated.is_finite() {
            break;
        }
        if (updated - log_n).abs() < tol * 0.1 {
            return Ok(SolveReport {
                n: updated.exp(),
                iterations: it,
                used_bisection: false,
            });
        }
        log_n = updated;
    }

    // u is strictly decreasing in n, so bisect on log n.
    let (mut lo, mut hi) = (m.ln() - 700.0, m.ln() + 700.0);
    if !(u(lo) > target && u(hi) < target) {
        return Err(Error::Solver(format!(
            "no sign change for target {target}: u(lo) = {}, u(hi) = {}",
            u(lo),
            u(hi)
        )));
    }
    for it in 1..=4000 {
        let mid = 0.5 * (lo + hi);
        if u(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < tol * 0.1 {
            return Ok(SolveReport {
                n: (0.5 * (lo + hi)).exp(),
                iterations: it,
                used_bisection: true,
            });
        }
    }
    Err(Error::Solver(format!(
        "bisection did not reach relative tolerance {tol} in [{}, {}]",
        lo.exp(),
        hi.exp()
    )))
}

/// Interval for the calibration ratio `MSE / σ̂²`.
pub fn cal_bounds(
    rc_gen: &RateConstants,
    rc_model: &RateConstants,
    gen: &HyperParams,
    model: &HyperParams,
    n: f64,
) -> Result<(f64, f64)> {
    check_same_m(rc_gen, rc_model)?;
    check_n(rc_gen, n)?;
    let ratio = gen.noise_variance / model.noise_variance;
    let model_floor = mse_floor(model, rc_model.m);
    let lower = ratio / (1.0 + 2.0 * rc_model.term(n) / model_floor);
    let upper = ratio
        + (2.0 / model.noise_variance)
            * (signal_ratio(gen, model) * rc_model.term(n) + rc_gen.term(n));
    Ok((lower, upper))
}

/// Mean `ε̄` (average `ρ²` from a query to its m neighbours) at each `n`.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonCurve {
    pub n: Vec<usize>,
    pub mean: Vec<f64>,
}

/// Queries averaged per training draw in [`epsilon_curve`].
pub const QUERIES_PER_TRIAL: usize = 16;

/// Monte Carlo estimate of `E[ε̄]` over Gaussian inputs at each grid point.
pub fn epsilon_curve(
    kernel: &KernelSpec,
    d: usize,
    m: usize,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<EpsilonCurve> {
    let mut mean = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        if n < m {
            return Err(Error::Config(format!(
                "grid point n = {n} is below m = {m}"
            )));
        }
        let per_trial: Vec<Result<f64>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::rng(derive_seed(seed, &[gi as u64, n as u64, t as u64]));
                let x = sample_inputs(n, d, &mut rng);
                let queries = sample_inputs(QUERIES_PER_TRIAL, d, &mut rng);
                let tree = KdTree::from_points(&x, d, None)?;
                let mut acc = 0.0;
                for qi in 0..QUERIES_PER_TRIAL {
                    let q = &queries[qi * d..(qi + 1) * d];
                    let set = tree.query(q, m)?;
                    acc += set
                        .distances
                        .iter()
                        .map(|&r| kernel.rho2_at(r))
                        .sum::<f64>()
                        / m as f64;
                }
                Ok(acc / QUERIES_PER_TRIAL as f64)
            })
            .collect();
        let values = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
        mean.push(values.iter().sum::<f64>() / trials as f64);
    }
    Ok(EpsilonCurve {
        n: n_grid.to_vec(),
        mean,
    })
}

/// Smallest `C` with `E[ε̄] ≤ C (m/n)^{p/d}` on every grid point, estimated
/// by Monte Carlo with the kernel's own metric-bound exponent.
pub fn estimate_c(
    kernel: &KernelSpec,
    d: usize,
    m: usize,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<RateConstants> {
    let bound: MetricBound = kernel.metric_bound()?;
    estimate_c_with_exponent(kernel, bound.exponent, d, m, n_grid, trials, seed)
}

pub fn estimate_c_with_exponent(
    kernel: &KernelSpec,
    p: f64,
    d: usize,
    m: usize,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<RateConstants> {
    if trials < 3 {
        return Err(Error::Config("estimating C needs at least 3 trials".into()));
    }
    let (lo, hi) = match (n_grid.iter().min(), n_grid.iter().max()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(Error::Config("n grid is empty".into())),
    };
    if (hi as f64) < 10.0 * lo as f64 {
        return Err(Error::Config(format!(
            "n grid [{lo}, {hi}] must span at least one decade"
        )));
    }
    let curve = epsilon_curve(kernel, d, m, n_grid, trials, seed)?;
    let scale = |n: usize| (n as f64 / m as f64).powf(p / d as f64);
    let c = curve
        .n
        .iter()
        .zip(&curve.mean)
        .map(|(&n, &e)| e * scale(n))
        .fold(0.0, f64::max);
    RateConstants::new(c, p, d, m)
}

/// `8L²/(ε² d l⁴)` clipped to `[0, 1]`: a bound on
/// `Pr{|ρ²(Δ) − E ρ²(Δ)| ≥ σ_f² ε}` for Gaussian inputs in `d` dimensions.
pub fn fluctuation_bound(
    coefficient: f64,
    lengthscale: f64,
    d: usize,
    epsilon: f64,
) -> Result<f64> {
    for (name, v) in [
        ("L", coefficient),
        ("lengthscale", lengthscale),
        ("epsilon", epsilon),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Parameter {
                name,
                value: v,
                reason: "must be positive",
            });
        }
    }
    if d == 0 {
        return Err(Error::Config("d must be at least 1".into()));
    }
    let b = 8.0 * coefficient * coefficient / (epsilon * epsilon * d as f64 * lengthscale.powi(4));
    Ok(b.clamp(0.0, 1.0))
}

/// [`fluctuation_bound`] using a kernel's own constants; only quadratic bounds apply.
pub fn fluctuation_bound_for(kernel: &KernelSpec, d: usize, epsilon: f64) -> Result<f64> {
    let b = kernel.metric_bound()?;
    if (b.exponent - 2.0).abs() > 1e-12 {
        return Err(Error::UnsupportedBound(format!(
            "fluctuation bound needs exponent 2, kernel has {}",
            b.exponent
        )));
    }
    fluctuation_bound(b.coefficient, kernel.params().lengthscale, d, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_below_m_is_domain_error() {
        let rc = RateConstants::new(1.0, 2.0, 5, 10).unwrap();
        let p = HyperParams::new(1.0, 0.9, 0.1).unwrap();
        assert!(matches!(
            mse_bound_wellspec(&rc, &p, 5.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mismatched_m_is_config_error() {
        let a = RateConstants::new(1.0, 2.0, 5, 10).unwrap();
        let b = RateConstants::new(1.0, 2.0, 5, 11).unwrap();
        let p = HyperParams::new(1.0, 0.9, 0.1).unwrap();
        assert!(matches!(
            mse_bound_misspec(&a, &b, &p, &p, 100.0),
            Err(Error::Config(_))
        ));
    }
}
