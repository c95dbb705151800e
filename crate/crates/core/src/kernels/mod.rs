//! Stationary isotropic kernel families, the induced metric
//! `ρ²(x, x') = σ_f² (1 - c(‖x - x'‖/l))` and its Euclidean power bounds.

mod bessel;

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::rng;

pub use bessel::{matern_correlation, matern_one_minus};

/// Hyperparameters shared by every family: one lengthscale, signal and noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl HyperParams {
    pub fn new(lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let p = Self {
            lengthscale,
            signal_variance,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        positive("lengthscale", self.lengthscale)?;
        positive("signal_variance", self.signal_variance)?;
        positive("noise_variance", self.noise_variance)
    }

    /// `σ_f² + σ_ξ²`, the prior variance of an observation.
    pub fn total_variance(&self) -> f64 {
        self.signal_variance + self.noise_variance
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter {
            name,
            value,
            reason: "must be finite and strictly positive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    SquaredExponential,
    Exponential,
    Matern {
        nu: f64,
    },
    RationalQuadratic {
        alpha: f64,
    },
    /// `exp(−2 sin²(πΔ/r)/l²)` of the Euclidean distance. Positive definite
    /// for one-dimensional inputs only; Gram matrices in `d ≥ 2` can be indefinite.
    Periodic {
        period: f64,
    },
}

impl Family {
    fn validate(&self) -> Result<()> {
        match *self {
            Family::Matern { nu } => positive("nu", nu),
            Family::RationalQuadratic { alpha } => positive("alpha", alpha),
            Family::Periodic { period } => positive("period", period),
            _ => Ok(()),
        }
    }

    /// Short identifier used in output files.
    pub fn label(&self) -> String {
        match *self {
            Family::SquaredExponential => "se".into(),
            Family::Exponential => "exp".into(),
            Family::Matern { nu } => format!("matern{nu}"),
            Family::RationalQuadratic { alpha } => format!("rq{alpha}"),
            Family::Periodic { period } => format!("periodic{period}"),
        }
    }

    /// Whether the correlation is non-increasing in distance, so that
    /// Euclidean and kernel-metric neighbour orderings coincide.
    pub fn is_monotone(&self) -> bool {
        !matches!(self, Family::Periodic { .. })
    }

    /// Whether Gram matrices are guaranteed positive semi-definite in `d` dimensions.
    pub fn is_valid_in(&self, d: usize) -> bool {
        self.is_monotone() || d <= 1
    }
}

/// A kernel family together with validated hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelJson", into = "KernelJson")]
pub struct KernelSpec {
    family: Family,
    params: HyperParams,
}

/// `(L, p, domain_limit)` such that `ρ²(Δ)/σ_f² ≤ L (Δ/l)^p` for `Δ/l < domain_limit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricBound {
    pub coefficient: f64,
    pub exponent: f64,
    pub domain_limit: f64,
}

impl MetricBound {
    /// `L t^p` at scaled distance `t = Δ/l`.
    pub fn eval(&self, scaled_distance: f64) -> f64 {
        self.coefficient * scaled_distance.powf(self.exponent)
    }
}

/// Samples at which a metric bound failed.
#[derive(Debug, Clone, Default, Serialize)]
pub struct A1Report {
    pub samples: usize,
    pub upper_limit: f64,
    /// `(Δ/l, ρ²/σ_f², L (Δ/l)^p)` for each violating sample.
    pub violations: Vec<(f64, f64, f64)>,
    /// Smallest `L (Δ/l)^p - ρ²/σ_f²` seen.
    pub worst_margin: f64,
}

impl A1Report {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Default upper end of the sampled `Δ/l` range for bounds valid everywhere.
pub const A1_DEFAULT_CAP: f64 = 10.0;

impl KernelSpec {
    pub fn new(family: Family, params: HyperParams) -> Result<Self> {
        family.validate()?;
        params.validate()?;
        Ok(Self { family, params })
    }

    pub fn squared_exponential(params: HyperParams) -> Result<Self> {
        Self::new(Family::SquaredExponential, params)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> HyperParams {
        self.params
    }

    pub fn with_params(&self, params: HyperParams) -> Result<Self> {
        Self::new(self.family, params)
    }

    pub fn with_lengthscale(&self, lengthscale: f64) -> Result<Self> {
        self.with_params(HyperParams {
            lengthscale,
            ..self.params
        })
    }

    pub fn with_family(&self, family: Family) -> Result<Self> {
        Self::new(family, self.params)
    }

    pub fn label(&self) -> String {
        self.family.label()
    }

    /// Correlation `c(Δ/l)`; the sign of `delta` is ignored.
    pub fn correlation(&self, delta: f64) -> f64 {
        let t = delta.abs() / self.params.lengthscale;
        match self.family {
            Family::SquaredExponential => (-0.5 * t * t).exp(),
            Family::Exponential => (-t).exp(),
            Family::Matern { nu } => matern_correlation(nu, (2.0 * nu).sqrt() * t),
            Family::RationalQuadratic { alpha } => (1.0 + t * t / (2.0 * alpha)).powf(-alpha),
            Family::Periodic { period } => {
                let s = (PI * delta.abs() / period).sin();
                let l = self.params.lengthscale;
                (-2.0 * s * s / (l * l)).exp()
            }
        }
    }

    /// `1 - c(Δ/l)`, accurate for small distances.
    pub fn one_minus_correlation(&self, delta: f64) -> f64 {
        let t = delta.abs() / self.params.lengthscale;
        match self.family {
            Family::SquaredExponential => -(-0.5 * t * t).exp_m1(),
            Family::Exponential => -(-t).exp_m1(),
            Family::Matern { nu } => matern_one_minus(nu, (2.0 * nu).sqrt() * t),
            Family::RationalQuadratic { alpha } => {
                -(-alpha * (t * t / (2.0 * alpha)).ln_1p()).exp_m1()
            }
            Family::Periodic { period } => {
                let s = (PI * delta.abs() / period).sin();
                let l = self.params.lengthscale;
                -(-2.0 * s * s / (l * l)).exp_m1()
            }
        }
    }

    /// Noise-free covariance `σ_f² c(Δ/l)` at distance `delta`.
    pub fn signal_covariance(&self, delta: f64) -> f64 {
        self.params.signal_variance * self.correlation(delta)
    }

    /// Squared kernel metric `σ_f² (1 - c(Δ/l))` at distance `delta`.
    pub fn rho2_at(&self, delta: f64) -> f64 {
        self.params.signal_variance * self.one_minus_correlation(delta)
    }

    /// `σ_f² c + σ_ξ²·[same_point]`.
    pub fn covariance(&self, x: &[f64], x2: &[f64], same_point: bool) -> Result<f64> {
        let delta = distance(x, x2)?;
        let noise = if same_point {
            self.params.noise_variance
        } else {
            0.0
        };
        Ok(self.signal_covariance(delta) + noise)
    }

    pub fn rho2(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        Ok(self.rho2_at(distance(x, x2)?))
    }

    /// Power-law upper bound on the normalised metric for this family.
    pub fn metric_bound(&self) -> Result<MetricBound> {
        let (coefficient, exponent, domain_limit) = match self.family {
            Family::SquaredExponential | Family::RationalQuadratic { .. } => {
                (0.5, 2.0, f64::INFINITY)
            }
            Family::Exponential => (1.0, 1.0, f64::INFINITY),
            Family::Matern { nu } if (nu - 1.0).abs() < 1e-12 => {
                return Err(Error::UnsupportedBound(
                    "Matérn ν = 1 has no power-law metric bound".into(),
                ))
            }
            Family::Matern { nu } if nu > 1.0 => (nu / (2.0 * (nu - 1.0)), 2.0, f64::INFINITY),
            Family::Matern { nu } => {
                // |Γ(-ν)| = Γ(1-ν)/ν for 0 < ν < 1
                let abs_gamma_neg = gamma(1.0 - nu) / nu;
                let g = gamma(nu);
                let coeff = abs_gamma_neg * nu.powf(nu) / g;
                let limit = (2f64.powf(nu) * g / (nu.powf(nu) * (1.0 - nu) * abs_gamma_neg))
                    .powf(1.0 / (2.0 * nu));
                (coeff, 2.0 * nu, limit)
            }
            Family::Periodic { period } => (
                2.0 * PI * PI / (period * period),
                2.0,
                period * 6f64.sqrt() / (PI * self.params.lengthscale),
            ),
        };
        Ok(MetricBound {
            coefficient,
            exponent,
            domain_limit,
        })
    }

    /// Samples `Δ/l` uniformly over `(0, min(domain_limit, A1_DEFAULT_CAP))`
    /// and records every sample where the family's bound fails.
    pub fn check_a1(&self, sample_count: usize, seed: u64) -> Result<A1Report> {
        let bound = self.metric_bound()?;
        Ok(self.check_a1_with(&bound, sample_count, seed, A1_DEFAULT_CAP))
    }

    /// As [`check_a1`](Self::check_a1) against an arbitrary bound.
    pub fn check_a1_with(
        &self,
        bound: &MetricBound,
        sample_count: usize,
        seed: u64,
        cap: f64,
    ) -> A1Report {
        let upper = bound.domain_limit.min(cap);
        let mut rng = rng::rng(seed);
        let mut report = A1Report {
            samples: sample_count,
            upper_limit: upper,
            violations: Vec::new(),
            worst_margin: f64::INFINITY,
        };
        let l = self.params.lengthscale;
        for _ in 0..sample_count {
            let t = loop {
                let t = rng.random::<f64>() * upper;
                if t > 0.0 {
                    break t;
                }
            };
            let metric = self.one_minus_correlation(t * l);
            let limit = bound.eval(t);
            report.worst_margin = report.worst_margin.min(limit - metric);
            if metric > limit {
                report.violations.push((t, metric, limit));
            }
        }
        report
    }
}

/// Euclidean distance between two points of equal dimension.
pub fn distance(x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: x2.len(),
        });
    }
    Ok(squared_distance(x, x2).sqrt())
}

pub(crate) fn squared_distance(x: &[f64], x2: &[f64]) -> f64 {
    x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelJson {
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period: Option<f64>,
    lengthscale: f64,
    signal_var: f64,
    noise_var: f64,
}

impl TryFrom<KernelJson> for KernelSpec {
    type Error = Error;

    fn try_from(j: KernelJson) -> Result<Self> {
        let need = |v: Option<f64>, what: &str| {
            v.ok_or_else(|| Error::Config(format!("family `{}` requires `{what}`", j.family)))
        };
        let family = match j.family.as_str() {
            "se" => Family::SquaredExponential,
            "exp" => Family::Exponential,
            "matern" => Family::Matern {
                nu: need(j.nu, "nu")?,
            },
            "rq" => Family::RationalQuadratic {
                alpha: need(j.alpha, "alpha")?,
            },
            "periodic" => Family::Periodic {
                period: need(j.period, "period")?,
            },
            other => return Err(Error::Config(format!("unknown kernel family `{other}`"))),
        };
        KernelSpec::new(
            family,
            HyperParams::new(j.lengthscale, j.signal_var, j.noise_var)?,
        )
    }
}

impl From<KernelSpec> for KernelJson {
    fn from(k: KernelSpec) -> Self {
        let (family, nu, alpha, period) = match k.family {
            Family::SquaredExponential => ("se", None, None, None),
            Family::Exponential => ("exp", None, None, None),
            Family::Matern { nu } => ("matern", Some(nu), None, None),
            Family::RationalQuadratic { alpha } => ("rq", None, Some(alpha), None),
            Family::Periodic { period } => ("periodic", None, None, Some(period)),
        };
        KernelJson {
            family: family.into(),
            nu,
            alpha,
            period,
            lengthscale: k.params.lengthscale,
            signal_var: k.params.signal_variance,
            noise_var: k.params.noise_variance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(family: Family) -> KernelSpec {
        KernelSpec::new(family, HyperParams::new(1.0, 1.0, 0.1).unwrap()).unwrap()
    }

    #[test]
    fn rejects_non_positive_parameters() {
        assert!(HyperParams::new(0.0, 1.0, 1.0).is_err());
        assert!(HyperParams::new(1.0, -1.0, 1.0).is_err());
        assert!(KernelSpec::new(
            Family::Matern { nu: 0.0 },
            HyperParams::new(1.0, 1.0, 1.0).unwrap()
        )
        .is_err());
    }

    #[test]
    fn rq_complement_is_accurate() {
        let k = unit(Family::RationalQuadratic { alpha: 2.0 });
        let d = 1e-6;
        let direct = 1.0 - k.correlation(d);
        assert!((k.one_minus_correlation(d) - d * d / 2.0).abs() < 1e-20);
        assert!((direct - k.one_minus_correlation(d)).abs() < 1e-15);
    }

    #[test]
    fn periodic_is_periodic() {
        let k = unit(Family::Periodic { period: 2.0 });
        assert!((k.correlation(0.3) - k.correlation(2.3)).abs() < 1e-12);
        assert!(!k.family().is_monotone());
    }

    #[test]
    fn matern_one_has_no_bound_but_predicts() {
        let k = unit(Family::Matern { nu: 1.0 });
        assert!(matches!(k.metric_bound(), Err(Error::UnsupportedBound(_))));
        assert!(k.correlation(0.5) > 0.0 && k.correlation(0.5) < 1.0);
    }

    #[test]
    fn json_round_trip() {
        let k = KernelSpec::new(
            Family::Matern { nu: 2.5 },
            HyperParams::new(0.7, 0.9, 0.1).unwrap(),
        )
        .unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert!(s.contains("\"family\":\"matern\""));
        let back: KernelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn json_missing_shape_parameter_is_config_error() {
        let s = r#"{"family":"rq","lengthscale":1,"signal_var":1,"noise_var":0.1}"#;
        assert!(serde_json::from_str::<KernelSpec>(s).is_err());
    }
}
