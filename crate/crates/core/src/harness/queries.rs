//! JSON request/response types for one-off bound and sample-size queries.

use serde::{Deserialize, Serialize};

use crate::bounds::{
    self, cal_bounds, min_n_misspec, min_n_wellspec, mse_bound_misspec, mse_bound_wellspec,
    mse_variance_bound, GuaranteeQuery, RateConstants,
};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// How to obtain `C` when it is not supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Estimation {
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for Estimation {
    fn default() -> Self {
        Self {
            n_grid: None,
            trials: default_trials(),
            seed: 0,
        }
    }
}

fn default_trials() -> usize {
    8
}

impl Estimation {
    fn grid(&self, m: usize) -> Vec<usize> {
        self.n_grid
            .clone()
            .unwrap_or_else(|| vec![10 * m, 100 * m, 1000 * m])
    }
}

/// Shared kernel and constant settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsInput {
    pub kernel_gen: KernelSpec,
    #[serde(default)]
    pub kernel_model: Option<KernelSpec>,
    pub d: usize,
    pub m: usize,
    #[serde(default)]
    pub c_gen: Option<f64>,
    #[serde(default)]
    pub c_model: Option<f64>,
    #[serde(default)]
    pub estimation: Estimation,
}

/// Resolved constants for the generative and model kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedConstants {
    pub gen: RateConstants,
    pub model: RateConstants,
    pub gen_estimated: bool,
    pub model_estimated: bool,
    pub misspecified: bool,
}

fn resolve_one(
    kernel: &KernelSpec,
    over: Option<f64>,
    d: usize,
    m: usize,
    est: &Estimation,
) -> Result<(RateConstants, bool)> {
    match over {
        Some(c) => Ok((
            RateConstants::new(c, kernel.metric_bound()?.exponent, d, m)?,
            false,
        )),
        None => Ok((
            bounds::estimate_c(kernel, d, m, &est.grid(m), est.trials, est.seed)?,
            true,
        )),
    }
}

impl ConstantsInput {
    pub fn model(&self) -> KernelSpec {
        self.kernel_model.unwrap_or(self.kernel_gen)
    }

    pub fn misspecified(&self) -> bool {
        self.kernel_model.is_some_and(|k| k != self.kernel_gen)
    }

    pub fn resolve(&self) -> Result<ResolvedConstants> {
        if self.d == 0 || self.m == 0 {
            return Err(Error::Config("d and m must be at least 1".into()));
        }
        let (gen, gen_estimated) = resolve_one(
            &self.kernel_gen,
            self.c_gen,
            self.d,
            self.m,
            &self.estimation,
        )?;
        let misspecified = self.misspecified();
        let (model, model_estimated) = if misspecified {
            resolve_one(
                &self.model(),
                self.c_model,
                self.d,
                self.m,
                &self.estimation,
            )?
        } else {
            (gen, gen_estimated)
        };
        Ok(ResolvedConstants {
            gen,
            model,
            gen_estimated,
            model_estimated,
            misspecified,
        })
    }

    fn advisories(&self, rc: &ResolvedConstants) -> Vec<String> {
        let mut out = Vec::new();
        if !rc.gen.dimension_exceeds_exponent() {
            out.push(format!(
                "d = {} does not exceed the rate exponent {}; rates are reported but fall outside the stated regime",
                self.d, rc.gen.p
            ));
        }
        if self.m == 1 {
            out.push("m = 1: pairwise neighbour statistics are undefined".into());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRequest {
    #[serde(flatten)]
    pub constants: ConstantsInput,
    pub n: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsPoint {
    pub n: f64,
    pub floor: f64,
    pub mse_bound: f64,
    pub mse_variance_bound: f64,
    pub cal_lower: f64,
    pub cal_upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsResponse {
    pub inputs: BoundsRequest,
    pub constants: ResolvedConstants,
    pub formula: &'static str,
    pub points: Vec<BoundsPoint>,
    pub advisories: Vec<String>,
}

pub fn evaluate_bounds(req: &BoundsRequest) -> Result<BoundsResponse> {
    if req.n.is_empty() {
        return Err(Error::Config(
            "`n` must list at least one training size".into(),
        ));
    }
    let rc = req.constants.resolve()?;
    let (gen, model) = (
        req.constants.kernel_gen.params(),
        req.constants.model().params(),
    );
    let m = req.constants.m;
    let points = req
        .n
        .iter()
        .map(|&n| {
            let mse = if rc.misspecified {
                mse_bound_misspec(&rc.gen, &rc.model, &gen, &model, n)?
            } else {
                mse_bound_wellspec(&rc.gen, &gen, n)?
            };
            let var = mse_variance_bound(
                &rc.gen,
                &gen,
                n,
                rc.misspecified.then_some((&rc.model, &model)),
            )?;
            let (lo, hi) = cal_bounds(&rc.gen, &rc.model, &gen, &model, n)?;
            Ok(BoundsPoint {
                n,
                floor: bounds::mse_floor(&gen, m),
                mse_bound: mse,
                mse_variance_bound: var,
                cal_lower: lo,
                cal_upper: hi,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BoundsResponse {
        advisories: req.constants.advisories(&rc),
        inputs: req.clone(),
        constants: rc,
        formula: if rc.misspecified {
            "mse_bound_misspec"
        } else {
            "mse_bound_wellspec"
        },
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeRequest {
    #[serde(flatten)]
    pub constants: ConstantsInput,
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSizeResponse {
    pub inputs: SampleSizeRequest,
    pub constants: ResolvedConstants,
    pub formula: &'static str,
    /// Real-valued threshold and its ceiling.
    pub n: f64,
    pub n_ceil: u64,
    pub iterations: usize,
    pub used_bisection: bool,
    pub advisories: Vec<String>,
}

pub fn evaluate_sample_size(req: &SampleSizeRequest) -> Result<SampleSizeResponse> {
    let q = GuaranteeQuery::new(req.epsilon, req.delta)?;
    let rc = req.constants.resolve()?;
    let (gen, model) = (
        req.constants.kernel_gen.params(),
        req.constants.model().params(),
    );
    let (formula, n, iterations, used_bisection) = if rc.misspecified {
        let s = min_n_misspec(&q, &rc.gen, &rc.model, &gen, &model)?;
        ("min_n_misspec", s.n, s.iterations, s.used_bisection)
    } else {
        (
            "min_n_wellspec",
            min_n_wellspec(&q, &rc.gen, &gen),
            0,
            false,
        )
    };
    let mut advisories = req.constants.advisories(&rc);
    if n < req.constants.m as f64 {
        advisories.push(format!("threshold {n:.3} is below m = {}", req.constants.m));
    }
    Ok(SampleSizeResponse {
        inputs: req.clone(),
        constants: rc,
        formula,
        n,
        n_ceil: n.ceil() as u64,
        iterations,
        used_bisection,
        advisories,
    })
}
