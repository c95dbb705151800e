//! Experiment configuration (JSON) and misspecification regimes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Family, HyperParams, KernelSpec};
use crate::metrics::{Averaging, NllForm};
use crate::simulate::{NoiseFamily, SamplingMode};

/// Neighbour count: a constant, or `round(scale · n^{p/(p+d)})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MSpec {
    Fixed(usize),
    Rate { scale: f64 },
}

impl MSpec {
    /// Neighbour count at training size `n` for exponent `p` in dimension `d`.
    pub fn resolve(&self, n: usize, p: f64, d: usize) -> usize {
        let m = match *self {
            MSpec::Fixed(m) => m,
            MSpec::Rate { scale } => (scale * (n as f64).powf(p / (p + d as f64)))
                .round()
                .max(1.0) as usize,
        };
        m.min(n).max(1)
    }
}

/// How test-set loss is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Sample a field and noise, score predictions against observed targets.
    #[default]
    Empirical,
    /// Closed-form squared error averaged over field and noise, inputs fixed.
    Expected,
}

/// Kernel family in JSON form, without hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilyJson {
    Se,
    Exp,
    Matern { nu: f64 },
    Rq { alpha: f64 },
    Periodic { period: f64 },
}

impl From<FamilyJson> for Family {
    fn from(f: FamilyJson) -> Self {
        match f {
            FamilyJson::Se => Family::SquaredExponential,
            FamilyJson::Exp => Family::Exponential,
            FamilyJson::Matern { nu } => Family::Matern { nu },
            FamilyJson::Rq { alpha } => Family::RationalQuadratic { alpha },
            FamilyJson::Periodic { period } => Family::Periodic { period },
        }
    }
}

/// A way of deriving the model kernel from the generative one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regime {
    /// Wrong signal and noise variances.
    External { signal_var: f64, noise_var: f64 },
    /// Wrong lengthscale.
    Lengthscale { lengthscale: f64 },
    /// Every hyperparameter wrong.
    All {
        lengthscale: f64,
        signal_var: f64,
        noise_var: f64,
    },
    /// Wrong kernel family, hyperparameters kept.
    Family { family: FamilyJson },
}

impl Regime {
    pub fn apply(&self, gen: &KernelSpec) -> Result<KernelSpec> {
        let p = gen.params();
        match *self {
            Regime::External {
                signal_var,
                noise_var,
            } => gen.with_params(HyperParams::new(p.lengthscale, signal_var, noise_var)?),
            Regime::Lengthscale { lengthscale } => gen.with_lengthscale(lengthscale),
            Regime::All {
                lengthscale,
                signal_var,
                noise_var,
            } => gen.with_params(HyperParams::new(lengthscale, signal_var, noise_var)?),
            Regime::Family { family } => gen.with_family(family.into()),
        }
    }
}

/// Which parts of the model kernel differ from the generative kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeClass {
    WellSpecified,
    External,
    Lengthscale,
    AllParameters,
    Family,
    FamilyAndParameters,
}

pub fn classify(gen: &KernelSpec, model: &KernelSpec) -> RegimeClass {
    let (g, m) = (gen.params(), model.params());
    let external = g.signal_variance != m.signal_variance || g.noise_variance != m.noise_variance;
    let internal = g.lengthscale != m.lengthscale;
    let family = gen.family() != model.family();
    match (family, external, internal) {
        (false, false, false) => RegimeClass::WellSpecified,
        (false, true, false) => RegimeClass::External,
        (false, false, true) => RegimeClass::Lengthscale,
        (false, true, true) => RegimeClass::AllParameters,
        (true, false, false) => RegimeClass::Family,
        (true, _, _) => RegimeClass::FamilyAndParameters,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSettings {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the estimated generative-kernel constant.
    #[serde(default)]
    pub c_gen: Option<f64>,
    /// Overrides the estimated model-kernel constant.
    #[serde(default)]
    pub c_model: Option<f64>,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            trials: default_trials(),
            seed: 0,
            c_gen: None,
            c_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub plots: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            plots: true,
        }
    }
}

fn yes() -> bool {
    true
}
fn default_trials() -> usize {
    8
}
fn default_dir() -> PathBuf {
    PathBuf::from("gpnn-out")
}
fn default_n_test() -> usize {
    1000
}

/// A full sweep description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generative: KernelSpec,
    #[serde(default)]
    pub model: Option<KernelSpec>,
    #[serde(default)]
    pub regime: Option<Regime>,
    /// Model lengthscales to sweep; each replaces the model kernel's lengthscale.
    #[serde(default)]
    pub l_hat_grid: Option<Vec<f64>>,
    pub n_grid: Vec<usize>,
    pub d_list: Vec<usize>,
    pub m: MSpec,
    pub seeds: Vec<u64>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub noise_family: NoiseFamily,
    #[serde(default)]
    pub sampling_mode: SamplingMode,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub nll_form: NllForm,
    #[serde(default)]
    pub averaging: Averaging,
    /// Also score the plain neighbour-average predictor.
    #[serde(default)]
    pub include_knn: bool,
    /// Write measured wall times; off by default so outputs are reproducible.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub bounds: BoundSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.model.is_some() && self.regime.is_some() {
            return bad("give either `model` or `regime`, not both".into());
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly increasing".into());
        }
        if self.d_list.is_empty() || self.d_list.contains(&0) {
            return bad("d_list must be non-empty with every d ≥ 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        if self.n_test == 0 {
            return bad("n_test must be at least 1".into());
        }
        match self.m {
            MSpec::Fixed(0) => return bad("m must be at least 1".into()),
            MSpec::Fixed(m) if self.n_grid[0] < m => {
                return bad(format!("n = {} is below m = {m}", self.n_grid[0]))
            }
            MSpec::Rate { scale } if !(scale > 0.0) => {
                return bad("m schedule scale must be positive".into())
            }
            _ => {}
        }
        if let Some(grid) = &self.l_hat_grid {
            if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                return bad("l_hat_grid entries must be positive".into());
            }
        }
        if let SamplingMode::Sequential {
            conditioning_size: 0,
        } = self.sampling_mode
        {
            return bad("conditioning_size must be at least 1".into());
        }
        if self.bounds.trials < 3 {
            return bad("bounds.trials must be at least 3".into());
        }
        self.base_model()?;
        Ok(())
    }

    /// Model kernel before any lengthscale sweep.
    pub fn base_model(&self) -> Result<KernelSpec> {
        match (&self.model, &self.regime) {
            (Some(m), _) => Ok(*m),
            (None, Some(r)) => r.apply(&self.generative),
            (None, None) => Ok(self.generative),
        }
    }

    /// Every model kernel swept, one per lengthscale.
    pub fn models(&self) -> Result<Vec<KernelSpec>> {
        let base = self.base_model()?;
        match &self.l_hat_grid {
            None => Ok(vec![base]),
            Some(grid) => grid.iter().map(|&l| base.with_lengthscale(l)).collect(),
        }
    }

    /// Laptop-scale version of the reference protocol.
    pub fn desk_scale() -> Self {
        let params = HyperParams::new(0.5, 0.9, 0.1).expect("valid constants");
        Self {
            generative: KernelSpec::squared_exponential(params).expect("valid constants"),
            model: None,
            regime: None,
            l_hat_grid: None,
            n_grid: vec![1000, 3162, 10000, 31623, 100000],
            d_list: vec![2, 5, 15],
            m: MSpec::Fixed(20),
            seeds: vec![0, 1, 2, 3, 4],
            n_test: 1000,
            noise_family: NoiseFamily::Gaussian,
            sampling_mode: SamplingMode::default(),
            estimator: Estimator::Empirical,
            nll_form: NllForm::FullResidual,
            averaging: Averaging::MeanThenLog,
            include_knn: false,
            record_timing: false,
            bounds: BoundSettings::default(),
            output: OutputSettings::default(),
        }
    }

    /// Full-size protocol: ten log-spaced n in `[10³, 10⁷]`, m = 400.
    pub fn reference_scale() -> Self {
        let n_grid = (0..10)
            .map(|i| 10f64.powf(3.0 + 4.0 * i as f64 / 9.0).round() as usize)
            .collect();
        Self {
            n_grid,
            m: MSpec::Fixed(400),
            ..Self::desk_scale()
        }
    }
}
