//! Synthetic regression data: Gaussian inputs scaled so `E‖x‖² = 1`, a
//! latent field drawn from a kernel, and zero-mean additive noise.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{distance, KernelSpec};
use crate::linalg::SpdFactor;
use crate::neighbours::{Dataset, KdTree};
use crate::predictor::DENSE_CAP;
use crate::rng::{self, Rng};

/// Default number of previously sampled points each sequential draw conditions on.
pub const DEFAULT_CONDITIONING: usize = 30;

/// Diagonal nugget, relative to `σ_f²`, added to the latent covariance when
/// sampling. Smooth kernels on dense inputs otherwise give conditioning
/// systems so ill-posed that sequential draws diverge.
pub const SAMPLER_NUGGET: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    Uniform,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SamplingMode {
    Exact,
    Sequential { conditioning_size: usize },
}

impl Default for SamplingMode {
    fn default() -> Self {
        SamplingMode::Sequential {
            conditioning_size: DEFAULT_CONDITIONING,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSampleConfig {
    pub kernel: KernelSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    pub sampling_mode: SamplingMode,
    pub noise_family: NoiseFamily,
    pub seed: u64,
}

impl FieldSampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        match self.sampling_mode {
            SamplingMode::Exact if self.n_train + self.n_test > DENSE_CAP => {
                Err(Error::Size(format!(
                    "exact sampling of {} points exceeds the dense cap of {DENSE_CAP}",
                    self.n_train + self.n_test
                )))
            }
            SamplingMode::Sequential {
                conditioning_size: 0,
            } => Err(Error::Config("conditioning_size must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

/// Rows i.i.d. `N(0, I/d)`, row-major.
pub fn sample_inputs(n: usize, d: usize, rng: &mut Rng) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    (0..n * d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draws the latent field at row-major `points` from `kernel` (plus the
/// [`SAMPLER_NUGGET`] on the diagonal).
pub fn sample_field(
    kernel: &KernelSpec,
    mode: SamplingMode,
    points: &[f64],
    d: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = points.len() / d;
    match mode {
        SamplingMode::Exact => sample_exact(kernel, points, d, n, rng),
        SamplingMode::Sequential { conditioning_size } => {
            if conditioning_size == 0 {
                return Err(Error::Config("conditioning_size must be at least 1".into()));
            }
            sample_sequential(kernel, points, d, n, conditioning_size, rng)
        }
    }
}

fn row(points: &[f64], d: usize, i: usize) -> &[f64] {
    &points[i * d..(i + 1) * d]
}

fn signal_gram(
    kernel: &KernelSpec,
    points: &[f64],
    d: usize,
    idx: &[usize],
) -> Result<DMatrix<f64>> {
    let m = idx.len();
    let sf2 = kernel.params().signal_variance;
    let mut k = DMatrix::from_element(m, m, sf2);
    k.fill_diagonal(sf2 * (1.0 + SAMPLER_NUGGET));
    for a in 0..m {
        for b in 0..a {
            let v =
                kernel.signal_covariance(distance(row(points, d, idx[a]), row(points, d, idx[b]))?);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    Ok(k)
}

fn sample_exact(
    kernel: &KernelSpec,
    points: &[f64],
    d: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if n > DENSE_CAP {
        return Err(Error::Size(format!(
            "exact sampling of {n} points exceeds the dense cap of {DENSE_CAP}"
        )));
    }
    let idx: Vec<usize> = (0..n).collect();
    let gram = signal_gram(kernel, points, d, &idx)?;
    let factor = SpdFactor::new(gram, kernel.params().signal_variance)?;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok((factor.l() * z).iter().copied().collect())
}

fn sample_sequential(
    kernel: &KernelSpec,
    points: &[f64],
    d: usize,
    n: usize,
    conditioning: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut rank = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos;
    }
    let tree = KdTree::from_points(points, d, Some(rank))?;
    let sf2 = kernel.params().signal_variance;
    let mut field = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        if pos == 0 {
            field[i] = (sf2 * (1.0 + SAMPLER_NUGGET)).sqrt() * z;
            continue;
        }
        let x = row(points, d, i);
        let set = tree.query_ranked(x, conditioning, pos)?;
        let gram = signal_gram(kernel, points, d, &set.indices)?;
        let factor = SpdFactor::new(gram, sf2)?;
        let cross = DVector::from_iterator(
            set.len(),
            set.distances.iter().map(|&r| kernel.signal_covariance(r)),
        );
        let w = factor.solve(&cross);
        let mean: f64 = set
            .indices
            .iter()
            .zip(w.iter())
            .map(|(&j, wj)| wj * field[j])
            .sum();
        let var = (sf2 * (1.0 + SAMPLER_NUGGET) - w.dot(&cross)).max(0.0);
        field[i] = mean + var.sqrt() * z;
    }
    Ok(field)
}

/// `y = f + ξ` with i.i.d. zero-mean noise of variance `noise_variance`.
pub fn add_noise(f: &[f64], noise_variance: f64, family: NoiseFamily, rng: &mut Rng) -> Vec<f64> {
    if noise_variance == 0.0 {
        return f.to_vec();
    }
    f.iter()
        .map(|&v| {
            v + match family {
                NoiseFamily::Gaussian => {
                    noise_variance.sqrt() * rng.sample::<f64, _>(StandardNormal)
                }
                NoiseFamily::Uniform => {
                    let half = (3.0 * noise_variance).sqrt();
                    rng.random_range(-half..half)
                }
                NoiseFamily::Laplace => {
                    let b = (noise_variance / 2.0).sqrt();
                    let u = loop {
                        let u: f64 = rng.random::<f64>() - 0.5;
                        if u > -0.5 {
                            break u;
                        }
                    };
                    -b * u.signum() * (-2.0 * u.abs()).ln_1p()
                }
            }
        })
        .collect()
}

/// A complete synthetic draw: training rows first, test rows after.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub train: Dataset,
    pub test: Dataset,
    /// Latent field values for train rows then test rows.
    pub latent: Vec<f64>,
}

pub fn simulate(cfg: &FieldSampleConfig) -> Result<Simulated> {
    cfg.validate()?;
    let n = cfg.n_train + cfg.n_test;
    let d = cfg.d;
    let x = sample_inputs(n, d, &mut rng::rng_from(cfg.seed, &[0]));
    let latent = sample_field(
        &cfg.kernel,
        cfg.sampling_mode,
        &x,
        d,
        &mut rng::rng_from(cfg.seed, &[1]),
    )?;
    let y = add_noise(
        &latent,
        cfg.kernel.params().noise_variance,
        cfg.noise_family,
        &mut rng::rng_from(cfg.seed, &[2]),
    );
    let split = cfg.n_train * d;
    Ok(Simulated {
        train: Dataset::new(x[..split].to_vec(), y[..cfg.n_train].to_vec(), d)?,
        test: Dataset::new(x[split..].to_vec(), y[cfg.n_train..].to_vec(), d)?,
        latent,
    })
}

/// Inputs only, for estimators that need no field values.
pub fn simulate_inputs(n: usize, d: usize, seed: u64) -> Vec<f64> {
    sample_inputs(n, d, &mut rng::rng_from(seed, &[0]))
}
