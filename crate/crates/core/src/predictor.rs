//! GPnn posterior prediction, the k-NN baseline, the infinite-lengthscale
//! limit and dense exact GP prediction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{distance, KernelSpec};
use crate::linalg::SpdFactor;
use crate::neighbours::{rank_by, Dataset, KdTree, NeighbourSet};

/// Largest training set accepted by dense exact prediction.
pub const DENSE_CAP: usize = 4096;

/// Predictive distribution for a noisy observation at a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// Model-kernel Gram matrix over the neighbours (noise on the diagonal)
/// and the noise-free cross-covariances to the query.
#[derive(Debug, Clone)]
pub struct GramView {
    pub k: DMatrix<f64>,
    pub k_star: DVector<f64>,
}

pub fn build_gram(model: &KernelSpec, neighbours: &[&[f64]], x_star: &[f64]) -> Result<GramView> {
    let m = neighbours.len();
    if m == 0 {
        return Err(Error::Size("at least one neighbour is required".into()));
    }
    let params = model.params();
    let mut k = DMatrix::zeros(m, m);
    let mut k_star = DVector::zeros(m);
    for i in 0..m {
        k[(i, i)] = params.total_variance();
        for j in 0..i {
            let v = model.signal_covariance(distance(neighbours[i], neighbours[j])?);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k_star[i] = model.signal_covariance(distance(neighbours[i], x_star)?);
    }
    if k.iter().chain(k_star.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite covariance".into()));
    }
    Ok(GramView { k, k_star })
}

/// Predictor weights `K⁻¹k*` together with the model's prior variance terms.
#[derive(Debug, Clone)]
pub struct Weights {
    pub weights: DVector<f64>,
    /// `k*ᵀK⁻¹k*`
    pub explained: f64,
    pub prior_variance: f64,
    pub jitter: f64,
}

impl Weights {
    pub fn predict(&self, targets: &[f64]) -> Prediction {
        let mean = self.weights.iter().zip(targets).map(|(w, y)| w * y).sum();
        Prediction {
            mean,
            variance: self.prior_variance - self.explained,
        }
    }
}

pub fn gpnn_weights(model: &KernelSpec, neighbours: &[&[f64]], x_star: &[f64]) -> Result<Weights> {
    let gram = build_gram(model, neighbours, x_star)?;
    let prior_variance = model.params().total_variance();
    let factor = SpdFactor::new(gram.k, prior_variance)?;
    let weights = factor.solve(&gram.k_star);
    let explained = weights.dot(&gram.k_star);
    Ok(Weights {
        weights,
        explained,
        prior_variance,
        jitter: factor.jitter,
    })
}

/// GPnn posterior given neighbour locations and their observed targets.
pub fn gpnn_predict(
    model: &KernelSpec,
    neighbours: &[&[f64]],
    targets: &[f64],
    x_star: &[f64],
) -> Result<Prediction> {
    if targets.len() != neighbours.len() {
        return Err(Error::Shape {
            expected: neighbours.len(),
            got: targets.len(),
        });
    }
    Ok(gpnn_weights(model, neighbours, x_star)?.predict(targets))
}

/// Neighbour average, reported with the variance floor `σ̂_ξ²(1 + 1/m)`.
pub fn knn_predict(model: &KernelSpec, targets: &[f64]) -> Result<Prediction> {
    if targets.is_empty() {
        return Err(Error::Size("k-NN needs at least one target".into()));
    }
    let m = targets.len() as f64;
    Ok(Prediction {
        mean: targets.iter().sum::<f64>() / m,
        variance: model.params().noise_variance * (1.0 + 1.0 / m),
    })
}

/// Closed-form GPnn limit as the model lengthscale grows without bound:
/// a shrunk neighbour mean.
pub fn gpnn_predict_infinite_lengthscale(
    model: &KernelSpec,
    targets: &[f64],
) -> Result<Prediction> {
    if targets.is_empty() {
        return Err(Error::Size("at least one target is required".into()));
    }
    let p = model.params();
    let m = targets.len() as f64;
    let denom = p.noise_variance + m * p.signal_variance;
    let mean = p.signal_variance * targets.iter().sum::<f64>() / denom;
    let explained = m * p.signal_variance * p.signal_variance / denom;
    Ok(Prediction {
        mean,
        variance: p.total_variance() - explained,
    })
}

/// Dense GP conditioned on a full training set.
#[derive(Debug, Clone)]
pub struct ExactGp {
    model: KernelSpec,
    data: Dataset,
    factor: SpdFactor,
    alpha: DVector<f64>,
}

impl ExactGp {
    pub fn fit(model: &KernelSpec, data: &Dataset) -> Result<Self> {
        Self::fit_with_cap(model, data, DENSE_CAP)
    }

    pub fn fit_with_cap(model: &KernelSpec, data: &Dataset, cap: usize) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput(
                "exact GP needs at least one training point",
            ));
        }
        if data.len() > cap {
            return Err(Error::Size(format!(
                "{} training points exceed the dense cap of {cap}",
                data.len()
            )));
        }
        let rows: Vec<&[f64]> = (0..data.len()).map(|i| data.row(i)).collect();
        let gram = build_gram(model, &rows, data.row(0))?;
        let factor = SpdFactor::new(gram.k, model.params().total_variance())?;
        let alpha = factor.solve(&DVector::from_column_slice(data.targets()));
        Ok(Self {
            model: *model,
            data: data.clone(),
            factor,
            alpha,
        })
    }

    pub fn predict(&self, x_star: &[f64]) -> Result<Prediction> {
        let n = self.data.len();
        let mut k_star = DVector::zeros(n);
        for i in 0..n {
            k_star[i] = self
                .model
                .signal_covariance(distance(self.data.row(i), x_star)?);
        }
        Ok(Prediction {
            mean: k_star.dot(&self.alpha),
            variance: self.model.params().total_variance() - self.factor.quad_form(&k_star),
        })
    }
}

pub fn exact_gp_predict(model: &KernelSpec, data: &Dataset, x_star: &[f64]) -> Result<Prediction> {
    ExactGp::fit(model, data)?.predict(x_star)
}

/// GPnn over a fixed training set: neighbour search plus local prediction.
#[derive(Debug, Clone)]
pub struct GpnnPredictor<'a> {
    data: &'a Dataset,
    tree: Option<KdTree>,
    model: KernelSpec,
    m: usize,
}

impl<'a> GpnnPredictor<'a> {
    /// Monotone kernels use a kd-tree; others rank by the kernel metric directly.
    pub fn new(data: &'a Dataset, model: KernelSpec, m: usize) -> Result<Self> {
        if m == 0 || m > data.len() {
            return Err(Error::Size(format!(
                "m = {m} must lie in 1..={}",
                data.len()
            )));
        }
        let tree = if model.family().is_monotone() {
            Some(KdTree::build(data)?)
        } else {
            None
        };
        Ok(Self {
            data,
            tree,
            model,
            m,
        })
    }

    pub fn model(&self) -> &KernelSpec {
        &self.model
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn neighbours(&self, x_star: &[f64]) -> Result<NeighbourSet> {
        match &self.tree {
            Some(tree) => tree.query(x_star, self.m),
            None => {
                let model = self.model;
                rank_by(self.data, x_star, self.m, |a, b| {
                    model.rho2(a, b).unwrap_or(f64::INFINITY)
                })
            }
        }
    }

    pub fn neighbour_rows(&self, set: &NeighbourSet) -> Vec<&'a [f64]> {
        set.indices.iter().map(|&i| self.data.row(i)).collect()
    }

    pub fn neighbour_targets(&self, set: &NeighbourSet) -> Vec<f64> {
        set.indices
            .iter()
            .map(|&i| self.data.targets()[i])
            .collect()
    }

    pub fn predict(&self, x_star: &[f64]) -> Result<Prediction> {
        let set = self.neighbours(x_star)?;
        gpnn_predict(
            &self.model,
            &self.neighbour_rows(&set),
            &self.neighbour_targets(&set),
            x_star,
        )
    }

    pub fn predict_knn(&self, x_star: &[f64]) -> Result<Prediction> {
        let set = self.neighbours(x_star)?;
        knn_predict(&self.model, &self.neighbour_targets(&set))
    }
}

/// Expected squared error `E(y* - μ)²` of a GPnn predictor built with
/// `model` when the data come from `generative`, averaging over the field
/// and the noise with the input locations held fixed.
pub fn expected_squared_error(
    generative: &KernelSpec,
    model: &KernelSpec,
    neighbours: &[&[f64]],
    x_star: &[f64],
) -> Result<(Prediction, f64)> {
    let w = gpnn_weights(model, neighbours, x_star)?;
    let truth = build_gram(generative, neighbours, x_star)?;
    let a = &w.weights;
    let err =
        generative.params().total_variance() - 2.0 * a.dot(&truth.k_star) + a.dot(&(&truth.k * a));
    let variance = w.prior_variance - w.explained;
    Ok((
        Prediction {
            mean: 0.0,
            variance,
        },
        err.max(0.0),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::HyperParams;

    fn se() -> KernelSpec {
        KernelSpec::squared_exponential(HyperParams::new(1.0, 0.9, 0.1).unwrap()).unwrap()
    }

    #[test]
    fn one_neighbour_closed_form() {
        let p = gpnn_predict(&se(), &[&[0.5]], &[2.0], &[0.5]).unwrap();
        assert!((p.mean - 1.8).abs() < 1e-14);
        assert!((p.variance - 0.19).abs() < 1e-14);
    }

    #[test]
    fn knn_variance_floor() {
        let p = knn_predict(&se(), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.mean, 2.0);
        let one = knn_predict(&se(), &[4.0]).unwrap();
        assert!((one.variance - 0.2).abs() < 1e-15);
        assert!(knn_predict(&se(), &[]).is_err());
    }

    #[test]
    fn expected_error_when_far_away_is_prior_variance() {
        let (_, err) = expected_squared_error(&se(), &se(), &[&[100.0]], &[0.0]).unwrap();
        assert!((err - 1.0).abs() < 1e-12);
    }
}
