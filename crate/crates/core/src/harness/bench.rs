//! GPnn against the neighbour-average baseline on a fixed dataset.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::neighbours::Dataset;
use crate::predictor::GpnnPredictor;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchTable {
    pub n_train: usize,
    pub n_test: usize,
    pub m: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    /// Plain-text table, one method per line.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = format!(
            "n_train={} n_test={} m={}\n{:<width$}  RMSE\n",
            self.n_train, self.n_test, self.m, "method"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:.4} ± {:.4}\n",
                r.method, r.rmse_mean, r.rmse_std
            ));
        }
        out
    }
}

fn method_label(k: &KernelSpec) -> String {
    let p = k.params();
    format!(
        "gpnn-{}(l={},sf2={},sn2={})",
        k.label(),
        p.lengthscale,
        p.signal_variance,
        p.noise_variance
    )
}

/// RMSE of k-NN and of GPnn per model kernel over random train/test splits.
/// Hyperparameters are taken as given.
pub fn run_benchmark(
    data: &Dataset,
    models: &[KernelSpec],
    m: usize,
    split: f64,
    seeds: &[u64],
) -> Result<BenchTable> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::Config(format!("split {split} must lie in (0, 1)")));
    }
    if models.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "need at least one model kernel and one seed".into(),
        ));
    }
    let n_train = ((data.len() as f64) * split).floor() as usize;
    let n_test = data.len() - n_train;
    if n_train == 0 || n_test == 0 {
        return Err(Error::Size(format!(
            "split {split} leaves an empty partition"
        )));
    }
    if m == 0 || m > n_train {
        return Err(Error::Size(format!("m = {m} must lie in 1..={n_train}")));
    }
    // rows: k-NN then each model; columns: seeds
    let per_seed: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&seed| {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng::rng(seed));
            let train = data.select(&idx[..n_train]);
            let test = data.select(&idx[n_train..]);
            let mut out = Vec::with_capacity(models.len() + 1);
            let base = GpnnPredictor::new(&train, models[0], m)?;
            out.push(rmse(&test, |x| base.predict_knn(x).map(|p| p.mean))?);
            for model in models {
                let pred = GpnnPredictor::new(&train, *model, m)?;
                out.push(rmse(&test, |x| pred.predict(x).map(|p| p.mean))?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut labels = vec![format!("knn(m={m})")];
    labels.extend(models.iter().map(method_label));
    let rows = labels
        .into_iter()
        .enumerate()
        .map(|(i, method)| {
            let vals: Vec<f64> = per_seed.iter().map(|s| s[i]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            BenchRow {
                method,
                rmse_mean: mean,
                rmse_std: std,
                per_seed: vals,
            }
        })
        .collect();
    Ok(BenchTable {
        n_train,
        n_test,
        m,
        rows,
    })
}

fn rmse<F>(test: &Dataset, predict: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let sq: Vec<f64> = (0..test.len())
        .into_par_iter()
        .map(|t| predict(test.row(t)).map(|mu| (test.targets()[t] - mu).powi(2)))
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}
