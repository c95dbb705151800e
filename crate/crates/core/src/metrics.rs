//! Test-set metrics and the log-log convergence-rate fit.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::Prediction;

/// One evaluated cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub l_hat: f64,
    pub kernel_gen: String,
    pub kernel_model: String,
    pub seed: u64,
    pub mse: f64,
    pub cal: f64,
    pub nll: f64,
    pub wall_time_s: f64,
}

/// Negative log-likelihood convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NllForm {
    /// `½(log v + log 2π) + r²/v`
    #[default]
    FullResidual,
    /// `½(log v + log 2π) + r²/(2v)`
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mse: f64,
    pub cal: f64,
    pub nll: f64,
}

/// Averages squared error, calibration ratio and NLL over test points,
/// given per-point squared errors and predictive variances.
pub fn evaluate_squared_errors(
    sq_errors: &[f64],
    variances: &[f64],
    form: NllForm,
) -> Result<Metrics> {
    if sq_errors.len() != variances.len() {
        return Err(Error::Shape {
            expected: sq_errors.len(),
            got: variances.len(),
        });
    }
    if sq_errors.is_empty() {
        return Err(Error::EmptyInput("no test points to evaluate"));
    }
    let half = match form {
        NllForm::FullResidual => 1.0,
        NllForm::Gaussian => 0.5,
    };
    let (mut mse, mut cal, mut nll) = (0.0, 0.0, 0.0);
    for (&e, &v) in sq_errors.iter().zip(variances) {
        mse += e;
        cal += e / v;
        nll += 0.5 * (v.ln() + (2.0 * PI).ln()) + half * e / v;
    }
    let n = sq_errors.len() as f64;
    let out = Metrics {
        mse: mse / n,
        cal: cal / n,
        nll: nll / n,
    };
    if !(out.mse.is_finite() && out.cal.is_finite() && out.nll.is_finite()) {
        return Err(Error::Numeric("metrics are not finite".into()));
    }
    Ok(out)
}

pub fn evaluate(predictions: &[Prediction], y_star: &[f64], form: NllForm) -> Result<Metrics> {
    if predictions.len() != y_star.len() {
        return Err(Error::Shape {
            expected: predictions.len(),
            got: y_star.len(),
        });
    }
    let sq: Vec<f64> = predictions
        .iter()
        .zip(y_star)
        .map(|(p, y)| (y - p.mean).powi(2))
        .collect();
    let var: Vec<f64> = predictions.iter().map(|p| p.variance).collect();
    evaluate_squared_errors(&sq, &var, form)
}

/// How seeds are combined before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Average MSE over seeds, then take logs.
    #[default]
    MeanThenLog,
    /// Take logs of each seed's excess MSE, then average.
    LogThenMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub floor_used: f64,
    pub points: usize,
}

/// Ordinary least squares `y = intercept + slope·x`, returning `(slope, intercept, r²)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if ss_tot <= 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    (slope, intercept, r2)
}

/// Fits `log(MSE − floor)` against `log n` across the records' grid.
pub fn fit_rate(records: &[TrialRecord], floor: f64, averaging: Averaging) -> Result<RateFit> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_n.entry(r.n).or_default().push(r.mse);
    }
    if by_n.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 distinct n values, got {}",
            by_n.len()
        )));
    }
    let mut xs = Vec::with_capacity(by_n.len());
    let mut ys = Vec::with_capacity(by_n.len());
    for (&n, mses) in &by_n {
        let y = match averaging {
            Averaging::MeanThenLog => {
                let excess = mses.iter().sum::<f64>() / mses.len() as f64 - floor;
                if !(excess > 0.0) {
                    return Err(Error::Fit(format!(
                        "mean excess MSE {excess} is not positive at n = {n}; the floor has been reached"
                    )));
                }
                excess.ln()
            }
            Averaging::LogThenMean => {
                let mut acc = 0.0;
                for &v in mses {
                    let excess = v - floor;
                    if !(excess > 0.0) {
                        return Err(Error::Fit(format!(
                            "excess MSE {excess} is not positive at n = {n}; the floor has been reached"
                        )));
                    }
                    acc += excess.ln();
                }
                acc / mses.len() as f64
            }
        };
        xs.push((n as f64).ln());
        ys.push(y);
    }
    let (slope, intercept, r_squared) = ols(&xs, &ys);
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        floor_used: floor,
        points: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conventional_nll_halves_the_ratio_term() {
        let p = [Prediction {
            mean: 0.0,
            variance: 1.0,
        }];
        let a = evaluate(&p, &[2.0], NllForm::FullResidual).unwrap();
        let b = evaluate(&p, &[2.0], NllForm::Gaussian).unwrap();
        assert!((a.nll - b.nll - 2.0).abs() < 1e-14);
    }

    #[test]
    fn too_few_grid_points() {
        let r = TrialRecord {
            n: 10,
            d: 1,
            m: 1,
            l_hat: 1.0,
            kernel_gen: "se".into(),
            kernel_model: "se".into(),
            seed: 0,
            mse: 1.0,
            cal: 1.0,
            nll: 1.0,
            wall_time_s: 0.0,
        };
        assert!(fit_rate(&[r.clone(), r], 0.0, Averaging::MeanThenLog).is_err());
    }
}
