//! Neighbour-distance statistics in the kernel metric and the matrix
//! identities built on them: the infinite-lengthscale Gram `K∞`, a
//! third-order expansion of `K⁻¹` around it, and bounds on `1ᵀK⁻¹1`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{distance, HyperParams, KernelSpec};
use crate::linalg::{norm1, SpdFactor};

/// Squared kernel-metric distances among the neighbours and to the query.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonStats {
    /// `ρ²(x_(i), x*)`
    pub to_query: Vec<f64>,
    /// `ρ²(x_(i), x_(j))`, zero diagonal.
    #[serde(skip)]
    pub pairwise: DMatrix<f64>,
    pub mean_to_query: f64,
    pub min_to_query: f64,
    pub max_to_query: f64,
    /// Mean over `i ≠ j`; `None` when `m = 1`.
    pub mean_pairwise: Option<f64>,
    /// Minimum over `i ≠ j`; `None` when `m = 1`.
    pub min_pairwise: Option<f64>,
}

impl EpsilonStats {
    pub fn m(&self) -> usize {
        self.to_query.len()
    }

    /// Assembles statistics from precomputed distances.
    pub fn from_parts(to_query: Vec<f64>, pairwise: DMatrix<f64>) -> Result<Self> {
        let m = to_query.len();
        if m == 0 {
            return Err(Error::Size("at least one neighbour is required".into()));
        }
        if pairwise.nrows() != m || pairwise.ncols() != m {
            return Err(Error::Shape {
                expected: m,
                got: pairwise.nrows(),
            });
        }
        let mean_to_query = to_query.iter().sum::<f64>() / m as f64;
        let min_to_query = to_query.iter().copied().fold(f64::INFINITY, f64::min);
        let max_to_query = to_query.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mean_pairwise, min_pairwise) = if m > 1 {
            let mut sum = 0.0;
            let mut min = f64::INFINITY;
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        sum += pairwise[(i, j)];
                        min = min.min(pairwise[(i, j)]);
                    }
                }
            }
            (Some(sum / (m * (m - 1)) as f64), Some(min))
        } else {
            (None, None)
        };
        Ok(Self {
            to_query,
            pairwise,
            mean_to_query,
            min_to_query,
            max_to_query,
            mean_pairwise,
            min_pairwise,
        })
    }
}

pub fn epsilon_stats(
    kernel: &KernelSpec,
    neighbours: &[&[f64]],
    x_star: &[f64],
) -> Result<EpsilonStats> {
    let m = neighbours.len();
    let mut to_query = Vec::with_capacity(m);
    let mut pairwise = DMatrix::zeros(m, m);
    for i in 0..m {
        to_query.push(kernel.rho2_at(distance(neighbours[i], x_star)?));
        for j in 0..i {
            let v = kernel.rho2_at(distance(neighbours[i], neighbours[j])?);
            pairwise[(i, j)] = v;
            pairwise[(j, i)] = v;
        }
    }
    EpsilonStats::from_parts(to_query, pairwise)
}

/// Outcome of the pairwise-separation condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct A4Check {
    pub holds: bool,
    /// True when `m < 2`, where the condition has no content.
    pub vacuous: bool,
    pub threshold: f64,
}

/// `min_{i≠j} ε_ij < (mσ_f² + σ_ξ²)/(m − 1)`.
pub fn check_a4(stats: &EpsilonStats, params: &HyperParams, m: usize) -> A4Check {
    if m < 2 {
        return A4Check {
            holds: true,
            vacuous: true,
            threshold: f64::INFINITY,
        };
    }
    let threshold = (m as f64 * params.signal_variance + params.noise_variance) / (m as f64 - 1.0);
    let min = stats.min_pairwise.unwrap_or(0.0);
    A4Check {
        holds: min < threshold,
        vacuous: false,
        threshold,
    }
}

/// `K∞ = σ_ξ²I + σ_f²11ᵀ`, its inverse `Q = σ_ξ⁻²(I − γ11ᵀ)` and `E = K − K∞`.
#[derive(Debug, Clone)]
pub struct LimitMatrices {
    pub k_inf: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub gamma: f64,
    pub e: DMatrix<f64>,
}

impl LimitMatrices {
    pub fn new(k: &DMatrix<f64>, params: &HyperParams) -> Result<Self> {
        let m = k.nrows();
        if m == 0 || k.ncols() != m {
            return Err(Error::Shape {
                expected: m,
                got: k.ncols(),
            });
        }
        let (sf2, sn2) = (params.signal_variance, params.noise_variance);
        let gamma = sf2 / (sn2 + m as f64 * sf2);
        let k_inf = DMatrix::from_fn(m, m, |i, j| sf2 + if i == j { sn2 } else { 0.0 });
        let q = DMatrix::from_fn(m, m, |i, j| {
            ((if i == j { 1.0 } else { 0.0 }) - gamma) / sn2
        });
        let e = k - &k_inf;
        Ok(Self { k_inf, q, gamma, e })
    }

    /// `‖EQ‖₁`
    pub fn eq_norm(&self) -> f64 {
        norm1(&(&self.e * &self.q))
    }

    /// `mσ_f²/(σ_ξ² + mσ_f²)`, the value `‖EQ‖₁` is compared against.
    pub fn eq_norm_reference(&self) -> f64 {
        self.gamma * self.k_inf.nrows() as f64
    }
}

/// Gram matrix `σ_f² − ε_ij` off the diagonal and `σ_f² + σ_ξ²` on it.
pub fn gram_from_stats(stats: &EpsilonStats, params: &HyperParams) -> DMatrix<f64> {
    let m = stats.m();
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            params.total_variance()
        } else {
            params.signal_variance - stats.pairwise[(i, j)]
        }
    })
}

/// Third-order expansion `3Q − 3QKQ + QKQKQ` of `K⁻¹`.
pub fn neumann_inverse(k: &DMatrix<f64>, limits: &LimitMatrices) -> Result<DMatrix<f64>> {
    let norm = limits.eq_norm();
    if !(norm < 1.0) {
        return Err(Error::Divergence { norm });
    }
    let q = &limits.q;
    let qkq = q * k * q;
    let qkqkq = &qkq * k * q;
    Ok(q * 3.0 - qkq * 3.0 + qkqkq)
}

/// Endpoints of `1/(σ_f² + σ_ξ² + (m−1)(σ_f² − ε_min)) ≤ m⁻¹1ᵀK⁻¹1 ≤ 1/σ_ξ²`.
pub fn gershgorin_sum_bounds(stats: &EpsilonStats, params: &HyperParams, m: usize) -> (f64, f64) {
    let spread = match stats.min_pairwise {
        Some(min) if m > 1 => (m as f64 - 1.0) * (params.signal_variance - min),
        _ => 0.0,
    };
    (
        1.0 / (params.total_variance() + spread),
        1.0 / params.noise_variance,
    )
}

/// `m(ε_max + ε̄ + 2√(ε_max ε̄))`, an upper bound on `‖E‖₁`.
pub fn e_norm_bound(stats: &EpsilonStats, m: usize) -> f64 {
    let (mx, mean) = (stats.max_to_query, stats.mean_to_query);
    m as f64 * (mx + mean + 2.0 * (mx * mean).sqrt())
}

/// Exact `‖E‖₁`: the largest row sum of pairwise distances.
pub fn e_norm_exact(stats: &EpsilonStats) -> f64 {
    norm1(&stats.pairwise)
}

/// Second-order approximation `σ_f⁻²(1 + (ε̄_pair − σ_ξ²/m)/σ_f²)` of `1ᵀK⁻¹1`.
pub fn one_k_inv_one_approx(stats: &EpsilonStats, params: &HyperParams, m: usize) -> f64 {
    let sf2 = params.signal_variance;
    let pair = stats.mean_pairwise.unwrap_or(0.0);
    (1.0 + (pair - params.noise_variance / m as f64) / sf2) / sf2
}

/// `1ᵀK⁻¹1` by Cholesky solve.
pub fn one_k_inv_one_exact(k: &DMatrix<f64>, params: &HyperParams) -> Result<f64> {
    let factor = SpdFactor::new(k.clone(), params.total_variance())?;
    Ok(factor.quad_form(&DVector::from_element(k.nrows(), 1.0)))
}

/// `1ᵀK²1 − m⁻¹(1ᵀK1)²`, which is second order in the pairwise distances.
pub fn one_k_sq_one_gap(k: &DMatrix<f64>) -> f64 {
    let m = k.nrows() as f64;
    let ones = DVector::from_element(k.nrows(), 1.0);
    let k1 = k * &ones;
    k1.norm_squared() - k1.sum().powi(2) / m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> HyperParams {
        HyperParams::new(1.0, 0.9, 0.1).unwrap()
    }

    #[test]
    fn q_inverts_k_inf() {
        let k = DMatrix::from_element(4, 4, 0.5);
        let lim = LimitMatrices::new(&k, &params()).unwrap();
        let prod = &lim.q * &lim.k_inf;
        assert!((prod - DMatrix::identity(4, 4)).abs().max() < 1e-12);
    }

    #[test]
    fn a4_flags_single_neighbour() {
        let s = EpsilonStats::from_parts(vec![0.1], DMatrix::zeros(1, 1)).unwrap();
        let a4 = check_a4(&s, &params(), 1);
        assert!(a4.holds && a4.vacuous);
    }

    #[test]
    fn divergent_expansion_is_an_error() {
        let p = params();
        let k = DMatrix::from_row_slice(2, 2, &[1.0, -5.0, -5.0, 1.0]);
        let lim = LimitMatrices::new(&k, &p).unwrap();
        assert!(matches!(
            neumann_inverse(&k, &lim),
            Err(Error::Divergence { .. })
        ));
    }
}
