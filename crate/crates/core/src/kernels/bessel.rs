//! Matérn correlation `2^{1-ν}/Γ(ν) z^ν K_ν(z)` and its complement `1 - c`.
//!
//! Small arguments use ascending series for `1 - c` directly so the metric
//! keeps full relative accuracy as `z → 0`. Large arguments use Steed's
//! continued fraction for an exponentially scaled `K_ν`.

use std::f64::consts::PI;

use statrs::function::gamma::{gamma, ln_gamma};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_LIMIT: f64 = 2.0;
const INTEGER_TOL: f64 = 1e-9;
const MAX_TERMS: usize = 500;

/// Closed form for half-integer `ν = k + 1/2`, if `nu` is one.
fn half_integer_order(nu: f64) -> Option<usize> {
    let k = nu - 0.5;
    if k >= 0.0 && (k - k.round()).abs() < 1e-12 && k < 64.0 {
        Some(k.round() as usize)
    } else {
        None
    }
}

/// `c(z)` for `ν = k + 1/2`: `e^{-z} k!/(2k)! Σ_i (k+i)!/(i!(k-i)!) (2z)^{k-i}`.
fn half_integer_correlation(k: usize, z: f64) -> f64 {
    // Coefficients built by ratio to avoid factorial overflow.
    // a_i = k!/(2k)! * (k+i)!/(i!(k-i)!) * 2^{k-i}; a_k = 1.
    let mut term = 1.0;
    let mut acc = 1.0;
    for i in (0..k).rev() {
        // a_i / a_{i+1} = 2 (i+1) / ((k+i+1)(k-i))
        term *= 2.0 * (i + 1) as f64 / (((k + i + 1) * (k - i)) as f64) * z;
        acc += term;
    }
    acc * (-z).exp()
}

/// Ascending series for `1 - c` with non-integer `ν`.
fn series_noninteger(nu: f64, z: f64) -> f64 {
    let w = 0.25 * z * z;
    // Σ_{k≥1} w^k / (k! Π_{j=1..k}(j-ν))
    let mut a_sum = 0.0;
    let mut term = 1.0;
    for k in 1..MAX_TERMS {
        term *= w / (k as f64 * (k as f64 - nu));
        a_sum += term;
        if term.abs() <= 1e-17 * a_sum.abs() {
            break;
        }
    }
    // Γ(1-ν)/Γ(1+ν) Σ_{k≥0} w^{k+ν} / (k! Π_{j=1..k}(j+ν)), using the reflection formula
    let sin = (PI * nu).sin();
    let log_ratio = PI.ln() - sin.abs().ln() - nu.ln() - 2.0 * ln_gamma(nu);
    let lead = (log_ratio + nu * w.ln()).exp() * sin.signum();
    let mut b_sum = 0.0;
    let mut term = 1.0;
    for k in 0..MAX_TERMS {
        if k > 0 {
            term *= w / (k as f64 * (k as f64 + nu));
        }
        b_sum += term;
        if term <= 1e-17 * b_sum {
            break;
        }
    }
    -a_sum + lead * b_sum
}

/// Ascending series for `1 - c` with integer `ν = n ≥ 1`.
fn series_integer(n: usize, z: f64) -> f64 {
    let w = 0.25 * z * z;
    let nf = n as f64;
    let fact_nm1 = gamma(nf);
    // Finite part: Σ_{k=1}^{n-1} (n-k-1)!/k! (-w)^k / (n-1)!
    let mut finite = 0.0;
    for k in 1..n {
        let coeff = gamma((n - k) as f64) / gamma(k as f64 + 1.0);
        finite += coeff * (-w).powi(k as i32);
    }
    finite /= fact_nm1;
    // Logarithmic part with digamma ψ(j) = -γ + H_{j-1}.
    let log_half = (0.5 * z).ln();
    let mut h_k = 0.0; // H_k
    let mut h_nk: f64 = (1..=n).map(|j| 1.0 / j as f64).sum(); // H_{n+k}
    let mut term = 1.0 / gamma(nf + 1.0); // w^k / (k!(n+k)!)
    let mut acc = 0.0;
    for k in 0..MAX_TERMS {
        if k > 0 {
            term *= w / (k as f64 * (nf + k as f64));
            h_k += 1.0 / k as f64;
            h_nk += 1.0 / (nf + k as f64);
        }
        let psi_sum = -2.0 * EULER_GAMMA + h_k + h_nk;
        let contrib = term * (log_half - 0.5 * psi_sum);
        acc += contrib;
        if contrib.abs() <= 1e-17 * acc.abs() && k > 0 {
            break;
        }
    }
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    -finite + 2.0 * sign / fact_nm1 * w.powi(n as i32) * acc
}

/// `ln(e^z K_ν(z))` for `z ≥ 2` via Steed's CF2 and upward recurrence.
fn ln_scaled_bessel_k(nu: f64, x: f64) -> f64 {
    let nl = (nu + 0.5).floor() as usize;
    let xmu = nu - nl as f64;
    let xmu2 = xmu * xmu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - xmu2;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..=10_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-16 {
            break;
        }
    }
    h *= a1;
    let mut k_mu = (PI / (2.0 * x)).sqrt() / s;
    let mut k_mu1 = k_mu * (xmu + x + 0.5 - h) * xi;
    let mut log_scale = 0.0;
    for i in 1..=nl {
        let next = (xmu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
        if k_mu1 > 1e250 {
            log_scale += k_mu1.ln();
            k_mu /= k_mu1;
            k_mu1 = 1.0;
        }
    }
    k_mu.ln() + log_scale
}

fn correlation_large(nu: f64, z: f64) -> f64 {
    let log_c = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * z.ln() - z
        + ln_scaled_bessel_k(nu, z);
    log_c.exp().min(1.0)
}

/// `1 - c(z)` for the Matérn family of smoothness `nu`, `z = √(2ν) Δ/l`.
pub fn matern_one_minus(nu: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if let Some(k) = half_integer_order(nu) {
        if k == 0 {
            return -(-z).exp_m1();
        }
        if z > SERIES_LIMIT {
            return 1.0 - half_integer_correlation(k, z);
        }
    }
    if z > SERIES_LIMIT {
        return 1.0 - correlation_large(nu, z);
    }
    let rounded = nu.round();
    let v = if (nu - rounded).abs() < INTEGER_TOL && rounded >= 1.0 {
        series_integer(rounded as usize, z)
    } else {
        series_noninteger(nu, z)
    };
    v.clamp(0.0, 1.0)
}

/// Matérn correlation `c(z)`.
pub fn matern_correlation(nu: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    if let Some(k) = half_integer_order(nu) {
        return half_integer_correlation(k, z);
    }
    if z > SERIES_LIMIT {
        correlation_large(nu, z)
    } else {
        1.0 - matern_one_minus(nu, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn half_integer_closed_forms() {
        for &z in &[0.1f64, 1.0, 3.0] {
            assert!(close(half_integer_correlation(0, z), (-z).exp(), 1e-14));
            assert!(close(
                half_integer_correlation(1, z),
                (1.0 + z) * (-z).exp(),
                1e-14
            ));
            let c52 = (1.0 + z + z * z / 3.0) * (-z).exp();
            assert!(close(half_integer_correlation(2, z), c52, 1e-14));
        }
    }

    #[test]
    fn noninteger_series_matches_closed_form_near_half_integer() {
        // The general series at ν=1.5 must reproduce (1+z)e^{-z}.
        for &z in &[1e-3f64, 0.3, 1.0, 1.9] {
            let want = -(-z).exp_m1() - z * (-z).exp();
            let got = series_noninteger(1.5, z);
            assert!(close(got, want, 1e-11), "z={z} got={got} want={want}");
        }
    }

    #[test]
    fn large_argument_matches_closed_form() {
        for &nu in &[0.5, 1.5, 2.5] {
            let k = half_integer_order(nu).unwrap();
            for &z in &[2.5, 5.0, 20.0] {
                let want = half_integer_correlation(k, z);
                assert!(
                    close(correlation_large(nu, z), want, 1e-12),
                    "nu={nu} z={z}"
                );
            }
        }
    }

    #[test]
    fn integer_order_is_continuous_with_neighbours() {
        for &z in &[0.2, 1.0, 1.99] {
            let at = series_integer(1, z);
            let below = series_noninteger(1.0 - 1e-5, z);
            let above = series_noninteger(1.0 + 1e-5, z);
            assert!((at - below).abs() < 1e-4 * at && (at - above).abs() < 1e-4 * at);
            let at2 = series_integer(2, z);
            let near2 = series_noninteger(2.0 + 1e-5, z);
            assert!((at2 - near2).abs() < 1e-4 * at2);
        }
    }

    #[test]
    fn series_and_recurrence_agree_at_the_switch() {
        for &nu in &[0.3, 0.7, 1.0, 1.3, 2.0, 3.7] {
            let lo = 1.0 - matern_one_minus(nu, 2.0);
            let hi = correlation_large(nu, 2.0);
            assert!(close(lo, hi, 1e-10), "nu={nu} series={lo} cf={hi}");
        }
    }
}
