//! Matsubara sums over fermionic frequencies in reduced units
//! (energies in k_B T_c, temperatures as T/T_c).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Pairs are summed until one contributes less than this fraction of the running sum.
pub const PAIR_TOLERANCE: f64 = 1e-13;
/// Hard cap on the number of summed terms (each symmetric pair counts as two).
pub const MAX_TERMS: usize = 10_000_000;

/// `Z_j = pi T Delta^(j-1) sum_n (eps_n^2 + Delta^2)^(-j/2)` with `eps_n = pi T (2n-1)`.
///
/// Only `j` in {3, 5, 7} is supported.
pub fn matsubara_z(j: u32, t: f64, gap: f64) -> Result<f64> {
    matsubara_z_capped(j, t, gap, MAX_TERMS)
}

/// Same as [`matsubara_z`] with an explicit term cap.
pub fn matsubara_z_capped(j: u32, t: f64, gap: f64, max_terms: usize) -> Result<f64> {
    if !matches!(j, 3 | 5 | 7) {
        return Err(Error::Domain(format!(
            "Z_j requires j in {{3,5,7}}, got {j}"
        )));
    }
    if !(t > 0.0 && t <= 1.0) || !t.is_finite() {
        return Err(Error::Domain(format!("Z_j requires 0 < T <= 1, got {t}")));
    }
    if !(gap >= 0.0) || !gap.is_finite() {
        return Err(Error::Domain(format!("Z_j requires gap >= 0, got {gap}")));
    }
    if gap == 0.0 {
        return Ok(0.0);
    }

    // Work with x_m = omega_m / Delta so that Z_j = (pi T / Delta) * 2 sum (x_m^2 + 1)^(-j/2).
    let step = 2.0 * PI * t / gap;
    let x0 = PI * t / gap;
    let half_j = j as f64 / 2.0;
    let term = |x: f64| (x * x + 1.0).powf(-half_j);

    let mut sum = 0.0;
    let mut m = 0usize;
    loop {
        let x = x0 + step * m as f64;
        let pair = 2.0 * term(x);
        sum += pair;
        m += 1;
        if 2 * m >= max_terms {
            return Err(Error::MatsubaraNonConvergence {
                j,
                terms: 2 * m,
                partial: x0 * 2.0 * sum,
            });
        }
        // Stop once the pair is negligible and we are deep in the power-law tail,
        // where the remaining terms are replaced by their Euler-Maclaurin integral.
        if pair < PAIR_TOLERANCE * sum && x > 10.0 {
            break;
        }
    }
    // Midpoint rule: sum_{k>=m} f(x_k) ~ (1/step) * integral from x_m - step/2.
    let lower = x0 + step * m as f64 - 0.5 * step;
    sum += 2.0 * tail_integral(j, lower) / step;
    Ok((x0 * sum).clamp(0.0, 1.0))
}

/// `integral_w^inf (x^2 + 1)^(-j/2) dx` for large `w`, by binomial expansion in 1/w^2.
fn tail_integral(j: u32, w: f64) -> f64 {
    let half_j = j as f64 / 2.0;
    let inv2 = 1.0 / (w * w);
    let mut coeff = 1.0; // binom(-j/2, k)
    let mut pow = w.powf(1.0 - j as f64); // w^(1-j-2k)
    let mut total = 0.0;
    for k in 0..30 {
        let contrib = coeff * pow / (j as f64 + 2.0 * k as f64 - 1.0);
        total += contrib;
        if contrib.abs() < 1e-18 * total.abs() {
            break;
        }
        coeff *= (-half_j - k as f64) / (k as f64 + 1.0);
        pow *= inv2;
    }
    total
}

/// Yosida function `Y = 1 - Z_3`.
pub fn yosida(t: f64, gap: f64) -> Result<f64> {
    Ok(1.0 - matsubara_z(3, t, gap)?)
}
