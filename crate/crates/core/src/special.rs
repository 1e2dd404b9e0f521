//! Gamma function at integer and half-integer arguments.
//!
//! Every Gamma value in the kernel spectrum formulas has an argument of the
//! form `k / 2`. Working from the exact product representations keeps the
//! poles exact and avoids the few-ulp drift of a Lanczos approximation.

use std::f64::consts::PI;

/// `ln |Gamma(twice / 2)|` and the sign of `Gamma(twice / 2)`, or `None` at a pole.
pub fn ln_gamma_half(twice: i64) -> Option<(f64, f64)> {
    if twice <= 0 && twice % 2 == 0 {
        return None;
    }
    if twice > 0 {
        return Some((ln_gamma_half_pos(twice as u64), 1.0));
    }
    // Negative half-integer: Gamma(x) = Gamma(x + k) / (x (x+1) ... (x+k-1)).
    let mut x = twice;
    let mut ln_denom = 0.0;
    let mut sign = 1.0;
    while x < 0 {
        let v = x as f64 / 2.0;
        ln_denom += v.abs().ln();
        if v < 0.0 {
            sign = -sign;
        }
        x += 2;
    }
    Some((ln_gamma_half_pos(x as u64) - ln_denom, sign))
}

fn ln_gamma_half_pos(twice: u64) -> f64 {
    if twice.is_multiple_of(2) {
        // Gamma(k) = (k-1)!
        let k = twice / 2;
        (1..k).map(|i| (i as f64).ln()).sum()
    } else {
        // Gamma(k + 1/2) = sqrt(pi) * prod_{i<k} (i + 1/2)
        let k = twice / 2;
        0.5 * PI.ln() + (0..k).map(|i| (i as f64 + 0.5).ln()).sum::<f64>()
    }
}

/// `Gamma(twice / 2)`; infinite at poles.
pub fn gamma_half(twice: i64) -> f64 {
    match ln_gamma_half(twice) {
        Some((l, s)) => s * l.exp(),
        None => f64::INFINITY,
    }
}

/// `1 / Gamma(twice / 2)`, exactly zero at the poles.
pub fn rgamma_half(twice: i64) -> f64 {
    match ln_gamma_half(twice) {
        Some((l, s)) => s * (-l).exp(),
        None => 0.0,
    }
}

/// `ln n!`
pub fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Surface area of the unit sphere `S^k` in `R^{k+1}`: `2 pi^{(k+1)/2} / Gamma((k+1)/2)`.
pub fn sphere_area(k: usize) -> f64 {
    let half = (k + 1) as f64 / 2.0;
    2.0 * (half * PI.ln() - ln_gamma_half((k + 1) as i64).expect("positive argument").0).exp()
}
