//! Scalar special functions shared by the density families.

use libm::erfc;
use statrs::function::erf::erfc_inv;

pub use statrs::function::gamma::{digamma, ln_gamma};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail 1 - Φ(z), accurate for large positive z.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step against the accurate CDF
    let err = if z < 0.0 { std_normal_cdf(z) - p } else { (1.0 - p) - std_normal_sf(z) };
    let step = err / std_normal_ln_pdf(z).exp();
    if step.is_finite() { z - step } else { z }
}

pub fn std_normal_ln_pdf(z: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * z * z
}

/// Trigamma ψ'(x) for x > 0: recurrence up to x >= 20, then the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x)
            * x2
            * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0))))
}

/// Quantile residual from a lower-tail and an upper-tail probability,
/// picking whichever side keeps precision.
pub fn probit_from_tails(lower: f64, upper: f64) -> f64 {
    if lower <= 0.5 {
        std_normal_quantile(lower.max(f64::MIN_POSITIVE))
    } else {
        -std_normal_quantile(upper.max(f64::MIN_POSITIVE))
    }
}
