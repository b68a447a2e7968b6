//! Gamma and digamma functions.
//!
//! `ln_gamma` uses the Lanczos approximation (g = 7, nine coefficients);
//! `digamma` shifts the argument above 10 with the recurrence
//! ψ(x) = ψ(x + 1) − 1/x and then sums the asymptotic series.

use crate::math::{ln, sin};
use core::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Natural log of |Γ(x)|.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1−x) = π / sin(πx)
        return ln(PI / sin(PI * x).abs()) - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    HALF_LN_2PI + (x + 0.5) * ln(t) - t + ln(acc)
}

/// Γ(x) for positive arguments.
pub fn gamma(x: f64) -> f64 {
    crate::math::exp(ln_gamma(x))
}

/// Digamma ψ(x) = d/dx ln Γ(x).
pub fn digamma(x: f64) -> f64 {
    if x <= 0.0 && x == crate::math::floor(x) {
        return f64::NAN;
    }
    if x < 0.5 {
        // ψ(1 − x) − ψ(x) = π cot(πx)
        let cot = crate::math::cos(PI * x) / sin(PI * x);
        return digamma(1.0 - x) - PI * cot;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number series in 1/x²
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
    shift + ln(x) - 0.5 * inv - series
}
