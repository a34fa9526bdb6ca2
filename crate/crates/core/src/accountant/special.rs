//! Log-domain arithmetic and the complementary error function.

use std::f64::consts::PI;

/// Above this argument `erfc` is evaluated through its continued fraction
/// instead of `libm::erfc`, which starts losing range near 26.
const ERFC_CF_THRESHOLD: f64 = 25.0;
const ERFC_CF_DEPTH: usize = 64;

/// `ln(exp(a) + exp(b))`.
pub fn log_add(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
pub fn log_sub(a: f64, b: f64) -> f64 {
    debug_assert!(a >= b);
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `ln(erfc(x))` for any finite `x`.
pub fn ln_erfc(x: f64) -> f64 {
    if x < ERFC_CF_THRESHOLD {
        libm::erfc(x).ln()
    } else {
        ln_erfcx(x) - x * x
    }
}

/// `ln(exp(x^2) * erfc(x))` for `x >= 0`, finite for arbitrarily large `x`.
pub fn ln_erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < ERFC_CF_THRESHOLD {
        x * x + libm::erfc(x).ln()
    } else {
        erfcx_continued_fraction(x).ln()
    }
}

// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
fn erfcx_continued_fraction(x: f64) -> f64 {
    let mut t = x;
    for n in (1..=ERFC_CF_DEPTH).rev() {
        t = x + (n as f64 / 2.0) / t;
    }
    1.0 / (PI.sqrt() * t)
}

/// Running sum of signed terms, each given as `(sign, ln|term|)`.
///
/// Positive and negative mass are accumulated separately so that terms far
/// outside the double range still combine exactly in log space.
#[derive(Debug, Clone, Copy)]
pub struct SignedLogSum {
    ln_pos: f64,
    ln_neg: f64,
}

impl Default for SignedLogSum {
    fn default() -> Self {
        Self {
            ln_pos: f64::NEG_INFINITY,
            ln_neg: f64::NEG_INFINITY,
        }
    }
}

impl SignedLogSum {
    pub fn add(&mut self, negative: bool, ln_magnitude: f64) {
        if negative {
            self.ln_neg = log_add(self.ln_neg, ln_magnitude);
        } else {
            self.ln_pos = log_add(self.ln_pos, ln_magnitude);
        }
    }

    /// `ln|sum|`, `-inf` for an exact zero.
    pub fn ln_abs(&self) -> f64 {
        if self.ln_pos == self.ln_neg {
            return f64::NEG_INFINITY;
        }
        if self.ln_pos > self.ln_neg {
            log_sub(self.ln_pos, self.ln_neg)
        } else {
            log_sub(self.ln_neg, self.ln_pos)
        }
    }

    /// `ln(sum)` when the sum is strictly positive.
    pub fn ln_positive(&self) -> Option<f64> {
        (self.ln_pos > self.ln_neg).then(|| self.ln_abs())
    }
}
