//! Closed forms for `ln A_alpha(q, sigma)`, the moment of the privacy-loss
//! ratio of the sampled Gaussian mechanism.

use std::f64::consts::{LN_2, SQRT_2};

use super::special::{ln_erfc, ln_erfcx, log_add, SignedLogSum};
use super::{AccountantError, SgmAnalysisContext, SgmParams};

/// Relative truncation tolerance used when callers do not supply one.
pub const DEFAULT_SERIES_TOL: f64 = 1e-12;
/// Hard cap on the number of terms summed by the fractional series.
pub const MAX_SERIES_TERMS: usize = 10_000;
/// Number of consecutive sub-tolerance terms required before stopping.
const CONVERGED_STREAK: usize = 2;
/// Largest tolerated negative `ln A` before it is treated as a numerical fault.
pub const NEGATIVE_LOG_MOMENT_SLACK: f64 = 1e-12;

/// Clamps float noise below zero, rejecting anything beyond the slack.
pub(crate) fn clamp_log_moment(ln_a: f64) -> Result<f64, AccountantError> {
    if ln_a.is_nan() {
        return Err(AccountantError::NonFiniteMoment);
    }
    if ln_a < -NEGATIVE_LOG_MOMENT_SLACK {
        return Err(AccountantError::NegativeLogMoment(ln_a));
    }
    Ok(ln_a.max(0.0))
}

/// `ln A_alpha` for integer `alpha >= 2` as a finite binomial sum:
/// `sum_k C(alpha, k) (1-q)^(alpha-k) q^k exp((k^2 - k) / (2 sigma^2))`.
pub fn log_a_alpha_integer(params: SgmParams, alpha: u32) -> Result<f64, AccountantError> {
    if alpha < 2 {
        return Err(AccountantError::InvalidOrder(f64::from(alpha)));
    }
    let (q, sigma) = (params.q(), params.sigma());
    let a = f64::from(alpha);
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok((a * a - a) / (2.0 * sigma * sigma));
    }

    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let two_sigma_sq = 2.0 * sigma * sigma;

    let mut ln_sum = f64::NEG_INFINITY;
    let mut binom = 1.0_f64;
    for k in 0..=alpha {
        if k > 0 {
            binom = binom * f64::from(alpha - k + 1) / f64::from(k);
        }
        let ln_binom = if binom.is_finite() {
            binom.ln()
        } else {
            ln_binomial_gamma(alpha, k)
        };
        let kf = f64::from(k);
        let term = ln_binom + (a - kf) * ln_1mq + kf * ln_q + (kf * kf - kf) / two_sigma_sq;
        ln_sum = log_add(ln_sum, term);
    }
    clamp_log_moment(ln_sum)
}

fn ln_binomial_gamma(n: u32, k: u32) -> f64 {
    let (n, k) = (f64::from(n), f64::from(k));
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// `ln A_alpha` for real `alpha > 1` and `0 < q < 1` via the erfc series.
///
/// The real line is split at `z1`, where both mixture components of the
/// privacy-loss ratio are equal, and each side is expanded in powers of the
/// smaller component. With `j = alpha - k` the k-th term is
///
/// ```text
/// C(alpha,k)/2 * [ (1-q)^j q^k exp((k^2-k)/(2s^2)) erfc((k - z1)/(sqrt2 s))
///                + (1-q)^k q^j exp((j^2-j)/(2s^2)) erfc((z1 - j)/(sqrt2 s)) ]
/// ```
///
/// Generalized binomial coefficients change sign past `alpha`, so terms are
/// accumulated with explicit signs. Summation stops once two consecutive
/// terms fall below `tol` relative to the partial sum; integer `alpha`
/// terminates exactly after `alpha + 1` terms.
pub fn log_a_alpha_fractional(
    params: SgmParams,
    alpha: f64,
    tol: f64,
) -> Result<f64, AccountantError> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(AccountantError::InvalidOrder(alpha));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(AccountantError::InvalidTolerance(tol));
    }
    let ctx = SgmAnalysisContext::new(params)?;
    let (q, sigma) = (params.q(), params.sigma());
    let z1 = ctx.z1();

    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let two_sigma_sq = 2.0 * sigma * sigma;
    let sqrt2_sigma = SQRT_2 * sigma;
    let ln_tol = tol.ln();
    // Past both alpha and z1 the terms decay monotonically in magnitude.
    let settle_after = alpha.max(z1) + 1.0;

    // exp((m^2 - m)/(2s^2)) * erfc(x). For x >= 0 the Gaussian factors are
    // merged analytically so the tail never underflows before the product.
    let gaussian_erfc = |m: f64, x: f64| -> f64 {
        if x >= 0.0 {
            (m * (2.0 * z1 - 1.0) - z1 * z1) / two_sigma_sq + ln_erfcx(x)
        } else {
            (m * m - m) / two_sigma_sq + ln_erfc(x)
        }
    };

    let mut sum = SignedLogSum::default();
    let mut ln_binom = 0.0_f64;
    let mut negative = false;
    let mut streak = 0;

    for k in 0..MAX_SERIES_TERMS {
        let kf = k as f64;
        if k > 0 {
            let factor = alpha - (kf - 1.0);
            if factor == 0.0 {
                // C(alpha, k) vanishes from here on: the sum is exact.
                return finish(&sum);
            }
            ln_binom += factor.abs().ln() - kf.ln();
            if factor < 0.0 {
                negative = !negative;
            }
        }
        let j = alpha - kf;
        let left = (alpha - kf) * ln_1mq + kf * ln_q + gaussian_erfc(kf, (kf - z1) / sqrt2_sigma);
        let right = kf * ln_1mq + j * ln_q + gaussian_erfc(j, (z1 - j) / sqrt2_sigma);
        let ln_term = ln_binom + log_add(left, right) - LN_2;
        sum.add(negative, ln_term);

        if kf > settle_after {
            if ln_term - sum.ln_abs() < ln_tol {
                streak += 1;
                if streak >= CONVERGED_STREAK {
                    return finish(&sum);
                }
            } else {
                streak = 0;
            }
        }
    }
    Err(AccountantError::NonConvergence {
        alpha,
        terms: MAX_SERIES_TERMS,
    })
}

fn finish(sum: &SignedLogSum) -> Result<f64, AccountantError> {
    match sum.ln_positive() {
        Some(ln_a) => clamp_log_moment(ln_a),
        None => Err(AccountantError::NonFiniteMoment),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(q: f64, sigma: f64) -> SgmParams {
        SgmParams::new(q, sigma).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    }

    #[test]
    fn integer_no_sampling_is_zero() {
        assert_eq!(log_a_alpha_integer(p(0.0, 1.0), 2).unwrap(), 0.0);
    }

    #[test]
    fn integer_full_sampling_is_gaussian() {
        for alpha in [2u32, 3, 10, 64] {
            let a = f64::from(alpha);
            let got = log_a_alpha_integer(p(1.0, 1.7), alpha).unwrap();
            assert!(rel(got, (a * a - a) / (2.0 * 1.7 * 1.7)) < 1e-15);
        }
    }

    #[test]
    fn integer_small_q_hand_value() {
        // 0.99^2 + 2*0.99*0.01 + 0.01^2 * e
        let expected = (0.99_f64 * 0.99 + 2.0 * 0.99 * 0.01 + 1e-4 * std::f64::consts::E).ln();
        let got = log_a_alpha_integer(p(0.01, 1.0), 2).unwrap();
        assert!(rel(got, expected) < 1e-12, "{got} vs {expected}");
        assert!((got.exp() - 1.000_171_8).abs() < 1e-7);
    }

    #[test]
    fn integer_rejects_low_order() {
        assert!(matches!(
            log_a_alpha_integer(p(0.5, 1.0), 1),
            Err(AccountantError::InvalidOrder(_))
        ));
    }

    #[test]
    fn fractional_matches_integer_at_integer_order() {
        let f = log_a_alpha_fractional(p(0.1, 2.0), 3.0, DEFAULT_SERIES_TOL).unwrap();
        let i = log_a_alpha_integer(p(0.1, 2.0), 3).unwrap();
        assert!(rel(f, i) < 1e-9, "{f} vs {i}");
    }

    #[test]
    fn fractional_rejects_degenerate_rates() {
        for q in [0.0, 1.0] {
            assert!(matches!(
                log_a_alpha_fractional(p(q, 1.0), 2.5, DEFAULT_SERIES_TOL),
                Err(AccountantError::DegenerateSamplingRate(_))
            ));
        }
    }

    #[test]
    fn fractional_is_positive_and_finite_near_one() {
        for alpha in [1.01, 1.25, 1.5, 1.75] {
            let v = log_a_alpha_fractional(p(0.1, 1.0), alpha, DEFAULT_SERIES_TOL).unwrap();
            assert!(v.is_finite() && v > 0.0, "alpha={alpha} v={v}");
        }
    }

    #[test]
    fn clamp_rejects_real_negatives() {
        assert_eq!(clamp_log_moment(-1e-14).unwrap(), 0.0);
        assert!(clamp_log_moment(-1e-9).is_err());
    }
}
