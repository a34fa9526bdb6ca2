//! Quadrature estimates of the two SGM moments, for verification only.
//!
//! `A = E_{z~mu0}[(mu(z)/mu0(z))^alpha]` and `B = E_{z~mu}[(mu0(z)/mu(z))^alpha]`
//! are integrated directly with the trapezoidal rule. The code shares nothing
//! with the closed forms beyond the parameter types: no erfc, no binomial
//! coefficients, no series. Both integrands are smooth and decay like
//! Gaussians of width `sigma`, for which the trapezoidal rule converges
//! geometrically in the node spacing.

use std::f64::consts::PI;

use super::{AccountantError, SgmAnalysisContext, SgmParams};

/// Integration range padding on each side, in units of `sigma`.
pub const RANGE_PADDING_SIGMAS: f64 = 40.0;
/// Nodes per `sigma` on the finest trapezoidal grid.
pub const NODES_PER_SIGMA: f64 = 32.0;

/// Quadrature result. Values are natural logs; errors are the absolute
/// difference in `ln` between the fine grid and a grid at twice the spacing,
/// which bounds the error of the fine estimate from above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub ln_a: f64,
    pub ln_b: f64,
    pub ln_a_error: f64,
    pub ln_b_error: f64,
}

/// Estimate `ln A_alpha` and `ln B_alpha` by quadrature. Requires `0 < q < 1`.
pub fn oracle_a_alpha(params: SgmParams, alpha: f64) -> Result<OracleEstimate, AccountantError> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(AccountantError::InvalidOrder(alpha));
    }
    let ctx = SgmAnalysisContext::new(params)?;
    let sigma = ctx.sigma();
    let lo = (1.0 - alpha).min(SgmAnalysisContext::MU0_MEAN) - RANGE_PADDING_SIGMAS * sigma;
    let hi = alpha.max(SgmAnalysisContext::MU1_MEAN) + RANGE_PADDING_SIGMAS * sigma;
    let h = sigma / NODES_PER_SIGMA;
    let n = ((hi - lo) / h).ceil() as usize;
    let nodes: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();

    let (ln_a, ln_a_error) = moment(&ctx, &nodes, h, alpha);
    let (ln_b, ln_b_error) = moment(&ctx, &nodes, h, 1.0 - alpha);
    Ok(OracleEstimate {
        ln_a,
        ln_b,
        ln_a_error,
        ln_b_error,
    })
}

/// `ln E_{mu0}[r^power]` with `r = mu/mu0`, plus its error estimate.
fn moment(ctx: &SgmAnalysisContext, nodes: &[f64], h: f64, power: f64) -> (f64, f64) {
    let sigma = ctx.sigma();
    let q = ctx.mixture_weight();
    let ln_norm = -(sigma * (2.0 * PI).sqrt()).ln();
    let ln_mu0 = |z: f64| ln_norm - z * z / (2.0 * sigma * sigma);
    // ln r(z) = ln(1 + q (exp((2z-1)/(2 sigma^2)) - 1))
    let ln_ratio = |z: f64| {
        let u = (2.0 * z - 1.0) / (2.0 * sigma * sigma);
        if u < 500.0 {
            (q * u.exp_m1()).ln_1p()
        } else {
            q.ln() + u + ((1.0 - q) / q * (-u).exp()).ln_1p()
        }
    };
    let exponents: Vec<f64> = nodes.iter().map(|&z| power * ln_ratio(z)).collect();

    if exponents.iter().all(|e| *e < 700.0) {
        // Moment close to one: integrate mu0 * (r^power - 1) to keep the
        // small excess over one accurate, then add the unit mass back.
        let f: Vec<f64> = nodes
            .iter()
            .zip(&exponents)
            .map(|(&z, &e)| ln_mu0(z).exp() * e.exp_m1())
            .collect();
        let fine = trapezoid(&f, h, 1);
        let coarse = trapezoid(&f, h, 2);
        let value = fine.ln_1p();
        (value, (value - coarse.ln_1p()).abs())
    } else {
        let g: Vec<f64> = nodes
            .iter()
            .zip(&exponents)
            .map(|(&z, &e)| ln_mu0(z) + e)
            .collect();
        let peak = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let f: Vec<f64> = g.iter().map(|v| (v - peak).exp()).collect();
        let fine = peak + trapezoid(&f, h, 1).ln();
        let coarse = peak + trapezoid(&f, h, 2).ln();
        (fine, (fine - coarse).abs())
    }
}

/// Trapezoidal rule on every `stride`-th node, with compensated summation.
fn trapezoid(f: &[f64], h: f64, stride: usize) -> f64 {
    let last = (f.len() - 1) / stride * stride;
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for i in (0..=last).step_by(stride) {
        let w = if i == 0 || i == last { 0.5 } else { 1.0 };
        let x = w * f[i];
        let t = sum + x;
        if sum.abs() >= x.abs() {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    (sum + carry) * h * stride as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_integrates_gaussian() {
        let h = 0.05;
        let f: Vec<f64> = (0..=800)
            .map(|i| {
                let z = -20.0 + i as f64 * h;
                (-z * z / 2.0).exp() / (2.0 * PI).sqrt()
            })
            .collect();
        assert!((trapezoid(&f, h, 1) - 1.0).abs() < 1e-14);
        assert!((trapezoid(&f, h, 2) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn vanishing_rate_gives_unit_moments() {
        let est = oracle_a_alpha(SgmParams::new(1e-12, 1.0).unwrap(), 3.0).unwrap();
        assert!(est.ln_a.abs() < 1e-9);
        assert!(est.ln_b.abs() < 1e-9);
    }

    #[test]
    fn a_dominates_b() {
        for (q, s, a) in [(0.01, 0.5, 8.0), (0.5, 1.0, 2.5), (0.9, 2.0, 1.5)] {
            let est = oracle_a_alpha(SgmParams::new(q, s).unwrap(), a).unwrap();
            assert!(est.ln_a >= est.ln_b, "q={q} s={s} a={a}: {est:?}");
        }
    }

    #[test]
    fn rejects_degenerate_rate() {
        assert!(oracle_a_alpha(SgmParams::new(1.0, 1.0).unwrap(), 2.0).is_err());
    }
}
