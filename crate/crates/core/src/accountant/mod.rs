//! Rényi-DP accounting for the sampled Gaussian mechanism (SGM).
//!
//! One DP-SGD step with Poisson sampling rate `q` and noise multiplier
//! `sigma` is an SGM; its RDP cost at order `alpha` is
//! `ln A_alpha(q, sigma) / (alpha - 1)`. Costs compose additively over
//! steps and each order converts to an `(epsilon, delta)` guarantee; the
//! reported budget is the best one over a grid of orders.
//!
//! Everything here is a pure function of its inputs.

mod series;
pub mod oracle;
pub mod special;

use std::fmt;

use thiserror::Error;

pub use series::{
    log_a_alpha_fractional, log_a_alpha_integer, DEFAULT_SERIES_TOL, MAX_SERIES_TERMS,
    NEGATIVE_LOG_MOMENT_SLACK,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccountantError {
    #[error("sampling rate must lie in [0, 1], got {0}")]
    InvalidSamplingRate(f64),
    #[error("noise multiplier must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("Rényi order must be finite and > 1 (>= 2 for the integer form), got {0}")]
    InvalidOrder(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("series tolerance must lie in (0, 1), got {0}")]
    InvalidTolerance(f64),
    #[error("composition needs at least one step")]
    ZeroSteps,
    #[error("step count overflow while composing")]
    StepOverflow,
    #[error("fractional series needs 0 < q < 1, got q = {0}")]
    DegenerateSamplingRate(f64),
    #[error("fractional series at alpha = {alpha} did not converge within {terms} terms")]
    NonConvergence { alpha: f64, terms: usize },
    #[error("ln A came out at {0}, below the float-noise slack")]
    NegativeLogMoment(f64),
    #[error("ln A is not a finite positive quantity")]
    NonFiniteMoment,
    #[error("alpha grid is empty")]
    EmptyGrid,
    #[error("alpha grid must be strictly increasing with every order > 1")]
    InvalidGrid,
    #[error("no order in the grid produced a valid budget")]
    NoValidOrder,
}

/// Sampling rate and noise multiplier of one subsampled Gaussian step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgmParams {
    q: f64,
    sigma: f64,
}

impl SgmParams {
    pub fn new(q: f64, sigma: f64) -> Result<Self, AccountantError> {
        if !(0.0..=1.0).contains(&q) {
            return Err(AccountantError::InvalidSamplingRate(q));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(AccountantError::InvalidSigma(sigma));
        }
        Ok(Self { q, sigma })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// An `(alpha, epsilon)` Rényi budget.
///
/// The budget is stored as a per-step cost and a step multiplicity, so
/// composing `a` then `b` steps gives exactly the same value as composing
/// `a * b` steps at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdpPoint {
    alpha: f64,
    per_step: f64,
    steps: u64,
}

impl RdpPoint {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self, AccountantError> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(AccountantError::InvalidOrder(alpha));
        }
        if !(epsilon >= 0.0) {
            return Err(AccountantError::NonFiniteMoment);
        }
        Ok(Self {
            alpha,
            per_step: epsilon,
            steps: 1,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.per_step * self.steps as f64
    }

    /// Number of identical mechanisms composed into this point.
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// An `(epsilon, delta)` differential-privacy budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpPoint {
    pub epsilon: f64,
    pub delta: f64,
}

impl fmt::Display for DpPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.epsilon, self.delta)
    }
}

/// Split point of the privacy-loss integral.
///
/// With `mu0 = N(0, sigma^2)`, `mu1 = N(1, sigma^2)` and the mixture
/// `mu = (1-q) mu0 + q mu1`, the two components of `mu / mu0` are equal at
/// `z1 = 1/2 + sigma^2 ln(1/q - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgmAnalysisContext {
    z1: f64,
    mixture_weight: f64,
    sigma: f64,
}

impl SgmAnalysisContext {
    pub const MU0_MEAN: f64 = 0.0;
    pub const MU1_MEAN: f64 = 1.0;

    pub fn new(params: SgmParams) -> Result<Self, AccountantError> {
        let q = params.q();
        if q <= 0.0 || q >= 1.0 {
            return Err(AccountantError::DegenerateSamplingRate(q));
        }
        let sigma = params.sigma();
        Ok(Self {
            z1: 0.5 + sigma * sigma * (1.0 / q - 1.0).ln(),
            mixture_weight: q,
            sigma,
        })
    }

    pub fn z1(&self) -> f64 {
        self.z1
    }

    pub fn mixture_weight(&self) -> f64 {
        self.mixture_weight
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Strictly increasing list of Rényi orders, all greater than one.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGrid(Vec<f64>);

impl AlphaGrid {
    pub fn new(orders: Vec<f64>) -> Result<Self, AccountantError> {
        if orders.is_empty() {
            return Err(AccountantError::EmptyGrid);
        }
        let valid = orders.iter().all(|a| *a > 1.0 && a.is_finite())
            && orders.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(AccountantError::InvalidGrid);
        }
        Ok(Self(orders))
    }

    pub fn orders(&self) -> &[f64] {
        &self.0
    }

    pub fn max_order(&self) -> f64 {
        *self.0.last().expect("grid is never empty")
    }
}

impl Default for AlphaGrid {
    /// `1.25 .. 4.5` in quarter/half steps, every integer `5..=64`, then 128 and 256.
    fn default() -> Self {
        let mut orders = vec![1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 3.0, 3.5, 4.0, 4.5];
        orders.extend((5..=64).map(f64::from));
        orders.extend([128.0, 256.0]);
        Self(orders)
    }
}

fn integer_order(alpha: f64) -> Option<u32> {
    (alpha.fract() == 0.0 && alpha >= 2.0 && alpha <= f64::from(u32::MAX)).then_some(alpha as u32)
}

/// RDP cost of a single SGM step at order `alpha`.
///
/// `q = 0` and `q = 1` use the exact limits (identity and plain Gaussian
/// mechanism); otherwise integer orders take the binomial closed form and
/// all other orders the erfc series.
pub fn sgm_rdp_step(params: SgmParams, alpha: f64) -> Result<RdpPoint, AccountantError> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(AccountantError::InvalidOrder(alpha));
    }
    let (q, sigma) = (params.q(), params.sigma());
    let epsilon = if q == 0.0 {
        0.0
    } else if q == 1.0 {
        alpha / (2.0 * sigma * sigma)
    } else {
        let ln_a = match integer_order(alpha) {
            Some(a) => log_a_alpha_integer(params, a)?,
            None => log_a_alpha_fractional(params, alpha, DEFAULT_SERIES_TOL)?,
        };
        ln_a / (alpha - 1.0)
    };
    RdpPoint::new(alpha, epsilon.max(0.0))
}

/// Additive composition of `steps` identical mechanisms.
pub fn compose_steps(step: RdpPoint, steps: u64) -> Result<RdpPoint, AccountantError> {
    if steps == 0 {
        return Err(AccountantError::ZeroSteps);
    }
    Ok(RdpPoint {
        steps: step.steps.checked_mul(steps).ok_or(AccountantError::StepOverflow)?,
        ..step
    })
}

/// `(epsilon + ln(1/delta)/(alpha - 1), delta)`.
pub fn rdp_to_dp(point: RdpPoint, delta: f64) -> Result<DpPoint, AccountantError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AccountantError::InvalidDelta(delta));
    }
    Ok(DpPoint {
        epsilon: point.epsilon() + (-delta.ln()) / (point.alpha() - 1.0),
        delta,
    })
}

/// Best `(epsilon, delta)` found over a grid and the order that achieved it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestBudget {
    pub dp: DpPoint,
    pub alpha: f64,
}

/// One row of the per-order budget table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderBudget {
    pub alpha: f64,
    pub rdp_epsilon: f64,
    pub dp_epsilon: f64,
}

/// Per-step RDP costs of one SGM over a grid, reusable for any step count
/// and delta.
#[derive(Debug, Clone)]
pub struct PrivacyProfile {
    steps: Vec<(f64, Result<RdpPoint, AccountantError>)>,
}

impl PrivacyProfile {
    pub fn new(params: SgmParams, grid: &AlphaGrid) -> Self {
        let steps = grid
            .orders()
            .iter()
            .map(|&alpha| (alpha, sgm_rdp_step(params, alpha)))
            .collect();
        Self { steps }
    }

    /// Composed and converted budget for every order; failed orders keep
    /// their error.
    pub fn table(
        &self,
        total_steps: u64,
        delta: f64,
    ) -> Result<Vec<(f64, Result<OrderBudget, AccountantError>)>, AccountantError> {
        if total_steps == 0 {
            return Err(AccountantError::ZeroSteps);
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AccountantError::InvalidDelta(delta));
        }
        Ok(self
            .steps
            .iter()
            .map(|(alpha, step)| {
                let row = step.clone().and_then(|step| {
                    let total = compose_steps(step, total_steps)?;
                    let dp = rdp_to_dp(total, delta)?;
                    Ok(OrderBudget {
                        alpha: *alpha,
                        rdp_epsilon: total.epsilon(),
                        dp_epsilon: dp.epsilon,
                    })
                });
                (*alpha, row)
            })
            .collect())
    }

    /// Minimum epsilon over the grid; ties go to the smallest order.
    pub fn best(&self, total_steps: u64, delta: f64) -> Result<BestBudget, AccountantError> {
        let mut best: Option<BestBudget> = None;
        for (_, row) in self.table(total_steps, delta)? {
            let Ok(row) = row else { continue };
            if row.dp_epsilon.is_nan() {
                continue;
            }
            if best.map_or(true, |b| row.dp_epsilon < b.dp.epsilon) {
                best = Some(BestBudget {
                    dp: DpPoint {
                        epsilon: row.dp_epsilon,
                        delta,
                    },
                    alpha: row.alpha,
                });
            }
        }
        best.ok_or(AccountantError::NoValidOrder)
    }
}

/// Best `(epsilon, delta)` after `total_steps` SGM steps, minimized over `grid`.
pub fn best_dp_budget(
    params: SgmParams,
    total_steps: u64,
    delta: f64,
    grid: &AlphaGrid,
) -> Result<BestBudget, AccountantError> {
    PrivacyProfile::new(params, grid).best(total_steps, delta)
}
