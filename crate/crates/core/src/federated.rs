//! In-process simulation of two-client cyclic federated training.
//!
//! Client 1 initializes the model. Each round, client 1 runs `E` DP-SGD
//! steps on its own data and hands the parameters to client 2, which runs
//! `E` steps and hands them back. Each client only ever touches its own
//! samples, so for either client the other's updates are post-processing
//! and its budget is that of `N * E` sampled-Gaussian steps.

use thiserror::Error;

use crate::accountant::{best_dp_budget, AccountantError, AlphaGrid, DpPoint, SgmParams};
use crate::dp_sgd::{dp_sgd_step, DpSgdConfig, DpSgdError, RngStream};
use crate::models::{init_params, ArchitectureSpec, LabeledSample, ModelParams};

#[derive(Debug, Error)]
pub enum FederatedError {
    #[error("number of rounds must be at least 1")]
    ZeroRounds,
    #[error("local steps per round must be at least 1")]
    ZeroLocalSteps,
    #[error("client {0} has no samples")]
    EmptyClient(u8),
    #[error("client {client} sample {index} has {got} features, model expects {expected}")]
    FeatureMismatch {
        client: u8,
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("client {client}: {source}")]
    Step {
        client: u8,
        #[source]
        source: DpSgdError,
    },
    #[error(transparent)]
    Config(#[from] DpSgdError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlConfig {
    pub n_rounds: u32,
    pub local_steps: u32,
    pub dp: DpSgdConfig,
    pub arch: ArchitectureSpec,
    pub master_seed: u64,
}

impl FlConfig {
    pub fn validate(&self) -> Result<(), FederatedError> {
        if self.n_rounds == 0 {
            return Err(FederatedError::ZeroRounds);
        }
        if self.local_steps == 0 {
            return Err(FederatedError::ZeroLocalSteps);
        }
        self.dp.validate()?;
        Ok(())
    }

    /// DP-SGD steps each client runs on its own data, `N * E`.
    pub fn steps_per_client(&self) -> u64 {
        u64::from(self.n_rounds) * u64::from(self.local_steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState<'a> {
    pub id: u8,
    pub data: &'a [LabeledSample],
    pub seed: u64,
}

impl ClientState<'_> {
    pub fn stream(&self, round: u32, step: u32) -> RngStream {
        RngStream::for_step(self.seed, self.id, round, step)
    }

    /// Runs `steps` local DP-SGD updates starting from `params`.
    pub fn local_update(
        &self,
        mut params: ModelParams,
        cfg: &DpSgdConfig,
        round: u32,
        steps: u32,
    ) -> Result<ModelParams, FederatedError> {
        for step in 0..steps {
            params = dp_sgd_step(&params, self.data, cfg, self.stream(round, step)).map_err(
                |source| FederatedError::Step {
                    client: self.id,
                    source,
                },
            )?;
        }
        Ok(params)
    }
}

/// One handoff: `client` ran `steps` updates during `round` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub round: u32,
    pub client: u8,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlRunResult {
    pub params: ModelParams,
    /// Shared by both clients; the accounting is symmetric.
    pub budget: DpPoint,
    /// Order attaining the budget; `None` for noise-free runs.
    pub alpha: Option<f64>,
    pub transcript: Vec<TranscriptEntry>,
}

/// Initial parameters chosen by client 1.
pub fn initial_params(cfg: &FlConfig) -> ModelParams {
    init_params(cfg.arch, cfg.master_seed)
}

/// `(epsilon, delta)` of each client after `N * E` local steps, with the
/// order at which the minimum was attained.
pub fn per_client_budget_with_order(
    cfg: &FlConfig,
    delta: f64,
    grid: &AlphaGrid,
) -> Result<(DpPoint, Option<f64>), FederatedError> {
    cfg.validate()?;
    client_budget(&cfg.dp, cfg.steps_per_client(), delta, grid)
}

/// Budget of `steps` DP-SGD steps under `dp`, minimized over `grid`.
///
/// A noise-free configuration (`sigma = 0`) has no finite guarantee and
/// reports `epsilon = +inf` without an order.
pub fn client_budget(
    dp: &DpSgdConfig,
    steps: u64,
    delta: f64,
    grid: &AlphaGrid,
) -> Result<(DpPoint, Option<f64>), FederatedError> {
    if dp.sigma == 0.0 {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AccountantError::InvalidDelta(delta).into());
        }
        let dp = DpPoint {
            epsilon: f64::INFINITY,
            delta,
        };
        return Ok((dp, None));
    }
    let params = SgmParams::new(dp.q, dp.sigma)?;
    let best = best_dp_budget(params, steps, delta, grid)?;
    Ok((best.dp, Some(best.alpha)))
}

pub fn per_client_budget(
    cfg: &FlConfig,
    delta: f64,
    grid: &AlphaGrid,
) -> Result<DpPoint, FederatedError> {
    Ok(per_client_budget_with_order(cfg, delta, grid)?.0)
}

fn check_client(id: u8, data: &[LabeledSample], dim: usize) -> Result<(), FederatedError> {
    if data.is_empty() {
        return Err(FederatedError::EmptyClient(id));
    }
    if let Some((index, s)) = data
        .iter()
        .enumerate()
        .find(|(_, s)| s.features.len() != dim)
    {
        return Err(FederatedError::FeatureMismatch {
            client: id,
            index,
            expected: dim,
            got: s.features.len(),
        });
    }
    Ok(())
}

pub fn run_cyclic_fl(
    cfg: &FlConfig,
    client1: &[LabeledSample],
    client2: &[LabeledSample],
    delta: f64,
    grid: &AlphaGrid,
) -> Result<FlRunResult, FederatedError> {
    cfg.validate()?;
    let dim = cfg.arch.input_dim();
    check_client(1, client1, dim)?;
    check_client(2, client2, dim)?;
    let (budget, alpha) = per_client_budget_with_order(cfg, delta, grid)?;

    let clients = [
        ClientState {
            id: 1,
            data: client1,
            seed: cfg.master_seed,
        },
        ClientState {
            id: 2,
            data: client2,
            seed: cfg.master_seed,
        },
    ];
    let mut params = initial_params(cfg);
    let mut transcript = Vec::with_capacity(2 * cfg.n_rounds as usize);
    for round in 1..=cfg.n_rounds {
        for client in &clients {
            params = client.local_update(params, &cfg.dp, round, cfg.local_steps)?;
            transcript.push(TranscriptEntry {
                round,
                client: client.id,
                steps: cfg.local_steps,
            });
        }
    }
    Ok(FlRunResult {
        params,
        budget,
        alpha,
        transcript,
    })
}
