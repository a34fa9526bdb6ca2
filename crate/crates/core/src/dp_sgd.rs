//! One DP-SGD step: Poisson batch sampling, per-sample clipping, Gaussian
//! noise on the clipped sum, averaging over the realized batch, descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::models::{per_sample_gradient, LabeledSample, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum DpSgdError {
    #[error("sampling rate must lie in (0, 1], got {0}")]
    InvalidSamplingRate(f64),
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("noise scale must be non-negative and finite, got {0}")]
    InvalidSigma(f64),
    #[error("clipping bound must be positive, got {0}")]
    InvalidClip(f64),
    #[error("training data is empty")]
    EmptyData,
    #[error("gradient of sample {index} is not finite")]
    NonFiniteGradient { index: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpSgdConfig {
    pub q: f64,
    pub eta: f64,
    pub sigma: f64,
    pub clip_c: f64,
}

impl DpSgdConfig {
    pub fn new(q: f64, eta: f64, sigma: f64, clip_c: f64) -> Result<Self, DpSgdError> {
        let cfg = Self { q, eta, sigma, clip_c };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DpSgdError> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(DpSgdError::InvalidSamplingRate(self.q));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(DpSgdError::InvalidLearningRate(self.eta));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(DpSgdError::InvalidSigma(self.sigma));
        }
        if !(self.clip_c > 0.0) || self.clip_c.is_nan() {
            return Err(DpSgdError::InvalidClip(self.clip_c));
        }
        Ok(())
    }
}

/// What a stream's draws are used for. Part of the stream id so that
/// different consumers never share a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    Step = 1,
    Init = 2,
    Split = 3,
}

/// A reproducible random sequence: a ChaCha20 key derived from `seed`
/// and a 64-bit stream id selecting an independent keystream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Stream for one local step of one client in one round.
    ///
    /// Bits: purpose (4) | client (4) | round (28) | step (28).
    pub fn for_step(seed: u64, client: u8, round: u32, step: u32) -> Self {
        Self::new(seed, Self::pack(StreamPurpose::Step, client, round, step))
    }

    pub fn for_purpose(seed: u64, purpose: StreamPurpose) -> Self {
        Self::new(seed, Self::pack(purpose, 0, 0, 0))
    }

    /// Shuffle stream for one class of a stratified split.
    pub fn for_split(seed: u64, class: u8) -> Self {
        Self::new(seed, Self::pack(StreamPurpose::Split, class, 0, 0))
    }

    fn pack(purpose: StreamPurpose, client: u8, round: u32, step: u32) -> u64 {
        debug_assert!(client < 16 && round < (1 << 28) && step < (1 << 28));
        ((purpose as u64) << 60)
            | ((client as u64 & 0xF) << 56)
            | ((round as u64 & 0x0FFF_FFFF) << 28)
            | (step as u64 & 0x0FFF_FFFF)
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Indices selected independently with probability `q`, in increasing order.
/// Consumes exactly `n` uniforms from `rng`.
pub fn poisson_sample<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    (0..n)
        .filter(|_| rng.random::<f64>() < q)
        .collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `g / max(1, |g| / C)`.
pub fn clip_gradient(g: &[f64], clip_c: f64) -> Vec<f64> {
    let norm = l2_norm(g);
    if norm <= clip_c {
        return g.to_vec();
    }
    let mut scale = clip_c / norm;
    loop {
        let out: Vec<f64> = g.iter().map(|x| x * scale).collect();
        // Rounding in the rescale can land a few ulps above C.
        if l2_norm(&out) <= clip_c {
            return out;
        }
        scale *= 1.0 - 4.0 * f64::EPSILON;
    }
}

/// Outcome of one step, for transcripts and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub params: ModelParams,
    pub batch: Vec<usize>,
    pub noise: Vec<f64>,
}

/// One DP-SGD step with all draws taken from `stream`.
///
/// The stream yields `n` uniforms for batch selection followed, when the
/// batch is non-empty, by `dim` standard normals for the noise. An empty
/// batch returns the parameters unchanged.
pub fn dp_sgd_step(
    params: &ModelParams,
    data: &[LabeledSample],
    cfg: &DpSgdConfig,
    stream: RngStream,
) -> Result<ModelParams, DpSgdError> {
    Ok(dp_sgd_step_traced(params, data, cfg, stream)?.params)
}

pub fn dp_sgd_step_traced(
    params: &ModelParams,
    data: &[LabeledSample],
    cfg: &DpSgdConfig,
    stream: RngStream,
) -> Result<StepOutcome, DpSgdError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(DpSgdError::EmptyData);
    }
    let mut rng = stream.rng();
    let batch = poisson_sample(data.len(), cfg.q, &mut rng);
    if batch.is_empty() {
        return Ok(StepOutcome {
            params: params.clone(),
            batch,
            noise: Vec::new(),
        });
    }

    let dim = params.theta().len();
    let mut sum = vec![0.0; dim];
    for &i in &batch {
        let g = per_sample_gradient(params, &data[i])?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(DpSgdError::NonFiniteGradient { index: i });
        }
        let clipped = clip_gradient(&g, cfg.clip_c);
        debug_assert!(l2_norm(&clipped) <= cfg.clip_c);
        for (s, c) in sum.iter_mut().zip(&clipped) {
            *s += c;
        }
    }

    let noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let std = cfg.sigma * cfg.clip_c;
    let scale = cfg.eta / batch.len() as f64;
    let theta: Vec<f64> = params
        .theta()
        .iter()
        .zip(sum.iter().zip(&noise))
        .map(|(t, (s, z))| t - scale * (s + std * z))
        .collect();
    Ok(StepOutcome {
        params: ModelParams::new(params.spec(), theta)?,
        batch,
        noise,
    })
}
