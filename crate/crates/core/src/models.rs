//! Binary classifiers trained with DP-SGD: logistic regression and a
//! one-hidden-layer ReLU perceptron, both with a sigmoid output and
//! binary cross-entropy loss.
//!
//! Parameters live in one flat vector so clipping and noising treat the
//! model as a single point in `R^d`.
//!
//! Flat layouts:
//! - logistic regression: `[w_0 .. w_{d-1}, b]`
//! - shallow MLP with `h` hidden units: `[W1 (h x d, row-major), b1 (h), w2 (h), b2]`

use std::io::{self, Read, Write};

use rand::Rng;
use thiserror::Error;

use crate::dp_sgd::{RngStream, StreamPurpose};

/// Hidden width used when a shallow MLP is requested without one.
pub const DEFAULT_HIDDEN_DIM: usize = 16;

/// Probabilities are kept strictly inside the unit interval.
const PROBA_FLOOR: f64 = f64::MIN_POSITIVE;
const PROBA_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input dimension must be at least 1")]
    EmptyInput,
    #[error("shallow MLP needs at least one hidden unit")]
    EmptyHidden,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("parameter vector contains a non-finite entry")]
    NonFiniteParams,
    #[error("accuracy of an empty evaluation set is undefined")]
    EmptyEvaluation,
    #[error("unknown architecture `{0}`")]
    UnknownArch(String),
    #[error("not a model parameter file: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Model family, independent of the input width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchKind {
    LogisticRegression,
    ShallowMlp { hidden_dim: usize },
}

impl ArchKind {
    /// Parses `logistic_regression`, `shallow_mlp` or `shallow_mlp:<hidden>`.
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s.trim() {
            "logistic_regression" | "logreg" => Ok(Self::LogisticRegression),
            "shallow_mlp" | "mlp" => Ok(Self::ShallowMlp {
                hidden_dim: DEFAULT_HIDDEN_DIM,
            }),
            other => {
                let hidden = other
                    .strip_prefix("shallow_mlp:")
                    .and_then(|h| h.parse::<usize>().ok())
                    .ok_or_else(|| ModelError::UnknownArch(other.to_string()))?;
                if hidden == 0 {
                    return Err(ModelError::EmptyHidden);
                }
                Ok(Self::ShallowMlp { hidden_dim: hidden })
            }
        }
    }
}

impl std::str::FromStr for ArchKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::LogisticRegression => f.write_str("logistic_regression"),
            Self::ShallowMlp { hidden_dim } => write!(f, "shallow_mlp:{hidden_dim}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArchitectureSpec {
    kind: ArchKind,
    input_dim: usize,
}

impl ArchitectureSpec {
    pub fn new(kind: ArchKind, input_dim: usize) -> Result<Self, ModelError> {
        if input_dim == 0 {
            return Err(ModelError::EmptyInput);
        }
        if let ArchKind::ShallowMlp { hidden_dim: 0 } = kind {
            return Err(ModelError::EmptyHidden);
        }
        Ok(Self { kind, input_dim })
    }

    pub fn logistic(input_dim: usize) -> Result<Self, ModelError> {
        Self::new(ArchKind::LogisticRegression, input_dim)
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize) -> Result<Self, ModelError> {
        Self::new(ArchKind::ShallowMlp { hidden_dim }, input_dim)
    }

    pub fn kind(&self) -> ArchKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        match self.kind {
            ArchKind::LogisticRegression => None,
            ArchKind::ShallowMlp { hidden_dim } => Some(hidden_dim),
        }
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        let d = self.input_dim;
        match self.kind {
            ArchKind::LogisticRegression => d + 1,
            ArchKind::ShallowMlp { hidden_dim: h } => h * d + h + h + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    theta: Vec<f64>,
    spec: ArchitectureSpec,
}

impl ModelParams {
    pub fn new(spec: ArchitectureSpec, theta: Vec<f64>) -> Result<Self, ModelError> {
        if theta.len() != spec.param_count() {
            return Err(ModelError::ParamCount {
                expected: spec.param_count(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteParams);
        }
        Ok(Self { theta, spec })
    }

    pub fn zeros(spec: ArchitectureSpec) -> Self {
        Self {
            theta: vec![0.0; spec.param_count()],
            spec,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn spec(&self) -> ArchitectureSpec {
        self.spec
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal = 0,
    Tumor = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Normal),
            1 => Some(Self::Tumor),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: Label,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: Label) -> Self {
        Self { features, label }
    }
}

/// Tumor is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Tumor, Label::Tumor) => self.tp += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
            (Label::Tumor, Label::Normal) => self.fp += 1,
            (Label::Normal, Label::Tumor) => self.fn_ += 1,
        }
    }
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases, fully determined by `seed`.
pub fn init_params(spec: ArchitectureSpec, seed: u64) -> ModelParams {
    let mut rng = RngStream::for_purpose(seed, StreamPurpose::Init).rng();
    let mut uniform = |fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        rng.random_range(-bound..bound)
    };
    let d = spec.input_dim;
    let theta = match spec.kind {
        ArchKind::LogisticRegression => {
            let mut t: Vec<f64> = (0..d).map(|_| uniform(d)).collect();
            t.push(0.0);
            t
        }
        ArchKind::ShallowMlp { hidden_dim: h } => {
            let mut t: Vec<f64> = (0..h * d).map(|_| uniform(d)).collect();
            t.extend(std::iter::repeat(0.0).take(h));
            t.extend((0..h).map(|_| uniform(h)));
            t.push(0.0);
            t
        }
    };
    ModelParams { theta, spec }
}

fn check_dim(params: &ModelParams, x: &[f64]) -> Result<(), ModelError> {
    let expected = params.spec.input_dim;
    if x.len() != expected {
        return Err(ModelError::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Pre-activations of the hidden layer.
fn hidden_pre(theta: &[f64], d: usize, h: usize, x: &[f64]) -> Vec<f64> {
    let (w1, rest) = theta.split_at(h * d);
    let b1 = &rest[..h];
    w1.chunks_exact(d)
        .zip(b1)
        .map(|(row, b)| dot(row, x) + b)
        .collect()
}

/// Output logit `z` of the model.
pub fn logit(params: &ModelParams, x: &[f64]) -> Result<f64, ModelError> {
    check_dim(params, x)?;
    let d = params.spec.input_dim;
    let theta = &params.theta;
    Ok(match params.spec.kind {
        ArchKind::LogisticRegression => dot(&theta[..d], x) + theta[d],
        ArchKind::ShallowMlp { hidden_dim: h } => {
            let pre = hidden_pre(theta, d, h, x);
            let w2 = &theta[h * d + h..h * d + 2 * h];
            let b2 = theta[h * d + 2 * h];
            pre.iter().zip(w2).map(|(a, w)| a.max(0.0) * w).sum::<f64>() + b2
        }
    })
}

/// Probability of the tumor class, strictly inside `(0, 1)`.
pub fn predict_proba(params: &ModelParams, x: &[f64]) -> Result<f64, ModelError> {
    Ok(sigmoid(logit(params, x)?).clamp(PROBA_FLOOR, PROBA_CEIL))
}

/// Threshold 0.5; a probability of exactly one half is called tumor.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<Label, ModelError> {
    Ok(if predict_proba(params, x)? >= 0.5 {
        Label::Tumor
    } else {
        Label::Normal
    })
}

/// Binary cross-entropy of one sample, computed from the logit.
pub fn loss(params: &ModelParams, sample: &LabeledSample) -> Result<f64, ModelError> {
    let z = logit(params, &sample.features)?;
    Ok(softplus(z) - sample.label.as_f64() * z)
}

/// Mean binary cross-entropy over `samples`.
pub fn mean_loss(params: &ModelParams, samples: &[LabeledSample]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for s in samples {
        total += loss(params, s)?;
    }
    Ok(total / samples.len() as f64)
}

/// Gradient of the single-sample cross-entropy with respect to `theta`.
pub fn per_sample_gradient(
    params: &ModelParams,
    sample: &LabeledSample,
) -> Result<Vec<f64>, ModelError> {
    let x = &sample.features;
    check_dim(params, x)?;
    let y = sample.label.as_f64();
    let d = params.spec.input_dim;
    let theta = &params.theta;
    let mut grad = vec![0.0; theta.len()];

    match params.spec.kind {
        ArchKind::LogisticRegression => {
            let r = sigmoid(dot(&theta[..d], x) + theta[d]) - y;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g = r * xi;
            }
            grad[d] = r;
        }
        ArchKind::ShallowMlp { hidden_dim: h } => {
            let pre = hidden_pre(theta, d, h, x);
            let w2 = &theta[h * d + h..h * d + 2 * h];
            let b2 = theta[h * d + 2 * h];
            let z = pre.iter().zip(w2).map(|(a, w)| a.max(0.0) * w).sum::<f64>() + b2;
            let r = sigmoid(z) - y;

            let (g_w1, rest) = grad.split_at_mut(h * d);
            let (g_b1, rest) = rest.split_at_mut(h);
            let (g_w2, g_b2) = rest.split_at_mut(h);
            for j in 0..h {
                g_w2[j] = r * pre[j].max(0.0);
                if pre[j] > 0.0 {
                    let back = r * w2[j];
                    g_b1[j] = back;
                    for (g, xi) in g_w1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g = back * xi;
                    }
                }
            }
            g_b2[0] = r;
        }
    }
    Ok(grad)
}

pub fn evaluate(params: &ModelParams, samples: &[LabeledSample]) -> Result<ConfusionCounts, ModelError> {
    let mut counts = ConfusionCounts::default();
    for s in samples {
        counts.record(predict(params, &s.features)?, s.label);
    }
    Ok(counts)
}

/// `(TP + TN) / (TP + TN + FP + FN)`.
pub fn accuracy(counts: &ConfusionCounts) -> Result<f64, ModelError> {
    let total = counts.total();
    if total == 0 {
        return Err(ModelError::EmptyEvaluation);
    }
    Ok((counts.tp + counts.tn) as f64 / total as f64)
}

const PARAMS_MAGIC: &[u8; 8] = b"DPFLPRM1";

/// Binary layout, all integers and floats little-endian:
///
/// ```text
/// offset  size  field
/// 0       8     magic "DPFLPRM1"
/// 8       4     kind (u32): 0 = logistic regression, 1 = shallow MLP
/// 12      4     input_dim (u32)
/// 16      4     hidden_dim (u32, 0 for logistic regression)
/// 20      4     parameter count n (u32)
/// 24      8n    theta as f64
/// ```
pub fn write_params<W: Write>(params: &ModelParams, mut w: W) -> Result<(), ModelError> {
    let spec = params.spec;
    let (kind, hidden) = match spec.kind {
        ArchKind::LogisticRegression => (0u32, 0usize),
        ArchKind::ShallowMlp { hidden_dim } => (1u32, hidden_dim),
    };
    w.write_all(PARAMS_MAGIC)?;
    for v in [kind, spec.input_dim as u32, hidden as u32, params.theta.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &params.theta {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<ModelParams, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != PARAMS_MAGIC {
        return Err(ModelError::BadHeader("magic mismatch".into()));
    }
    let mut word = [0u8; 4];
    let mut header = [0u32; 4];
    for slot in header.iter_mut() {
        r.read_exact(&mut word)?;
        *slot = u32::from_le_bytes(word);
    }
    let [kind, input_dim, hidden, n] = header;
    let kind = match kind {
        0 => ArchKind::LogisticRegression,
        1 => ArchKind::ShallowMlp {
            hidden_dim: hidden as usize,
        },
        k => return Err(ModelError::BadHeader(format!("unknown kind {k}"))),
    };
    let spec = ArchitectureSpec::new(kind, input_dim as usize)?;
    let mut theta = Vec::with_capacity(n as usize);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        theta.push(f64::from_le_bytes(buf));
    }
    ModelParams::new(spec, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(ArchitectureSpec::logistic(69).unwrap().param_count(), 70);
        assert_eq!(ArchitectureSpec::mlp(240, 16).unwrap().param_count(), 3873);
        assert_eq!(init_params(ArchitectureSpec::logistic(69).unwrap(), 3).theta().len(), 70);
        assert!(ArchitectureSpec::logistic(0).is_err());
        assert!(ArchitectureSpec::mlp(3, 0).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = ArchitectureSpec::mlp(20, 4).unwrap();
        let a = init_params(spec, 11);
        assert_eq!(a, init_params(spec, 11));
        assert_ne!(a, init_params(spec, 12));
        let bound = 1.0 / 20f64.sqrt();
        assert!(a.theta()[..80].iter().all(|w| w.abs() <= bound));
        assert!(a.theta()[80..84].iter().all(|b| *b == 0.0));
        assert_eq!(*a.theta().last().unwrap(), 0.0);
    }

    #[test]
    fn zero_params_predict_half() {
        let p = ModelParams::zeros(ArchitectureSpec::logistic(3).unwrap());
        assert_eq!(predict_proba(&p, &[1.0, -2.0, 5.0]).unwrap(), 0.5);
        let m = ModelParams::zeros(ArchitectureSpec::mlp(3, 2).unwrap());
        assert_eq!(predict_proba(&m, &[1.0, -2.0, 5.0]).unwrap(), 0.5);
    }

    #[test]
    fn saturation_stays_inside_unit_interval() {
        let spec = ArchitectureSpec::logistic(1).unwrap();
        let p = ModelParams::new(spec, vec![0.0, 30.0]).unwrap();
        let v = predict_proba(&p, &[0.0]).unwrap();
        assert!((1.0 - v) < 1e-9 && v < 1.0);
        let p = ModelParams::new(spec, vec![0.0, 1000.0]).unwrap();
        assert!(predict_proba(&p, &[0.0]).unwrap() < 1.0);
        let p = ModelParams::new(spec, vec![0.0, -1000.0]).unwrap();
        assert!(predict_proba(&p, &[0.0]).unwrap() > 0.0);
    }

    #[test]
    fn logistic_gradient_at_zero() {
        let p = ModelParams::zeros(ArchitectureSpec::logistic(2).unwrap());
        let g = per_sample_gradient(&p, &LabeledSample::new(vec![2.0, -4.0], Label::Tumor)).unwrap();
        assert_eq!(g, vec![-1.0, 2.0, -0.5]);
    }

    #[test]
    fn confident_correct_prediction_has_tiny_gradient() {
        let p = ModelParams::new(ArchitectureSpec::logistic(2).unwrap(), vec![0.0, 0.0, 30.0]).unwrap();
        let g = per_sample_gradient(&p, &LabeledSample::new(vec![0.3, 0.7], Label::Tumor)).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = ModelParams::zeros(ArchitectureSpec::logistic(2).unwrap());
        assert!(matches!(
            predict_proba(&p, &[1.0]),
            Err(ModelError::DimensionMismatch { expected: 2, got: 1 })
        ));
        let s = LabeledSample::new(vec![1.0; 3], Label::Normal);
        assert!(per_sample_gradient(&p, &s).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let c = |tp, tn, fp, fn_| ConfusionCounts { tp, tn, fp, fn_ };
        assert_eq!(accuracy(&c(9, 1, 0, 0)).unwrap(), 1.0);
        assert_eq!(accuracy(&c(5, 3, 1, 1)).unwrap(), 0.8);
        assert_eq!(accuracy(&c(0, 0, 3, 7)).unwrap(), 0.0);
        assert!(matches!(accuracy(&c(0, 0, 0, 0)), Err(ModelError::EmptyEvaluation)));
    }

    #[test]
    fn arch_kind_round_trips_through_text() {
        for kind in [ArchKind::LogisticRegression, ArchKind::ShallowMlp { hidden_dim: 7 }] {
            assert_eq!(ArchKind::parse(&kind.to_string()).unwrap(), kind);
        }
        assert_eq!(
            ArchKind::parse("shallow_mlp").unwrap(),
            ArchKind::ShallowMlp { hidden_dim: DEFAULT_HIDDEN_DIM }
        );
        assert!(ArchKind::parse("resnet").is_err());
    }

    #[test]
    fn params_file_round_trip() {
        let p = init_params(ArchitectureSpec::mlp(5, 3).unwrap(), 9);
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 8 * p.theta().len());
        assert_eq!(read_params(buf.as_slice()).unwrap(), p);
        buf[0] = b'X';
        assert!(matches!(read_params(buf.as_slice()), Err(ModelError::BadHeader(_))));
    }
}
