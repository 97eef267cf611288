//! Plain SGD over reference frames with the frame-sampling protocol of each
//! aggregation mode.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SelsaError};
use crate::proposal::{write_csv, VideoSequence};
use crate::seed::derive_seed;
use crate::selsa::{network_backward, network_forward, Aggregation, SelsaParams};

/// Which proposals a reference proposal may aggregate from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// No aggregation: the single-frame baseline.
    None,
    /// Aggregate among proposals of the reference frame only.
    WithinFrame,
    /// Aggregate over proposals of several frames of the video.
    FullSequence,
}

impl AggregationMode {
    pub const ALL: [AggregationMode; 3] = [
        AggregationMode::None,
        AggregationMode::WithinFrame,
        AggregationMode::FullSequence,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AggregationMode::None => "none",
            AggregationMode::WithinFrame => "within_frame",
            AggregationMode::FullSequence => "full_sequence",
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        match self {
            AggregationMode::None => Aggregation::Bypass,
            _ => Aggregation::Selsa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Iterations at which the learning rate is multiplied by `decay_factor`.
    pub lr_decay_steps: Vec<usize>,
    pub decay_factor: f64,
    pub n_iterations: usize,
    /// Reference frame plus extra frames sampled per iteration.
    pub frames_per_sample: usize,
    pub seed: u64,
    pub aggregation_mode: AggregationMode,
    /// Output width of phi/psi; defaults to the feature dimension.
    pub sim_dim: Option<usize>,
    /// Rescales a step's gradient to this global L2 norm when it is larger.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            lr_decay_steps: vec![20000, 30000],
            decay_factor: 0.1,
            n_iterations: 40000,
            frames_per_sample: 3,
            seed: 0,
            aggregation_mode: AggregationMode::FullSequence,
            sim_dim: None,
            grad_clip: Some(3.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(SelsaError::Config(
                "train.learning_rate: must be finite and non-negative".into(),
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(SelsaError::Config(
                "train.decay_factor: must lie in (0, 1]".into(),
            ));
        }
        if self.frames_per_sample < 1 {
            return Err(SelsaError::Config(
                "train.frames_per_sample: must be at least 1".into(),
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(SelsaError::Config(
                    "train.grad_clip: must be positive and finite".into(),
                ));
            }
        }
        if self.sim_dim == Some(0) {
            return Err(SelsaError::Config("train.sim_dim: must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect at `iteration`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let decays = self
            .lr_decay_steps
            .iter()
            .filter(|&&s| s <= iteration)
            .count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }

    /// Same schedule shape, decay points at 50% and 75% of `n_iterations`.
    pub fn with_iterations(mut self, n_iterations: usize) -> Self {
        self.n_iterations = n_iterations;
        self.lr_decay_steps = vec![n_iterations / 2, n_iterations * 3 / 4];
        self
    }
}

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the scores.
pub fn cross_entropy(scores: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = scores.dim();
    if labels.len() != n {
        return Err(SelsaError::Input(format!(
            "{} labels for {n} score rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(SelsaError::Input(format!(
            "label {bad} outside [0, {}]",
            k - 1
        )));
    }
    let mut grad = Array2::zeros((n, k));
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = scores.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&s| (s - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for j in 0..k {
            grad[[i, j]] = (row[j] - log_z).exp();
        }
        grad[[i, label]] -= 1.0;
    }
    let scale = 1.0 / n as f64;
    Ok((loss * scale, grad * scale))
}

/// Reference frame and pool frames for one training iteration. The reference
/// frame always comes first in the returned pool.
pub fn sample_training_frames<R: Rng + ?Sized>(
    n_frames: usize,
    mode: AggregationMode,
    frames_per_sample: usize,
    rng: &mut R,
) -> (usize, Vec<usize>) {
    let reference = rng.random_range(0..n_frames.max(1));
    let mut omega = vec![reference];
    if mode == AggregationMode::FullSequence && n_frames > 1 {
        let extras = (frames_per_sample.saturating_sub(1)).min(n_frames - 1);
        for i in index::sample(rng, n_frames - 1, extras) {
            omega.push(if i >= reference { i + 1 } else { i });
        }
    }
    (reference, omega)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: SelsaParams,
    pub params: SelsaParams,
    pub history: Vec<LossRecord>,
}

/// Initial parameters for a run; depends only on the seed and the shapes.
pub fn initial_params(config: &TrainConfig, feature_dim: usize, n_classes: usize) -> SelsaParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x1417]));
    SelsaParams::init(
        feature_dim,
        config.sim_dim.unwrap_or(feature_dim),
        n_classes,
        &mut rng,
    )
}

/// Trains from [`initial_params`].
pub fn train(videos: &[VideoSequence], config: &TrainConfig) -> Result<TrainOutcome> {
    let first = videos
        .first()
        .ok_or_else(|| SelsaError::Config("training set is empty".into()))?;
    let init = initial_params(config, first.feature_dim, first.n_classes);
    train_from(videos, config, init)
}

/// One SGD step per iteration on a single reference frame's proposals.
pub fn train_from(
    videos: &[VideoSequence],
    config: &TrainConfig,
    initial: SelsaParams,
) -> Result<TrainOutcome> {
    config.validate()?;
    initial.validate()?;
    if videos.is_empty() || videos.iter().any(|v| v.is_empty()) {
        return Err(SelsaError::Config("training set is empty".into()));
    }
    for v in videos {
        if v.feature_dim != initial.feature_dim() || v.n_classes != initial.n_classes() {
            return Err(SelsaError::Config(format!(
                "video with d = {}, C = {} does not fit parameters with d = {}, C = {}",
                v.feature_dim,
                v.n_classes,
                initial.feature_dim(),
                initial.n_classes()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x7a11]));
    let mut params = initial.clone();
    let mut history = Vec::with_capacity(config.n_iterations);
    let mode = config.aggregation_mode;
    for iteration in 0..config.n_iterations {
        let lr = config.lr_at(iteration);
        let video = &videos[rng.random_range(0..videos.len())];
        let (reference, omega) =
            sample_training_frames(video.len(), mode, config.frames_per_sample, &mut rng);
        let labels: Vec<usize> = video.frames[reference]
            .proposals
            .iter()
            .map(|p| p.class_id)
            .collect();
        let (scores, cache) =
            network_forward(video, reference, &omega, &params, mode.aggregation())?;
        let (loss, grad) = cross_entropy(scores.view(), &labels)?;
        if !loss.is_finite() {
            return Err(SelsaError::Divergence { iteration, loss });
        }
        let grads = network_backward(cache, grad.view(), &params)?;
        let step = match config.grad_clip {
            Some(c) => {
                let norm = grads.l2_norm();
                if norm > c {
                    -lr * c / norm
                } else {
                    -lr
                }
            }
            None => -lr,
        };
        params.add_scaled(&grads, step);
        if params.validate().is_err() {
            return Err(SelsaError::Divergence {
                iteration,
                loss: f64::NAN,
            });
        }
        history.push(LossRecord {
            iteration,
            loss,
            lr,
        });
    }
    Ok(TrainOutcome {
        initial,
        params,
        history,
    })
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let header = vec![
        "iteration".to_string(),
        "loss".to_string(),
        "lr".to_string(),
    ];
    write_csv(
        path,
        &header,
        history.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                r.loss.to_string(),
                r.lr.to_string(),
            ]
        }),
    )
}
