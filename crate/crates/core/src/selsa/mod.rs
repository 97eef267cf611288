//! The aggregation network: learnable affine maps, the similarity/softmax/aggregate
//! primitives, the two-block forward and backward passes, and checkpoints.

mod checkpoint;
mod network;
mod ops;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use network::{forward, network_backward, network_forward, Aggregation, ForwardCache};
pub use ops::{aggregate, similarity_matrix, softmax_rows, AggregationWeights, SimilarityMatrix};

use std::hash::Hasher;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Result, SelsaError};

/// `y = x W^T + b`, applied row-wise to a batch `x` of shape `n x d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    /// `d_out x d_in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl AffineTransform {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        AffineTransform {
            weight: Array2::zeros((d_out, d_in)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn identity(d: usize) -> Self {
        AffineTransform {
            weight: Array2::eye(d),
            bias: Array1::zeros(d),
        }
    }

    /// Weights uniform in `[-sqrt(6/d_in), sqrt(6/d_in)]`, zero bias.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / d_in as f64).sqrt();
        AffineTransform {
            weight: Array2::from_shape_fn((d_out, d_in), |_| rng.random_range(-bound..=bound)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d_in() {
            return Err(SelsaError::Config(format!(
                "affine map expects input dimension {}, got {}",
                self.d_in(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    /// Gradient of `y = x W^T + b` given `dy`: the parameter gradient and `dx`.
    pub(crate) fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
    ) -> (AffineTransform, Array2<f64>) {
        let grad = AffineTransform {
            weight: dy.t().dot(&x),
            bias: dy.sum_axis(Axis(0)),
        };
        (grad, dy.dot(&self.weight))
    }

    fn is_finite(&self) -> bool {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }
}

/// All learnable tensors of the detection head:
/// `fc1 -> ReLU -> SELSA(phi1, psi1) -> fc2 -> ReLU -> SELSA(phi2, psi2) -> classifier`.
///
/// The classifier emits `n_classes + 1` scores; the last one is background.
#[derive(Debug, Clone, PartialEq)]
pub struct SelsaParams {
    pub fc1: AffineTransform,
    pub fc2: AffineTransform,
    pub phi1: AffineTransform,
    pub psi1: AffineTransform,
    pub phi2: AffineTransform,
    pub psi2: AffineTransform,
    pub classifier: AffineTransform,
}

pub const TRANSFORM_NAMES: [&str; 7] = ["fc1", "fc2", "phi1", "psi1", "phi2", "psi2", "classifier"];

impl SelsaParams {
    /// Random initialization. Each block's `psi` starts as a copy of its `phi`,
    /// so the initial similarity is a Gram matrix.
    pub fn init<R: Rng + ?Sized>(
        feature_dim: usize,
        sim_dim: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Self {
        let d = feature_dim;
        let fc1 = AffineTransform::init(d, d, rng);
        let fc2 = AffineTransform::init(d, d, rng);
        let phi1 = AffineTransform::init(d, sim_dim, rng);
        let phi2 = AffineTransform::init(d, sim_dim, rng);
        SelsaParams {
            fc1,
            fc2,
            psi1: phi1.clone(),
            phi1,
            psi2: phi2.clone(),
            phi2,
            classifier: AffineTransform::init(d, n_classes + 1, rng),
        }
    }

    pub fn zeros(feature_dim: usize, sim_dim: usize, n_classes: usize) -> Self {
        let d = feature_dim;
        SelsaParams {
            fc1: AffineTransform::zeros(d, d),
            fc2: AffineTransform::zeros(d, d),
            phi1: AffineTransform::zeros(d, sim_dim),
            psi1: AffineTransform::zeros(d, sim_dim),
            phi2: AffineTransform::zeros(d, sim_dim),
            psi2: AffineTransform::zeros(d, sim_dim),
            classifier: AffineTransform::zeros(d, n_classes + 1),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.fc1.d_in()
    }

    pub fn sim_dim(&self) -> usize {
        self.phi1.d_out()
    }

    /// Foreground class count `C`; the classifier has `C + 1` outputs.
    pub fn n_classes(&self) -> usize {
        self.classifier.d_out() - 1
    }

    pub fn transforms(&self) -> [(&'static str, &AffineTransform); 7] {
        [
            (TRANSFORM_NAMES[0], &self.fc1),
            (TRANSFORM_NAMES[1], &self.fc2),
            (TRANSFORM_NAMES[2], &self.phi1),
            (TRANSFORM_NAMES[3], &self.psi1),
            (TRANSFORM_NAMES[4], &self.phi2),
            (TRANSFORM_NAMES[5], &self.psi2),
            (TRANSFORM_NAMES[6], &self.classifier),
        ]
    }

    pub fn transforms_mut(&mut self) -> [(&'static str, &mut AffineTransform); 7] {
        [
            (TRANSFORM_NAMES[0], &mut self.fc1),
            (TRANSFORM_NAMES[1], &mut self.fc2),
            (TRANSFORM_NAMES[2], &mut self.phi1),
            (TRANSFORM_NAMES[3], &mut self.psi1),
            (TRANSFORM_NAMES[4], &mut self.phi2),
            (TRANSFORM_NAMES[5], &mut self.psi2),
            (TRANSFORM_NAMES[6], &mut self.classifier),
        ]
    }

    /// Checks that every tensor has the shape implied by `fc1`, `phi1` and the classifier.
    pub fn validate(&self) -> Result<()> {
        let d = self.feature_dim();
        let s = self.sim_dim();
        let expect = [
            (d, d),
            (d, d),
            (d, s),
            (d, s),
            (d, s),
            (d, s),
            (d, self.classifier.d_out()),
        ];
        for ((name, t), (d_in, d_out)) in self.transforms().into_iter().zip(expect) {
            if t.d_in() != d_in || t.d_out() != d_out || t.bias.len() != d_out {
                return Err(SelsaError::Config(format!(
                    "{name}: shape {}x{} (bias {}), expected {d_out}x{d_in}",
                    t.d_out(),
                    t.d_in(),
                    t.bias.len()
                )));
            }
            if !t.is_finite() {
                return Err(SelsaError::Config(format!("{name}: non-finite entries")));
            }
        }
        if self.classifier.d_out() < 2 {
            return Err(SelsaError::Config(
                "classifier needs at least 2 outputs".into(),
            ));
        }
        Ok(())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &SelsaParams, scale: f64) {
        for ((_, dst), (_, src)) in self.transforms_mut().into_iter().zip(other.transforms()) {
            dst.weight.scaled_add(scale, &src.weight);
            dst.bias.scaled_add(scale, &src.bias);
        }
    }

    /// Hash of the exact bit patterns of every entry; used to detect stale caches.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (_, t) in self.transforms() {
            h.write_usize(t.weight.len());
            for v in t.weight.iter().chain(t.bias.iter()) {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    /// Euclidean norm over every entry of every tensor.
    pub fn l2_norm(&self) -> f64 {
        self.transforms()
            .iter()
            .flat_map(|(_, t)| t.weight.iter().chain(t.bias.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.transforms()
            .iter()
            .flat_map(|(_, t)| t.weight.iter().chain(t.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}
