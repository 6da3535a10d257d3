//! Trainable target-modality encoder: mean pooling over frames, two fully
//! connected layers and projection onto the unit hypersphere, with
//! hand-written backpropagation and an RMSProp optimizer.

mod checkpoint;
mod gradcheck;
mod objective;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use gradcheck::{finite_diff_check, BlockReport, GradCheckReport, FD_STEP};
pub use objective::{loss_and_gradients, LossBreakdown, Objective, TransferSet};
pub use optim::{rmsprop_step, OptimizerState};
pub use train::{
    balanced_batches, encode_all, train, EpochStats, TrainConfig, TrainSet, TransferKind, TransferSource,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{l2_normalize, EmbeddingVector};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Frame pooling ahead of the fully connected layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    MeanOverFrames,
}

/// Layer sizes of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderSpec {
    pub input_frame_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub pooling: Pooling,
}

impl EncoderSpec {
    pub const DEFAULT_HIDDEN: usize = 64;
    pub const DEFAULT_EMBEDDING: usize = 128;

    pub fn new(input_frame_dim: usize, hidden_dim: usize, embedding_dim: usize) -> Result<Self> {
        for (key, v) in [
            ("input_frame_dim", input_frame_dim),
            ("hidden_dim", hidden_dim),
            ("embedding_dim", embedding_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig { key, reason: "must be at least 1".into() });
            }
        }
        Ok(Self { input_frame_dim, hidden_dim, embedding_dim, pooling: Pooling::MeanOverFrames })
    }

    /// Spec with the default 64-unit hidden layer and 128-d embedding.
    pub fn with_defaults(input_frame_dim: usize) -> Result<Self> {
        Self::new(input_frame_dim, Self::DEFAULT_HIDDEN, Self::DEFAULT_EMBEDDING)
    }

    pub(crate) fn block_lens(&self) -> [usize; 4] {
        [
            self.hidden_dim * self.input_frame_dim,
            self.hidden_dim,
            self.embedding_dim * self.hidden_dim,
            self.embedding_dim,
        ]
    }
}

pub const BLOCK_NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

/// Encoder weights. Matrices are row-major: `w1` is `hidden x input`,
/// `w2` is `embedding x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub spec: EncoderSpec,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn zeros(spec: EncoderSpec) -> Self {
        let [l1, l2, l3, l4] = spec.block_lens();
        Self { spec, w1: vec![T::zero(); l1], b1: vec![T::zero(); l2], w2: vec![T::zero(); l3], b2: vec![T::zero(); l4] }
    }

    pub fn blocks(&self) -> [(&'static str, &[T]); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut Vec<T>); 4] {
        [("w1", &mut self.w1), ("b1", &mut self.b1), ("w2", &mut self.w2), ("b2", &mut self.b2)]
    }

    /// Verifies every block length against the spec.
    pub fn check_shapes(&self) -> Result<()> {
        for ((block, values), expected) in self.blocks().into_iter().zip(self.spec.block_lens()) {
            if values.len() != expected {
                return Err(Error::ShapeMismatch { block, expected, found: values.len() });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }

    /// Maps a pooled input vector onto the hypersphere.
    pub fn forward(&self, pooled: &[T]) -> Result<Forward<T>> {
        let spec = &self.spec;
        if pooled.len() != spec.input_frame_dim {
            return Err(Error::DimensionMismatch { expected: spec.input_frame_dim, found: pooled.len() });
        }
        let hidden: Vec<T> = self
            .w1
            .chunks_exact(spec.input_frame_dim)
            .zip(&self.b1)
            .map(|(row, &b)| (dot(row, pooled) + b).tanh())
            .collect();
        let raw: Vec<T> = self.w2.chunks_exact(spec.hidden_dim).zip(&self.b2).map(|(row, &b)| dot(row, &hidden) + b).collect();
        let embedding = l2_normalize(&raw)?;
        let raw_norm = crate::embedding::norm(&raw);
        Ok(Forward { input: pooled.to_vec(), hidden, raw_norm, embedding })
    }

    /// Accumulates into `grads` the parameter gradient for an upstream
    /// gradient `grad_embedding` with respect to the unit-norm output.
    pub fn backward(&self, fwd: &Forward<T>, grad_embedding: &[T], grads: &mut EncoderParams<T>) {
        let spec = &self.spec;
        let e = fwd.embedding.as_slice();
        // d e / d raw = (I - e e^T) / |raw|
        let radial = dot(e, grad_embedding);
        let grad_raw: Vec<T> = grad_embedding.iter().zip(e).map(|(&g, &ei)| (g - ei * radial) / fwd.raw_norm).collect();

        let mut grad_hidden = vec![T::zero(); spec.hidden_dim];
        for ((gr, row), (grow, gb)) in grad_raw
            .iter()
            .zip(self.w2.chunks_exact(spec.hidden_dim))
            .zip(grads.w2.chunks_exact_mut(spec.hidden_dim).zip(grads.b2.iter_mut()))
        {
            *gb = *gb + *gr;
            for ((gw, &h), (gh, &w)) in grow.iter_mut().zip(&fwd.hidden).zip(grad_hidden.iter_mut().zip(row)) {
                *gw = *gw + *gr * h;
                *gh = *gh + *gr * w;
            }
        }
        for (((gh, &h), grow), gb) in grad_hidden
            .iter()
            .zip(&fwd.hidden)
            .zip(grads.w1.chunks_exact_mut(spec.input_frame_dim))
            .zip(grads.b1.iter_mut())
        {
            // tanh' = 1 - tanh^2
            let gz = *gh * (T::one() - h * h);
            *gb = *gb + gz;
            for (gw, &x) in grow.iter_mut().zip(&fwd.input) {
                *gw = *gw + gz * x;
            }
        }
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub input: Vec<T>,
    pub hidden: Vec<T>,
    pub raw_norm: T,
    pub embedding: EmbeddingVector<T>,
}

/// Draws weights uniformly from `±1/sqrt(fan_in)`; biases start at zero.
pub fn init_encoder<T: Scalar>(spec: EncoderSpec, seed: u64) -> EncoderParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EncoderParams::zeros(spec);
    let mut fill = |w: &mut Vec<T>, fan_in: usize| {
        let limit = 1.0 / (fan_in as f64).sqrt();
        w.iter_mut().for_each(|x| *x = T::lit(rng.random_range(-limit..limit)));
    };
    fill(&mut params.w1, spec.input_frame_dim);
    fill(&mut params.w2, spec.hidden_dim);
    params
}

/// Mean over frames; every frame must have the same dimension.
pub fn mean_pool<T: Scalar, V: AsRef<[T]>>(frames: &[V]) -> Result<Vec<T>> {
    let first = frames.first().ok_or(Error::EmptySequence)?.as_ref();
    let mut acc = vec![T::zero(); first.len()];
    for f in frames {
        let f = f.as_ref();
        if f.len() != acc.len() {
            return Err(Error::DimensionMismatch { expected: acc.len(), found: f.len() });
        }
        acc.iter_mut().zip(f).for_each(|(a, &x)| *a = *a + x);
    }
    let n = T::from_count(frames.len());
    acc.iter_mut().for_each(|a| *a = *a / n);
    Ok(acc)
}

/// Embeds one frame sequence.
pub fn encode<T: Scalar, V: AsRef<[T]>>(params: &EncoderParams<T>, frames: &[V]) -> Result<EmbeddingVector<T>> {
    let pooled = mean_pool(frames)?;
    Ok(params.forward(&pooled)?.embedding)
}
