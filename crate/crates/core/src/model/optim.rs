use crate::error::{Error, Result};
use crate::model::EncoderParams;
use crate::scalar::Scalar;

/// RMSProp accumulators and hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    /// Running mean of squared gradients, one entry per parameter.
    pub accum: EncoderParams<T>,
    pub decay: T,
    pub epsilon: T,
    pub learning_rate: T,
}

impl<T: Scalar> OptimizerState<T> {
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
    pub const DEFAULT_DECAY: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(params: &EncoderParams<T>, learning_rate: T) -> Result<Self> {
        Self::with_hyper(params, learning_rate, T::lit(Self::DEFAULT_DECAY), T::lit(Self::DEFAULT_EPSILON))
    }

    pub fn with_hyper(params: &EncoderParams<T>, learning_rate: T, decay: T, epsilon: T) -> Result<Self> {
        if !(learning_rate > T::zero()) || !learning_rate.is_finite() {
            return Err(Error::InvalidConfig { key: "learning_rate", reason: format!("must be positive, got {learning_rate}") });
        }
        if !(decay > T::zero() && decay < T::one()) {
            return Err(Error::InvalidConfig { key: "decay", reason: format!("must lie in (0, 1), got {decay}") });
        }
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidConfig { key: "epsilon", reason: format!("must be positive, got {epsilon}") });
        }
        Ok(Self { accum: EncoderParams::zeros(params.spec), decay, epsilon, learning_rate })
    }
}

/// One RMSProp update, in place:
/// `r <- decay*r + (1-decay)*g^2`, `theta <- theta - lr*g/(sqrt(r) + eps)`.
pub fn rmsprop_step<T: Scalar>(
    params: &mut EncoderParams<T>,
    grads: &EncoderParams<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    params.check_shapes()?;
    for (((block, p), (_, g)), (_, r)) in params.blocks().into_iter().zip(grads.blocks()).zip(state.accum.blocks()) {
        for len in [g.len(), r.len()] {
            if len != p.len() {
                return Err(Error::ShapeMismatch { block, expected: p.len(), found: len });
            }
        }
    }
    let (decay, lr, eps) = (state.decay, state.learning_rate, state.epsilon);
    let keep = T::one() - decay;
    for (((_, theta), (_, g)), (_, r)) in params.blocks_mut().into_iter().zip(grads.blocks()).zip(state.accum.blocks_mut()) {
        for ((t, &g), r) in theta.iter_mut().zip(g).zip(r.iter_mut()) {
            *r = decay * *r + keep * g * g;
            *t = *t - lr * g / (r.sqrt() + eps);
        }
    }
    Ok(())
}
