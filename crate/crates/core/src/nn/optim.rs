//! RMSProp.

use crate::error::{Error, Result};
use crate::nn::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    /// Decay ρ of the squared-gradient average.
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// Running average of squared gradients for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: RmsPropConfig,
    pub accum: Vec<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(len: usize, config: RmsPropConfig) -> Self {
        OptimizerState {
            config,
            accum: vec![T::ZERO; len],
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        rmsprop_step(params, grads, self)
    }
}

/// `v ← ρv + (1−ρ)g²;  p ← p − η·g / (√v + ε)`
pub fn rmsprop_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut OptimizerState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.accum.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} accumulators",
            params.len(),
            grads.len(),
            state.accum.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient element {i} is {:?}; refusing to update",
            grads[i]
        )));
    }
    let rho = T::from_f64(state.config.decay);
    let one_minus_rho = T::from_f64(1.0 - state.config.decay);
    let lr = T::from_f64(state.config.learning_rate);
    let eps = T::from_f64(state.config.epsilon);
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(state.accum.iter_mut()) {
        *v = rho * *v + one_minus_rho * g * g;
        // with ε = 0 an untouched accumulator would give 0/0
        if g != T::ZERO {
            *p -= lr * g / (v.sqrt() + eps);
        }
    }
    Ok(())
}
