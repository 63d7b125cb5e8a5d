//! Mask refinement by conditional flow matching.
//!
//! A coarse mask `x₀` is transported toward the ground truth `x₁` along the
//! straight path `x_t = (1 − t)x₀ + t·x₁`, whose velocity `u = x₁ − x₀` does
//! not depend on `t`. A small network regresses that velocity from the
//! current mask and the conditioning features; at inference the learned
//! field is integrated with forward Euler and the result binarized.

mod corpus;
mod loss;
mod model;
mod train;

pub use corpus::{class_embedding, dilate, erode, gen_mask_corpus, CorpusSpec, Corruption, FlowExample};
pub use loss::{seg_loss, seg_loss_with_grad, BCE_CLAMP, DICE_EPS};
pub use model::{Architecture, ConditioningFeatures, VectorFieldModel};
pub use train::{cfm_loss, cfm_loss_with_grad, corpus_loss, train_flow, TrainHyper, TrainOutcome};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// Current point of an integration: a mask and its time `t ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub mask: Mask,
    pub time: f64,
}

impl FlowState {
    pub fn new(mask: Mask, time: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&time) {
            return Err(Error::Contract(format!("flow time {time} outside [0, 1]")));
        }
        Ok(Self { mask, time })
    }
}

/// Anything that yields a velocity field for a state under conditioning.
pub trait VelocityField {
    fn velocity(&self, state: &FlowState, cond: &ConditioningFeatures) -> Result<Grid>;
}

/// `x_t = (1 − t)x₀ + t·x₁`, exact at both endpoints.
pub fn probability_path(x0: &Mask, x1: &Mask, t: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("path time {t} outside [0, 1]")));
    }
    if t == 0.0 {
        x0.grid().ensure_same_shape(x1.grid(), "probability path")?;
        return Ok(x0.clone());
    }
    if t == 1.0 {
        x0.grid().ensure_same_shape(x1.grid(), "probability path")?;
        return Ok(x1.clone());
    }
    let g = x0.grid().zip_map(x1.grid(), |a, b| (1.0 - t) * a + t * b)?;
    Ok(Mask::clamped(g))
}

/// `u = x₁ − x₀`.
pub fn target_velocity(x0: &Mask, x1: &Mask) -> Result<Grid> {
    x1.grid().zip_map(x0.grid(), |b, a| b - a)
}

/// Forward Euler from `x₀`: `x ← clamp₀¹(x + v(x, t)·dt)`, `dt = 1/n_steps`,
/// at times `t = k·dt` for `k = 0..n_steps`. Returns the soft mask at `t = 1`.
pub fn euler_refine<V: VelocityField + ?Sized>(
    field: &V,
    x0: &Mask,
    cond: &ConditioningFeatures,
    n_steps: usize,
) -> Result<Mask> {
    if n_steps == 0 {
        return Err(Error::Config("euler_refine needs at least one step".into()));
    }
    let dt = 1.0 / n_steps as f64;
    let mut x = x0.clone();
    for k in 0..n_steps {
        let state = FlowState::new(x, k as f64 * dt)?;
        let v = field.velocity(&state, cond)?;
        let next = state.mask.grid().zip_map(&v, |a, b| a + b * dt)?;
        x = Mask::clamped(next);
    }
    Ok(x)
}

/// Velocity field that ignores its input and returns a fixed grid.
#[derive(Debug, Clone)]
pub struct ConstantField(pub Grid);

impl VelocityField for ConstantField {
    fn velocity(&self, state: &FlowState, _cond: &ConditioningFeatures) -> Result<Grid> {
        state.mask.grid().ensure_same_shape(&self.0, "constant field")?;
        Ok(self.0.clone())
    }
}
