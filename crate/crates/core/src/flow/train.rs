use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::rng::{trial_seed, SeededStream};

use super::corpus::FlowExample;
use super::model::{Architecture, ConditioningFeatures, Scratch, VectorFieldModel};
use super::{probability_path, FlowState};

/// Fixed time grid used to report corpus-level losses.
pub const EVAL_TIMES: [f64; 4] = [0.125, 0.375, 0.625, 0.875];

/// Sum over pixels of `(v − u)²` at time `t`; when `grad` is given, adds
/// `weight · ∂/∂θ` of that sum into it.
fn accumulate(
    model: &VectorFieldModel,
    x0: &Mask,
    x1: &Mask,
    cond: &ConditioningFeatures,
    t: f64,
    weight: f64,
    mut grad: Option<&mut [f64]>,
    sc: &mut Scratch,
) -> Result<f64> {
    let xt = probability_path(x0, x1, t)?;
    let state = FlowState::new(xt, t)?;
    model.validate_inputs(&state, cond)?;
    let x = state.mask.grid();
    let (h, w) = x.shape();
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = model.pixel_forward(x, i, j, t, cond, sc);
            let u = x1.grid().get(i, j) - x0.grid().get(i, j);
            let err = v - u;
            total += err * err;
            if let Some(g) = grad.as_deref_mut() {
                model.pixel_backward(i, j, 2.0 * err * weight, cond, sc, g);
            }
        }
    }
    Ok(total)
}

fn check_times(t_samples: &[f64]) -> Result<()> {
    if t_samples.is_empty() {
        return Err(Error::Contract("cfm_loss needs at least one time sample".into()));
    }
    if let Some(t) = t_samples.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Contract(format!("time sample {t} outside [0, 1]")));
    }
    Ok(())
}

/// Mean over `t_samples` and pixels of `(v_θ(x_t, t) − (x₁ − x₀))²`.
pub fn cfm_loss(
    model: &VectorFieldModel,
    x0: &Mask,
    x1: &Mask,
    cond: &ConditioningFeatures,
    t_samples: &[f64],
) -> Result<f64> {
    check_times(t_samples)?;
    let mut sc = Scratch::new(&model.architecture());
    let count = (t_samples.len() * x0.as_slice().len()) as f64;
    let mut total = 0.0;
    for &t in t_samples {
        total += accumulate(model, x0, x1, cond, t, 0.0, None, &mut sc)?;
    }
    Ok(total / count)
}

/// [`cfm_loss`] and its gradient with respect to the flat parameters.
pub fn cfm_loss_with_grad(
    model: &VectorFieldModel,
    x0: &Mask,
    x1: &Mask,
    cond: &ConditioningFeatures,
    t_samples: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_times(t_samples)?;
    let mut sc = Scratch::new(&model.architecture());
    let count = (t_samples.len() * x0.as_slice().len()) as f64;
    let mut grad = vec![0.0; model.params().len()];
    let mut total = 0.0;
    for &t in t_samples {
        total += accumulate(model, x0, x1, cond, t, 1.0 / count, Some(&mut grad), &mut sc)?;
    }
    Ok((total / count, grad))
}

/// Mean CFM loss over a corpus on the fixed grid [`EVAL_TIMES`].
pub fn corpus_loss(model: &VectorFieldModel, corpus: &[FlowExample]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Contract("empty corpus".into()));
    }
    let mut total = 0.0;
    for ex in corpus {
        total += cfm_loss(model, &ex.coarse, &ex.gt, &ex.cond, &EVAL_TIMES)?;
    }
    Ok(total / corpus.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub t_per_sample: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.05,
            steps: 1000,
            batch: 8,
            t_per_sample: 4,
            seed: 7,
        }
    }
}

impl TrainHyper {
    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch == 0 || self.t_per_sample == 0 {
            return Err(Error::Config("batch and t_per_sample must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VectorFieldModel,
    /// Mini-batch loss before each update.
    pub step_losses: Vec<f64>,
    /// Corpus loss on [`EVAL_TIMES`] before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Plain SGD on the CFM objective.
///
/// Each step draws `batch` examples (with replacement) and
/// `t_per_sample` uniform times per example from a stream seeded by
/// `hyper.seed`; initial weights come from an independent stream of the
/// same seed.
pub fn train_flow(corpus: &[FlowExample], arch: Architecture, hyper: &TrainHyper) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::Contract("training corpus is empty".into()));
    }
    hyper.validate()?;
    let mut model = VectorFieldModel::init(arch, trial_seed(hyper.seed, 0))?;
    let mut stream = SeededStream::new(trial_seed(hyper.seed, 1));
    let initial_loss = corpus_loss(&model, corpus)?;
    let mut sc = Scratch::new(&arch);
    let mut grad = vec![0.0; arch.param_count()];
    let mut step_losses = Vec::with_capacity(hyper.steps);
    for step in 0..hyper.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut count = 0usize;
        let mut picks = Vec::with_capacity(hyper.batch * hyper.t_per_sample);
        for _ in 0..hyper.batch {
            let ex = &corpus[stream.below(corpus.len())];
            for _ in 0..hyper.t_per_sample {
                picks.push((ex, stream.uniform()));
                count += ex.coarse.as_slice().len();
            }
        }
        let weight = 1.0 / count as f64;
        let mut total = 0.0;
        for (ex, t) in picks {
            total += accumulate(&model, &ex.coarse, &ex.gt, &ex.cond, t, weight, Some(&mut grad), &mut sc)?;
        }
        let loss = total / count as f64;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        step_losses.push(loss);
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= hyper.lr * g;
        }
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Diverged {
            step: hyper.steps,
            loss: f64::NAN,
        });
    }
    let final_loss = corpus_loss(&model, corpus)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step: hyper.steps,
            loss: final_loss,
        });
    }
    Ok(TrainOutcome {
        model,
        step_losses,
        initial_loss,
        final_loss,
    })
}
