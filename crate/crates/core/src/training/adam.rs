use super::TrainError;
use crate::models::{Model, OptimizerSnapshot};
use crate::nn::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// `base_lr · decay^epoch`.
pub fn decay_lr(base_lr: f64, decay: f64, epoch: usize) -> f64 {
    base_lr * decay.powi(epoch as i32)
}

/// Adam moments for a fixed, named parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub base_lr: f64,
    names: Vec<String>,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    shapes: Vec<Vec<usize>>,
}

impl AdamState {
    pub fn new(model: &Model<f32>, base_lr: f64) -> Self {
        let params = model.parameters();
        Self {
            step: 0,
            base_lr,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            first: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            second: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            shapes: params.iter().map(|(_, t)| t.shape().to_vec()).collect(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &[f32] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f32] {
        &self.second[index]
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        let pack = |bufs: &[Vec<f32>]| {
            self.names
                .iter()
                .zip(bufs)
                .zip(&self.shapes)
                .map(|((n, b), s)| (n.clone(), Tensor::new(s.clone(), b.clone()).expect("moment shapes mirror parameters")))
                .collect()
        };
        OptimizerSnapshot {
            step: self.step,
            base_lr: self.base_lr,
            first_moments: pack(&self.first),
            second_moments: pack(&self.second),
        }
    }

    /// Restores moments saved for `model`; every parameter must be present with a
    /// matching shape.
    pub fn from_snapshot(model: &Model<f32>, snap: &OptimizerSnapshot) -> Result<Self, TrainError> {
        let mut state = Self::new(model, snap.base_lr);
        state.step = snap.step;
        for (bufs, saved) in [(&mut state.first, &snap.first_moments), (&mut state.second, &snap.second_moments)] {
            if saved.len() != state.names.len() {
                return Err(TrainError::InvalidArgument("optimizer state does not match model".into()));
            }
            for (i, name) in state.names.iter().enumerate() {
                let (_, t) = saved
                    .iter()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| TrainError::InvalidArgument(format!("optimizer state lacks `{name}`")))?;
                if t.shape() != state.shapes[i].as_slice() {
                    return Err(TrainError::InvalidArgument(format!("optimizer state shape mismatch for `{name}`")));
                }
                bufs[i] = t.values().to_vec();
            }
        }
        Ok(state)
    }

    /// One bias-corrected Adam update from the gradients stored on the model's
    /// parameters. Nothing changes if any gradient is missing, mis-shaped, or
    /// non-finite.
    pub fn step(&mut self, model: &mut Model<f32>, lr: f64) -> Result<(), TrainError> {
        let mut params = model.parameters_mut();
        if params.len() != self.names.len() {
            return Err(TrainError::InvalidArgument("parameter list changed since optimizer creation".into()));
        }
        for (i, (name, t)) in params.iter().enumerate() {
            if *name != self.names[i] || t.shape() != self.shapes[i].as_slice() {
                return Err(TrainError::InvalidArgument(format!("parameter `{name}` does not match optimizer state")));
            }
            let g = t
                .grad()
                .ok_or_else(|| TrainError::InvalidArgument(format!("no gradient stored for `{name}`")))?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, (_, tensor)) in params.iter_mut().enumerate() {
            let (values, grad) = tensor.values_and_grad_mut();
            let grad = grad.expect("checked above");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for k in 0..values.len() {
                let g = grad[k] as f64;
                let mk = ADAM_BETA1 * m[k] as f64 + (1.0 - ADAM_BETA1) * g;
                let vk = ADAM_BETA2 * v[k] as f64 + (1.0 - ADAM_BETA2) * g * g;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let update = lr * (mk / c1) / ((vk / c2).sqrt() + ADAM_EPSILON);
                values[k] = (values[k] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
