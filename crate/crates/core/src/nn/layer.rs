use rand::Rng;

use super::{NnError, Scalar, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d,
    BatchNorm1d,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Trainable parameters of one layer. For batch norm, `weight` is γ and `bias` is β.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub name: String,
    pub kind: LayerKind,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub running: Option<RunningStats<T>>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Scalar> LayerParams<T> {
    /// Uniform ±1/√fan_in initialisation for weight and bias.
    pub fn conv1d(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        Self::dense(
            name,
            LayerKind::Conv1d,
            &[out_channels, in_channels, kernel],
            out_channels,
            bound,
            rng,
        )
    }

    pub fn linear(name: impl Into<String>, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self::dense(name, LayerKind::Linear, &[outputs, inputs], outputs, bound, rng)
    }

    /// γ = 1, β = 0, running mean 0 and variance 1.
    pub fn batchnorm1d(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::BatchNorm1d,
            weight: Tensor::full(&[channels], T::one()),
            bias: Tensor::zeros(&[channels]),
            running: Some(RunningStats {
                mean: Tensor::zeros(&[channels]),
                var: Tensor::full(&[channels], T::one()),
            }),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    fn dense(
        name: impl Into<String>,
        kind: LayerKind,
        shape: &[usize],
        outputs: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut draw = |_| T::from_f64(rng.random_range(-bound..bound));
        let weight = Tensor::from_fn(shape, &mut draw);
        let bias = Tensor::from_fn(&[outputs], &mut draw);
        Self {
            name: name.into(),
            kind,
            weight,
            bias,
            running: None,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::ShapeMismatch(format!("{}: {msg}", self.name)));
        match self.kind {
            LayerKind::Conv1d => {
                if self.weight.shape().len() != 3 || self.bias.shape() != [self.weight.shape()[0]] {
                    return bad(format!(
                        "conv weight {:?} / bias {:?}",
                        self.weight.shape(),
                        self.bias.shape()
                    ));
                }
            }
            LayerKind::Linear => {
                if self.weight.shape().len() != 2 || self.bias.shape() != [self.weight.shape()[0]] {
                    return bad(format!(
                        "linear weight {:?} / bias {:?}",
                        self.weight.shape(),
                        self.bias.shape()
                    ));
                }
            }
            LayerKind::BatchNorm1d => {
                if self.weight.shape().len() != 1 || self.bias.shape() != self.weight.shape() {
                    return bad("gamma/beta shapes differ".into());
                }
                if self.epsilon <= 0.0 {
                    return Err(NnError::InvalidArgument(format!("{}: epsilon must be > 0", self.name)));
                }
                if let Some(r) = &self.running {
                    if r.mean.shape() != self.weight.shape() || r.var.shape() != self.weight.shape() {
                        return bad("running statistics shape".into());
                    }
                    if r.var.values().iter().any(|v| *v < T::zero()) {
                        return Err(NnError::InvalidArgument(format!(
                            "{}: negative running variance",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `running ← (1 − momentum)·running + momentum·batch`. Uninitialised statistics
    /// are seeded from the first batch.
    pub fn update_running(&mut self, batch_mean: &[T], batch_var: &[T]) {
        let m = T::from_f64(self.momentum);
        let keep = T::one() - m;
        match &mut self.running {
            Some(r) => {
                for (rv, &b) in r.mean.values_mut().iter_mut().zip(batch_mean) {
                    *rv = keep * *rv + m * b;
                }
                for (rv, &b) in r.var.values_mut().iter_mut().zip(batch_var) {
                    *rv = keep * *rv + m * b;
                }
            }
            None => {
                let n = batch_mean.len();
                self.running = Some(RunningStats {
                    mean: Tensor::from_parts(vec![n], batch_mean.to_vec()),
                    var: Tensor::from_parts(vec![n], batch_var.to_vec()),
                });
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            name: self.name.clone(),
            kind: self.kind,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            running: self.running.as_ref().map(|r| RunningStats {
                mean: r.mean.cast(),
                var: r.var.cast(),
            }),
            momentum: self.momentum,
            epsilon: self.epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = LayerParams::<f32>::linear("fc", 64, 32, &mut rng);
        assert_eq!(l.parameter_count(), 2080);
        l.validate().unwrap();
    }

    #[test]
    fn running_update_uses_momentum() {
        let mut bn = LayerParams::<f64>::batchnorm1d("bn", 1);
        bn.update_running(&[2.0], &[3.0]);
        let r = bn.running.as_ref().unwrap();
        assert!((r.mean.values()[0] - 0.2).abs() < 1e-15);
        assert!((r.var.values()[0] - (0.9 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn negative_running_variance_rejected() {
        let mut bn = LayerParams::<f32>::batchnorm1d("bn", 2);
        bn.running.as_mut().unwrap().var.values_mut()[1] = -1.0;
        assert!(bn.validate().is_err());
    }
}
