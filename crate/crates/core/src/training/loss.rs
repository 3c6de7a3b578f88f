use super::TrainError;
use crate::nn::{Scalar, Tape, Var};
use crate::Label;

/// Per-class loss weights, indexed by class (0 = spoof, 1 = bona fide).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights(pub [f64; 2]);

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights([1.0, 1.0]);

    pub fn spoof(&self) -> f64 {
        self.0[Label::SPOOF_CLASS]
    }

    pub fn bonafide(&self) -> f64 {
        self.0[Label::BONAFIDE_CLASS]
    }
}

/// `w_c = (N_spoof + N_bonafide) / (2 N_c)`, so balanced data gives unit weights.
pub fn class_weights(spoof_count: usize, bonafide_count: usize) -> Result<ClassWeights, TrainError> {
    if spoof_count == 0 || bonafide_count == 0 {
        return Err(TrainError::Data(format!(
            "training data needs both classes (spoof: {spoof_count}, bonafide: {bonafide_count})"
        )));
    }
    let total = (spoof_count + bonafide_count) as f64;
    Ok(ClassWeights([
        total / (2.0 * spoof_count as f64),
        total / (2.0 * bonafide_count as f64),
    ]))
}

pub(crate) fn class_indices(labels: &[Label]) -> Result<Vec<usize>, TrainError> {
    labels
        .iter()
        .map(|l| {
            l.class_index()
                .ok_or_else(|| TrainError::InvalidArgument("unlabelled example in a training batch".into()))
        })
        .collect()
}

fn check_logprobs<T: Scalar>(tape: &Tape<T>, logprobs: Var, batch: usize) -> Result<(), TrainError> {
    match *tape.value(logprobs).shape() {
        [b, 2] if b == batch && b > 0 => Ok(()),
        ref s => Err(TrainError::InvalidArgument(format!(
            "expected {batch} x 2 log-probabilities, got {s:?}"
        ))),
    }
}

/// Batch mean of `−w_y · log z_y`.
pub fn wce_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logprobs: Var,
    labels: &[Label],
    weights: &ClassWeights,
) -> Result<Var, TrainError> {
    check_logprobs(tape, logprobs, labels.len())?;
    let ys = class_indices(labels)?;
    let b = ys.len() as f64;
    let mut coef = vec![T::zero(); 2 * ys.len()];
    for (i, &y) in ys.iter().enumerate() {
        coef[2 * i + y] = T::from_f64(-weights.0[y] / b);
    }
    Ok(tape.weighted_sum(logprobs, coef)?)
}

/// Unweighted cross-entropy, batch mean.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logprobs: Var, labels: &[Label]) -> Result<Var, TrainError> {
    wce_loss(tape, logprobs, labels, &ClassWeights::UNIFORM)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn weight_examples() {
        assert_eq!(class_weights(100, 100).unwrap(), ClassWeights([1.0, 1.0]));
        let w = class_weights(100, 300).unwrap();
        assert_eq!(w.spoof(), 2.0);
        assert!((w.bonafide() - 2.0 / 3.0).abs() < 1e-15);
        let w = class_weights(1, 9).unwrap();
        assert_eq!(w.spoof(), 5.0);
        assert!((w.bonafide() - 5.0 / 9.0).abs() < 1e-15);
        assert!(class_weights(0, 3).is_err());
    }

    #[test]
    fn single_example_hand_value() {
        let mut tape = Tape::<f64>::new();
        let lp = tape.constant(Tensor::new(vec![1, 2], vec![0.25f64.ln(), 0.75f64.ln()]).unwrap());
        let loss = wce_loss(&mut tape, lp, &[Label::Bonafide], &ClassWeights([1.0, 2.0])).unwrap();
        let v = tape.value(loss).values()[0];
        assert!((v - (-2.0 * 0.75f64.ln())).abs() < 1e-12);
        assert!((v - 0.5754).abs() < 1e-4);
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let mut tape = Tape::<f64>::new();
        let lp = tape.constant(Tensor::new(vec![2, 2], vec![0.0, f64::MIN_POSITIVE.ln(), -30.0, 0.0]).unwrap());
        let loss = cross_entropy(&mut tape, lp, &[Label::Spoof, Label::Bonafide]).unwrap();
        assert_eq!(tape.value(loss).values()[0], 0.0);
    }

    #[test]
    fn unknown_label_rejected() {
        let mut tape = Tape::<f64>::new();
        let lp = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(cross_entropy(&mut tape, lp, &[Label::Unknown]).is_err());
    }
}
