use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::loss::class_indices;
use super::TrainError;
use crate::nn::{Scalar, Tape, Tensor, Var};
use crate::Label;

/// Draws are kept inside `(BETA_CLAMP, 1 − BETA_CLAMP)`.
pub const BETA_CLAMP: f64 = 1e-7;

/// `ln g` for `g ~ Gamma(α, 1)`. Small shapes use `Gamma(α + 1) · U^(1/α)` so the
/// draw does not underflow to zero.
fn ln_gamma_draw<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64, TrainError> {
    let shape = if alpha < 1.0 { alpha + 1.0 } else { alpha };
    let gamma = Gamma::new(shape, 1.0).map_err(|e| TrainError::InvalidArgument(e.to_string()))?;
    let g: f64 = gamma.sample(rng);
    let mut ln_g = g.ln();
    if alpha < 1.0 {
        let u: f64 = rng.random();
        ln_g += u.ln() / alpha;
    }
    Ok(ln_g)
}

/// `Beta(α, α)` variate as `g1 / (g1 + g2)` with `g1, g2 ~ Gamma(α, 1)`, evaluated
/// from the logarithms of the draws.
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64, TrainError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TrainError::InvalidArgument(format!("mixup alpha must be positive, got {alpha}")));
    }
    let ln_g1 = ln_gamma_draw(alpha, rng)?;
    let ln_g2 = ln_gamma_draw(alpha, rng)?;
    let lambda = 1.0 / (1.0 + (ln_g2 - ln_g1).exp());
    let lambda = if lambda.is_nan() { 0.5 } else { lambda };
    Ok(lambda.clamp(BETA_CLAMP, 1.0 - BETA_CLAMP))
}

/// `x̃_i = λ x_i + (1 − λ) x_{perm(i)}` along the batch axis. Returns the mixed batch
/// and the partner labels.
pub fn mixup_batch<T: Scalar>(
    x: &Tensor<T>,
    labels: &[Label],
    lambda: f64,
    perm: &[usize],
) -> Result<(Tensor<T>, Vec<Label>), TrainError> {
    let b = *x.shape().first().unwrap_or(&0);
    if perm.len() != b || labels.len() != b {
        return Err(TrainError::InvalidArgument(format!(
            "permutation of length {} and {} labels for a batch of {b}",
            perm.len(),
            labels.len()
        )));
    }
    let mut seen = vec![false; b];
    for &p in perm {
        if p >= b || std::mem::replace(&mut seen[p], true) {
            return Err(TrainError::InvalidArgument("not a permutation of the batch".into()));
        }
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TrainError::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    let row = x.len() / b.max(1);
    let (l, m) = (T::from_f64(lambda), T::from_f64(1.0 - lambda));
    let src = x.values();
    let mut out = Vec::with_capacity(x.len());
    for (i, &j) in perm.iter().enumerate() {
        let (a, c) = (&src[i * row..(i + 1) * row], &src[j * row..(j + 1) * row]);
        out.extend(a.iter().zip(c).map(|(&u, &v)| l * u + m * v));
    }
    let partners = perm.iter().map(|&j| labels[j]).collect();
    Ok((Tensor::new(x.shape().to_vec(), out)?, partners))
}

/// `λ · CE(z̃, y_i) + (1 − λ) · CE(z̃, y_j)`, batch mean.
pub fn mixup_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logprobs: Var,
    labels: &[Label],
    partners: &[Label],
    lambda: f64,
) -> Result<Var, TrainError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TrainError::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    if labels.len() != partners.len() {
        return Err(TrainError::InvalidArgument("label vectors differ in length".into()));
    }
    match *tape.value(logprobs).shape() {
        [b, 2] if b == labels.len() && b > 0 => {}
        ref s => {
            return Err(TrainError::InvalidArgument(format!(
                "expected {} x 2 log-probabilities, got {s:?}",
                labels.len()
            )))
        }
    }
    let (yi, yj) = (class_indices(labels)?, class_indices(partners)?);
    let b = yi.len() as f64;
    let mut coef = vec![0.0f64; 2 * yi.len()];
    for (i, (&a, &c)) in yi.iter().zip(&yj).enumerate() {
        if a == c {
            coef[2 * i + a] = -1.0 / b;
        } else {
            coef[2 * i + a] = -lambda / b;
            coef[2 * i + c] = -(1.0 - lambda) / b;
        }
    }
    Ok(tape.weighted_sum(logprobs, coef.into_iter().map(T::from_f64).collect())?)
}
