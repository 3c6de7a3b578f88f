use std::fmt;

use super::{NnError, Tape, Tensor, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    /// `max |g_an − g_fd| / max(|g_an|, |g_fd|, 1e-8)` over every input coordinate.
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} max_rel_err={:.3e} coords={:<6} tol={:.0e} {}",
            self.name,
            self.max_rel_error,
            self.coordinates,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares an analytic gradient against central finite differences of `value`.
///
/// `analytic` must return one gradient buffer per input, each the length of the
/// corresponding tensor.
pub fn grad_check<V, A>(
    name: &str,
    inputs: &[Tensor<f64>],
    value: V,
    analytic: A,
    tolerance: f64,
) -> Result<GradCheckReport, NnError>
where
    V: Fn(&[Tensor<f64>]) -> Result<f64, NnError>,
    A: Fn(&[Tensor<f64>]) -> Result<Vec<Vec<f64>>, NnError>,
{
    let analytic = analytic(inputs)?;
    if analytic.len() != inputs.len()
        || analytic.iter().zip(inputs).any(|(g, t)| g.len() != t.len())
    {
        return Err(NnError::ShapeMismatch(
            "analytic gradient does not mirror the inputs".into(),
        ));
    }
    let mut probe = inputs.to_vec();
    let mut worst = 0.0f64;
    let mut coordinates = 0;
    for (i, grad) in analytic.iter().enumerate() {
        for (j, &g_an) in grad.iter().enumerate() {
            let orig = probe[i].values()[j];
            probe[i].values_mut()[j] = orig + FD_STEP;
            let up = value(&probe)?;
            probe[i].values_mut()[j] = orig - FD_STEP;
            let down = value(&probe)?;
            probe[i].values_mut()[j] = orig;
            let g_fd = (up - down) / (2.0 * FD_STEP);
            let denom = g_an.abs().max(g_fd.abs()).max(1e-8);
            worst = worst.max((g_an - g_fd).abs() / denom);
            coordinates += 1;
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: worst,
        coordinates,
        tolerance,
    })
}

/// [`grad_check`] where the function is built on a tape and the analytic gradient
/// comes from [`Tape::backward`]. Every input is registered as a parameter.
pub fn tape_grad_check<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    build: F,
    tolerance: f64,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, NnError>,
{
    let forward = |xs: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var), NnError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    grad_check(
        name,
        inputs,
        |xs| {
            let (tape, _, out) = forward(xs)?;
            Ok(tape.value(out).values()[0])
        },
        |xs| {
            let (tape, vars, out) = forward(xs)?;
            let grads = tape.backward(out)?;
            Ok(vars
                .iter()
                .zip(xs)
                .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
                .collect())
        },
        tolerance,
    )
}
