//! Finite-difference verification of every differentiable operation and of small
//! composite networks, in 64-bit arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::models::{Family, Mode, Model, ModelConfig};
use crate::nn::kernels::{self, ConvDims};
use crate::nn::{grad_check, tape_grad_check, GradCheckReport, NnError, NormMode, Tape, Tensor, Var, BN_EPSILON};
use crate::training::{mixup_loss, wce_loss, ClassWeights};
use crate::Label;

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Inputs are redrawn until every ReLU input and pooling winner is at least this
/// far from a tie.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 200;

/// Signature of [`kernels::conv1d_backward`].
pub type ConvBackward = fn(&[f64], &[f64], &[f64], &ConvDims, bool) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>);

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Label> {
    let mut labels: Vec<Label> = (0..n)
        .map(|_| if rng.random_bool(0.5) { Label::Bonafide } else { Label::Spoof })
        .collect();
    // Both classes present keeps every weight coefficient exercised.
    labels[0] = Label::Spoof;
    if n > 1 {
        labels[1] = Label::Bonafide;
    }
    labels
}

/// Projects a tensor output onto a fixed random direction so that every output
/// coordinate contributes to the checked scalar.
fn project(tape: &mut Tape<f64>, y: Var, dir: &[f64]) -> Result<Var, NnError> {
    tape.weighted_sum(y, dir.to_vec())
}

/// Redraws inputs until the recorded function is away from its kinks, then runs the
/// tape check.
fn checked<G, F>(name: &str, rng: &mut ChaCha8Rng, mut draw: G, build: F) -> Result<GradCheckReport, NnError>
where
    G: FnMut(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, NnError>,
{
    for _ in 0..MAX_DRAWS {
        let inputs = draw(rng);
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        build(&mut tape, &vars)?;
        if tape.kink_margin() > KINK_MARGIN {
            return tape_grad_check(name, &inputs, &build, GRADIENT_TOLERANCE);
        }
    }
    Err(NnError::InvalidArgument(format!("{name}: no draw cleared the kink margin")))
}

fn conv_case(
    name: &str,
    rng: &mut ChaCha8Rng,
    (b, cin, cout, l): (usize, usize, usize, usize),
    k: usize,
    dilation: usize,
) -> Result<GradCheckReport, NnError> {
    let dir: Vec<f64> = (0..b * cout * l).map(|_| rng.random_range(-1.0..1.0)).collect();
    checked(
        name,
        rng,
        |r| vec![uniform(r, &[b, cin, l], 1.0), uniform(r, &[cout, cin, k], 0.5), uniform(r, &[cout], 0.5)],
        |t, v| {
            let y = t.conv1d(v[0], v[1], Some(v[2]), dilation)?;
            project(t, y, &dir)
        },
    )
}

/// Checks a conv backward implementation against finite differences of the
/// forward kernel. The suite passes the real kernel; tests pass faulty ones.
pub fn check_conv_backward(seed: u64, backward: ConvBackward) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = ConvDims {
        batch: 2,
        in_channels: 2,
        out_channels: 3,
        length: 9,
        kernel: 3,
        dilation: 2,
    };
    let inputs = vec![
        uniform(&mut rng, &[2, 2, 9], 1.0),
        uniform(&mut rng, &[3, 2, 3], 0.5),
        uniform(&mut rng, &[3], 0.5),
    ];
    let dir: Vec<f64> = (0..2 * 3 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
    grad_check(
        "conv1d (injected backward)",
        &inputs,
        |xs| {
            let y = kernels::conv1d_forward(xs[0].values(), xs[1].values(), xs[2].values(), &d);
            Ok(y.iter().zip(&dir).map(|(a, b)| a * b).sum())
        },
        |xs| {
            let (dx, dw, db) = backward(xs[0].values(), xs[1].values(), &dir, &d, true);
            Ok(vec![dx.unwrap_or_default(), dw, db])
        },
        GRADIENT_TOLERANCE,
    )
}

fn tiny_config(family: Family, conv_bias: bool) -> ModelConfig {
    let mut c = ModelConfig::with_channels(family, vec![3, 4], 2);
    c.fc = [5, 4];
    c.stem_channels = 2;
    c.stem_kernel = 3;
    c.input_length = 32;
    c.conv_bias = conv_bias;
    c
}

fn set_parameters(model: &mut Model<f64>, values: &[Tensor<f64>]) {
    for ((_, t), v) in model.parameters_mut().into_iter().zip(values) {
        t.values_mut().copy_from_slice(v.values());
    }
}

/// Network plus weighted cross-entropy, checked over every trainable parameter.
fn model_case(name: &str, rng: &mut ChaCha8Rng, config: ModelConfig, mode: Mode) -> Result<GradCheckReport, NnError> {
    let batch = 3;
    let weights = ClassWeights([1.3, 0.7]);
    for _ in 0..MAX_DRAWS {
        let mut model: Model<f64> = Model::build(&config, rng).map_err(|e| NnError::InvalidArgument(e.to_string()))?;
        model.set_mode(mode);
        if mode == Mode::Eval {
            for layer in model.layers_mut() {
                if let Some(r) = layer.running.as_mut() {
                    r.mean.values_mut().iter_mut().for_each(|m| *m = rng.random_range(-0.2..0.2));
                    r.var.values_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
                }
            }
        }
        let input = uniform(rng, &[batch, 1, config.input_length], 1.0);
        let labels = random_labels(rng, batch);
        let loss_of = |m: &Model<f64>| -> Result<(Tape<f64>, crate::models::ForwardPass, Var), NnError> {
            let mut tape = Tape::new();
            let x = tape.constant(input.clone());
            let pass = m.forward_tape(&mut tape, x).map_err(|e| NnError::InvalidArgument(e.to_string()))?;
            let lp = tape.log_softmax(pass.logits)?;
            let loss = wce_loss(&mut tape, lp, &labels, &weights).map_err(|e| NnError::InvalidArgument(e.to_string()))?;
            Ok((tape, pass, loss))
        };
        let (tape, _, _) = loss_of(&model)?;
        if tape.kink_margin() <= KINK_MARGIN {
            continue;
        }
        let params: Vec<Tensor<f64>> = model.parameters().into_iter().map(|(_, t)| t.clone()).collect();
        let probe = std::cell::RefCell::new(model.clone());
        return grad_check(
            name,
            &params,
            |xs| {
                let mut m = probe.borrow_mut();
                set_parameters(&mut m, xs);
                let (tape, _, loss) = loss_of(&m)?;
                Ok(tape.value(loss).values()[0])
            },
            |xs| {
                let mut m = probe.borrow_mut();
                set_parameters(&mut m, xs);
                let (tape, pass, loss) = loss_of(&m)?;
                let grads = tape.backward(loss)?;
                m.store_gradients(&grads, &pass);
                Ok(m.parameters()
                    .into_iter()
                    .map(|(_, t)| t.grad().expect("gradients stored").to_vec())
                    .collect())
            },
            GRADIENT_TOLERANCE,
        );
    }
    Err(NnError::InvalidArgument(format!("{name}: no draw cleared the kink margin")))
}

/// Runs the full gradient suite: each layer kind, the two losses, a
/// conv→pool→linear chain, and two-block networks of both families.
pub fn run_gradient_suite(seed: u64) -> Result<Vec<GradCheckReport>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut out = vec![
        conv_case("conv1d k=3 d=1", rng, (2, 2, 3, 10), 3, 1)?,
        conv_case("conv1d k=3 d=4", rng, (2, 2, 3, 12), 3, 4)?,
        conv_case("conv1d k=7 d=1", rng, (2, 1, 2, 11), 7, 1)?,
        conv_case("conv1d k=3 d=128", rng, (1, 2, 2, 6), 3, 128)?,
        conv_case("conv1d k=1", rng, (2, 3, 2, 5), 1, 1)?,
    ];

    let dir: Vec<f64> = (0..2 * 3 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.push(checked("max_pool1d w=4", rng, |r| vec![uniform(r, &[2, 3, 13], 1.0)], |t, v| {
        let y = t.max_pool1d(v[0], 4)?;
        project(t, y, &dir)
    })?);
    let dir: Vec<f64> = (0..2 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.push(checked("global_max_pool", rng, |r| vec![uniform(r, &[2, 3, 7], 1.0)], |t, v| {
        let y = t.global_max_pool(v[0])?;
        project(t, y, &dir)
    })?);

    let dir: Vec<f64> = (0..3 * 2 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.push(checked(
        "batch_norm train",
        rng,
        |r| vec![uniform(r, &[3, 2, 5], 1.0), uniform(r, &[2], 1.0), uniform(r, &[2], 1.0)],
        |t, v| {
            let y = t.batch_norm(v[0], v[1], v[2], NormMode::Train { eps: BN_EPSILON })?;
            project(t, y, &dir)
        },
    )?);
    let (mean, var) = (vec![0.1, -0.3], vec![0.7, 1.6]);
    out.push(checked(
        "batch_norm eval",
        rng,
        |r| vec![uniform(r, &[3, 2, 5], 1.0), uniform(r, &[2], 1.0), uniform(r, &[2], 1.0)],
        |t, v| {
            let y = t.batch_norm(
                v[0],
                v[1],
                v[2],
                NormMode::Eval {
                    mean: &mean,
                    var: &var,
                    eps: BN_EPSILON,
                },
            )?;
            project(t, y, &dir)
        },
    )?);

    let dir: Vec<f64> = (0..2 * 3 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.push(checked("relu", rng, |r| vec![uniform(r, &[2, 3, 4], 1.0)], |t, v| {
        let y = t.relu(v[0])?;
        project(t, y, &dir)
    })?);
    out.push(checked(
        "add",
        rng,
        |r| vec![uniform(r, &[2, 3, 4], 1.0), uniform(r, &[2, 3, 4], 1.0)],
        |t, v| {
            let y = t.add(v[0], v[1])?;
            let y = t.add(y, v[0])?;
            project(t, y, &dir)
        },
    )?);
    let dir: Vec<f64> = (0..2 * 5 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.push(checked(
        "concat_channels",
        rng,
        |r| vec![uniform(r, &[2, 2, 4], 1.0), uniform(r, &[2, 3, 4], 1.0)],
        |t, v| {
            let y = t.concat_channels(&[v[0], v[1]])?;
            project(t, y, &dir)
        },
    )?);
    let dir: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.push(checked(
        "linear",
        rng,
        |r| vec![uniform(r, &[3, 5], 1.0), uniform(r, &[4, 5], 0.5), uniform(r, &[4], 0.5)],
        |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            project(t, y, &dir)
        },
    )?);
    let dir: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.push(checked("log_softmax", rng, |r| vec![uniform(r, &[3, 4], 2.0)], |t, v| {
        let y = t.log_softmax(v[0])?;
        project(t, y, &dir)
    })?);

    let labels = random_labels(rng, 4);
    let partners = random_labels(rng, 4);
    let weights = ClassWeights([0.8, 1.4]);
    out.push(checked("wce loss", rng, |r| vec![uniform(r, &[4, 2], 2.0)], |t, v| {
        let lp = t.log_softmax(v[0])?;
        wce_loss(t, lp, &labels, &weights).map_err(|e| NnError::InvalidArgument(e.to_string()))
    })?);
    out.push(checked("mixup loss", rng, |r| vec![uniform(r, &[4, 2], 2.0)], |t, v| {
        let lp = t.log_softmax(v[0])?;
        mixup_loss(t, lp, &labels, &partners, 0.37).map_err(|e| NnError::InvalidArgument(e.to_string()))
    })?);

    let dir: Vec<f64> = (0..2 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.push(checked(
        "conv->relu->pool->linear",
        rng,
        |r| {
            vec![
                uniform(r, &[2, 1, 16], 1.0),
                uniform(r, &[3, 1, 3], 0.7),
                uniform(r, &[3], 0.3),
                uniform(r, &[2, 3], 0.7),
                uniform(r, &[2], 0.3),
            ]
        },
        |t, v| {
            let y = t.conv1d(v[0], v[1], Some(v[2]), 2)?;
            let y = t.relu(y)?;
            let y = t.max_pool1d(y, 4)?;
            let y = t.global_max_pool(y)?;
            let y = t.linear(y, v[3], v[4])?;
            project(t, y, &dir)
        },
    )?);

    out.push(model_case("res net 2 blocks train", rng, tiny_config(Family::Res, false), Mode::Train)?);
    out.push(model_case("inc net 2 blocks train", rng, tiny_config(Family::Inc, false), Mode::Train)?);
    out.push(model_case("res net 2 blocks eval", rng, tiny_config(Family::Res, true), Mode::Eval)?);
    out.push(model_case("inc net 2 blocks eval", rng, tiny_config(Family::Inc, true), Mode::Eval)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_conv_backward_passes() {
        assert!(check_conv_backward(1, kernels::conv1d_backward::<f64>).unwrap().passed());
    }

    #[test]
    fn scaled_weight_gradient_fails() {
        fn wrong(x: &[f64], w: &[f64], dy: &[f64], d: &ConvDims, i: bool) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
            let (dx, mut dw, db) = kernels::conv1d_backward(x, w, dy, d, i);
            dw.iter_mut().for_each(|g| *g *= 1.01);
            (dx, dw, db)
        }
        assert!(!check_conv_backward(1, wrong).unwrap().passed());
    }
}
