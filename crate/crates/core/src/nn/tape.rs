use super::kernels::{self, ConvDims};
use super::{NnError, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-normalisation behaviour for one call.
#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a, T> {
    /// Normalise with the batch's own statistics.
    Train { eps: f64 },
    /// Normalise with externally supplied running statistics.
    Eval {
        mean: &'a [T],
        var: &'a [T],
        eps: f64,
    },
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        dims: ConvDims,
    },
    MaxPool {
        input: Var,
        window: usize,
        argmax: Vec<usize>,
    },
    GlobalMaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        /// Present in training mode only.
        batch_mean_var: Option<(Vec<T>, Vec<T>)>,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    LogSoftmax {
        input: Var,
    },
    WeightedSum {
        input: Var,
        weights: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of one forward pass. Nodes are appended in evaluation order, so the
/// node list is already topologically sorted.
#[derive(Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Batch mean and biased variance computed by a training-mode normalisation node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[T], &[T])> {
        match &self.nodes.get(v.0)?.op {
            Op::BatchNorm {
                batch_mean_var: Some((m, s)),
                ..
            } => Some((m, s)),
            _ => None,
        }
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        values: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var, NnError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(Tensor::from_parts(shape, values), op, requires_grad))
    }

    fn check(&self, v: Var) -> Result<&Tensor<T>, NnError> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(NnError::UnknownVar(v.0))
    }

    /// SAME-padded stride-1 convolution; `bias` may be omitted.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        dilation: usize,
    ) -> Result<Var, NnError> {
        let x = self.check(input)?;
        let w = self.check(weight)?;
        if dilation == 0 {
            return Err(NnError::InvalidArgument("dilation must be positive".into()));
        }
        let [batch, cin, length] = *x.shape() else {
            return Err(NnError::ShapeMismatch(format!(
                "conv1d expects batch x channels x time, got {:?}",
                x.shape()
            )));
        };
        let [cout, wcin, kernel] = *w.shape() else {
            return Err(NnError::ShapeMismatch(format!(
                "conv1d weight must be out x in x kernel, got {:?}",
                w.shape()
            )));
        };
        if wcin != cin {
            return Err(NnError::ShapeMismatch(format!(
                "conv1d input has {cin} channels, weight expects {wcin}"
            )));
        }
        let no_bias = [];
        let bias_values = match bias {
            Some(b) => {
                let b = self.check(b)?;
                if b.shape() != [cout] {
                    return Err(NnError::ShapeMismatch(format!(
                        "conv1d bias shape {:?}, expected [{cout}]",
                        b.shape()
                    )));
                }
                b.values()
            }
            None => &no_bias[..],
        };
        if kernel == 0 || length == 0 {
            return Err(NnError::InvalidArgument(format!(
                "kernel of {kernel} taps does not fit padded input of length {length}"
            )));
        }
        let dims = ConvDims {
            batch,
            in_channels: cin,
            out_channels: cout,
            length,
            kernel,
            dilation,
        };
        let out = kernels::conv1d_forward(x.values(), w.values(), bias_values, &dims);
        self.push(
            "conv1d",
            vec![batch, cout, length],
            out,
            Op::Conv1d {
                input,
                weight,
                bias,
                dims,
            },
            &[Some(input), Some(weight), bias].into_iter().flatten().collect::<Vec<_>>(),
        )
    }

    pub fn max_pool1d(&mut self, input: Var, window: usize) -> Result<Var, NnError> {
        let x = self.check(input)?;
        let [batch, channels, length] = *x.shape() else {
            return Err(NnError::ShapeMismatch(format!(
                "max_pool1d expects batch x channels x time, got {:?}",
                x.shape()
            )));
        };
        if window == 0 {
            return Err(NnError::InvalidArgument("pool window must be positive".into()));
        }
        if length < window {
            return Err(NnError::InvalidArgument(format!(
                "pool window {window} longer than time axis {length}"
            )));
        }
        let (out, argmax) = kernels::maxpool1d_forward(x.values(), batch * channels, length, window);
        self.push(
            "max_pool1d",
            vec![batch, channels, length / window],
            out,
            Op::MaxPool {
                input,
                window,
                argmax,
            },
            &[input],
        )
    }

    /// Maximum over the whole time axis: `B x C x L -> B x C`.
    pub fn global_max_pool(&mut self, input: Var) -> Result<Var, NnError> {
        let x = self.check(input)?;
        let [batch, channels, length] = *x.shape() else {
            return Err(NnError::ShapeMismatch(format!(
                "global_max_pool expects batch x channels x time, got {:?}",
                x.shape()
            )));
        };
        if length == 0 {
            return Err(NnError::InvalidArgument("empty time axis".into()));
        }
        let (out, argmax) = kernels::maxpool1d_forward(x.values(), batch * channels, length, length);
        self.push(
            "global_max_pool",
            vec![batch, channels],
            out,
            Op::GlobalMaxPool { input, argmax },
            &[input],
        )
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_, T>,
    ) -> Result<Var, NnError> {
        let x = self.check(input)?;
        let (batch, channels, length) = x.bcl()?;
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.check(v)?.shape() != [channels] {
                return Err(NnError::ShapeMismatch(format!(
                    "batch norm {what} must have {channels} entries"
                )));
            }
        }
        let (inv_std, mean, batch_mean_var) = match mode {
            NormMode::Train { eps } => {
                if batch * length < 2 {
                    return Err(NnError::InvalidArgument(
                        "training-mode batch norm needs at least two values per channel".into(),
                    ));
                }
                let s = kernels::batch_stats(x.values(), batch, channels, length, eps);
                (s.inv_std, s.mean.clone(), Some((s.mean, s.var)))
            }
            NormMode::Eval { mean, var, eps } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(NnError::ShapeMismatch(
                        "running statistics do not match channel count".into(),
                    ));
                }
                let inv_std = var
                    .iter()
                    .map(|v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt()))
                    .collect();
                (inv_std, mean.to_vec(), None)
            }
        };
        let (y, xhat) = kernels::normalize(
            x.values(),
            channels,
            length,
            &mean,
            &inv_std,
            self.value(gamma).values(),
            self.value(beta).values(),
        );
        let shape = x.shape().to_vec();
        self.push(
            "batch_norm",
            shape,
            y,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_mean_var,
            },
            &[input, gamma, beta],
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, NnError> {
        let x = self.check(input)?;
        let out = x.values().iter().map(|&v| v.max(T::zero())).collect();
        let shape = x.shape().to_vec();
        self.push("relu", shape, out, Op::Relu { input }, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.check(a)?, self.check(b)?);
        if x.shape() != y.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "add of {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let out = x.values().iter().zip(y.values()).map(|(&p, &q)| p + q).collect();
        let shape = x.shape().to_vec();
        self.push("add", shape, out, Op::Add { a, b }, &[a, b])
    }

    /// Concatenates `B x Ci x L` tensors along the channel axis, in argument order.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, NnError> {
        let Some(&first) = inputs.first() else {
            return Err(NnError::InvalidArgument("concat of zero tensors".into()));
        };
        let (batch, _, length) = self.check(first)?.bcl()?;
        let mut total = 0;
        for &v in inputs {
            let t = self.check(v)?;
            let [b, c, l] = *t.shape() else {
                return Err(NnError::ShapeMismatch(format!(
                    "concat expects batch x channels x time, got {:?}",
                    t.shape()
                )));
            };
            if b != batch || l != length {
                return Err(NnError::ShapeMismatch(format!(
                    "concat of mismatched batch/time: {:?}",
                    t.shape()
                )));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(batch * total * length);
        for b in 0..batch {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[1] * length;
                out.extend_from_slice(&t.values()[b * block..][..block]);
            }
        }
        self.push(
            "concat",
            vec![batch, total, length],
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            inputs,
        )
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, NnError> {
        let x = self.check(input)?;
        let w = self.check(weight)?;
        let b = self.check(bias)?;
        let (&[batch, n], &[m, wn]) = (x.shape(), w.shape()) else {
            return Err(NnError::ShapeMismatch(format!(
                "linear expects B x N input and M x N weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        };
        if wn != n || b.shape() != [m] {
            return Err(NnError::ShapeMismatch(format!(
                "linear input width {n} vs weight {:?} and bias {:?}",
                w.shape(),
                b.shape()
            )));
        }
        let out = kernels::linear_forward(x.values(), w.values(), b.values(), batch, n, m);
        self.push(
            "linear",
            vec![batch, m],
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        )
    }

    pub fn log_softmax(&mut self, input: Var) -> Result<Var, NnError> {
        let x = self.check(input)?;
        let [batch, classes] = *x.shape() else {
            return Err(NnError::ShapeMismatch(format!(
                "log_softmax expects B x K, got {:?}",
                x.shape()
            )));
        };
        if classes < 2 {
            return Err(NnError::InvalidArgument("log_softmax needs at least two classes".into()));
        }
        let out = kernels::log_softmax_forward(x.values(), classes);
        self.push("log_softmax", vec![batch, classes], out, Op::LogSoftmax { input }, &[input])
    }

    /// Scalar `Σ w_i · x_i`.
    pub fn weighted_sum(&mut self, input: Var, weights: Vec<T>) -> Result<Var, NnError> {
        let x = self.check(input)?;
        if weights.len() != x.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} weights for {} values",
                weights.len(),
                x.len()
            )));
        }
        let mut acc = T::zero();
        for (&w, &v) in weights.iter().zip(x.values()) {
            acc += w * v;
        }
        self.push("weighted_sum", vec![1], vec![acc], Op::WeightedSum { input, weights }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var, NnError> {
        let n = self.check(input)?.len();
        self.weighted_sum(input, vec![T::one(); n])
    }

    /// Smallest distance of any recorded ReLU input from zero, or of any pooling
    /// window's maximum from its runner-up. Finite differences are unreliable when
    /// this is small.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for v in self.value(*input).values() {
                        margin = margin.min(v.as_f64().abs());
                    }
                }
                Op::MaxPool { input, window, .. } => {
                    margin = margin.min(window_gap(self.value(*input).values(), *window));
                }
                Op::GlobalMaxPool { input, .. } => {
                    let x = self.value(*input);
                    margin = margin.min(window_gap(x.values(), x.shape()[2]));
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from a scalar node. Leaves created with [`Tape::param`] (and any
    /// intermediate node on a path to one) receive gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NnError> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(NnError::BackwardBeforeForward);
        };
        if node.value.len() != 1 {
            return Err(NnError::NonScalarSeed(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                bias,
                dims,
            } => {
                let (dx, dw, db) = kernels::conv1d_backward(
                    self.value(*input).values(),
                    self.value(*weight).values(),
                    g,
                    dims,
                    self.wants(*input),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *input, dx);
                }
                self.accumulate_if(grads, *weight, dw);
                if let Some(bias) = bias {
                    self.accumulate_if(grads, *bias, db);
                }
            }
            Op::MaxPool { input, argmax, .. } | Op::GlobalMaxPool { input, argmax } => {
                let dx = kernels::scatter_argmax(g, argmax, self.value(*input).len());
                accumulate(grads, *input, dx);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_mean_var,
            } => {
                let (batch, channels, length) = self.value(*input).bcl().expect("checked in forward");
                let gamma_v = self.value(*gamma).values();
                if self.wants(*input) {
                    let dx = if batch_mean_var.is_some() {
                        kernels::batchnorm_train_input_backward(
                            g, xhat, gamma_v, inv_std, batch, channels, length,
                        )
                    } else {
                        g.chunks(length)
                            .enumerate()
                            .flat_map(|(row, chunk)| {
                                let c = row % channels;
                                let s = gamma_v[c] * inv_std[c];
                                chunk.iter().map(move |&v| v * s)
                            })
                            .collect()
                    };
                    accumulate(grads, *input, dx);
                }
                let (dgamma, dbeta) = kernels::norm_affine_backward(g, xhat, channels, length);
                self.accumulate_if(grads, *gamma, dgamma);
                self.accumulate_if(grads, *beta, dbeta);
            }
            Op::Relu { input } => {
                let x = self.value(*input).values();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *input, dx);
            }
            Op::Add { a, b } => {
                self.accumulate_if(grads, *a, g.to_vec());
                self.accumulate_if(grads, *b, g.to_vec());
            }
            Op::Concat { inputs } => {
                let [batch, total, length] = *node.value.shape() else {
                    unreachable!("concat output is rank 3")
                };
                let mut offset = 0;
                for &v in inputs {
                    let c = self.value(v).shape()[1];
                    if self.wants(v) {
                        let mut dx = Vec::with_capacity(batch * c * length);
                        for b in 0..batch {
                            dx.extend_from_slice(&g[(b * total + offset) * length..][..c * length]);
                        }
                        accumulate(grads, v, dx);
                    }
                    offset += c;
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (batch, n) = (x.shape()[0], x.shape()[1]);
                let m = w.shape()[0];
                let (dx, dw, db) = kernels::linear_backward(x.values(), w.values(), g, batch, n, m);
                self.accumulate_if(grads, *input, dx);
                self.accumulate_if(grads, *weight, dw);
                self.accumulate_if(grads, *bias, db);
            }
            Op::LogSoftmax { input } => {
                let classes = node.value.shape()[1];
                let dx = kernels::log_softmax_backward(node.value.values(), g, classes);
                accumulate(grads, *input, dx);
            }
            Op::WeightedSum { input, weights } => {
                let s = g[0];
                accumulate(grads, *input, weights.iter().map(|&w| w * s).collect());
            }
        }
    }

    fn accumulate_if(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if self.wants(v) {
            accumulate(grads, v, g);
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Smallest winner/runner-up gap over pooling windows. Windows whose maximum is
/// exactly zero hold only inactive ReLU outputs and are not counted.
fn window_gap<T: Scalar>(x: &[T], window: usize) -> f64 {
    if window < 2 {
        return f64::INFINITY;
    }
    let usable = x.len() / window * window;
    x[..usable]
        .chunks(window)
        .map(|w| {
            let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for v in w.iter().map(|v| v.as_f64()) {
                if v > best {
                    second = best;
                    best = v;
                } else if v > second {
                    second = v;
                }
            }
            if best == 0.0 {
                f64::INFINITY
            } else {
                best - second
            }
        })
        .fold(f64::INFINITY, f64::min)
}
