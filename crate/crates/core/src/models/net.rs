use rand::Rng;

use super::config::{Family, ModelConfig, POOL};
use super::ModelError;
use crate::nn::{Gradients, LayerKind, LayerParams, NnError, NormMode, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A convolution followed by batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvBn {
    conv: usize,
    bn: usize,
    dilation: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Block {
    Res {
        main: [ConvBn; 3],
        skip: Option<ConvBn>,
    },
    Inc {
        branches: Vec<ConvBn>,
    },
}

/// A built network: its configuration, its layers in construction order, and the
/// wiring between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    config: ModelConfig,
    layers: Vec<LayerParams<T>>,
    stem: ConvBn,
    blocks: Vec<Block>,
    head: [usize; 3],
    mode: Mode,
}

/// Tape handles produced by [`Model::forward_tape`].
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Var,
    /// `(layer index, weight, bias)`; the bias is absent for bias-free convolutions.
    pub bindings: Vec<(usize, Var, Option<Var>)>,
    /// `(layer index, output)` of every batch-norm application.
    pub norms: Vec<(usize, Var)>,
    /// Time length entering the stem, each block, and the global pooling.
    pub time_trace: Vec<usize>,
}

struct Builder<'r, T, R> {
    layers: Vec<LayerParams<T>>,
    conv_bias: bool,
    rng: &'r mut R,
}

impl<T: Scalar, R: Rng> Builder<'_, T, R> {
    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize, dilation: usize) -> ConvBn {
        let mut conv = LayerParams::conv1d(format!("{name}.conv"), cin, cout, k, self.rng);
        if !self.conv_bias {
            conv.bias = Tensor::zeros(&[0]);
        }
        self.layers.push(conv);
        self.layers.push(LayerParams::batchnorm1d(format!("{name}.bn"), cout));
        ConvBn {
            conv: self.layers.len() - 2,
            bn: self.layers.len() - 1,
            dilation,
        }
    }

    fn linear(&mut self, name: &str, n: usize, m: usize) -> usize {
        self.layers.push(LayerParams::linear(name, n, m, self.rng));
        self.layers.len() - 1
    }
}

/// Residual network: stem, then M blocks of three k=3 conv+BN stages with an
/// optional 1×1 conv+BN skip, pooled by 4 between blocks and globally at the end,
/// followed by three linear layers.
pub fn build_res_tssdnet<T: Scalar>(config: &ModelConfig, rng: &mut impl Rng) -> Result<Model<T>, ModelError> {
    if config.family != Family::Res {
        return Err(ModelError::Config("build_res_tssdnet needs family = res".into()));
    }
    Model::build(config, rng)
}

/// Inception network: stem, then M blocks of parallel dilated k=3 conv+BN+ReLU
/// branches concatenated along channels, pooled like the residual family.
pub fn build_inc_tssdnet<T: Scalar>(config: &ModelConfig, rng: &mut impl Rng) -> Result<Model<T>, ModelError> {
    if config.family != Family::Inc {
        return Err(ModelError::Config("build_inc_tssdnet needs family = inc".into()));
    }
    Model::build(config, rng)
}

impl<T: Scalar> Model<T> {
    /// Builds either family with freshly initialised parameters.
    pub fn build(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let mut b = Builder {
            layers: Vec::new(),
            conv_bias: config.conv_bias,
            rng,
        };
        let stem = b.conv_bn("stem", 1, config.stem_channels, config.stem_kernel, 1);
        let mut cin = config.stem_channels;
        let mut blocks = Vec::with_capacity(config.blocks());
        for (i, &c) in config.channels.iter().enumerate() {
            let name = format!("block{}", i + 1);
            match config.family {
                Family::Res => {
                    let main = [
                        b.conv_bn(&format!("{name}.main1"), cin, c, 3, 1),
                        b.conv_bn(&format!("{name}.main2"), c, c, 3, 1),
                        b.conv_bn(&format!("{name}.main3"), c, c, 3, 1),
                    ];
                    let skip = config
                        .use_skip
                        .then(|| b.conv_bn(&format!("{name}.skip"), cin, c, 1, 1));
                    blocks.push(Block::Res { main, skip });
                    cin = c;
                }
                Family::Inc => {
                    let branches = config
                        .dilations
                        .iter()
                        .enumerate()
                        .map(|(j, &d)| b.conv_bn(&format!("{name}.branch{}", j + 1), cin, c, 3, d))
                        .collect();
                    blocks.push(Block::Inc { branches });
                    cin = c * config.branches;
                }
            }
        }
        let [h1, h2] = config.fc;
        let head = [b.linear("fc1", cin, h1), b.linear("fc2", h1, h2), b.linear("fc3", h2, 2)];
        Ok(Self {
            config: config.clone(),
            layers: b.layers,
            stem,
            blocks,
            head,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Drops every stored parameter gradient.
    pub fn clear_grads(&mut self) {
        for l in &mut self.layers {
            l.weight.clear_grad();
            l.bias.clear_grad();
        }
    }

    /// Trainable entries: every weight, bias, γ and β. Running statistics are excluded.
    pub fn count_parameters(&self) -> usize {
        self.layers.iter().map(LayerParams::parameter_count).sum()
    }

    /// Trainable tensors in a fixed order, named `<layer>.weight` / `<layer>.bias`.
    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push((format!("{}.weight", layer.name), &mut layer.weight));
            if !layer.bias.is_empty() {
                out.push((format!("{}.bias", layer.name), &mut layer.bias));
            }
        }
        out
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push((format!("{}.weight", layer.name), &layer.weight));
            if !layer.bias.is_empty() {
                out.push((format!("{}.bias", layer.name), &layer.bias));
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layers: self.layers.iter().map(LayerParams::cast).collect(),
            stem: self.stem,
            blocks: self.blocks.clone(),
            head: self.head,
            mode: self.mode,
        }
    }

    /// Records a forward pass in the model's current mode. `input` must be
    /// `B x 1 x input_length`.
    pub fn forward_tape(&self, tape: &mut Tape<T>, input: Var) -> Result<ForwardPass, ModelError> {
        self.forward_in_mode(tape, input, self.mode)
    }

    fn forward_in_mode(&self, tape: &mut Tape<T>, input: Var, mode: Mode) -> Result<ForwardPass, ModelError> {
        let shape = tape.value(input).shape().to_vec();
        match *shape.as_slice() {
            [b, 1, l] if b > 0 && l == self.config.input_length => {}
            _ => {
                return Err(ModelError::Input(format!(
                    "expected batch x 1 x {} input, got {:?}",
                    self.config.input_length, shape
                )))
            }
        }
        let bindings: Vec<(usize, Var, Option<Var>)> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let w = tape.param(l.weight.clone());
                let b = (!l.bias.is_empty()).then(|| tape.param(l.bias.clone()));
                (i, w, b)
            })
            .collect();
        let mut pass = Forward {
            model: self,
            tape,
            bindings: &bindings,
            norms: Vec::new(),
            mode,
        };
        let mut trace = vec![shape[2]];

        let mut x = pass.conv_bn(input, self.stem)?;
        x = pass.tape.relu(x)?;
        x = pass.tape.max_pool1d(x, POOL)?;
        for (i, block) in self.blocks.iter().enumerate() {
            trace.push(pass.tape.value(x).shape()[2]);
            x = pass.block(x, block)?;
            x = if i + 1 < self.blocks.len() {
                pass.tape.max_pool1d(x, POOL)?
            } else {
                pass.tape.global_max_pool(x)?
            };
        }
        for (k, &layer) in self.head.iter().enumerate() {
            let (_, w, b) = bindings[layer];
            x = pass.tape.linear(x, w, b.expect("linear layers carry a bias"))?;
            if k < 2 {
                x = pass.tape.relu(x)?;
            }
        }
        let norms = pass.norms;
        Ok(ForwardPass {
            logits: x,
            bindings,
            norms,
            time_trace: trace,
        })
    }

    /// Folds the batch statistics of a training-mode pass into the running estimates.
    pub fn update_running_stats(&mut self, tape: &Tape<T>, pass: &ForwardPass) {
        for &(layer, out) in &pass.norms {
            if let Some((mean, var)) = tape.batch_stats(out) {
                self.layers[layer].update_running(mean, var);
            }
        }
    }

    /// Copies parameter gradients from a backward sweep into each tensor's grad buffer.
    pub fn store_gradients(&mut self, grads: &Gradients<T>, pass: &ForwardPass) {
        for &(layer, w, b) in &pass.bindings {
            let l = &mut self.layers[layer];
            let gw = grads.get(w).map_or_else(|| vec![T::zero(); l.weight.len()], <[T]>::to_vec);
            l.weight.set_grad(gw).expect("gradient mirrors weight");
            if let Some(b) = b {
                let gb = grads.get(b).map_or_else(|| vec![T::zero(); l.bias.len()], <[T]>::to_vec);
                l.bias.set_grad(gb).expect("gradient mirrors bias");
            }
        }
    }

    /// Forward pass in the current mode, returning `B x 2` logits. In training mode
    /// the running statistics are updated.
    pub fn forward(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let pass = self.forward_tape(&mut tape, x)?;
        if self.mode == Mode::Train {
            self.update_running_stats(&tape, &pass);
        }
        Ok(tape.value(pass.logits).clone())
    }

    /// Evaluation-mode logits, leaving the model untouched.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let pass = self.forward_in_mode(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(pass.logits).clone())
    }
}

struct Forward<'a, T: Scalar> {
    model: &'a Model<T>,
    tape: &'a mut Tape<T>,
    bindings: &'a [(usize, Var, Option<Var>)],
    norms: Vec<(usize, Var)>,
    mode: Mode,
}

impl<T: Scalar> Forward<'_, T> {
    fn conv_bn(&mut self, x: Var, cb: ConvBn) -> Result<Var, ModelError> {
        let (_, w, b) = self.bindings[cb.conv];
        let y = self.tape.conv1d(x, w, b, cb.dilation)?;
        let bn = &self.model.layers[cb.bn];
        debug_assert_eq!(bn.kind, LayerKind::BatchNorm1d);
        let (_, gamma, beta) = self.bindings[cb.bn];
        let beta = beta.expect("batch norm carries beta");
        let out = match self.mode {
            Mode::Train => self
                .tape
                .batch_norm(y, gamma, beta, NormMode::Train { eps: bn.epsilon })?,
            Mode::Eval => {
                let r = bn
                    .running
                    .as_ref()
                    .ok_or_else(|| NnError::MissingRunningStats(bn.name.clone()))?;
                self.tape.batch_norm(
                    y,
                    gamma,
                    beta,
                    NormMode::Eval {
                        mean: r.mean.values(),
                        var: r.var.values(),
                        eps: bn.epsilon,
                    },
                )?
            }
        };
        self.norms.push((cb.bn, out));
        Ok(out)
    }

    fn block(&mut self, x: Var, block: &Block) -> Result<Var, ModelError> {
        match block {
            Block::Res { main, skip } => {
                let mut h = self.conv_bn(x, main[0])?;
                h = self.tape.relu(h)?;
                h = self.conv_bn(h, main[1])?;
                h = self.tape.relu(h)?;
                h = self.conv_bn(h, main[2])?;
                if let Some(skip) = skip {
                    let s = self.conv_bn(x, *skip)?;
                    h = self.tape.add(h, s)?;
                }
                Ok(self.tape.relu(h)?)
            }
            Block::Inc { branches } => {
                let mut outs = Vec::with_capacity(branches.len());
                for &cb in branches {
                    let h = self.conv_bn(x, cb)?;
                    outs.push(self.tape.relu(h)?);
                }
                Ok(self.tape.concat_channels(&outs)?)
            }
        }
    }
}
