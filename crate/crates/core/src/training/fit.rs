use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use super::adam::{decay_lr, AdamState};
use super::loss::{class_weights, wce_loss};
use super::mixup::{mixup_batch, mixup_loss, sample_beta};
use super::TrainError;
use crate::audio::{assemble_batch, UtteranceSource};
use crate::metrics::{compute_eer, score_from_logits, ScoreEntry, ScoreSet};
use crate::models::{Checkpoint, Mode, Model, ModelError};
use crate::nn::{NnError, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossMode {
    /// Class-weighted cross-entropy with weights from the training set's class counts.
    Weighted,
    /// Plain cross-entropy on mixup pairs, `λ ~ Beta(alpha, alpha)`.
    Mixup { alpha: f64 },
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossMode::Weighted => f.write_str("wce"),
            LossMode::Mixup { alpha } => write!(f, "mixup(alpha={alpha})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub loss: LossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 100,
            base_lr: 1e-3,
            lr_decay: 0.95,
            loss: LossMode::Weighted,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidArgument(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base learning rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if let LossMode::Mixup { alpha } = self.loss {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return bad("mixup alpha must be positive");
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// Counted from 1.
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's applied steps.
    pub loss: f64,
    pub dev_eer: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={} loss={} dev_eer={}",
            self.epoch, self.lr, self.loss, self.dev_eer
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Model and optimizer state of the epoch with the lowest dev EER.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_eer: f64,
    pub logs: Vec<EpochLog>,
    /// Parameters after the final epoch.
    pub last: Model<f32>,
    /// Training examples visited per epoch, in order.
    pub visits: Vec<Vec<usize>>,
}

/// Evaluation-mode scores of every utterance in `source`, in order.
pub fn score_utterances<S: UtteranceSource + ?Sized>(
    model: &Model<f32>,
    source: &S,
    batch_size: usize,
) -> Result<ScoreSet, TrainError> {
    if batch_size == 0 {
        return Err(TrainError::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut entries = Vec::with_capacity(source.len());
    let order: Vec<usize> = (0..source.len()).collect();
    for chunk in order.chunks(batch_size) {
        let batch = assemble_batch(source, chunk)?;
        let logits = model.infer(&batch.inputs)?;
        for (k, row) in logits.values().chunks(2).enumerate() {
            entries.push(ScoreEntry {
                id: batch.ids[k].clone(),
                score: score_from_logits(row)?,
                label: batch.labels[k],
            });
        }
    }
    Ok(ScoreSet { entries })
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::NonFiniteGradient(_)
            | TrainError::Nn(NnError::NonFinite(_))
            | TrainError::Model(ModelError::Nn(NnError::NonFinite(_)))
    )
}

/// One forward/backward/update on a batch. Returns the batch loss.
#[allow(clippy::too_many_arguments)]
fn train_step<R: Rng + ?Sized>(
    model: &mut Model<f32>,
    adam: &mut AdamState,
    inputs: &Tensor<f32>,
    labels: &[crate::Label],
    cfg: &TrainConfig,
    weights: &super::ClassWeights,
    lr: f64,
    rng: &mut R,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let (x, loss) = match cfg.loss {
        LossMode::Weighted => {
            let x = tape.constant(inputs.clone());
            let pass = model.forward_tape(&mut tape, x)?;
            let lp = tape.log_softmax(pass.logits)?;
            (pass, wce_loss(&mut tape, lp, labels, weights)?)
        }
        LossMode::Mixup { alpha } => {
            let lambda = sample_beta(alpha, rng)?;
            let mut perm: Vec<usize> = (0..labels.len()).collect();
            perm.shuffle(rng);
            let (mixed, partners) = mixup_batch(inputs, labels, lambda, &perm)?;
            let x = tape.constant(mixed);
            let pass = model.forward_tape(&mut tape, x)?;
            let lp = tape.log_softmax(pass.logits)?;
            (pass, mixup_loss(&mut tape, lp, labels, &partners, lambda)?)
        }
    };
    let pass = x;
    let value = tape.value(loss).values()[0] as f64;
    let grads = tape.backward(loss)?;
    model.store_gradients(&grads, &pass);
    adam.step(model, lr)?;
    model.update_running_stats(&tape, &pass);
    Ok(value)
}

/// Trains `model` on `train`, scoring `dev` after every epoch and keeping the
/// epoch with the lowest dev EER (the earliest one on ties). `on_epoch` sees each
/// log line as it is produced.
pub fn fit<S, D, R>(
    mut model: Model<f32>,
    train: &S,
    dev: &D,
    cfg: &TrainConfig,
    rng: &mut R,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome, TrainError>
where
    S: UtteranceSource + ?Sized,
    D: UtteranceSource + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Data("training set is empty".into()));
    }
    if dev.is_empty() {
        return Err(TrainError::Data("dev set is empty".into()));
    }
    let (dev_spoof, dev_bona) = dev.class_counts();
    if dev_spoof == 0 || dev_bona == 0 {
        return Err(TrainError::Data("dev set needs both classes for an EER".into()));
    }
    let (spoof, bona) = train.class_counts();
    if spoof + bona != train.len() {
        return Err(TrainError::Data("training set contains unlabelled utterances".into()));
    }
    let weights = match cfg.loss {
        LossMode::Weighted => class_weights(spoof, bona)?,
        LossMode::Mixup { .. } => super::ClassWeights::UNIFORM,
    };
    log::info!("training with loss {} on {} utterances", cfg.loss, train.len());

    let mut adam = AdamState::new(&model, cfg.base_lr);
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut logs = Vec::with_capacity(cfg.max_epochs);
    let mut visits = Vec::with_capacity(cfg.max_epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let lr = decay_lr(cfg.base_lr, cfg.lr_decay, epoch);
        model.set_mode(Mode::Train);
        order.shuffle(rng);
        let (mut total, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = assemble_batch(train, chunk)?;
            match train_step(&mut model, &mut adam, &batch.inputs, &batch.labels, cfg, &weights, lr, rng) {
                Ok(l) => {
                    total += l;
                    steps += 1;
                }
                Err(e) if is_non_finite(&e) => {
                    log::warn!("epoch {}: skipped batch: {e}", epoch + 1);
                }
                Err(e) => return Err(e),
            }
        }
        visits.push(order.clone());
        model.set_mode(Mode::Eval);
        let scores = score_utterances(&model, dev, cfg.batch_size)?;
        let eer = compute_eer(&scores)?.eer;
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: if steps > 0 { total / steps as f64 } else { f64::NAN },
            dev_eer: eer,
        };
        on_epoch(&entry);
        logs.push(entry);
        if best.as_ref().is_none_or(|(_, b, _)| eer < *b) {
            best = Some((
                epoch + 1,
                eer,
                Checkpoint {
                    model: {
                        let mut snapshot = model.clone();
                        snapshot.set_mode(Mode::Eval);
                        snapshot.clear_grads();
                        snapshot
                    },
                    optimizer: Some(adam.snapshot()),
                },
            ));
        }
    }
    let (best_epoch, best_eer, best) = best.expect("at least one epoch ran");
    Ok(FitOutcome {
        best,
        best_epoch,
        best_eer,
        logs,
        last: model,
        visits,
    })
}
