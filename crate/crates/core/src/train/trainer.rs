use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::adam::{clip_global_norm, Adam, AdamConfig};
use super::config::TrainConfig;
use super::early_stop::{EarlyStopping, StopDecision};
use crate::autodiff::{Tape, Tensor};
use crate::data::StudentSequence;
use crate::error::{Error, Result};
use crate::eval::predict_all;
use crate::model::{build_sequence, joint_loss_sum, ModelConfig, QiktParams};
use crate::rng::stream;

const INIT_TAG: u64 = 0x696e_6974;
const EPOCH_TAG: u64 = 0x6570_6f63;

/// Seed for parameter initialisation of the run described by `cfg`.
pub fn init_seed(cfg: &TrainConfig) -> u64 {
    stream(cfg.seed, &[INIT_TAG, cfg.stream]).gen()
}

/// Summed joint loss of one sequence and its gradient for every tensor in
/// canonical order.
pub fn sequence_gradient(params: &QiktParams, seq: &StudentSequence) -> Result<(f64, usize, Vec<Tensor>)> {
    let mut tape = Tape::with_capacity(seq.len() * 128);
    let nodes = params.register(&mut tape);
    let steps = build_sequence(&mut tape, &nodes, &params.config, &seq.interactions)?;
    let targets: Vec<u8> = seq.interactions[1..].iter().map(|it| it.response).collect();
    let cfg = &params.config;
    let loss = joint_loss_sum(&mut tape, &steps, &targets, cfg.lambda, cfg.variant)?;
    let value = tape.scalar(loss)?;
    let mut grads = tape.backward(loss)?;
    let tensors = params.tensors();
    let g = nodes
        .ordered
        .iter()
        .zip(&tensors)
        .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, steps.len(), g))
}

/// Mean loss and gradient over every prediction in a batch.
///
/// Fixed groups of sequences are differentiated in parallel and summed in
/// batch order, so the result does not depend on thread scheduling. Averaging
/// over the total prediction count equals a padded batch with masked targets.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub predictions: usize,
    pub grads: Vec<Tensor>,
}

const GROUP: usize = 8;

fn accumulate(acc: &mut (f64, usize, Vec<Tensor>), part: (f64, usize, Vec<Tensor>)) {
    acc.0 += part.0;
    acc.1 += part.1;
    for (a, g) in acc.2.iter_mut().zip(&part.2) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += y;
        }
    }
}

fn group_gradient(params: &QiktParams, group: &[&StudentSequence]) -> Result<(f64, usize, Vec<Tensor>)> {
    let mut acc = sequence_gradient(params, group[0])?;
    for seq in &group[1..] {
        accumulate(&mut acc, sequence_gradient(params, seq)?);
    }
    Ok(acc)
}

pub fn batch_gradient(params: &QiktParams, batch: &[&StudentSequence]) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let parts: Vec<(f64, usize, Vec<Tensor>)> = batch
        .par_chunks(GROUP)
        .map(|group| group_gradient(params, group))
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let mut acc = iter.next().expect("non-empty batch");
    for part in iter {
        accumulate(&mut acc, part);
    }
    let (loss, count, mut grads) = acc;
    let scale = 1.0 / count as f64;
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok(BatchGradient {
        loss: loss * scale,
        predictions: count,
        grads,
    })
}

/// Owns the parameters and optimiser state of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    params: QiktParams,
    adam: Adam,
    config: TrainConfig,
    names: Vec<String>,
}

impl Trainer {
    pub fn new(params: QiktParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                beta1: config.adam_beta1,
                beta2: config.adam_beta2,
                eps: config.adam_eps,
            },
            params.tensors(),
        );
        let names = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        Ok(Self {
            params,
            adam,
            config,
            names,
        })
    }

    pub fn params(&self) -> &QiktParams {
        &self.params
    }

    pub fn into_params(self) -> QiktParams {
        self.params
    }

    pub fn updates(&self) -> u64 {
        self.adam.t
    }

    /// One optimiser update; returns the batch loss measured before it.
    pub fn step(&mut self, batch: &[&StudentSequence]) -> Result<f64> {
        let BatchGradient { loss, mut grads, .. } = batch_gradient(&self.params, batch)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "loss diverged to {loss} after {} updates",
                self.adam.t
            )));
        }
        if let Some(max) = self.config.clip_norm {
            if grads.iter().all(Tensor::is_finite) {
                clip_global_norm(&mut grads, max);
            }
        }
        let mut tensors = self.params.tensors_mut();
        self.adam.step(&mut tensors, &grads, &self.names)?;
        Ok(loss)
    }

    /// Shuffles with the `(seed, stream, epoch)` RNG and takes one pass of
    /// mini-batches. Returns the prediction-weighted mean training loss.
    pub fn run_epoch(&mut self, train: &[StudentSequence], epoch: usize) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Contract("empty training set".into()));
        }
        let mut order: Vec<&StudentSequence> = train.iter().collect();
        order.shuffle(&mut stream(self.config.seed, &[EPOCH_TAG, self.config.stream, epoch as u64]));
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(self.config.batch_size) {
            let n: usize = batch.iter().map(|s| s.len() - 1).sum();
            total += self.step(batch)? * n as f64;
            count += n;
        }
        Ok(total / count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_valid_auc: f64,
    pub updates: u64,
    pub epochs: Vec<EpochLog>,
}

impl TrainReport {
    pub fn write_epochs_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_loss", "valid_auc", "best"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:?}", e.train_loss),
                format!("{:?}", e.valid_auc),
                u8::from(e.epoch == self.best_epoch).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Report plus the parameters of the best validation epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub best: QiktParams,
}

/// Training loop with a caller-supplied validation score, evaluated after
/// every epoch on the current parameters.
pub fn train_with<F>(
    model: &ModelConfig,
    config: &TrainConfig,
    train: &[StudentSequence],
    mut validate: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &QiktParams) -> Result<f64>,
{
    model.validate()?;
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let params = QiktParams::init(model.clone(), init_seed(config));
    let mut best = params.clone();
    let mut trainer = Trainer::new(params, config.clone())?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut epochs = Vec::new();
    for epoch in 1..=config.max_epochs {
        let train_loss = trainer.run_epoch(train, epoch)?;
        let valid_auc = validate(epoch, trainer.params())?;
        epochs.push(EpochLog {
            epoch,
            train_loss,
            valid_auc,
        });
        match stopper.observe(valid_auc) {
            StopDecision::Improved => best = trainer.params().clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    Ok(TrainOutcome {
        report: TrainReport {
            best_epoch: stopper.best_epoch,
            epochs_run: epochs.len(),
            best_valid_auc: stopper.best_score.unwrap_or(f64::NAN),
            updates: trainer.updates(),
            epochs,
        },
        best,
    })
}

/// Trains on `train`, early-stopping on AUC over `valid`.
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    train: &[StudentSequence],
    valid: &[StudentSequence],
) -> Result<TrainOutcome> {
    if valid.is_empty() {
        return Err(Error::Contract("empty validation set".into()));
    }
    train_with(model, config, train, |_, p| predict_all(p, valid)?.auc())
}
