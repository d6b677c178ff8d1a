//! Adam and the training loop: seeded shuffling, augmentation, periodic
//! validation Dice, early stopping, and best-checkpoint restore.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, Dataset, Sample, Split};
use crate::error::{AruError, Result};
use crate::eval::metrics;
use crate::nn::{Network, ParamStore};
use crate::tensor::ops::bce_loss;
use crate::tensor::tape::Tape;
use crate::tensor::{Element, Mode};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Validate every this many epochs (the final epoch always validates).
    pub val_every: usize,
    /// Validation rounds without Dice improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            lr: 1e-4,
            batch_size: 8,
            val_every: 5,
            patience: 3,
            seed: 42,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.val_every == 0 || self.patience == 0 {
            return Err(AruError::InvalidArgument(
                "epochs, batch_size, val_every, patience must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(AruError::InvalidArgument(format!("bad learning rate {}", self.lr)));
        }
        if self.val_every > self.epochs {
            return Err(AruError::InvalidArgument(format!(
                "val_every {} exceeds epochs {}",
                self.val_every, self.epochs
            )));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam. Moments are kept in f64 regardless of the parameter
/// element type so the tiny-denominator arithmetic is stable in f32 training.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new<T: Element>(store: &ParamStore<T>) -> Self {
        let shapes: Vec<usize> = store.params().iter().map(|p| p.value.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step<T: Element>(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (pi, p) in store.params_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for i in 0..p.value.len() {
                let g = p.grad[i].as_f64();
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let w = p.value[i].as_f64() - lr * mhat / (vhat.sqrt() + ADAM_EPS);
                p.value[i] = T::from_f64(w);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_val_dice: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Mean validation Dice at threshold 0.5 (model selection criterion).
pub fn validation_dice<T: Element>(
    net: &mut Network<T>,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<f64> {
    let val = dataset.split(Split::Val);
    if val.is_empty() {
        return Err(AruError::Data("validation split is empty".into()));
    }
    let (h, w) = dataset.size;
    let mut total = 0.0;
    for chunk in val.chunks(batch_size) {
        let (x, _) = dataset.batch::<T>(chunk)?;
        let (p, _) = net.forward(&x, Mode::Eval, None)?;
        let data = p.data();
        for (i, s) in chunk.iter().enumerate() {
            let pred: Vec<u8> = data[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|v| u8::from(v.as_f64() > 0.5))
                .collect();
            total += metrics::dice(&pred, &s.mask)?.0;
        }
    }
    Ok(total / val.len() as f64)
}

/// Trains in place. Keeps the best-validation-Dice parameters (restored into
/// the network before returning) and optionally checkpoints them to disk.
pub fn train<T: Element>(
    net: &mut Network<T>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_samples: Vec<Sample> = dataset
        .split(Split::Train)
        .into_iter()
        .cloned()
        .collect();
    if train_samples.is_empty() {
        return Err(AruError::Data("train split is empty".into()));
    }
    if dataset.split(Split::Val).is_empty() {
        return Err(AruError::Data("validation split is empty".into()));
    }

    let (h, w) = dataset.size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&net.store);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<Vec<T>>)> = None;
    let mut rounds_without_improvement = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch_idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Sample> = batch_idx
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment::augment(&train_samples[i], h, w, rng.random())
                    } else {
                        train_samples[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&Sample> = batch.iter().collect();
            let (x, target) = dataset.batch::<T>(&refs)?;
            let tape = Tape::new();
            let (probs, trace) = net
                .forward(&x, Mode::Train, Some(&tape))
                .map_err(|e| with_step_context(e, epoch, step + 1))?;
            let loss = bce_loss(&probs, &target)?;
            let loss_value = loss.scalar_value()?.as_f64();
            if !loss_value.is_finite() {
                return Err(AruError::NonFinite {
                    op: "train",
                    context: Some(format!("loss at epoch {epoch}, step {}", step + 1)),
                });
            }
            let grads = tape.backward(&loss)?;
            net.store.zero_grads();
            net.store.absorb_grads(&trace.attached, &grads);
            adam.step(&mut net.store, cfg.lr);
            epoch_loss += loss_value * batch.len() as f64;
        }
        let train_loss = epoch_loss / train_samples.len() as f64;

        let mut val_dice = None;
        if epoch % cfg.val_every == 0 || epoch == cfg.epochs {
            let dice = validation_dice(net, dataset, cfg.batch_size)?;
            val_dice = Some(dice);
            let improved = best.as_ref().map_or(true, |(b, _, _)| dice > *b);
            if improved {
                let snapshot = net.store.params().iter().map(|p| p.value.clone()).collect();
                best = Some((dice, epoch, snapshot));
                rounds_without_improvement = 0;
                if let Some(path) = checkpoint_path {
                    net.save_checkpoint(
                        path,
                        &[
                            ("epoch".into(), epoch.to_string()),
                            ("val_dice".into(), dice.to_string()),
                        ],
                    )?;
                }
            } else {
                rounds_without_improvement += 1;
            }
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            val_dice,
        };
        on_epoch(&record);
        history.push(record);

        if rounds_without_improvement >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (best_val_dice, best_epoch, snapshot) =
        best.expect("final epoch always validates, so a best checkpoint exists");
    for (p, values) in net.store.params_mut().iter_mut().zip(&snapshot) {
        p.value.clone_from(values);
    }
    Ok(TrainOutcome {
        history,
        best_val_dice,
        best_epoch,
        stopped_early,
    })
}

/// Tags numeric failures with where in the run they happened.
fn with_step_context(e: AruError, epoch: usize, step: usize) -> AruError {
    match e {
        AruError::NonFinite { op, context } => {
            let at = format!("epoch {epoch}, step {step}");
            AruError::NonFinite {
                op,
                context: Some(context.map_or(at.clone(), |c| format!("{c}; {at}"))),
            }
        }
        other => other,
    }
}

/// history.csv: epoch, train_loss, val_dice (blank on non-validation epochs).
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut csv = String::from("epoch,train_loss,val_dice\n");
    for r in history {
        let vd = r.val_dice.map_or(String::new(), |d| format!("{d:.6}"));
        csv.push_str(&format!("{},{:.6},{}\n", r.epoch, r.train_loss, vd));
    }
    fs::write(path, csv)?;
    Ok(())
}
