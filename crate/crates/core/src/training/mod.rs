//! Teacher-forced optimisation: Adam with inverse-time learning-rate decay,
//! global-norm gradient clipping, validation-based early stopping and
//! best-checkpoint selection.

mod adam;
mod probe;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{make_batches, Batch, StoryExample};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Model, NormMode, Session};

pub use adam::Adam;
pub use probe::{overfit_probe, token_reproduction, ProbeConfig, ProbeOutcome};

/// How the `decay` hyperparameter is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `lr_t = lr0 / (1 + decay * t)` with `t` the number of prior updates.
    Schedule,
    /// Constant `lr0`; `decay` is an L2 penalty added to the gradient.
    Weight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Where to write `best.ckpt` whenever validation loss improves.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            decay: 1e-5,
            decay_mode: DecayMode::Schedule,
            batch_size: 36,
            patience: 5,
            max_epochs: 100,
            seed: 0,
            clip_norm: Some(5.0),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.decay < 0.0 {
            return Err(Error::Config("decay must be non-negative".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for the update following `step` earlier updates.
    pub fn learning_rate(&self, step: u64) -> f64 {
        match self.decay_mode {
            DecayMode::Schedule => learning_rate(self.lr, self.decay, step),
            DecayMode::Weight => self.lr,
        }
    }

    fn weight_decay(&self) -> f64 {
        match self.decay_mode {
            DecayMode::Schedule => 0.0,
            DecayMode::Weight => self.decay,
        }
    }
}

pub fn learning_rate(lr0: f64, decay: f64, step: u64) -> f64 {
    lr0 / (1.0 + decay * step as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strictly lower
/// validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if loss >= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::NoImprovement
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss,lr`. Wall time is left out so identical
    /// runs write identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e}",
                e.epoch, e.train_loss, e.val_loss, e.lr
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model and optimizer state at the best validation epoch.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: TrainHistory,
    pub stopped_early: bool,
}

fn mix_seed(seed: u64, tag: &str, n: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(n.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// One optimizer update on `batch`. Returns the batch loss before the update.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &Batch,
    cfg: &TrainConfig,
    dropout_seed: Option<u64>,
    norm: NormMode,
) -> Result<f64> {
    let (loss, mut grads, observed) = {
        let mut session = Session::new(model, dropout_seed, norm);
        let fwd = session.forward(batch)?;
        let loss = session.batch_loss(batch, &fwd)?;
        let grads = session.tape.backward(loss);
        (session.tape.scalar(loss), grads, session.take_observed())
    };
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            step: adam.step(),
            value: loss,
        });
    }
    if let Some(limit) = cfg.clip_norm {
        let norm = grads.global_norm();
        if norm > limit {
            grads.scale(limit / norm);
        }
    }
    let lr = cfg.learning_rate(adam.step());
    adam.update(model.params_mut(), &grads, lr, cfg.weight_decay());
    model.update_norms(&observed);
    Ok(loss)
}

/// Mean per-story loss in eval mode (no dropout, frozen batch norm).
pub fn evaluate_loss(model: &Model, dataset: &[StoryExample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut total = 0.0;
    for batch in make_batches(dataset, 32, None)? {
        let mut session = Session::eval(model);
        let fwd = session.forward(&batch)?;
        total += session.story_losses(&batch, &fwd).iter().sum::<f64>();
    }
    Ok(total / dataset.len() as f64)
}

pub fn train(
    model: Model,
    train_set: &[StoryExample],
    val_set: &[StoryExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_from(Checkpoint::new(model), train_set, val_set, cfg)
}

/// Continues from a checkpoint, reusing its optimizer state when present.
pub fn train_from(
    start: Checkpoint,
    train_set: &[StoryExample],
    val_set: &[StoryExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty("training or validation set"));
    }
    let mut model = start.model;
    let mut adam = match start.optimizer {
        Some(state) => Adam::from_state(model.params(), state)?,
        None => Adam::new(model.params()),
    };
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut best = Checkpoint {
        model: model.clone(),
        optimizer: Some(adam.state()),
        manifest: start.manifest.clone(),
    };
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let batches = make_batches(train_set, cfg.batch_size, Some(mix_seed(cfg.seed, "order", epoch as u64)))?;
        let mut weighted = 0.0;
        let mut tokens = 0usize;
        for batch in &batches {
            let seed = mix_seed(cfg.seed, "dropout", adam.step());
            let loss = train_step(&mut model, &mut adam, batch, cfg, Some(seed), NormMode::Batch)
                .map_err(|e| match e {
                    Error::Diverged { step, value, .. } => Error::Diverged { epoch, step, value },
                    other => other,
                })?;
            weighted += loss * batch.num_targets() as f64;
            tokens += batch.num_targets();
        }
        let train_loss = weighted / tokens as f64;
        let val_loss = evaluate_loss(&model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: adam.step(),
                value: val_loss,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: cfg.learning_rate(adam.step()),
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train {train_loss:.4} val {val_loss:.4} ({:.1}s)",
            started.elapsed().as_secs_f64()
        );

        let decision = stopper.observe(epoch, val_loss);
        if decision == StopDecision::Improved {
            best = Checkpoint {
                model: model.clone(),
                optimizer: Some(adam.state()),
                manifest: start.manifest.clone(),
            };
            if let Some(dir) = &cfg.checkpoint_dir {
                best.save(&dir.join("best.ckpt"))?;
            }
        }
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        best,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        history,
        stopped_early,
    })
}
