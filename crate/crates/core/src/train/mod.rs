//! Mini-batch SGD with momentum and weight decay, the validation-driven
//! learning-rate schedule, perplexity, and gradient checking.
//!
//! The loss is the mean cross-entropy per frame of a batch, so the learning
//! rate does not have to change with the batch size.

mod gradcheck;
mod schedule;
mod sgd;

use std::fmt::Write as _;

pub use gradcheck::{
    check_gradient, floored_relative_error, grad_check, grad_check_against, relative_error, GradCheckOptions,
    GradCheckReport, TensorCheck,
};
pub use schedule::{Compare, Phase, Schedule, ScheduleAction};
pub use sgd::{sgd_step, Momentum};

use crate::data::{pack_minibatch, Corpus};
use crate::error::{Error, Result};
use crate::math::sub_seed;
use crate::network::{frame_nll, loss_and_gradients, InputKind, Model};
use crate::parallel::{map_range, Exec};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Smallest validation improvement that keeps the rate on the plateau.
    pub plateau_threshold: f64,
    pub halving_epochs: usize,
    pub compare: Compare,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_taps: bool,
    pub decay_biases: bool,
    /// Rescale gradients whose global norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Sequences per mini-batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.4,
            plateau_threshold: 1.0,
            halving_epochs: 6,
            compare: Compare::Best,
            momentum: 0.9,
            weight_decay: 4e-5,
            decay_taps: false,
            decay_biases: false,
            clip_norm: None,
            batch_size: 200,
            max_epochs: 30,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.initial_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if self.plateau_threshold.is_nan() || self.plateau_threshold < 0.0 {
            return bad(format!("plateau threshold must be >= 0, got {}", self.plateau_threshold));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    /// Completed epochs.
    pub epoch: usize,
    pub schedule: Schedule,
    pub momentum: Momentum<T>,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: &Model<T>, cfg: &TrainConfig) -> Self {
        Self { epoch: 0, schedule: Schedule::new(cfg.initial_lr), momentum: Momentum::zeros(model) }
    }
}

/// Applies the schedule to the validation perplexity of the epoch just
/// finished.
pub fn lr_schedule_update<T>(
    state: &mut TrainState<T>,
    new_valid_ppl: f64,
    cfg: &TrainConfig,
) -> Result<ScheduleAction> {
    state.schedule.update(new_valid_ppl, cfg)
}

fn window_of<T: Real>(model: &Model<T>) -> Result<usize> {
    match model.spec().input_kind() {
        InputKind::Tokens { window } => Ok(window),
        InputKind::Features { .. } => {
            Err(Error::Usage("language-model training needs a model with a projection input".into()))
        }
    }
}

fn check_vocab<T: Real>(model: &Model<T>, corpus: &Corpus) -> Result<()> {
    let v = model.spec().vocab();
    match corpus.max_id() {
        Some(m) if m as usize >= v => Err(Error::Input(format!(
            "{} corpus uses token id {m} but the model vocabulary has {v} entries",
            corpus.split
        ))),
        _ => Ok(()),
    }
}

/// Total negative log-likelihood (natural log) and frame count. Batches are
/// evaluated independently, in parallel when enabled.
pub fn corpus_nll<T: Real>(model: &Model<T>, corpus: &Corpus, batch_size: usize) -> Result<(f64, usize)> {
    let window = window_of(model)?;
    check_vocab(model, corpus)?;
    let start = model.spec().vocab() as u32;
    let batches: Vec<_> = pack_minibatch::<T>(corpus, batch_size.max(1), None, window, start)?.collect();
    let parts = map_range(Exec::Auto, batches.len(), usize::MAX, |i| frame_nll(model, &batches[i]));
    let mut total = 0.0f64;
    let mut frames = 0usize;
    // one running sum in corpus order, so the batch size cannot change it
    for p in parts {
        for x in p? {
            total += x;
            frames += 1;
        }
    }
    Ok((total, frames))
}

/// `exp(mean negative log-likelihood per token)`.
pub fn perplexity<T: Real>(model: &Model<T>, corpus: &Corpus, batch_size: usize) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::input(format!("cannot evaluate perplexity on an empty {} corpus", corpus.split)));
    }
    let (nll, frames) = corpus_nll(model, corpus, batch_size)?;
    Ok((nll / frames as f64).exp())
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used during the epoch.
    pub lr: f64,
    /// Frame-weighted mean training cross-entropy.
    pub train_loss: f64,
    pub valid_ppl: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub const HEADER: &'static str = "epoch,lr,train_loss,valid_ppl";

    /// CSV with a header line. Floats use Rust's shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.records {
            let _ = writeln!(s, "{}", Self::csv_row(r));
        }
        s
    }

    pub fn csv_row(r: &EpochRecord) -> String {
        format!("{},{},{},{}", r.epoch, r.lr, r.train_loss, r.valid_ppl)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    MaxEpochs,
    Schedule,
    /// Training produced non-finite values; the model is the one from the end
    /// of the last good epoch.
    Diverged(String),
}

pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub state: TrainState<T>,
    pub history: History,
    pub stop: StopReason,
}

/// Called after every epoch with the updated model, state and record.
pub type EpochHook<'a, T> = dyn FnMut(&Model<T>, &TrainState<T>, &EpochRecord) -> Result<()> + 'a;

fn run_epoch<T: Real>(
    model: &mut Model<T>,
    state: &mut TrainState<T>,
    train: &Corpus,
    cfg: &TrainConfig,
    window: usize,
) -> Result<f64> {
    let lr = state.schedule.lr;
    let seed = sub_seed(cfg.seed, &[0x7261_696e, state.epoch as u64]);
    let start = model.spec().vocab() as u32;
    let mut loss_sum = 0.0f64;
    let mut frames = 0usize;
    for batch in pack_minibatch::<T>(train, cfg.batch_size, Some(seed), window, start)? {
        let (loss, grads) = loss_and_gradients(model, &batch)?;
        let loss = loss.to_f64();
        if !loss.is_finite() {
            return Err(Error::Training(format!("training loss became {loss}")));
        }
        sgd_step(model, &grads, &mut state.momentum, lr, cfg)?;
        loss_sum += loss * batch.frames() as f64;
        frames += batch.frames();
    }
    Ok(loss_sum / frames as f64)
}

/// Trains until the schedule stops, `max_epochs` is reached, or training
/// diverges. Pass a saved `state` to resume.
pub fn train_loop<T: Real>(
    mut model: Model<T>,
    train: &Corpus,
    valid: &Corpus,
    cfg: &TrainConfig,
    state: Option<TrainState<T>>,
    on_epoch: &mut EpochHook<'_, T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::input("training and validation corpora must be nonempty"));
    }
    let window = window_of(&model)?;
    check_vocab(&model, train)?;
    check_vocab(&model, valid)?;
    let mut state = state.unwrap_or_else(|| TrainState::new(&model, cfg));
    let mut history = History::default();
    let mut stop = StopReason::MaxEpochs;
    while state.epoch < cfg.max_epochs {
        if state.schedule.phase == Phase::Done {
            stop = StopReason::Schedule;
            break;
        }
        let good = (model.clone(), state.clone());
        let lr = state.schedule.lr;
        let result = run_epoch(&mut model, &mut state, train, cfg, window).and_then(|loss| {
            let ppl = perplexity(&model, valid, cfg.batch_size)?;
            if ppl.is_finite() {
                Ok((loss, ppl))
            } else {
                Err(Error::Training(format!("validation perplexity became {ppl}")))
            }
        });
        let (train_loss, valid_ppl) = match result {
            Ok(v) => v,
            Err(Error::Training(msg)) => {
                (model, state) = good;
                stop = StopReason::Diverged(msg);
                break;
            }
            Err(e) => return Err(e),
        };
        state.epoch += 1;
        let record = EpochRecord { epoch: state.epoch, lr, train_loss, valid_ppl };
        history.records.push(record);
        let action = lr_schedule_update(&mut state, valid_ppl, cfg)?;
        on_epoch(&model, &state, &record)?;
        if action == ScheduleAction::Stop {
            stop = StopReason::Schedule;
            break;
        }
    }
    Ok(TrainOutcome { model, state, history, stop })
}

#[cfg(test)]
mod tests;
