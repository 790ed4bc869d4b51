use crate::error::{Error, Result};

use super::TrainConfig;

/// Which validation perplexity a new value is compared with.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum Compare {
    #[default]
    Best,
    Previous,
}

impl Compare {
    pub fn name(self) -> &'static str {
        match self {
            Compare::Best => "best",
            Compare::Previous => "previous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "best" => Ok(Compare::Best),
            "previous" => Ok(Compare::Previous),
            _ => Err(Error::Usage(format!("unknown comparison `{s}` (best|previous)"))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Learning rate held at its initial value.
    Plateau,
    /// Learning rate halved after every epoch; `completed` counts epochs
    /// trained since the trigger.
    Halving {
        completed: usize,
    },
    Done,
}

/// Learning-rate schedule state, part of [`super::TrainState`].
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub lr: f64,
    pub phase: Phase,
    pub best_valid_ppl: Option<f64>,
    pub last_valid_ppl: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ScheduleAction {
    Continue,
    Stop,
}

impl Schedule {
    pub fn new(initial_lr: f64) -> Self {
        Self { lr: initial_lr, phase: Phase::Plateau, best_valid_ppl: None, last_valid_ppl: None }
    }

    /// Feeds the validation perplexity of the epoch just trained.
    ///
    /// While on the plateau the rate stays put as long as perplexity improves
    /// by at least `plateau_threshold`; the first smaller improvement halves
    /// the rate and starts the halving phase, which halves once more after
    /// each epoch and stops after `halving_epochs` epochs.
    pub fn update(&mut self, valid_ppl: f64, cfg: &TrainConfig) -> Result<ScheduleAction> {
        if !valid_ppl.is_finite() {
            return Err(Error::Training(format!("validation perplexity is {valid_ppl}; cannot update the schedule")));
        }
        let reference = match cfg.compare {
            Compare::Best => self.best_valid_ppl,
            Compare::Previous => self.last_valid_ppl,
        };
        self.last_valid_ppl = Some(valid_ppl);
        self.best_valid_ppl = Some(self.best_valid_ppl.map_or(valid_ppl, |b| b.min(valid_ppl)));
        match self.phase {
            Phase::Plateau => {
                let stalled = reference.is_some_and(|r| r - valid_ppl < cfg.plateau_threshold);
                if !stalled {
                    return Ok(ScheduleAction::Continue);
                }
                if cfg.halving_epochs == 0 {
                    self.phase = Phase::Done;
                    return Ok(ScheduleAction::Stop);
                }
                self.lr /= 2.0;
                self.phase = Phase::Halving { completed: 0 };
                Ok(ScheduleAction::Continue)
            }
            Phase::Halving { completed } => {
                let completed = completed + 1;
                if completed >= cfg.halving_epochs {
                    self.phase = Phase::Done;
                    Ok(ScheduleAction::Stop)
                } else {
                    self.lr /= 2.0;
                    self.phase = Phase::Halving { completed };
                    Ok(ScheduleAction::Continue)
                }
            }
            Phase::Done => Ok(ScheduleAction::Stop),
        }
    }
}
