use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Early,
    MaxEpochs,
}

/// Validation-loss watcher.
///
/// An epoch improves when its loss is below `best - min_delta`; training
/// halts once `patience` consecutive epochs fail to improve.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: Option<(usize, f64)>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        EarlyStopping {
            patience,
            min_delta,
            best: None,
            wait: 0,
        }
    }

    /// Records epoch `epoch`; returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        match self.best {
            // a NaN loss never improves
            Some((_, best)) if (best - loss).is_nan() || best - loss <= self.min_delta => self.wait += 1,
            _ => {
                self.best = Some((epoch, loss));
                self.wait = 0;
            }
        }
        self.wait >= self.patience
    }

    /// Whether the most recent observation set a new best.
    pub fn improved(&self) -> bool {
        self.best.is_some() && self.wait == 0
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}

/// Outcome of replaying a validation-loss sequence through [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopOutcome {
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub reason: StopReason,
}

pub fn replay(losses: &[f64], patience: usize, min_delta: f64) -> Option<StopOutcome> {
    let mut es = EarlyStopping::new(patience, min_delta);
    for (epoch, &loss) in losses.iter().enumerate() {
        if es.observe(epoch, loss) {
            return Some(StopOutcome {
                stopped_epoch: epoch,
                best_epoch: es.best_epoch()?,
                reason: StopReason::Early,
            });
        }
    }
    Some(StopOutcome {
        stopped_epoch: losses.len().checked_sub(1)?,
        best_epoch: es.best_epoch()?,
        reason: StopReason::MaxEpochs,
    })
}
