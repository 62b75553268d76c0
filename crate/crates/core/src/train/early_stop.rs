/// Outcome of observing one epoch's validation score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation score; epochs are numbered from 1. Only a
/// strictly larger score counts as an improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_score: Option<f64>,
    pub best_epoch: usize,
    pub epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_score: None,
            best_epoch: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, score: f64) -> StopDecision {
        self.epoch += 1;
        if self.best_score.map_or(true, |b| score > b) {
            self.best_score = Some(score);
            self.best_epoch = self.epoch;
            return StopDecision::Improved;
        }
        if self.epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}
