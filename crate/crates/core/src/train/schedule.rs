use serde::{Deserialize, Serialize};

/// Why training ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    /// No validation improvement for `patience_stop` consecutive epochs.
    Patience,
    /// The learning rate decayed below the floor.
    LrFloor,
}

/// What to do after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    /// Run another epoch at this learning rate.
    Continue { lr: f64 },
    Stop(StopReason),
}

/// Validation-driven learning-rate decay and stopping.
///
/// After every `patience_decay` consecutive epochs without a strict
/// decrease of the validation loss the rate is multiplied by `decay`. The
/// run stops after `max_epochs`, after `patience_stop` epochs without
/// improvement (if set), or when the rate falls below `floor`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrController {
    lr: f64,
    decay: f64,
    patience_decay: usize,
    patience_stop: Option<usize>,
    floor: f64,
    max_epochs: usize,
    best: f64,
    epoch: usize,
    since_improvement: usize,
    since_decay: usize,
}

impl LrController {
    pub fn new(
        lr0: f64,
        decay: f64,
        patience_decay: usize,
        patience_stop: Option<usize>,
        floor: f64,
        max_epochs: usize,
    ) -> Self {
        LrController {
            lr: lr0,
            decay,
            patience_decay,
            patience_stop,
            floor,
            max_epochs,
            best: f64::INFINITY,
            epoch: 0,
            since_improvement: 0,
            since_decay: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Record the validation loss before the first epoch.
    pub fn set_baseline(&mut self, val_loss: f64) {
        self.best = val_loss;
    }

    /// Whether `val_loss` would count as an improvement.
    pub fn improves(&self, val_loss: f64) -> bool {
        val_loss < self.best
    }

    /// Feed the validation loss of the epoch that just finished.
    pub fn observe(&mut self, val_loss: f64) -> Decision {
        self.epoch += 1;
        if self.improves(val_loss) {
            self.best = val_loss;
            self.since_improvement = 0;
            self.since_decay = 0;
        } else {
            self.since_improvement += 1;
            self.since_decay += 1;
        }
        if self.epoch >= self.max_epochs {
            return Decision::Stop(StopReason::MaxEpochs);
        }
        if self.patience_stop.is_some_and(|p| self.since_improvement >= p) {
            return Decision::Stop(StopReason::Patience);
        }
        if self.since_decay >= self.patience_decay {
            self.since_decay = 0;
            self.lr *= self.decay;
            if self.lr < self.floor {
                return Decision::Stop(StopReason::LrFloor);
            }
        }
        Decision::Continue { lr: self.lr }
    }
}

/// Learning rates used by consecutive epochs when validation never improves,
/// and the reason the run ends.
pub fn no_improvement_trajectory(mut ctl: LrController) -> (Vec<f64>, Vec<f64>, StopReason) {
    ctl.set_baseline(0.0);
    let mut per_epoch = vec![ctl.lr()];
    loop {
        match ctl.observe(1.0) {
            Decision::Continue { lr } => per_epoch.push(lr),
            Decision::Stop(reason) => {
                let mut distinct: Vec<f64> = Vec::new();
                for &lr in &per_epoch {
                    if distinct.last() != Some(&lr) {
                        distinct.push(lr);
                    }
                }
                return (per_epoch, distinct, reason);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decays_every_three_stale_epochs_until_floor() {
        let ctl = LrController::new(5e-3, 0.6, 3, None, 5e-4, 100);
        let (per_epoch, lrs, reason) = no_improvement_trajectory(ctl);
        assert_eq!(reason, StopReason::LrFloor);
        assert_eq!(per_epoch.len(), 15);
        let want = [5e-3, 3e-3, 1.8e-3, 1.08e-3, 6.48e-4];
        assert_eq!(lrs.len(), want.len());
        for (a, b) in lrs.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(per_epoch[2], 5e-3);
        assert!((per_epoch[3] - 3e-3).abs() < 1e-15);
    }

    #[test]
    fn patience_stop_comes_first_with_ten_epochs() {
        let ctl = LrController::new(5e-3, 0.6, 3, Some(10), 5e-4, 100);
        let (per_epoch, lrs, reason) = no_improvement_trajectory(ctl);
        assert_eq!(reason, StopReason::Patience);
        assert_eq!(per_epoch.len(), 10);
        assert_eq!(lrs.len(), 4);
    }

    #[test]
    fn improvement_resets_counters() {
        let mut ctl = LrController::new(1.0, 0.5, 2, Some(3), 0.01, 100);
        ctl.set_baseline(10.0);
        assert_eq!(ctl.observe(11.0), Decision::Continue { lr: 1.0 });
        assert_eq!(ctl.observe(9.0), Decision::Continue { lr: 1.0 });
        assert_eq!(ctl.observe(9.0), Decision::Continue { lr: 1.0 });
        assert_eq!(ctl.observe(9.5), Decision::Continue { lr: 0.5 });
        assert_eq!(ctl.observe(9.0), Decision::Stop(StopReason::Patience));
        assert_eq!(ctl.best(), 9.0);
    }

    #[test]
    fn max_epochs() {
        let mut ctl = LrController::new(1.0, 0.5, 100, None, 0.0, 2);
        assert!(matches!(ctl.observe(1.0), Decision::Continue { .. }));
        assert_eq!(ctl.observe(0.5), Decision::Stop(StopReason::MaxEpochs));
    }
}
