use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Epochs without a dev-loss decrease before the rate is halved.
    pub lr_halving_patience: usize,
    pub min_lr: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            initial_lr: 0.01,
            lr_halving_patience: 5,
            min_lr: 1e-6,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.initial_lr > 0.0
            && self.lr_halving_patience > 0
            && self.min_lr > 0.0
            && self.max_epochs > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "training parameters must be positive: {self:?}"
            )))
        }
    }
}

/// Halves the learning rate when the dev loss has not reached a new
/// minimum for `patience` consecutive epochs.
///
/// The reference minimum starts at the dev loss of the untrained model, so
/// a flat loss curve halves at epochs `p, 2p, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrScheduler {
    lr: f64,
    best: f64,
    stale: usize,
    patience: usize,
    min_lr: f64,
}

impl LrScheduler {
    pub fn new(cfg: &TrainConfig, baseline_dev_loss: f64) -> Self {
        Self {
            lr: cfg.initial_lr,
            best: baseline_dev_loss,
            stale: 0,
            patience: cfg.lr_halving_patience,
            min_lr: cfg.min_lr,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's dev loss and returns the rate for the next
    /// epoch.
    pub fn update_lr(&mut self, dev_loss: f64) -> f64 {
        if dev_loss < self.best {
            self.best = dev_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr /= 2.0;
                self.stale = 0;
            }
        }
        self.lr
    }

    pub fn exhausted(&self) -> bool {
        self.lr < self.min_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Epoch at which training stops, and the rate in force at each epoch.
    fn run(losses: impl Fn(usize) -> f64, baseline: f64) -> (usize, Vec<f64>) {
        let cfg = TrainConfig::default();
        let mut s = LrScheduler::new(&cfg, baseline);
        let mut rates = Vec::new();
        for epoch in 1..=cfg.max_epochs {
            rates.push(s.lr());
            s.update_lr(losses(epoch));
            if s.exhausted() {
                return (epoch, rates);
            }
        }
        (cfg.max_epochs, rates)
    }

    #[test]
    fn decreasing_loss_keeps_rate() {
        let (stop, rates) = run(|e| 1.0 / e as f64, 2.0);
        assert_eq!(stop, 100);
        assert!(rates.iter().all(|&r| r == 0.01));
    }

    #[test]
    fn flat_loss_stops_at_epoch_seventy() {
        let (stop, rates) = run(|_| 1.0, 1.0);
        // 0.01 / 2^14 < 1e-6 <= 0.01 / 2^13
        let halvings = (0..).find(|&h| 0.01 / 2f64.powi(h) < 1e-6).unwrap();
        assert_eq!(halvings, 14);
        assert_eq!(stop, 5 * halvings as usize);
        assert_eq!(rates[4], 0.01);
        assert_eq!(rates[5], 0.005);
        assert_eq!(rates[10], 0.0025);
    }

    #[test]
    fn improvement_resets_patience() {
        let cfg = TrainConfig::default();
        let mut s = LrScheduler::new(&cfg, 1.0);
        for _ in 0..4 {
            s.update_lr(1.0);
        }
        s.update_lr(0.5);
        for _ in 0..4 {
            s.update_lr(0.7);
        }
        assert_eq!(s.lr(), 0.01);
        s.update_lr(0.7);
        assert_eq!(s.lr(), 0.005);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
