//! Shared plumbing for the two likelihood-training stages: configuration,
//! loss curves, and seeded minibatch order.

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// One training observation: a conditioning vector and a target vector,
/// borrowed from backing storage. Stage 1 pairs states with actions, stage 2
/// pairs states with transformed cube points.
pub type Pair<'a> = (&'a [f64], &'a [f64]);

/// Hyperparameters for one SGD training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
    /// Stop when the relative drop of the full-data NLL over one epoch falls
    /// below this.
    pub tol: f64,
    /// Epochs without validation improvement tolerated before stopping; only
    /// used when a validation set is supplied.
    pub patience: usize,
    /// On a plateau the learning rate is multiplied by this until it falls
    /// below 1% of its initial value; 1.0 stops at the first plateau. SGD
    /// chatter at a fixed rate is proportional to the rate, so the final
    /// decayed stretch is what polishes conditional means to noise level.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch: 128,
            lr: 0.01,
            l2: 1e-5,
            seed: 0,
            tol: 1e-4,
            patience: 5,
            lr_decay: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.l2 < 0.0 || !self.l2.is_finite() {
            return Err(Error::InvalidConfig(format!("l2 weight must be >= 0, got {}", self.l2)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be >= 0, got {}", self.tol)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }

    /// Plateau reaction shared by both SGD stages: decay the rate and keep
    /// going, or signal the caller to stop once the rate has bottomed out.
    /// `lr` is the current rate; returns the next rate, or None to stop.
    pub fn next_lr(&self, lr: f64) -> Option<f64> {
        let floor = self.lr * 0.01;
        if self.lr_decay < 1.0 && lr * self.lr_decay >= floor {
            Some(lr * self.lr_decay)
        } else {
            None
        }
    }
}

/// Per-epoch mean NLL on the full training data; entry 0 is the untrained
/// model, so the curve has `epochs_run + 1` entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

impl LossCurve {
    pub fn initial(&self) -> Option<f64> {
        self.train.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.train.last().copied()
    }

    pub fn epochs_run(&self) -> usize {
        self.train.len().saturating_sub(1)
    }
}

/// Relative improvement of `cur` over `prev`, guarded against tiny and
/// negative NLL values.
pub fn relative_drop(prev: f64, cur: f64) -> f64 {
    (prev - cur) / prev.abs().max(1.0)
}

/// Shuffled index order for one epoch, deterministic in (seed, epoch).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng: ChaCha8Rng = seeded_rng(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    idx.shuffle(&mut rng);
    idx
}
