//! Step-decay learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub base_lr: f64,
    /// Epochs at which the rate is divided by `drop_factor`.
    pub drops: Vec<usize>,
    pub drop_factor: f64,
    pub epochs: usize,
}

impl Schedule {
    /// 0.01, divided by 10 at epochs 10, 20 and 30, for 60 epochs.
    pub fn reference() -> Self {
        Schedule {
            base_lr: 0.01,
            drops: vec![10, 20, 30],
            drop_factor: 10.0,
            epochs: 60,
        }
    }

    /// The same geometric decay compressed into 20 epochs, from 1e-3: Adam
    /// at 0.01 collapses the small desk models to empty predictions.
    pub fn desk() -> Self {
        Schedule {
            base_lr: 1e-3,
            drops: vec![8, 13, 17],
            drop_factor: 10.0,
            epochs: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base learning rate {} must be positive", self.base_lr)));
        }
        if !(self.drop_factor >= 1.0 && self.drop_factor.is_finite()) {
            return Err(Error::Config(format!("drop factor {} must be at least 1", self.drop_factor)));
        }
        if self.drops.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("drop epochs {:?} must increase", self.drops)));
        }
        Ok(())
    }

    /// `base_lr / drop_factor^#{d ∈ drops : epoch ≥ d}`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let n = self.drops.iter().filter(|&&d| epoch >= d).count();
        self.base_lr / self.drop_factor.powi(n as i32)
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_schedule_values() {
        let s = Schedule::reference();
        assert_eq!(s.lr_at(0), 0.01);
        assert_eq!(s.lr_at(9), 0.01);
        assert!((s.lr_at(10) - 1e-3).abs() < 1e-18);
        assert!((s.lr_at(25) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at(35) - 1e-5).abs() < 1e-18);
        assert!((s.lr_at(59) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn rejects_unsorted_drops() {
        let s = Schedule {
            drops: vec![5, 5],
            ..Schedule::desk()
        };
        assert!(s.validate().is_err());
    }
}
