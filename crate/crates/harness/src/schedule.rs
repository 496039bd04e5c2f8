//! Learning-rate schedule: linear warmup from zero, then poly decay to zero.

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup: usize,
    pub max_iter: usize,
    pub power: f64,
}

impl Schedule {
    /// The decay phase must be non-empty: `warmup < max_iter`.
    pub fn new(base_lr: f64, warmup: usize, max_iter: usize, power: f64) -> Result<Self> {
        if warmup >= max_iter {
            return Err(HarnessError::Config(format!(
                "warmup_iters {warmup} must be below the iteration budget {max_iter}"
            )));
        }
        Ok(Schedule {
            base_lr,
            warmup,
            max_iter,
            power,
        })
    }

    pub fn lr_at(&self, iter: usize) -> Result<f64> {
        if iter > self.max_iter {
            return Err(HarnessError::IterOutOfRange {
                iter,
                max: self.max_iter,
            });
        }
        if iter <= self.warmup {
            // iter == warmup gives exactly base_lr.
            return Ok(self.base_lr * (iter as f64 / self.warmup as f64));
        }
        let progress = (iter - self.warmup) as f64 / (self.max_iter - self.warmup) as f64;
        Ok(self.base_lr * (1.0 - progress).powf(self.power))
    }
}
