use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic cosine annealing, stepped once per epoch: a full cycle every
/// `2 * half_period` epochs, starting at `base_lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub eta_min: f64,
    pub half_period: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            base_lr: 1e-4,
            eta_min: 0.0,
            half_period: 10,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > self.eta_min && self.eta_min >= 0.0) {
            return Err(Error::Config(format!(
                "schedule needs base_lr > eta_min >= 0, got {} and {}",
                self.base_lr, self.eta_min
            )));
        }
        if self.half_period == 0 {
            return Err(Error::Config("schedule half period must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn cosine_lr(epoch: usize, cfg: &ScheduleConfig) -> f64 {
    let phase = (epoch % (2 * cfg.half_period)) as f64 / cfg.half_period as f64;
    let c = (1.0 + (std::f64::consts::PI * phase).cos()) / 2.0;
    cfg.eta_min + (cfg.base_lr - cfg.eta_min) * c
}
