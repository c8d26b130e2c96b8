//! Epoch-scaled insertion of adversarial negatives.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::lexical_negative;
use crate::corpus::ContrastivePair;
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleMode {
    /// Never insert adversarial negatives.
    None,
    /// Insert at `p_max` from the first epoch on.
    Immediate,
    /// Zero during warm-up, then a linear ramp up to `p_max`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub mode: ScheduleMode,
    pub warmup_epochs: usize,
    pub ramp_epochs: usize,
    pub p_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { mode: ScheduleMode::Linear, warmup_epochs: 2, ramp_epochs: 5, p_max: 0.3 }
    }
}

impl ScheduleConfig {
    pub fn none() -> Self {
        ScheduleConfig { mode: ScheduleMode::None, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.p_max) {
            return Err(format!("schedule.p_max {} outside [0, 1]", self.p_max));
        }
        if self.ramp_epochs == 0 {
            return Err("schedule.ramp_epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// Probability that a training pair is replaced by its adversarial negative in `epoch`
/// (0-based).
pub fn adversarial_probability(epoch: usize, config: &ScheduleConfig) -> f64 {
    match config.mode {
        ScheduleMode::None => 0.0,
        ScheduleMode::Immediate => config.p_max,
        ScheduleMode::Linear => {
            if epoch < config.warmup_epochs {
                return 0.0;
            }
            let steps = (epoch - config.warmup_epochs + 1) as f64;
            (config.p_max * steps / config.ramp_epochs as f64).min(config.p_max)
        }
    }
}

/// Replaces each pair independently with its lexical negative at the epoch's
/// probability. Pairs without a candidate word are kept.
///
/// `first_ordinal` is the position of `batch[0]` in the epoch; each pair draws from
/// its own stream keyed by `(seed, epoch, ordinal)`.
pub fn apply_schedule(
    batch: &[ContrastivePair],
    epoch: usize,
    first_ordinal: usize,
    config: &ScheduleConfig,
    seed: u64,
) -> Vec<ContrastivePair> {
    let p = adversarial_probability(epoch, config);
    if p == 0.0 {
        return batch.to_vec();
    }
    batch
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = rng_for(seed, stream::SCHEDULE, epoch as u64, (first_ordinal + i) as u64);
            if rng.gen::<f64>() < p {
                lexical_negative(pair, &mut rng).unwrap_or_else(|_| pair.clone())
            } else {
                pair.clone()
            }
        })
        .collect()
}
