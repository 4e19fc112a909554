use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use super::init::LatentInit;
use crate::likelihood::PriorConfig;

/// Which training objective to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Negative expected log-likelihood plus the L1 penalty on relaxed `A`.
    #[default]
    Paper,
    /// The paper objective plus the KL terms against the priors and the
    /// entropy of `q(Z)`.
    FullElbo,
}

/// Concrete temperature `λ0`, annealed geometrically from `start` to `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
    /// Per-epoch multiplicative decay. When absent, `end` is reached halfway
    /// through `max_epochs`.
    #[serde(default)]
    pub decay: Option<f64>,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            start: 1.0,
            end: 0.1,
            decay: None,
        }
    }
}

impl TemperatureSchedule {
    pub fn constant(t: f64) -> Self {
        TemperatureSchedule {
            start: t,
            end: t,
            decay: None,
        }
    }

    fn decay_for(&self, max_epochs: usize) -> f64 {
        match self.decay {
            Some(d) => d,
            None => {
                let span = (max_epochs as f64 * 0.5).max(1.0);
                (self.end / self.start).powf(1.0 / span)
            }
        }
    }

    /// Temperature used at `epoch` (0-based).
    pub fn at(&self, epoch: usize, max_epochs: usize) -> f64 {
        if self.start == self.end {
            return self.start;
        }
        let v = self.start * self.decay_for(max_epochs).powi(epoch as i32);
        if self.start > self.end {
            v.max(self.end)
        } else {
            v.min(self.end)
        }
    }

    /// First epoch at which the schedule has reached `end`.
    pub fn settled_epoch(&self, max_epochs: usize) -> usize {
        if self.start == self.end {
            return 0;
        }
        let d = self.decay_for(max_epochs);
        let e = ((self.end / self.start).ln() / d.ln()).ceil();
        if e.is_finite() && e > 0.0 {
            e as usize
        } else {
            0
        }
    }
}

fn default_lambda() -> f64 {
    100.0
}
fn default_samples() -> usize {
    1
}
fn default_lr() -> f64 {
    0.03
}
fn default_epochs() -> usize {
    3000
}
fn default_patience() -> usize {
    300
}
fn default_true() -> bool {
    true
}

/// Optimizer and objective settings for [`fit`](crate::vi::fit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the L1 penalty on the relaxed adjacency. The likelihood it
    /// competes with grows with the series length.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub temperature: TemperatureSchedule,
    /// Monte-Carlo samples per gradient step.
    #[serde(default = "default_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Epochs without improvement before stopping, counted only once the
    /// temperature has settled. 0 disables early stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Finite-difference check of the gradient before training.
    #[serde(default)]
    pub grad_check: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub objective: ObjectiveMode,
    /// Fit on centered, unit-variance columns.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub latent_init: LatentInit,
    /// Fraction of `max_epochs` over which `lambda` ramps up linearly from 0.
    #[serde(default)]
    pub lambda_warmup: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: default_lambda(),
            temperature: TemperatureSchedule::default(),
            mc_samples: default_samples(),
            learning_rate: default_lr(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            grad_check: false,
            seed: 0,
            objective: ObjectiveMode::default(),
            standardize: true,
            latent_init: LatentInit::default(),
            lambda_warmup: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be non-negative");
        }
        let t = &self.temperature;
        if !(t.start > 0.0 && t.end > 0.0) || !t.start.is_finite() || !t.end.is_finite() {
            return bad("temperatures must be positive");
        }
        if let Some(d) = t.decay {
            if !(d > 0.0) || !d.is_finite() {
                return bad("temperature decay must be positive");
            }
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda_warmup) {
            return bad("lambda_warmup must lie in [0, 1]");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        Ok(())
    }

    /// Penalty weight used at `epoch`.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        let ramp = self.lambda_warmup * self.max_epochs as f64;
        if ramp <= 0.0 {
            self.lambda
        } else {
            self.lambda * (epoch as f64 / ramp).min(1.0)
        }
    }

    /// First epoch at which both the temperature and the penalty weight are final.
    pub fn settled_epoch(&self) -> usize {
        let ramp = (self.lambda_warmup * self.max_epochs as f64).ceil() as usize;
        self.temperature.settled_epoch(self.max_epochs).max(ramp)
    }

    pub fn settings_at<'a>(&self, epoch: usize, prior: &'a PriorConfig) -> ObjectiveSettings<'a> {
        ObjectiveSettings {
            lambda: self.lambda_at(epoch),
            temperature: self.temperature.at(epoch, self.max_epochs),
            mc_samples: self.mc_samples,
            mode: self.objective,
            prior,
        }
    }
}

/// Objective parameters at one point of training.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveSettings<'a> {
    pub lambda: f64,
    pub temperature: f64,
    pub mc_samples: usize,
    pub mode: ObjectiveMode,
    pub prior: &'a PriorConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_reaches_end_halfway() {
        let s = TemperatureSchedule::default();
        assert_eq!(s.at(0, 1000), 1.0);
        assert!((s.at(500, 1000) - 0.1).abs() < 1e-9);
        assert_eq!(s.at(900, 1000), 0.1);
        assert!(s.at(250, 1000) < 1.0 && s.at(250, 1000) > 0.1);
        let settled = s.settled_epoch(1000);
        assert!((499..=501).contains(&settled), "{settled}");
    }

    #[test]
    fn explicit_decay() {
        let s = TemperatureSchedule {
            start: 1.0,
            end: 0.5,
            decay: Some(0.5),
        };
        assert_eq!(s.at(1, 10), 0.5);
        assert_eq!(s.at(3, 10), 0.5);
        assert_eq!(TemperatureSchedule::constant(0.3).at(7, 10), 0.3);
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"lambda": 1.0, "bogus": 2}"#);
        assert!(r.is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"lambda": 1.0}"#).unwrap();
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.max_epochs, default_epochs());
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.mc_samples = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.temperature.start = 0.0;
        assert!(c.validate().is_err());
    }
}
