use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrKind {
    #[default]
    Piecewise,
    /// Cosine ramp inside each stage between consecutive stage targets.
    Cosine,
    /// Linear ramp inside each stage between consecutive stage targets.
    Linear,
    Constant,
}

/// Per-epoch learning rate.
///
/// Stage `i` starts at milestone `i`. Piecewise holds `base / dⁱ` within
/// stage `i`. Cosine and linear start stage `i` at the previous target and
/// reach target `i` at the next milestone (or the end of training), so the
/// overall scale matches the piecewise schedule but without jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    #[serde(default)]
    pub kind: LrKind,
    pub base_lr: f64,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "ten")]
    pub decay_factor: f64,
    /// Explicit stage targets for cosine/linear; defaults to `base / dⁱ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_targets: Option<Vec<f64>>,
}

fn ten() -> f64 {
    10.0
}

impl LrSchedule {
    pub fn piecewise(base_lr: f64, milestones: Vec<usize>, decay_factor: f64) -> Self {
        Self {
            kind: LrKind::Piecewise,
            base_lr,
            milestones,
            decay_factor,
            stage_targets: None,
        }
    }

    pub fn constant(base_lr: f64) -> Self {
        Self {
            kind: LrKind::Constant,
            base_lr,
            milestones: Vec::new(),
            decay_factor: 1.0,
            stage_targets: None,
        }
    }

    pub fn first_milestone(&self) -> Option<usize> {
        self.milestones.first().copied()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(self.decay_factor >= 1.0 && self.decay_factor.is_finite()) {
            return Err(Error::invalid(format!("decay_factor must be >= 1, got {}", self.decay_factor)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("milestones must be strictly increasing"));
        }
        if let Some(t) = &self.stage_targets {
            if t.len() != self.milestones.len() || t.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::invalid("stage_targets needs one positive value per milestone"));
            }
        }
        Ok(())
    }

    fn stages_passed(&self, epoch: usize) -> usize {
        self.milestones.iter().filter(|&&m| epoch >= m).count()
    }

    fn target(&self, stage: usize) -> f64 {
        if stage == 0 {
            return self.base_lr;
        }
        match &self.stage_targets {
            Some(t) => t[stage - 1],
            None => self.base_lr / self.decay_factor.powi(stage as i32),
        }
    }

    /// Learning rate for `epoch` of a run lasting `epochs`.
    pub fn lr_at(&self, epoch: usize, epochs: usize) -> f64 {
        match self.kind {
            LrKind::Constant => self.base_lr,
            LrKind::Piecewise => self.base_lr / self.decay_factor.powi(self.stages_passed(epoch) as i32),
            LrKind::Cosine | LrKind::Linear => {
                let s = self.stages_passed(epoch);
                if s == 0 {
                    return self.base_lr;
                }
                let start = self.milestones[s - 1];
                let end = self.milestones.get(s).copied().unwrap_or(epochs).max(start + 1);
                let (from, to) = (self.target(s - 1), self.target(s));
                let frac = ((epoch - start) as f64 / (end - start) as f64).min(1.0);
                let w = match self.kind {
                    LrKind::Linear => frac,
                    _ => 0.5 * (1.0 - (std::f64::consts::PI * frac).cos()),
                };
                from + (to - from) * w
            }
        }
    }
}
