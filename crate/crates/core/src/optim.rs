//! Base optimizers and learning-rate schedules.
//!
//! An optimizer turns a gradient into the full signed parameter delta `v_t`
//! (learning rate included), so a plain step is `θ ← θ + v_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{all_finite, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Sgdm,
    Adamw,
    /// Adam with one second-moment scalar per parameter block.
    AdamBlockscalar,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "sgdm" => Ok(Self::Sgdm),
            "adamw" => Ok(Self::Adamw),
            "adam_blockscalar" => Ok(Self::AdamBlockscalar),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Sgdm => "sgdm",
            Self::Adamw => "adamw",
            Self::AdamBlockscalar => "adam_blockscalar",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "invalid hyperparameters {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    pub hyper: Hyperparams,
    m: Vec<f64>,
    /// Per coordinate, or per block for [`OptimizerKind::AdamBlockscalar`].
    v: Vec<f64>,
    /// Block boundaries used by the block-scalar variant.
    blocks: Vec<std::ops::Range<usize>>,
    t: u64,
    poisoned: bool,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, hyper: Hyperparams, dim: usize) -> Result<Self> {
        Self::with_blocks(kind, hyper, dim, vec![0..dim])
    }

    /// `blocks` must tile `0..dim`; only the block-scalar variant uses them.
    pub fn with_blocks(
        kind: OptimizerKind,
        hyper: Hyperparams,
        dim: usize,
        blocks: Vec<std::ops::Range<usize>>,
    ) -> Result<Self> {
        hyper.validate()?;
        let mut next = 0;
        for b in &blocks {
            if b.start != next || b.end < b.start {
                return Err(Error::Validation("blocks must tile the parameters".into()));
            }
            next = b.end;
        }
        if next != dim {
            return Err(Error::Validation("blocks must tile the parameters".into()));
        }
        let (m_len, v_len) = match kind {
            OptimizerKind::Sgd => (0, 0),
            OptimizerKind::Sgdm => (dim, 0),
            OptimizerKind::Adamw => (dim, dim),
            OptimizerKind::AdamBlockscalar => (dim, blocks.len()),
        };
        Ok(Self {
            kind,
            hyper,
            m: vec![0.0; m_len],
            v: vec![0.0; v_len],
            blocks,
            t: 0,
            poisoned: false,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn momentum_buffer(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.end)
    }

    /// Returns `v_t` and advances the state. A non-finite gradient poisons the
    /// state permanently.
    pub fn compute_update(&mut self, grad: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        if self.poisoned {
            return Err(Error::Poisoned("optimizer state already poisoned".into()));
        }
        let p = self.dim();
        if grad.len() != p || theta.len() != p {
            return Err(Error::Dimension(format!(
                "gradient {} / parameters {} for an optimizer of dimension {p}",
                grad.len(),
                theta.len()
            )));
        }
        if !all_finite(grad) {
            self.poisoned = true;
            return Err(Error::Poisoned(format!(
                "non-finite gradient at step {}",
                self.t
            )));
        }
        let h = self.hyper;
        self.t += 1;
        let update = match self.kind {
            OptimizerKind::Sgd => grad.iter().map(|g| -h.lr * g).collect(),
            OptimizerKind::Sgdm => {
                for (m, g) in self.m.iter_mut().zip(grad) {
                    *m = h.momentum * *m + g;
                }
                self.m.iter().map(|m| -h.lr * m).collect()
            }
            OptimizerKind::Adamw | OptimizerKind::AdamBlockscalar => {
                for (m, g) in self.m.iter_mut().zip(grad) {
                    *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                }
                let c1 = 1.0 - h.beta1.powf(self.t as f64);
                let c2 = 1.0 - h.beta2.powf(self.t as f64);
                let mut second = vec![0.0; p];
                if self.kind == OptimizerKind::Adamw {
                    for ((v, g), s) in self.v.iter_mut().zip(grad).zip(&mut second) {
                        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                        *s = *v;
                    }
                } else {
                    for (v, b) in self.v.iter_mut().zip(&self.blocks) {
                        let len = (b.end - b.start).max(1) as f64;
                        let mean_sq = grad[b.clone()].iter().map(|g| g * g).sum::<f64>() / len;
                        *v = h.beta2 * *v + (1.0 - h.beta2) * mean_sq;
                        second[b.clone()].iter_mut().for_each(|s| *s = *v);
                    }
                }
                self.m
                    .iter()
                    .zip(&second)
                    .zip(theta)
                    .map(|((m, v), th)| {
                        let adaptive = (m / c1) / ((v / c2).sqrt() + h.eps);
                        -h.lr * (adaptive + h.weight_decay * th)
                    })
                    .collect()
            }
        };
        Ok(update)
    }
}

/// Linear warm-up to `lr_max` followed by cosine decay to `lr_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub lr_max: f64,
    pub lr_min: f64,
}

impl LrSchedule {
    pub fn new(warmup_steps: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> Result<Self> {
        if warmup_steps > total_steps {
            return Err(Error::Validation(format!(
                "warmup {warmup_steps} exceeds total {total_steps}"
            )));
        }
        if !(lr_max > 0.0 && lr_min >= 0.0 && lr_min <= lr_max) {
            return Err(Error::Validation(format!(
                "need 0 <= lr_min <= lr_max, lr_max > 0 (got {lr_min}, {lr_max})"
            )));
        }
        Ok(Self {
            warmup_steps,
            total_steps,
            lr_max,
            lr_min,
        })
    }

    /// A schedule that always returns `lr`.
    pub fn constant(lr: f64, total_steps: u64) -> Result<Self> {
        Self::new(0, total_steps, lr, lr)
    }

    pub fn lr_at(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::Range(format!(
                "step {t} beyond schedule length {}",
                self.total_steps
            )));
        }
        if t < self.warmup_steps {
            return Ok(self.lr_max * (t + 1) as f64 / self.warmup_steps as f64);
        }
        let span = self.total_steps - self.warmup_steps;
        if span == 0 {
            return Ok(self.lr_min);
        }
        let progress = (t - self.warmup_steps) as f64 / span as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        Ok(self.lr_min + (self.lr_max - self.lr_min) * cosine)
    }
}

/// Rescales `grad` to norm `max_norm` when it is longer.
pub fn clip_global_norm(grad: &[f64], max_norm: f64) -> Vec<f64> {
    let n = norm(grad);
    if n <= max_norm || n == 0.0 {
        return grad.to_vec();
    }
    let s = max_norm / n;
    grad.iter().map(|g| g * s).collect()
}
