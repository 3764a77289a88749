//! Learning-rate schedules, the corrected decay transform and the
//! steady-state ratio predictions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    /// Half cosine from `gamma_max` to `gamma_min`, no warmup.
    Cosine,
    /// Linear warmup to `gamma_max`, then half cosine.
    WarmupCosine,
    /// Optional linear warmup, then linear decay to `gamma_min`.
    LinearDecay,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::WarmupCosine => "warmup-cosine",
            ScheduleKind::LinearDecay => "linear-decay",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ScheduleKind::Constant),
            "cosine" => Ok(ScheduleKind::Cosine),
            "warmup-cosine" => Ok(ScheduleKind::WarmupCosine),
            "linear-decay" => Ok(ScheduleKind::LinearDecay),
            other => Err(Error::config(
                "schedule.kind",
                format!("unknown schedule kind `{other}`"),
            )),
        }
    }
}

/// How the decay term is tied to the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayMode {
    /// `gamma_t * lambda * x`
    Coupled,
    /// `lambda * x`, independent of the learning rate.
    Uncoupled,
    /// `gamma_t * (lambda * gamma_t / gamma_max) * x` on normalized layers.
    Corrected,
}

impl DecayMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecayMode::Coupled => "coupled",
            DecayMode::Uncoupled => "uncoupled",
            DecayMode::Corrected => "corrected",
        }
    }
}

impl fmt::Display for DecayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(DecayMode::Coupled),
            "uncoupled" => Ok(DecayMode::Uncoupled),
            "corrected" => Ok(DecayMode::Corrected),
            other => Err(Error::config(
                "optimizer.decay_mode",
                format!("unknown decay mode `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    /// Peak learning rate, reached at the end of warmup.
    pub gamma_max: f64,
    pub gamma_min: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn constant(gamma: f64, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            gamma_max: gamma,
            gamma_min: 0.0,
            warmup_steps: 0,
            total_steps,
        }
    }

    pub fn cosine(gamma_max: f64, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            gamma_max,
            gamma_min: 0.0,
            warmup_steps: 0,
            total_steps,
        }
    }

    pub fn warmup_cosine(gamma_max: f64, warmup_steps: usize, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::WarmupCosine,
            gamma_max,
            gamma_min: 0.0,
            warmup_steps,
            total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_max.is_finite() && self.gamma_max > 0.0) {
            return Err(Error::config(
                "schedule.gamma_max",
                "must be finite and > 0",
            ));
        }
        if !(self.gamma_min.is_finite() && self.gamma_min >= 0.0) {
            return Err(Error::config(
                "schedule.gamma_min",
                "must be finite and >= 0",
            ));
        }
        if self.gamma_min > self.gamma_max {
            return Err(Error::config(
                "schedule.gamma_min",
                "must not exceed gamma_max",
            ));
        }
        if self.total_steps < 1 {
            return Err(Error::config("schedule.total_steps", "must be >= 1"));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::config(
                "schedule.warmup_steps",
                "must be smaller than total_steps",
            ));
        }
        match self.kind {
            ScheduleKind::Cosine if self.warmup_steps > 0 => Err(Error::config(
                "schedule.warmup_steps",
                "cosine has no warmup; use warmup-cosine",
            )),
            ScheduleKind::WarmupCosine if self.warmup_steps == 0 => Err(Error::config(
                "schedule.warmup_steps",
                "warmup-cosine needs warmup_steps >= 1",
            )),
            _ => Ok(()),
        }
    }

    /// Learning rate at step `t`, `0 <= t <= total_steps`.
    pub fn lr_at(&self, t: usize) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::invalid(format!(
                "step {t} outside schedule of {} steps",
                self.total_steps
            )));
        }
        if self.kind == ScheduleKind::Constant {
            return Ok(self.gamma_max);
        }
        let w = self.warmup_steps;
        if t < w {
            let lr = self.gamma_max * ((t + 1) as f64 / w as f64);
            return Ok(lr.clamp(self.gamma_min, self.gamma_max));
        }
        let p = (t - w) as f64 / (self.total_steps - w) as f64;
        let span = self.gamma_max - self.gamma_min;
        let lr = match self.kind {
            // written from the peak down so that p = 0 gives gamma_max exactly
            ScheduleKind::LinearDecay => self.gamma_max - span * p,
            _ => self.gamma_max - 0.5 * span * (1.0 - (PI * p).cos()),
        };
        Ok(lr.clamp(self.gamma_min, self.gamma_max))
    }
}

/// `lambda * gamma_t / gamma_max`, the decay that keeps the steady state
/// fixed across the schedule.
pub fn corrected_decay(lambda: f64, gamma_t: f64, gamma_max: f64) -> Result<f64> {
    if !(gamma_max > 0.0) {
        return Err(Error::invalid(format!(
            "gamma_max must be > 0, got {gamma_max}"
        )));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(0.0..=gamma_max).contains(&gamma_t) {
        return Err(Error::invalid(format!(
            "gamma_t = {gamma_t} outside [0, gamma_max = {gamma_max}]"
        )));
    }
    Ok(lambda * (gamma_t / gamma_max))
}

/// Steady-state gradient-to-weight ratio for the given decay mode.
///
/// `gamma_eff` and `gamma_max` are effective rates: callers using momentum
/// pass them through [`crate::optim::effective_lr`] first.
pub fn predicted_ratio(
    lambda: f64,
    gamma_eff: f64,
    mode: DecayMode,
    gamma_max: f64,
) -> Result<f64> {
    match mode {
        DecayMode::Coupled => {
            if gamma_eff == 0.0 {
                return Err(Error::DivisionByZero(
                    "coupled prediction undefined at gamma = 0".into(),
                ));
            }
            if gamma_eff < 0.0 {
                return Err(Error::invalid("learning rate must be >= 0"));
            }
            Ok((2.0 * lambda / gamma_eff).sqrt())
        }
        DecayMode::Uncoupled => {
            if gamma_eff == 0.0 {
                return Err(Error::DivisionByZero(
                    "uncoupled prediction undefined at gamma = 0".into(),
                ));
            }
            if gamma_eff < 0.0 {
                return Err(Error::invalid("learning rate must be >= 0"));
            }
            Ok((2.0 * lambda).sqrt() / gamma_eff)
        }
        DecayMode::Corrected => {
            if !(gamma_max > 0.0) {
                return Err(Error::invalid("corrected prediction needs gamma_max > 0"));
            }
            Ok((2.0 * lambda / gamma_max).sqrt())
        }
    }
}
