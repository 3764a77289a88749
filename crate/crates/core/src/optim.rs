//! Update rules: SGD with momentum and dampening, Adam with decoupled
//! (AdamW) or preconditioned (original Adam) decay, each under coupled,
//! uncoupled or corrected weight decay.
//!
//! In corrected mode a normalized layer uses the decay coefficient
//! `lambda * gamma_t / gamma_max` in place of `lambda`; non-normalized layers
//! keep ordinary coupled decay. With SGD that gives SGDC, with AdamW it gives
//! AdamC.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, DiagWeights};
use crate::schedule::{corrected_decay, DecayMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sgd,
    Adam,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Adam => "adam",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Method::Sgd),
            "adam" => Ok(Method::Adam),
            other => Err(Error::config(
                "optimizer.method",
                format!("unknown method `{other}`"),
            )),
        }
    }
}

/// Where Adam's decay term sits relative to the preconditioner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdamDecayStyle {
    /// AdamW: `x -= gamma * m_hat / a + c * x`.
    Decoupled,
    /// Original Adam: the decay is preconditioned too, `x -= gamma * m_hat / a + c * x / a`.
    Coupled,
}

impl AdamDecayStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            AdamDecayStyle::Decoupled => "decoupled",
            AdamDecayStyle::Coupled => "coupled",
        }
    }
}

impl fmt::Display for AdamDecayStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdamDecayStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoupled" => Ok(AdamDecayStyle::Decoupled),
            "coupled" => Ok(AdamDecayStyle::Coupled),
            other => Err(Error::config(
                "optimizer.adam_decay_style",
                format!("unknown adam decay style `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    pub decay_mode: DecayMode,
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// SGD momentum factor.
    pub momentum: f64,
    /// SGD dampening factor.
    pub dampening: f64,
    pub adam_decay_style: AdamDecayStyle,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Sgd,
            decay_mode: DecayMode::Coupled,
            lambda: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.0,
            dampening: 0.0,
            adam_decay_style: AdamDecayStyle::Decoupled,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lambda: f64, momentum: f64) -> Self {
        Self {
            lambda,
            momentum,
            ..Self::default()
        }
    }

    pub fn adamw(lambda: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            method: Method::Adam,
            lambda,
            beta1,
            beta2,
            ..Self::default()
        }
    }

    #[must_use]
    pub fn with_decay_mode(mut self, mode: DecayMode) -> Self {
        self.decay_mode = mode;
        self
    }

    #[must_use]
    pub fn with_adam_decay_style(mut self, style: AdamDecayStyle) -> Self {
        self.adam_decay_style = style;
        self
    }

    #[must_use]
    pub fn with_dampening(mut self, dampening: f64) -> Self {
        self.dampening = dampening;
        self
    }

    pub fn validate(&self) -> Result<()> {
        fn unit_open(v: f64) -> bool {
            v.is_finite() && (0.0..1.0).contains(&v)
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("optimizer.lambda", "must be finite and >= 0"));
        }
        if !unit_open(self.momentum) {
            return Err(Error::config("optimizer.momentum", "must lie in [0, 1)"));
        }
        if !(self.dampening.is_finite() && (0.0..=1.0).contains(&self.dampening)) {
            return Err(Error::config("optimizer.dampening", "must lie in [0, 1]"));
        }
        if !unit_open(self.beta1) {
            return Err(Error::config("optimizer.beta1", "must lie in [0, 1)"));
        }
        if !unit_open(self.beta2) {
            return Err(Error::config("optimizer.beta2", "must lie in [0, 1)"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("optimizer.epsilon", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Decay mode actually applied to a layer: corrected decay only touches
    /// normalized layers.
    pub fn layer_decay_mode(&self, normalized: bool) -> DecayMode {
        match self.decay_mode {
            DecayMode::Corrected if !normalized => DecayMode::Coupled,
            mode => mode,
        }
    }

    /// The decay constant in effect at `gamma_t`: `lambda`, or the corrected
    /// `lambda * gamma_t / gamma_max`.
    pub fn effective_lambda(&self, gamma_t: f64, gamma_max: f64, normalized: bool) -> Result<f64> {
        match self.layer_decay_mode(normalized) {
            DecayMode::Corrected => {
                if !(gamma_max > 0.0) {
                    return Err(Error::config(
                        "schedule.gamma_max",
                        "corrected decay needs gamma_max > 0",
                    ));
                }
                corrected_decay(self.lambda, gamma_t, gamma_max)
            }
            _ => Ok(self.lambda),
        }
    }

    /// Effective step size per unit gradient at steady state.
    pub fn effective_lr(&self, gamma: f64) -> Result<f64> {
        match self.method {
            Method::Sgd => effective_lr(gamma, self.momentum, self.dampening),
            Method::Adam => Ok(gamma),
        }
    }
}

/// `gamma * (1 - dampening) / (1 - beta)`, the steady-state step per unit
/// gradient of heavy-ball momentum.
pub fn effective_lr(gamma: f64, beta: f64, dampening: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid(format!(
            "momentum must lie in [0, 1), got {beta}"
        )));
    }
    if !(0.0..=1.0).contains(&dampening) {
        return Err(Error::invalid(format!(
            "dampening must lie in [0, 1], got {dampening}"
        )));
    }
    Ok(gamma * (1.0 - dampening) / (1.0 - beta))
}

/// One layer's weights and optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub x: Vec<f64>,
    /// Momentum buffer (SGD) or first moment (Adam).
    pub m: Vec<f64>,
    /// Second moment, Adam only.
    pub v: Vec<f64>,
    pub normalized: bool,
    pub step_count: u64,
}

impl LayerState {
    pub fn new(x: Vec<f64>, normalized: bool) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("layer weights must be nonempty"));
        }
        if !all_finite(&x) {
            return Err(Error::PoisonedState(
                "initial weights are not finite".into(),
            ));
        }
        let d = x.len();
        Ok(Self {
            x,
            m: vec![0.0; d],
            v: vec![0.0; d],
            normalized,
            step_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Adam's `sqrt(v_hat) + eps` for the most recent step, if every entry is
    /// positive.
    pub fn preconditioner(&self, cfg: &OptimizerConfig) -> Option<DiagWeights> {
        if self.step_count == 0 {
            return None;
        }
        let bias2 = bias_correction(cfg.beta2, self.step_count);
        DiagWeights::new(
            self.v
                .iter()
                .map(|v| (v / bias2).sqrt() + cfg.epsilon)
                .collect(),
        )
        .ok()
    }
}

/// What a step did, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub decay_mode: DecayMode,
    /// `lambda`, or the corrected `lambda * gamma_t / gamma_max`.
    pub lambda_eff: f64,
    /// `||g||_{A^-1}` with the preconditioner of this step (Adam only).
    pub grad_wnorm: Option<f64>,
    /// `||x_t||_A` before the update (Adam only).
    pub weight_wnorm: Option<f64>,
}

fn bias_correction(beta: f64, t: u64) -> f64 {
    1.0 - beta.powi(t.min(i32::MAX as u64) as i32)
}

fn check_inputs(state: &LayerState, grad: &[f64], gamma_t: f64) -> Result<()> {
    if grad.len() != state.x.len() {
        return Err(Error::invalid(format!(
            "gradient length {} does not match weight length {}",
            grad.len(),
            state.x.len()
        )));
    }
    if !all_finite(grad) {
        return Err(Error::PoisonedState("gradient is not finite".into()));
    }
    if !(gamma_t.is_finite() && gamma_t >= 0.0) {
        return Err(Error::invalid(format!(
            "learning rate must be finite and >= 0, got {gamma_t}"
        )));
    }
    Ok(())
}

/// Heavy-ball SGD step.
///
/// The buffer update is `m = beta * m + (1 - dampening) * (g + c * x)` and the
/// step is `x -= gamma_t * m`, where `c` is `lambda` (coupled) or the
/// corrected `lambda * gamma_t / gamma_max`. Uncoupled decay stays outside the
/// buffer: `x -= gamma_t * m + lambda * x`. With `beta = 0` this is exactly
/// `x - gamma g - gamma lambda x`.
pub fn sgd_step(
    state: &mut LayerState,
    grad: &[f64],
    gamma_t: f64,
    cfg: &OptimizerConfig,
    gamma_max: f64,
) -> Result<StepInfo> {
    check_inputs(state, grad, gamma_t)?;
    let mode = cfg.layer_decay_mode(state.normalized);
    let lambda_eff = cfg.effective_lambda(gamma_t, gamma_max, state.normalized)?;
    let (buffered, direct) = match mode {
        DecayMode::Uncoupled => (0.0, lambda_eff),
        _ => (lambda_eff, 0.0),
    };
    let beta = cfg.momentum;
    let scale = 1.0 - cfg.dampening;

    let m: Vec<f64> = state
        .m
        .iter()
        .zip(grad)
        .zip(&state.x)
        .map(|((m, g), x)| beta * m + scale * (g + buffered * x))
        .collect();
    let x: Vec<f64> = state
        .x
        .iter()
        .zip(&m)
        .map(|(x, m)| x - gamma_t * m - direct * x)
        .collect();
    if !all_finite(&x) || !all_finite(&m) {
        return Err(Error::PoisonedState(
            "sgd update produced a nonfinite value".into(),
        ));
    }
    state.m = m;
    state.x = x;
    state.step_count += 1;
    Ok(StepInfo {
        decay_mode: mode,
        lambda_eff,
        grad_wnorm: None,
        weight_wnorm: None,
    })
}

/// Adam step with bias correction and `eps` added after the square root.
///
/// The decay coefficient is `gamma_t * lambda_eff` (coupled, corrected) or
/// `lambda` (uncoupled). AdamW subtracts `coef * x`; the coupled style
/// subtracts `coef * x / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    state: &mut LayerState,
    grad: &[f64],
    gamma_t: f64,
    cfg: &OptimizerConfig,
    gamma_max: f64,
) -> Result<StepInfo> {
    check_inputs(state, grad, gamma_t)?;
    let mode = cfg.layer_decay_mode(state.normalized);
    let lambda_eff = cfg.effective_lambda(gamma_t, gamma_max, state.normalized)?;
    let coef = match mode {
        DecayMode::Uncoupled => lambda_eff,
        _ => gamma_t * lambda_eff,
    };

    let t = state.step_count + 1;
    let bias1 = bias_correction(cfg.beta1, t);
    let bias2 = bias_correction(cfg.beta2, t);
    if bias1 == 0.0 || bias2 == 0.0 {
        return Err(Error::PoisonedState(format!(
            "bias correction vanished at step {t}"
        )));
    }

    let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.epsilon);
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(grad)
        .map(|(m, g)| b1 * m + (1.0 - b1) * g)
        .collect();
    let v: Vec<f64> = state
        .v
        .iter()
        .zip(grad)
        .map(|(v, g)| b2 * v + (1.0 - b2) * g * g)
        .collect();
    let a: Vec<f64> = v.iter().map(|v| (v / bias2).sqrt() + eps).collect();

    let x: Vec<f64> = match cfg.adam_decay_style {
        AdamDecayStyle::Decoupled => state
            .x
            .iter()
            .zip(&m)
            .zip(&a)
            .map(|((x, m), a)| x - gamma_t * (m / bias1) / a - coef * x)
            .collect(),
        AdamDecayStyle::Coupled => state
            .x
            .iter()
            .zip(&m)
            .zip(&a)
            .map(|((x, m), a)| x - gamma_t * (m / bias1) / a - coef * x / a)
            .collect(),
    };
    if !all_finite(&x) {
        return Err(Error::PoisonedState(
            "adam update produced a nonfinite value".into(),
        ));
    }

    let (grad_wnorm, weight_wnorm) = if a.iter().all(|a| *a > 0.0) {
        let g2: f64 = grad.iter().zip(&a).map(|(g, a)| g * g / a).sum();
        let x2: f64 = state.x.iter().zip(&a).map(|(x, a)| x * x * a).sum();
        (Some(g2.sqrt()), Some(x2.sqrt()))
    } else {
        (None, None)
    };

    state.m = m;
    state.v = v;
    state.x = x;
    state.step_count = t;
    Ok(StepInfo {
        decay_mode: mode,
        lambda_eff,
        grad_wnorm,
        weight_wnorm,
    })
}

/// Dispatches on `cfg.method`.
pub fn step(
    state: &mut LayerState,
    grad: &[f64],
    gamma_t: f64,
    cfg: &OptimizerConfig,
    gamma_max: f64,
) -> Result<StepInfo> {
    match cfg.method {
        Method::Sgd => sgd_step(state, grad, gamma_t, cfg, gamma_max),
        Method::Adam => adam_step(state, grad, gamma_t, cfg, gamma_max),
    }
}
