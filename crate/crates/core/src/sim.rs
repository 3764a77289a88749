//! Multi-layer training loops over the gradient oracles, with every step's
//! norms, ratios and steady-state predictions recorded.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::{ema_update, inf_norm, l2_norm};
use crate::optim::{self, AdamDecayStyle, LayerState, Method, OptimizerConfig};
use crate::oracle::{mlp_gradient, Activation, Batch, SyntheticOracle, TinyMlp};
use crate::rng::GaussianStream;
use crate::schedule::{predicted_ratio, DecayMode, Schedule, ScheduleKind};

/// Relative error below which a ratio counts as tracking its prediction.
pub const BURN_IN_TOLERANCE: f64 = 0.05;
/// Consecutive tracking steps required to end burn-in.
pub const BURN_IN_WINDOW: usize = 100;
/// Fraction of the run at which the tail is measured.
pub const TAIL_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    /// Weight vector length. For the MLP oracle this is the layer's output
    /// width instead.
    pub dim: usize,
    /// Initial `||x_0||` for the synthetic oracle; a multiplier on the default
    /// initialization for the MLP oracle.
    pub initial_scale: f64,
    /// Gradient scale of the synthetic oracle, ignored by the MLP.
    pub sigma: f64,
    pub normalized: bool,
}

impl LayerSpec {
    pub fn new(dim: usize, initial_scale: f64, sigma: f64) -> Self {
        Self {
            dim,
            initial_scale,
            sigma,
            normalized: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub batch_size: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleKind {
    Synthetic,
    /// A fresh random batch is drawn every step.
    Mlp(MlpSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub layers: Vec<LayerSpec>,
    pub oracle: OracleKind,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub total_steps: usize,
    pub ema_decay: f64,
    pub seed: u64,
}

impl RunConfig {
    /// Synthetic-oracle run over the whole schedule with EMA decay 0.99.
    pub fn synthetic(
        layers: Vec<LayerSpec>,
        optimizer: OptimizerConfig,
        schedule: Schedule,
        seed: u64,
    ) -> Self {
        Self {
            layers,
            oracle: OracleKind::Synthetic,
            optimizer,
            total_steps: schedule.total_steps,
            schedule,
            ema_decay: 0.99,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("layers", "at least one layer is required"));
        }
        if self.total_steps < 10 {
            return Err(Error::config("run.steps", "must be >= 10"));
        }
        if self.schedule.total_steps != self.total_steps {
            return Err(Error::config(
                "run.steps",
                "schedule length must equal the number of run steps",
            ));
        }
        self.schedule.validate()?;
        self.optimizer.validate()?;
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::config("run.ema_decay", "must lie in (0, 1)"));
        }
        for layer in &self.layers {
            if !(layer.initial_scale.is_finite() && layer.initial_scale > 0.0) {
                return Err(Error::config(
                    "layers.initial_scale",
                    "must be finite and > 0",
                ));
            }
            if !(layer.sigma.is_finite() && layer.sigma > 0.0) {
                return Err(Error::config("layers.sigma", "must be finite and > 0"));
            }
            let min_dim = match self.oracle {
                OracleKind::Synthetic => 2,
                OracleKind::Mlp(_) => 1,
            };
            if layer.dim < min_dim {
                return Err(Error::config("layers.dim", format!("must be >= {min_dim}")));
            }
        }
        if let OracleKind::Mlp(mlp) = &self.oracle {
            if mlp.input_dim == 0 {
                return Err(Error::config("run.mlp_input_dim", "must be >= 1"));
            }
            if mlp.batch_size == 0 {
                return Err(Error::config("run.mlp_batch", "must be >= 1"));
            }
            if !self.layers.iter().any(|l| l.normalized) {
                return Err(Error::config(
                    "layers.normalized",
                    "the mlp oracle needs at least one normalized layer",
                ));
            }
        }
        Ok(())
    }
}

/// One layer at one step. Norms are taken at `x_t`, before the update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub layer: usize,
    pub gamma_t: f64,
    pub lambda_eff: f64,
    pub grad_norm: f64,
    pub weight_norm: f64,
    pub ratio: f64,
    pub ema_ratio: f64,
    /// `None` where the prediction is undefined (coupled decay at `gamma_t = 0`).
    pub predicted_ratio: Option<f64>,
    /// `||g||_{A^-1}`, Adam runs only.
    pub grad_wnorm: Option<f64>,
    /// `||x||_A`, Adam runs only.
    pub weight_wnorm: Option<f64>,
}

/// Rows ordered by `(step, layer)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    num_layers: usize,
    num_steps: usize,
    rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    /// Checks that `rows` is a complete `(step, layer)` grid in order.
    pub fn from_rows(rows: Vec<TrajectoryRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("trajectory has no rows"));
        }
        let num_layers = rows.iter().take_while(|r| r.step == rows[0].step).count();
        if !rows.len().is_multiple_of(num_layers) {
            return Err(Error::invalid(
                "trajectory rows do not form a complete grid",
            ));
        }
        let num_steps = rows.len() / num_layers;
        for (i, r) in rows.iter().enumerate() {
            if r.step != i / num_layers || r.layer != i % num_layers {
                return Err(Error::invalid(format!(
                    "row {i} is (step {}, layer {}), expected (step {}, layer {})",
                    r.step,
                    r.layer,
                    i / num_layers,
                    i % num_layers
                )));
            }
        }
        Ok(Self {
            num_layers,
            num_steps,
            rows,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn row(&self, step: usize, layer: usize) -> &TrajectoryRow {
        &self.rows[step * self.num_layers + layer]
    }

    pub fn layer_rows(&self, layer: usize) -> impl Iterator<Item = &TrajectoryRow> {
        self.rows.iter().skip(layer).step_by(self.num_layers)
    }

    pub fn series(&self, layer: usize, f: impl Fn(&TrajectoryRow) -> f64) -> Vec<f64> {
        self.layer_rows(layer).map(f).collect()
    }

    pub fn last(&self, layer: usize) -> &TrajectoryRow {
        self.row(self.num_steps - 1, layer)
    }

    fn mid_step(&self) -> usize {
        self.num_steps / 2
    }

    fn tail_step(&self) -> usize {
        ((TAIL_FRACTION * self.num_steps as f64).floor() as usize).min(self.num_steps - 1)
    }

    /// `ema_ratio` at `0.95 T` over `ema_ratio` at `T / 2`.
    pub fn tail_blowup_factor(&self, layer: usize) -> f64 {
        self.row(self.tail_step(), layer).ema_ratio / self.row(self.mid_step(), layer).ema_ratio
    }

    /// Terminal weight norm over the weight norm at `T / 2`.
    pub fn final_weight_norm_ratio(&self, layer: usize) -> f64 {
        self.last(layer).weight_norm / self.row(self.mid_step(), layer).weight_norm
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    /// Layer states after the last update.
    pub final_states: Vec<LayerState>,
}

fn abort(step: usize, layer: usize, err: Error) -> Error {
    Error::Aborted {
        step,
        layer,
        reason: err.to_string(),
    }
}

enum Oracles {
    Synthetic(Vec<SyntheticOracle>),
    Mlp { net: TinyMlp, spec: MlpSpec },
}

fn init_states(config: &RunConfig, rng: &mut GaussianStream) -> Result<(Vec<LayerState>, Oracles)> {
    match &config.oracle {
        OracleKind::Synthetic => {
            let mut states = Vec::with_capacity(config.layers.len());
            let mut oracles = Vec::with_capacity(config.layers.len());
            for layer in &config.layers {
                let mut x = rng.normal_vec(layer.dim, 1.0);
                let scale = layer.initial_scale / l2_norm(&x)?;
                x.iter_mut().for_each(|v| *v *= scale);
                states.push(LayerState::new(x, layer.normalized)?);
                oracles.push(SyntheticOracle::new(layer.sigma, layer.dim)?);
            }
            Ok((states, Oracles::Synthetic(oracles)))
        }
        OracleKind::Mlp(spec) => {
            let widths: Vec<usize> = std::iter::once(spec.input_dim)
                .chain(config.layers.iter().map(|l| l.dim))
                .collect();
            let flags: Vec<bool> = config.layers.iter().map(|l| l.normalized).collect();
            let mut net = TinyMlp::new(&widths, &flags, spec.activation, rng)?;
            for (layer, ls) in net.layers.iter_mut().zip(&config.layers) {
                layer
                    .weights
                    .iter_mut()
                    .for_each(|w| *w *= ls.initial_scale);
            }
            let states = net
                .layers
                .iter()
                .map(|l| LayerState::new(l.weights.clone(), l.normalized))
                .collect::<Result<_>>()?;
            Ok((
                states,
                Oracles::Mlp {
                    net,
                    spec: spec.clone(),
                },
            ))
        }
    }
}

fn prediction(cfg: &OptimizerConfig, mode: DecayMode, gamma_t: f64, gamma_max: f64) -> Option<f64> {
    let gamma_eff = cfg.effective_lr(gamma_t).ok()?;
    let gamma_max_eff = cfg.effective_lr(gamma_max).ok()?;
    predicted_ratio(cfg.lambda, gamma_eff, mode, gamma_max_eff).ok()
}

/// Runs `config.total_steps` steps. Deterministic in `config`.
///
/// A NaN, an infinity or a collapsed weight vector stops the run with
/// [`Error::Aborted`] carrying the step and layer.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut rng = GaussianStream::new(config.seed);
    let (mut states, mut oracles) = init_states(config, &mut rng)?;
    let n_layers = states.len();
    let cfg = &config.optimizer;
    let gamma_max = config.schedule.gamma_max;

    let mut ema: Vec<Option<f64>> = vec![None; n_layers];
    let mut rows = Vec::with_capacity(config.total_steps * n_layers);

    for t in 0..config.total_steps {
        let gamma_t = config.schedule.lr_at(t)?;

        let grads: Vec<Vec<f64>> = match &mut oracles {
            Oracles::Synthetic(list) => list
                .iter()
                .zip(&states)
                .enumerate()
                .map(|(l, (o, s))| o.gradient(&s.x, &mut rng).map_err(|e| abort(t, l, e)))
                .collect::<Result<_>>()?,
            Oracles::Mlp { net, spec } => {
                for (layer, s) in net.layers.iter_mut().zip(&states) {
                    layer.weights.copy_from_slice(&s.x);
                }
                let batch = Batch::random(spec.batch_size, net.in_dim(), net.out_dim(), &mut rng);
                mlp_gradient(net, &batch).map_err(|e| abort(t, 0, e))?.1
            }
        };

        for (l, (state, g)) in states.iter_mut().zip(&grads).enumerate() {
            let grad_norm = l2_norm(g)?;
            let weight_norm = l2_norm(&state.x)?;
            if weight_norm == 0.0 {
                return Err(abort(
                    t,
                    l,
                    Error::DegenerateDirection("weights collapsed to zero".into()),
                ));
            }
            let ratio = grad_norm / weight_norm;
            if !ratio.is_finite() {
                return Err(abort(
                    t,
                    l,
                    Error::PoisonedState("nonfinite gradient-to-weight ratio".into()),
                ));
            }
            let smoothed = match ema[l] {
                None => ratio,
                Some(prev) => ema_update(prev, ratio, config.ema_decay)?,
            };
            ema[l] = Some(smoothed);

            let info =
                optim::step(state, g, gamma_t, cfg, gamma_max).map_err(|e| abort(t, l, e))?;
            rows.push(TrajectoryRow {
                step: t,
                layer: l,
                gamma_t,
                lambda_eff: info.lambda_eff,
                grad_norm,
                weight_norm,
                ratio,
                ema_ratio: smoothed,
                predicted_ratio: prediction(cfg, info.decay_mode, gamma_t, gamma_max),
                grad_wnorm: info.grad_wnorm,
                weight_wnorm: info.weight_wnorm,
            });
        }
    }

    Ok(RunOutput {
        trajectory: Trajectory::from_rows(rows)?,
        final_states: states,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPhase {
    /// First step of a `BURN_IN_WINDOW`-long stretch within
    /// `BURN_IN_TOLERANCE` of the prediction; `T` if there is none.
    pub burn_in_end: usize,
    pub converged: bool,
    /// Mean relative tracking error over `[burn_in_end, T / 2]`.
    pub stationary_tracking_error: Option<f64>,
    pub tail_blowup_factor: f64,
    pub final_weight_norm_ratio: f64,
    /// The smoothed ratio compared against the prediction: `ema_ratio` for
    /// SGD, an EMA of `||g||_{A^-1} / ||x||_A` for Adam.
    pub terminal_tracked_ratio: f64,
    pub terminal_weight_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub layers: Vec<LayerPhase>,
}

impl PhaseReport {
    pub fn warnings(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.converged)
            .map(|(l, _)| format!("layer {l} never reached its steady state"))
            .collect()
    }
}

/// Smoothed ratio series that the steady-state theory speaks about.
pub fn tracked_ratio(
    traj: &Trajectory,
    layer: usize,
    method: Method,
    ema_decay: f64,
) -> Result<Vec<Option<f64>>> {
    match method {
        Method::Sgd => Ok(traj.layer_rows(layer).map(|r| Some(r.ema_ratio)).collect()),
        Method::Adam => {
            let mut acc: Option<f64> = None;
            traj.layer_rows(layer)
                .map(|r| match (r.grad_wnorm, r.weight_wnorm) {
                    (Some(g), Some(x)) if x > 0.0 => {
                        let v = g / x;
                        let next = match acc {
                            None => v,
                            Some(prev) => ema_update(prev, v, ema_decay)?,
                        };
                        acc = Some(next);
                        Ok(Some(next))
                    }
                    _ => Ok(None),
                })
                .collect()
        }
    }
}

/// Burn-in, stationary tracking and tail metrics for every layer.
pub fn analyze(traj: &Trajectory, config: &RunConfig) -> Result<PhaseReport> {
    if traj.num_steps() != config.total_steps || traj.num_layers() != config.layers.len() {
        return Err(Error::invalid("trajectory does not belong to this config"));
    }
    let total = traj.num_steps();
    let mid = traj.mid_step();
    let mut layers = Vec::with_capacity(traj.num_layers());
    for l in 0..traj.num_layers() {
        let tracked = tracked_ratio(traj, l, config.optimizer.method, config.ema_decay)?;
        let rel: Vec<Option<f64>> = tracked
            .iter()
            .zip(traj.layer_rows(l))
            .map(|(obs, row)| match (obs, row.predicted_ratio) {
                (Some(o), Some(p)) if p > 0.0 => Some((o - p).abs() / p),
                _ => None,
            })
            .collect();

        let mut run_len = 0;
        let mut burn_in = None;
        for (t, e) in rel.iter().enumerate() {
            if matches!(e, Some(e) if *e < BURN_IN_TOLERANCE) {
                run_len += 1;
                if run_len == BURN_IN_WINDOW {
                    burn_in = Some(t + 1 - BURN_IN_WINDOW);
                    break;
                }
            } else {
                run_len = 0;
            }
        }
        let burn_in_end = burn_in.unwrap_or(total);
        let window: Vec<f64> = if burn_in_end <= mid {
            rel[burn_in_end..=mid].iter().flatten().copied().collect()
        } else {
            Vec::new()
        };
        let stationary_tracking_error =
            (!window.is_empty()).then(|| window.iter().sum::<f64>() / window.len() as f64);

        layers.push(LayerPhase {
            burn_in_end,
            converged: burn_in.is_some(),
            stationary_tracking_error,
            tail_blowup_factor: traj.tail_blowup_factor(l),
            final_weight_norm_ratio: traj.final_weight_norm_ratio(l),
            terminal_tracked_ratio: tracked
                .iter()
                .rev()
                .flatten()
                .next()
                .copied()
                .unwrap_or(f64::NAN),
            terminal_weight_norm: traj.last(l).weight_norm,
        });
    }
    Ok(PhaseReport { layers })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerComparison {
    /// Per-step `b / a`.
    pub grad_norm_ratio: Vec<f64>,
    pub weight_norm_ratio: Vec<f64>,
    pub ema_ratio_ratio: Vec<f64>,
    pub final_weight_norm: (f64, f64),
    pub final_weight_norm_delta: f64,
    pub tail_blowup_factor: (f64, f64),
    pub tail_blowup_delta: f64,
    pub final_weight_norm_ratio: (f64, f64),
    pub final_weight_norm_ratio_delta: f64,
    /// Ordering of `a`'s terminal weight norm relative to `b`'s.
    pub weight_norm_ordering: Ordering,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub layers: Vec<LayerComparison>,
}

fn safe_ratio(b: f64, a: f64) -> f64 {
    if a == b {
        1.0
    } else {
        b / a
    }
}

/// Side-by-side metrics of two runs of equal shape. Deltas are `b - a`.
pub fn compare(a: &Trajectory, b: &Trajectory) -> Result<Comparison> {
    if a.num_steps() != b.num_steps() {
        return Err(Error::invalid(format!(
            "step counts differ: {} vs {}",
            a.num_steps(),
            b.num_steps()
        )));
    }
    if a.num_layers() != b.num_layers() {
        return Err(Error::invalid(format!(
            "layer counts differ: {} vs {}",
            a.num_layers(),
            b.num_layers()
        )));
    }
    let layers = (0..a.num_layers())
        .map(|l| {
            let per_step = |f: fn(&TrajectoryRow) -> f64| -> Vec<f64> {
                a.layer_rows(l)
                    .zip(b.layer_rows(l))
                    .map(|(ra, rb)| safe_ratio(f(rb), f(ra)))
                    .collect()
            };
            let fw = (a.last(l).weight_norm, b.last(l).weight_norm);
            let tail = (a.tail_blowup_factor(l), b.tail_blowup_factor(l));
            let fwr = (a.final_weight_norm_ratio(l), b.final_weight_norm_ratio(l));
            LayerComparison {
                grad_norm_ratio: per_step(|r| r.grad_norm),
                weight_norm_ratio: per_step(|r| r.weight_norm),
                ema_ratio_ratio: per_step(|r| r.ema_ratio),
                final_weight_norm: fw,
                final_weight_norm_delta: fw.1 - fw.0,
                tail_blowup_factor: tail,
                tail_blowup_delta: tail.1 - tail.0,
                final_weight_norm_ratio: fwr,
                final_weight_norm_ratio_delta: fwr.1 - fwr.0,
                weight_norm_ordering: fw.0.partial_cmp(&fw.1).unwrap_or(Ordering::Equal),
            }
        })
        .collect();
    Ok(Comparison { layers })
}

/// Terminal `||x||_inf / sqrt(gamma / (2 lambda))` per layer, for AdamW runs
/// at constant learning rate.
pub fn infnorm_probe(output: &RunOutput, config: &RunConfig) -> Result<Vec<f64>> {
    let opt = &config.optimizer;
    if opt.method != Method::Adam || opt.adam_decay_style != AdamDecayStyle::Decoupled {
        return Err(Error::invalid("infinity-norm probe needs an AdamW run"));
    }
    if opt.decay_mode == DecayMode::Uncoupled {
        return Err(Error::invalid(
            "infinity-norm probe needs learning-rate coupled decay",
        ));
    }
    if config.schedule.kind != ScheduleKind::Constant {
        return Err(Error::invalid(
            "infinity-norm probe needs a constant learning rate",
        ));
    }
    if !(opt.lambda > 0.0) {
        return Err(Error::config(
            "optimizer.lambda",
            "infinity-norm probe is undefined without weight decay",
        ));
    }
    let reference = (config.schedule.gamma_max / (2.0 * opt.lambda)).sqrt();
    output
        .final_states
        .iter()
        .map(|s| Ok(inf_norm(&s.x)? / reference))
        .collect()
}
