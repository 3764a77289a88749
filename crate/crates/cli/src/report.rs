//! Key-value text reports, one `key=value` pair per line.

use std::cmp::Ordering;
use std::fmt::Write;

use wdlab::sim::{Comparison, PhaseReport};
use wdlab::{Method, RunConfig};

use crate::config::PlannedRun;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Warnings for a finished run, including the missing-equilibrium case
/// `lambda = 0`.
pub fn run_warnings(config: &RunConfig, phase: &PhaseReport) -> Vec<String> {
    let mut warnings = Vec::new();
    if config.optimizer.lambda == 0.0 {
        warnings
            .push("lambda is zero: no equilibrium, weight norms grow without bound".to_string());
    }
    warnings.extend(phase.warnings());
    warnings
}

/// Run summary. `probe` holds terminal infinity-norm ratios when they apply.
pub fn summary(run: &PlannedRun, phase: &PhaseReport, probe: Option<&[f64]>) -> String {
    let cfg = &run.config;
    let opt_cfg = &cfg.optimizer;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("run", run.index.to_string());
    for (k, v) in &run.sweep_point {
        kv(&format!("sweep.{k}"), v.clone());
    }
    kv("method", opt_cfg.method.to_string());
    kv("decay_mode", opt_cfg.decay_mode.to_string());
    if opt_cfg.method == Method::Adam {
        kv("adam_decay_style", opt_cfg.adam_decay_style.to_string());
    } else {
        kv("momentum", opt_cfg.momentum.to_string());
        kv("dampening", opt_cfg.dampening.to_string());
    }
    kv("lambda", opt_cfg.lambda.to_string());
    kv("schedule", cfg.schedule.kind.to_string());
    kv("gamma_max", cfg.schedule.gamma_max.to_string());
    kv("steps", cfg.total_steps.to_string());
    kv("seed", cfg.seed.to_string());
    kv("layers", phase.layers.len().to_string());
    for (l, p) in phase.layers.iter().enumerate() {
        kv(&format!("layer.{l}.burn_in_end"), p.burn_in_end.to_string());
        kv(&format!("layer.{l}.converged"), p.converged.to_string());
        kv(
            &format!("layer.{l}.stationary_tracking_error"),
            opt(p.stationary_tracking_error),
        );
        kv(
            &format!("layer.{l}.tail_blowup_factor"),
            p.tail_blowup_factor.to_string(),
        );
        kv(
            &format!("layer.{l}.final_weight_norm_ratio"),
            p.final_weight_norm_ratio.to_string(),
        );
        kv(
            &format!("layer.{l}.terminal_tracked_ratio"),
            p.terminal_tracked_ratio.to_string(),
        );
        kv(
            &format!("layer.{l}.terminal_weight_norm"),
            p.terminal_weight_norm.to_string(),
        );
        if let Some(values) = probe {
            kv(&format!("layer.{l}.infnorm_probe"), values[l].to_string());
        }
    }
    let warnings = run_warnings(cfg, phase);
    kv("warning", (!warnings.is_empty()).to_string());
    kv("warnings", warnings.len().to_string());
    for (i, w) in warnings.iter().enumerate() {
        kv(&format!("warning.{i}"), w.clone());
    }
    s
}

fn ordering_word(o: Ordering) -> &'static str {
    match o {
        Ordering::Less => "less",
        Ordering::Equal => "equal",
        Ordering::Greater => "greater",
    }
}

fn max_dev_from_one(values: &[f64]) -> f64 {
    values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
}

/// Comparison of `a` against `b`; deltas are `b - a` and orderings describe
/// `a` relative to `b`.
pub fn comparison(cmp: &Comparison, a_name: &str, b_name: &str, steps: usize) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("a", a_name.to_string());
    kv("b", b_name.to_string());
    kv("steps", steps.to_string());
    kv("layers", cmp.layers.len().to_string());
    for (l, c) in cmp.layers.iter().enumerate() {
        let p = |k: &str| format!("layer.{l}.{k}");
        kv(&p("final_weight_norm.a"), c.final_weight_norm.0.to_string());
        kv(&p("final_weight_norm.b"), c.final_weight_norm.1.to_string());
        kv(
            &p("final_weight_norm.delta"),
            c.final_weight_norm_delta.to_string(),
        );
        kv(
            &p("tail_blowup_factor.a"),
            c.tail_blowup_factor.0.to_string(),
        );
        kv(
            &p("tail_blowup_factor.b"),
            c.tail_blowup_factor.1.to_string(),
        );
        kv(
            &p("tail_blowup_factor.delta"),
            c.tail_blowup_delta.to_string(),
        );
        kv(
            &p("final_weight_norm_ratio.a"),
            c.final_weight_norm_ratio.0.to_string(),
        );
        kv(
            &p("final_weight_norm_ratio.b"),
            c.final_weight_norm_ratio.1.to_string(),
        );
        kv(
            &p("final_weight_norm_ratio.delta"),
            c.final_weight_norm_ratio_delta.to_string(),
        );
        kv(
            &p("grad_norm_ratio.max_dev"),
            max_dev_from_one(&c.grad_norm_ratio).to_string(),
        );
        kv(
            &p("weight_norm_ratio.max_dev"),
            max_dev_from_one(&c.weight_norm_ratio).to_string(),
        );
        kv(
            &p("ema_ratio_ratio.max_dev"),
            max_dev_from_one(&c.ema_ratio_ratio).to_string(),
        );
        kv(
            &p("weight_norm_ordering"),
            ordering_word(c.weight_norm_ordering).to_string(),
        );
    }
    s
}
