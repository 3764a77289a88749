//! Weight decay laboratory.
//!
//! Optimizers (SGD with momentum and dampening, Adam in its coupled and
//! decoupled forms) with three weight-decay modes, learning-rate schedules,
//! gradient sources for scale-invariant layers, and a simulator that tracks
//! the gradient-to-weight ratio of every layer against its steady-state
//! prediction `sqrt(2 * lambda / gamma)`.
//!
//! The corrected decay mode scales the decay coefficient by
//! `gamma_t / gamma_max` on normalized layers, which pins the steady-state
//! ratio to `sqrt(2 * lambda / gamma_max)` for the whole schedule.

#![forbid(unsafe_code)]

pub mod error;
pub mod linalg;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod schedule;
pub mod sim;

pub use error::{Error, Result};
pub use optim::{AdamDecayStyle, LayerState, Method, OptimizerConfig, StepInfo};
pub use schedule::{DecayMode, Schedule, ScheduleKind};
pub use sim::{
    LayerSpec, MlpSpec, OracleKind, PhaseReport, RunConfig, RunOutput, Trajectory, TrajectoryRow,
};
