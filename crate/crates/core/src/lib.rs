//! Two-timescale edge computing simulator: per-frame service deployment by
//! independent Double-DQN agents and per-slot task scheduling by convex
//! optimization.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod delay;
pub mod error;
pub mod harness;
pub mod model;
pub mod rl;
pub mod scheduler;
pub mod seeding;
pub mod workload;

pub use config::ConfigFile;
pub use error::{Error, Result};
pub use model::{DeploymentPlan, ResourceAllocation, ServiceSpec, SystemConfig};
pub use rl::TrainingConfig;
pub use scheduler::{solve_slot, SlotSolution, SolverSettings};
pub use workload::{ArrivalMatrix, ArrivalProcess, WorkloadConfig};
pub use baselines::BaselineKind;
pub use harness::{run, RunOptions, RunOutput, Scheme};
