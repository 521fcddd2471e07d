//! Desk-scale harness for a three-role GUI agent loop.
//!
//! The loop splits a long-horizon GUI task across three agents: a planner
//! that turns the high-level instruction plus a running state summary into
//! one atomic instruction per step, an executor that grounds that
//! instruction into a concrete screen action, and a state tracker that
//! compresses the executor's output back into the next state summary.
//!
//! Around that loop the crate provides:
//! - rule-based execution-feedback rewards (format / type / parameter),
//! - group-relative advantage and clipped-surrogate numerics,
//! - a deterministic screen-graph world with a task generator, oracle
//!   solver and toy softmax policies,
//! - two staged rollout pipelines that train the toy policies or emit
//!   training batches for external trainers,
//! - benchmark ingestion and Type/GR/SR scoring plus a temporal-order
//!   probe over logged trajectories.

pub mod agent_io;
pub mod config;
pub mod evalkit;
pub mod grpo;
pub mod model;
pub mod orchestrator;
pub mod reward;
pub mod rollout;
pub mod sim;

pub use model::{
    Action, ActionType, AtomicInstruction, BBox, Direction, ExecutorOutput, GroundTruthStep,
    GrpoConfig, Observation, RewardConfig, ScreenElement, StateSummary, StepLog, TaskRecord,
    TaskStep, Trajectory, TrajectoryStatus,
};
