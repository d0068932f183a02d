//! Synthesizes executable multi-step tasks for tool-using agents from tool
//! schemas, validates them, and scores agent rollouts against them.
//!
//! The stages are: a [`registry::ToolRegistry`] of typed tools, a
//! [`graph::ToolGraph`] of data-flow edges, a stateful simulator
//! ([`env::Environment`]), a DFS [`sampler`], [`synth`]esis of task
//! instructions, corpus [`validate`]ion, [`react`] rollouts and [`reward`]
//! scoring. [`pipeline`] wires them together.

pub mod env;
pub mod graph;
pub mod hash;
pub mod pipeline;
pub mod react;
pub mod registry;
pub mod reward;
pub mod rpc;
pub mod sampler;
pub mod seed;
pub mod synth;
pub mod text;
pub mod validate;

pub use env::{Environment, Episode, ToolResult, ToolStatus};
pub use graph::{DependencyEdge, ToolGraph};
pub use pipeline::{PipelineConfig, PipelineError};
pub use react::{RolloutTranscript, Terminal};
pub use registry::{Args, RegistryError, ToolKind, ToolRegistry, ToolSpec};
pub use reward::{MatchMode, MatchReport, RewardWeights, ScoreRecord};
pub use sampler::{Trajectory, TrajectoryStep};
pub use seed::SeedData;
pub use synth::TaskCandidate;
pub use validate::ValidationReport;
