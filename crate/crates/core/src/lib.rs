//! Test-time memorization laboratory.
//!
//! Sequence memories written by gradient steps on an inner attentional-bias
//! objective: Hebbian, Delta, Titans, Omega, Atlas, DLA, SWLA, DeepTransformer
//! and DOT rules over matrix and residual-MLP memories, with polynomial and
//! truncated-exponential key lifts. Every rule that has a closed form for
//! matrix memories keeps it beside the generic gradient path, and the chunked
//! evaluator is checked against the sequential steppers.

pub mod attention;
pub mod capacity;
pub mod chunk;
pub mod error;
pub mod feature_maps;
pub mod harness;
pub mod linalg;
pub mod memory_arch;
pub mod objectives;
pub mod rng;
pub mod rules;

pub use capacity::{CapacityProbe, CapacityReport, Fit, Lift};
pub use chunk::{ChunkPlan, ChunkRun};
pub use error::{MemError, Result};
pub use feature_maps::{FeatureMapSpec, MapKind};
pub use harness::{LearnabilitySetting, OnlineTrainer, OptimizerConfig, RecallReport, RecallTask, RunRecord, SettingKind};
pub use linalg::{Mat, Vector};
pub use memory_arch::{Activation, Arch, GradState, MemoryDims, MemoryState};
pub use objectives::{BiasKind, WindowLoss};
pub use rules::{GateSource, Gates, RuleConfig, RuleKind, RuleState, Token, UpdatePath};
