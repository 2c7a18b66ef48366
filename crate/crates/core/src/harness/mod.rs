//! Desk-scale experiments built on the memory rules.

pub mod learnability;
pub mod optim;
pub mod recall;
pub mod record;

pub use learnability::{
    gen_setting, run_learnability, LearnabilitySetting, Learner, LearnerSpec, OnlineTrainer, SettingKind,
};
pub use optim::{outer_optimizer_step, OptState, OptimizerConfig, OptimizerKind};
pub use recall::{run_recall, RecallReport, RecallTask};
pub use record::RunRecord;
