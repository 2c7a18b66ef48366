//! Training-free associative recall: stream every pair through a rule once,
//! then query each key and decode by nearest neighbour.

use serde::{Deserialize, Serialize};

use crate::error::{MemError, Result};
use crate::linalg::{Mat, Vector};
use crate::memory_arch::MemoryState;
use crate::rng::{seeded_stream, unit_vec};
use crate::rules::{step, GateSource, RuleConfig, RuleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallTask {
    pub n_pairs: usize,
    pub d: usize,
    /// Extra random unit vectors in the decoding candidate set.
    pub distractors: usize,
    pub seed: u64,
}

/// Keys, values and distractors. Each comes from its own stream, so the
/// task with `n` pairs is a prefix of the task with `n + 1`.
pub struct RecallData {
    pub keys: Vec<Vector>,
    pub values: Vec<Vector>,
    pub distractors: Vec<Vector>,
}

impl RecallTask {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(MemError::Invalid("recall needs n_pairs >= 1".into()));
        }
        if self.d == 0 {
            return Err(MemError::Invalid("recall needs d >= 1".into()));
        }
        Ok(())
    }

    pub fn data(&self) -> RecallData {
        let draw = |stream, n| {
            let mut rng = seeded_stream(self.seed, stream);
            (0..n).map(|_| unit_vec(&mut rng, self.d)).collect::<Vec<_>>()
        };
        RecallData {
            keys: draw(0, self.n_pairs),
            values: draw(1, self.n_pairs),
            distractors: draw(2, self.distractors),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub n_pairs: usize,
    pub accuracy: f64,
    pub mean_error: f64,
    /// `‖M(φ(k_i)) − v_i‖` per pair.
    pub errors: Vec<f64>,
    pub correct: Vec<bool>,
}

fn nearest(y: &[f64], candidates: &[&Vector]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let dist = c.sub(y).norm();
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best.0
}

/// Zero matrix memory sized for the rule's lifted keys.
pub fn zero_matrix_memory(task: &RecallTask, cfg: &RuleConfig) -> Result<MemoryState> {
    let dim = cfg
        .map
        .output_dim(task.d)
        .ok_or(MemError::Capacity {
            dim: usize::MAX,
            limit: crate::feature_maps::MAX_LIFTED_DIM,
        })?;
    Ok(MemoryState::from_matrix(Mat::zeros(task.d, dim)))
}

pub fn run_recall(task: &RecallTask, cfg: &RuleConfig, gates: &GateSource) -> Result<RecallReport> {
    run_recall_with(task, cfg, gates, zero_matrix_memory(task, cfg)?)
}

pub fn run_recall_with(task: &RecallTask, cfg: &RuleConfig, gates: &GateSource, memory: MemoryState) -> Result<RecallReport> {
    task.validate()?;
    cfg.validate()?;
    let data = task.data();
    let mut rs = RuleState::new(cfg, memory);
    for (t, (k, v)) in data.keys.iter().zip(&data.values).enumerate() {
        let phi = cfg.map.apply(k)?;
        let g = gates.gates_for(t, k, &phi)?;
        step(cfg, &mut rs, k, v, &g)?;
    }
    let candidates: Vec<&Vector> = data.values.iter().chain(&data.distractors).collect();
    let mut errors = Vec::with_capacity(task.n_pairs);
    let mut correct = Vec::with_capacity(task.n_pairs);
    for (i, (k, v)) in data.keys.iter().zip(&data.values).enumerate() {
        let y = rs.memory.forward(&cfg.map.apply(k)?)?;
        errors.push(y.sub(v).norm());
        correct.push(nearest(&y, &candidates) == i);
    }
    let hits = correct.iter().filter(|c| **c).count();
    Ok(RecallReport {
        n_pairs: task.n_pairs,
        accuracy: hits as f64 / task.n_pairs as f64,
        mean_error: errors.iter().sum::<f64>() / task.n_pairs as f64,
        errors,
        correct,
    })
}
