//! Outer-loop optimizers over flat parameter buffers.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, MemError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Sgd, OptimizerKind::Rmsprop, OptimizerKind::Adam];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// First-moment decay (adam).
    pub beta1: f64,
    /// Second-moment decay (adam, and the rmsprop accumulator).
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Rmsprop,
            beta2: 0.99,
            ..Self::sgd(lr)
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it yields the untrained curve
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(MemError::Invalid(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(MemError::Invalid(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(MemError::Invalid("eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-buffer moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub cfg: OptimizerConfig,
    pub t: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptState {
    pub fn new(cfg: OptimizerConfig, shapes: &[usize]) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            t: 0,
            first: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            second: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        })
    }
}

/// Applies one update in place.
pub fn outer_optimizer_step(state: &mut OptState, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(shape_err("outer_optimizer_step buffers", state.first.len(), params.len()));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(shape_err("outer_optimizer_step buffer", m.len(), format!("{} / {}", p.len(), g.len())));
        }
    }
    state.t += 1;
    let c = state.cfg;
    match c.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                for (pi, gi) in p.iter_mut().zip(g.iter()) {
                    *pi -= c.lr * gi;
                }
            }
        }
        OptimizerKind::Rmsprop => {
            for ((p, g), s) in params.iter_mut().zip(grads).zip(state.second.iter_mut()) {
                for ((pi, gi), si) in p.iter_mut().zip(g.iter()).zip(s.iter_mut()) {
                    *si = c.beta2 * *si + (1.0 - c.beta2) * gi * gi;
                    *pi -= c.lr * gi / (si.sqrt() + c.eps);
                }
            }
        }
        OptimizerKind::Adam => {
            let bc1 = 1.0 - c.beta1.powi(state.t as i32);
            let bc2 = 1.0 - c.beta2.powi(state.t as i32);
            for (((p, g), m), v) in params
                .iter_mut()
                .zip(grads)
                .zip(state.first.iter_mut())
                .zip(state.second.iter_mut())
            {
                for (((pi, gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                    *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *pi -= c.lr * mhat / (vhat.sqrt() + c.eps);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(cfg: OptimizerConfig, p: &mut Vec<f64>, g: &[f64]) -> OptState {
        let mut st = OptState::new(cfg, &[p.len()]).unwrap();
        outer_optimizer_step(&mut st, &mut [p.as_mut_slice()], &[g]).unwrap();
        st
    }

    #[test]
    fn sgd_unit_lr() {
        let mut p = vec![1.0, -2.0];
        run(OptimizerConfig::sgd(1.0), &mut p, &[0.5, 0.25]);
        assert_eq!(p, vec![0.5, -2.25]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = OptimizerConfig::adam(0.1);
        let g = [3.0, -0.002, 0.0];
        let mut p = vec![0.0; 3];
        run(cfg, &mut p, &g);
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        for (pi, gi) in p.iter().zip(g) {
            let want = -0.1 * gi / (gi.abs() + cfg.eps);
            assert!((pi - want).abs() < 1e-15);
        }
        assert!((p[0] + 0.1).abs() < 1e-8 && (p[1] - 0.1).abs() < 1e-5);
    }

    #[test]
    fn rmsprop_zero_grad_decays_accumulator() {
        let cfg = OptimizerConfig::rmsprop(0.01);
        let mut st = OptState::new(cfg, &[2]).unwrap();
        st.second[0] = vec![1.0, 4.0];
        let mut p = vec![0.3, 0.7];
        outer_optimizer_step(&mut st, &mut [p.as_mut_slice()], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.3, 0.7]);
        assert_eq!(st.second[0], vec![cfg.beta2, 4.0 * cfg.beta2]);
    }

    #[test]
    fn rejects_bad_constants_and_shapes() {
        let mut c = OptimizerConfig::adam(0.1);
        c.beta1 = 1.0;
        assert!(OptState::new(c, &[1]).is_err());
        assert!(OptState::new(OptimizerConfig::sgd(-1.0), &[1]).is_err());
        let mut st = OptState::new(OptimizerConfig::sgd(1.0), &[2]).unwrap();
        let mut p = vec![0.0; 3];
        assert!(outer_optimizer_step(&mut st, &mut [p.as_mut_slice()], &[&[0.0; 3]]).is_err());
    }
}
