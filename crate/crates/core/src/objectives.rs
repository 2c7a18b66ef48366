//! Windowed attentional bias: `Σᵢ γᵢ · ℓ(M; φ(kᵢ), vᵢ)` over the last `c` tokens.

use serde::{Deserialize, Serialize};

use crate::error::{MemError, Result};
use crate::linalg::Vector;
use crate::memory_arch::{GradState, MemoryState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    /// `‖M(φ) − v‖²`
    L2,
    /// `⟨M(φ), v⟩`
    Dot,
}

impl BiasKind {
    /// Multiplier turning the raw gradient into the update direction `d` of
    /// `M ← α·M − η·d`.
    ///
    /// The ℓ2 rules are written with the half-squared error (`d = (M(φ) − v)φᵀ`
    /// for a matrix memory); the dot bias is a similarity that the memory
    /// climbs, so `d = −v φᵀ` and the step adds `η v φᵀ`.
    pub fn direction_scale(self) -> f64 {
        match self {
            BiasKind::L2 => 0.5,
            BiasKind::Dot => -1.0,
        }
    }

    pub fn loss_grad(self, m: &MemoryState, phi_k: &[f64], v: &[f64]) -> Result<(f64, GradState)> {
        match self {
            BiasKind::L2 => m.grad_l2(phi_k, v),
            BiasKind::Dot => m.grad_dot(phi_k, v),
        }
    }
}

/// Window length and per-offset gates. `gammas[c − 1]` weighs the newest token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLoss {
    pub c: usize,
    pub gammas: Vec<f64>,
    pub base: BiasKind,
}

impl WindowLoss {
    pub fn new(c: usize, gammas: Vec<f64>, base: BiasKind) -> Result<Self> {
        let wl = Self { c, gammas, base };
        wl.validate()?;
        Ok(wl)
    }

    pub fn uniform(c: usize, gamma: f64, base: BiasKind) -> Result<Self> {
        Self::new(c, vec![gamma; c], base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c == 0 {
            return Err(MemError::Invalid("window length c must be >= 1".into()));
        }
        if self.gammas.len() != self.c {
            return Err(MemError::Invalid(format!(
                "expected {} window gates, got {}",
                self.c,
                self.gammas.len()
            )));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(MemError::Invalid(format!("window gate {g} outside [0, 1]")));
        }
        Ok(())
    }

    /// Gate for position `j` of a window holding `len` tokens (oldest first).
    pub fn gate_at(&self, j: usize, len: usize) -> f64 {
        self.gammas[self.c - len + j]
    }
}

/// Loss and gradient of the gated window. `window` runs oldest to newest and may
/// be shorter than `c` at the start of a sequence.
pub fn omega_loss_grad(
    m: &MemoryState,
    window: &[(Vector, Vector)],
    wl: &WindowLoss,
) -> Result<(f64, GradState)> {
    wl.validate()?;
    if window.len() > wl.c {
        return Err(MemError::Invalid(format!(
            "window holds {} pairs but c = {}",
            window.len(),
            wl.c
        )));
    }
    let mut loss = 0.0;
    let mut grad = GradState::zeros_like(m);
    for (j, (phi, v)) in window.iter().enumerate() {
        let gamma = wl.gate_at(j, window.len());
        if gamma == 0.0 {
            continue;
        }
        let (l, g) = wl.base.loss_grad(m, phi, v)?;
        loss += gamma * l;
        grad.axpy(gamma, &g)?;
    }
    Ok((loss, grad))
}
