//! Chunk-wise evaluation of the windowed recurrences.
//!
//! The stream is cut into chunks of `b` tokens. Inside a chunk every
//! gradient is taken at the state the chunk started from, `M_{t′}`, so all of
//! them can be computed at once. Windowed sums are formed by contracting the
//! per-token gradients with the band mask, and the memory at position `t` is
//!
//! `M_t = (Π_{s=t′..t} α_s) M_{t′} − Σ_{n=t′..t} (Π_{s=n+1..t} α_s) η_n G_n`.
//!
//! For a window that reaches back into an earlier chunk, the earlier tokens
//! are re-evaluated at the current chunk's start state as well. With `b = 1`
//! the result is the sequential recurrence.
//!
//! Momentum rules additionally expand `S_t` in closed form from the frozen
//! gradients; Newton-Schulz is then applied to every `S_t` independently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MemError, Result};
use crate::linalg::{Mat, Vector};
use crate::memory_arch::{GradState, MemoryState};
use crate::rules::{orthogonalize, RuleConfig, RuleKind, RuleState, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    /// Chunk size `b`.
    pub b: usize,
    /// Window length `c`.
    pub c: usize,
}

impl ChunkPlan {
    pub fn new(b: usize, c: usize) -> Result<Self> {
        if b == 0 || c == 0 {
            return Err(MemError::Invalid(format!(
                "chunk plan needs b >= 1 and c >= 1 (got b={b}, c={c})"
            )));
        }
        Ok(Self { b, c })
    }
}

/// `b × b` band: ones on the diagonal and the `c − 1` entries to its left.
pub fn build_window_mask(b: usize, c: usize) -> Mat {
    let mut m = Mat::zeros(b, b);
    for i in 0..b {
        for j in i.saturating_sub(c.saturating_sub(1))..=i {
            m.set(i, j, 1.0);
        }
    }
    m
}

/// Closed-form momentum `S_t = β_t S₀ − Σ_{i≤t} (Π_{s=i+1..t} θ_s) η_i u_i`
/// with `β_t = θ_t ⋯ θ_1`, i.e. the unrolled `S_t = θ_t S_{t−1} − η_t u_t`.
pub fn expand_momentum(
    us: &[GradState],
    thetas: &[f64],
    etas: &[f64],
    s0: &GradState,
) -> Result<Vec<GradState>> {
    if us.len() != thetas.len() || us.len() != etas.len() {
        return Err(MemError::Invalid(format!(
            "expand_momentum: {} gradients, {} thetas, {} etas",
            us.len(),
            thetas.len(),
            etas.len()
        )));
    }
    (0..us.len())
        .into_par_iter()
        .map(|t| {
            let beta: f64 = thetas[..=t].iter().fold(1.0, |acc, th| acc * th);
            let mut s = s0.scaled(beta);
            for i in 0..=t {
                let decay: f64 = thetas[i + 1..=t].iter().fold(1.0, |acc, th| acc * th);
                s.axpy(-(decay * etas[i]), &us[i])?;
            }
            Ok(s)
        })
        .collect()
}

/// Result of a chunked run.
#[derive(Debug, Clone)]
pub struct ChunkRun {
    pub outputs: Vec<Vector>,
    pub state: RuleState,
    pub plan: ChunkPlan,
}

struct Lifted {
    phi: Vec<Vector>,
    v: Vec<Vector>,
    phi_q: Vec<Vector>,
}

fn lift_stream(cfg: &RuleConfig, stream: &[Token]) -> Result<Lifted> {
    let lift = |x: &Vector| cfg.map.apply(x);
    let phi = stream.par_iter().map(|t| lift(&t.k)).collect::<Result<Vec<_>>>()?;
    let phi_q = stream.par_iter().map(|t| lift(&t.q)).collect::<Result<Vec<_>>>()?;
    let v = stream.iter().map(|t| t.v.clone()).collect();
    Ok(Lifted { phi, v, phi_q })
}

/// Window gate for a token `offset` steps before the newest.
fn gamma(cfg: &RuleConfig, tok: &Token, offset: usize) -> f64 {
    if cfg.kind.windowed() {
        tok.gates.gammas[cfg.window - 1 - offset]
    } else {
        1.0
    }
}

/// Raw window gradients `G_n` for every position of the chunk `[start, end)`,
/// all evaluated at `anchor`.
fn frozen_window_grads(
    cfg: &RuleConfig,
    anchor: &MemoryState,
    lifted: &Lifted,
    stream: &[Token],
    start: usize,
    end: usize,
) -> Result<Vec<GradState>> {
    let c = cfg.effective_window();
    let tail = start.min(c - 1);
    let first = start - tail;
    let ext = end - first;
    let bias = cfg.kind.bias();

    let per_token: Vec<GradState> = (first..end)
        .into_par_iter()
        .map(|i| bias.loss_grad(anchor, &lifted.phi[i], &lifted.v[i]).map(|(_, g)| g))
        .collect::<Result<_>>()?;

    let mask = build_window_mask(ext, c);
    let mut out = Vec::with_capacity(end - start);
    for n in tail..ext {
        let tok = &stream[first + n];
        let mut g = GradState::zeros_like(anchor);
        for (i, gi) in per_token.iter().enumerate().take(n + 1) {
            let w = mask.get(n, i);
            if w == 0.0 {
                continue;
            }
            let weight = w * gamma(cfg, tok, n - i);
            if weight == 0.0 {
                continue;
            }
            g.axpy(weight, gi)?;
        }
        out.push(g);
    }
    Ok(out)
}

fn check_tokens(cfg: &RuleConfig, stream: &[Token]) -> Result<()> {
    for tok in stream {
        tok.gates.validate()?;
        if cfg.kind.windowed() && tok.gates.gammas.len() != cfg.window {
            return Err(MemError::Invalid(format!(
                "expected {} window gates, got {}",
                cfg.window,
                tok.gates.gammas.len()
            )));
        }
    }
    Ok(())
}

fn finish_state(cfg: &RuleConfig, memory: MemoryState, momentum: Option<GradState>, lifted: &Lifted) -> RuleState {
    let mut state = RuleState::new(cfg, memory);
    if momentum.is_some() {
        state.momentum = momentum;
    }
    let n = lifted.phi.len();
    for i in n.saturating_sub(state.window_cap)..n {
        state.push(lifted.phi[i].clone(), lifted.v[i].clone());
    }
    state
}

/// Products `Π_{s=from..=to} α_s` over stream positions.
fn alpha_prod(stream: &[Token], from: usize, to: usize) -> f64 {
    (from..=to).fold(1.0, |acc, s| acc * stream[s].gates.alpha)
}

/// Memory at every chunk position from per-position additive terms:
/// `M_t = (Π α) M_{t′} + Σ_n (Π_{s>n} α_s) coef_n · U_n`.
fn chunk_states(
    anchor: &MemoryState,
    stream: &[Token],
    start: usize,
    coefs: &[f64],
    updates: &[GradState],
) -> Result<Vec<MemoryState>> {
    (0..updates.len())
        .map(|j| {
            let t = start + j;
            let mut m = anchor.clone();
            let carry = alpha_prod(stream, start, t);
            for w in &mut m.weights {
                w.scale_in_place(carry);
            }
            for n in 0..=j {
                let decay = alpha_prod(stream, start + n + 1, t);
                let coef = decay * coefs[n];
                for (w, u) in m.weights.iter_mut().zip(&updates[n].grads) {
                    w.axpy(coef, u)?;
                }
            }
            Ok(m)
        })
        .collect()
}

/// Chunked Omega-family recurrence (every rule without momentum).
pub fn chunked_omega(
    cfg: &RuleConfig,
    memory: MemoryState,
    stream: &[Token],
    plan: ChunkPlan,
) -> Result<ChunkRun> {
    cfg.validate()?;
    if cfg.kind.has_momentum() {
        return Err(MemError::Unsupported {
            rule: cfg.kind.name(),
            what: "chunked_omega (use chunked_titans / chunked_atlas)".into(),
        });
    }
    check_window(cfg, plan)?;
    check_tokens(cfg, stream)?;
    let lifted = lift_stream(cfg, stream)?;
    let scale = cfg.kind.bias().direction_scale();
    let mut anchor = memory;
    let mut outputs = Vec::with_capacity(stream.len());
    let mut start = 0;
    while start < stream.len() {
        let end = (start + plan.b).min(stream.len());
        let grads = frozen_window_grads(cfg, &anchor, &lifted, stream, start, end)?;
        let coefs: Vec<f64> = (start..end).map(|t| -(stream[t].gates.eta * scale)).collect();
        let states = chunk_states(&anchor, stream, start, &coefs, &grads)?;
        for (j, m) in states.iter().enumerate() {
            outputs.push(m.forward(&lifted.phi_q[start + j])?);
        }
        anchor = states.into_iter().last().expect("non-empty chunk");
        start = end;
    }
    Ok(ChunkRun {
        outputs,
        state: finish_state(cfg, anchor, None, &lifted),
        plan,
    })
}

fn check_window(cfg: &RuleConfig, plan: ChunkPlan) -> Result<()> {
    if plan.c != cfg.effective_window() {
        return Err(MemError::Invalid(format!(
            "chunk plan window {} does not match rule window {}",
            plan.c,
            cfg.effective_window()
        )));
    }
    Ok(())
}

/// Chunked Titans: frozen gradients, closed-form momentum, then `M ← α M + S`.
pub fn chunked_titans(
    cfg: &RuleConfig,
    memory: MemoryState,
    stream: &[Token],
    plan: ChunkPlan,
) -> Result<ChunkRun> {
    chunked_momentum(cfg, memory, stream, plan, RuleKind::Titans)
}

/// Chunked Atlas: frozen gradients, closed-form momentum, Newton-Schulz on
/// every `S_t` in parallel, then `M ← α M − η NS(S)`.
pub fn chunked_atlas(
    cfg: &RuleConfig,
    memory: MemoryState,
    stream: &[Token],
    plan: ChunkPlan,
) -> Result<ChunkRun> {
    chunked_momentum(cfg, memory, stream, plan, RuleKind::Atlas)
}

fn chunked_momentum(
    cfg: &RuleConfig,
    memory: MemoryState,
    stream: &[Token],
    plan: ChunkPlan,
    kind: RuleKind,
) -> Result<ChunkRun> {
    cfg.validate()?;
    if cfg.kind != kind {
        return Err(MemError::Invalid(format!(
            "expected a {} config, got {}",
            kind.name(),
            cfg.kind.name()
        )));
    }
    check_window(cfg, plan)?;
    check_tokens(cfg, stream)?;
    let lifted = lift_stream(cfg, stream)?;
    let scale = cfg.kind.bias().direction_scale();
    let mut anchor = memory;
    let mut momentum = GradState::zeros_like(&anchor);
    let mut outputs = Vec::with_capacity(stream.len());
    let mut start = 0;
    while start < stream.len() {
        let end = (start + plan.b).min(stream.len());
        let raw = frozen_window_grads(cfg, &anchor, &lifted, stream, start, end)?;
        let us: Vec<GradState> = raw.iter().map(|g| g.scaled(scale)).collect();
        let chunk = &stream[start..end];
        let (decays, etas): (Vec<f64>, Vec<f64>) = match kind {
            // S ← η S − θ u
            RuleKind::Titans => chunk.iter().map(|t| (t.gates.eta, t.gates.theta)).unzip(),
            // S ← θ S + u
            _ => chunk.iter().map(|t| (t.gates.theta, -1.0)).unzip(),
        };
        let momenta = expand_momentum(&us, &decays, &etas, &momentum)?;
        let (coefs, updates): (Vec<f64>, Vec<GradState>) = match kind {
            RuleKind::Titans => (vec![1.0; momenta.len()], momenta.clone()),
            _ => {
                let ortho: Vec<GradState> = momenta
                    .par_iter()
                    .map(|s| orthogonalize(s, cfg.ns_steps, cfg.ns_poly))
                    .collect();
                (chunk.iter().map(|t| -t.gates.eta).collect(), ortho)
            }
        };
        let states = chunk_states(&anchor, stream, start, &coefs, &updates)?;
        for (j, m) in states.iter().enumerate() {
            outputs.push(m.forward(&lifted.phi_q[start + j])?);
        }
        anchor = states.into_iter().last().expect("non-empty chunk");
        momentum = momenta.into_iter().last().expect("non-empty chunk");
        start = end;
    }
    Ok(ChunkRun {
        outputs,
        state: finish_state(cfg, anchor, Some(momentum), &lifted),
        plan,
    })
}

/// Dispatches to the chunked evaluator for the configured rule.
pub fn chunked_run(
    cfg: &RuleConfig,
    memory: MemoryState,
    stream: &[Token],
    plan: ChunkPlan,
) -> Result<ChunkRun> {
    match cfg.kind {
        RuleKind::Titans => chunked_titans(cfg, memory, stream, plan),
        RuleKind::Atlas => chunked_atlas(cfg, memory, stream, plan),
        _ => chunked_omega(cfg, memory, stream, plan),
    }
}
