//! Token-by-token memory update rules.
//!
//! Every stepper has a generic path that differentiates the attentional bias of
//! whatever [`MemoryState`] it holds. Rules with a linear-memory closed form
//! also expose it through [`UpdatePath::ClosedForm`]; the two paths are kept
//! separate so one can serve as the oracle for the other.
//!
//! Step convention: `M ← α·M − η·d` where `d` is the bias gradient times
//! [`BiasKind::direction_scale`]. For matrix memories that gives
//!
//! * Hebbian / DLA / DeepTransformer: `M ← α M + η v φᵀ`
//! * Delta: `M ← M (αI − η φφᵀ) + η v φᵀ`
//! * Omega / DOT: `M ← M (αI − η Σ γᵢ φᵢφᵢᵀ) + η Σ γᵢ vᵢ φᵢᵀ`
//! * SWLA: `M ← α M + η Σ γᵢ vᵢ φᵢᵀ`
//!
//! Titans keeps the gate roles of its defining recurrence:
//! `S ← η S − θ d`, `M ← α M + S` (so `eta` is the momentum decay and
//! `theta` the step). Atlas uses `S ← θ S + d`, `M ← α M − η NS_k(S)`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{MemError, Result};
use crate::feature_maps::FeatureMapSpec;
use crate::linalg::{newton_schulz_with, Mat, NsPolynomial, Vector, DEFAULT_NS_STEPS};
use crate::memory_arch::{GradState, MemoryState};
use crate::objectives::{omega_loss_grad, BiasKind, WindowLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Hebbian,
    Delta,
    Titans,
    Omega,
    Atlas,
    Dla,
    Swla,
    DeepTransformer,
    Dot,
}

impl RuleKind {
    pub const ALL: [RuleKind; 9] = [
        RuleKind::Hebbian,
        RuleKind::Delta,
        RuleKind::Titans,
        RuleKind::Omega,
        RuleKind::Atlas,
        RuleKind::Dla,
        RuleKind::Swla,
        RuleKind::DeepTransformer,
        RuleKind::Dot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Hebbian => "hebbian",
            RuleKind::Delta => "delta",
            RuleKind::Titans => "titans",
            RuleKind::Omega => "omega",
            RuleKind::Atlas => "atlas",
            RuleKind::Dla => "dla",
            RuleKind::Swla => "swla",
            RuleKind::DeepTransformer => "deeptransformer",
            RuleKind::Dot => "dot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }

    pub fn bias(self) -> BiasKind {
        match self {
            RuleKind::Hebbian | RuleKind::Dla | RuleKind::Swla | RuleKind::DeepTransformer => {
                BiasKind::Dot
            }
            RuleKind::Delta | RuleKind::Titans | RuleKind::Omega | RuleKind::Atlas | RuleKind::Dot => {
                BiasKind::L2
            }
        }
    }

    /// Rules whose bias sums over a sliding window of `c` tokens.
    pub fn windowed(self) -> bool {
        matches!(
            self,
            RuleKind::Omega | RuleKind::Atlas | RuleKind::Swla | RuleKind::Dot
        )
    }

    pub fn has_momentum(self) -> bool {
        matches!(self, RuleKind::Titans | RuleKind::Atlas)
    }

    pub fn has_closed_form(self) -> bool {
        !self.has_momentum()
    }
}

/// Per-step gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gates {
    /// Retention in [0, 1].
    pub alpha: f64,
    /// Step size (momentum decay for Titans).
    pub eta: f64,
    /// Momentum decay (gradient step for Titans).
    pub theta: f64,
    /// Window gates, newest last.
    pub gammas: Vec<f64>,
}

impl Gates {
    pub fn new(alpha: f64, eta: f64, theta: f64, gammas: Vec<f64>) -> Self {
        Self {
            alpha,
            eta,
            theta,
            gammas,
        }
    }

    /// Constant gates with `c` identical window gates.
    pub fn constant(alpha: f64, eta: f64, theta: f64, c: usize, gamma: f64) -> Self {
        Self::new(alpha, eta, theta, vec![gamma; c])
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(MemError::Invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(MemError::Invalid(format!("eta {} must be >= 0", self.eta)));
        }
        if !self.theta.is_finite() || self.theta < 0.0 {
            return Err(MemError::Invalid(format!("theta {} must be >= 0", self.theta)));
        }
        Ok(())
    }
}

/// Where gates come from when a stream is assembled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GateSource {
    Constant(Gates),
    Schedule(Vec<Gates>),
    /// `η_t = scale / ‖φ(k_t)‖²`, other gates fixed.
    NormalizedEta { base: Gates, scale: f64 },
    /// `α_t = σ(w_α·k_t + b_α)` and `η_t = η_max · σ(w_η·k_t + b_η)`.
    TokenSigmoid {
        base: Gates,
        w_alpha: Vec<f64>,
        b_alpha: f64,
        w_eta: Vec<f64>,
        b_eta: f64,
        eta_max: f64,
    },
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GateSource {
    pub fn gates_for(&self, t: usize, k: &[f64], phi_k: &[f64]) -> Result<Gates> {
        match self {
            GateSource::Constant(g) => Ok(g.clone()),
            GateSource::Schedule(list) => list.get(t).cloned().ok_or_else(|| {
                MemError::Invalid(format!("gate schedule has no entry for step {t}"))
            }),
            GateSource::NormalizedEta { base, scale } => {
                let n2 = crate::linalg::dot(phi_k, phi_k);
                let mut g = base.clone();
                g.eta = if n2 > 0.0 { scale / n2 } else { 0.0 };
                Ok(g)
            }
            GateSource::TokenSigmoid {
                base,
                w_alpha,
                b_alpha,
                w_eta,
                b_eta,
                eta_max,
            } => {
                if w_alpha.len() != k.len() || w_eta.len() != k.len() {
                    return Err(crate::error::shape_err("TokenSigmoid", k.len(), w_alpha.len()));
                }
                let mut g = base.clone();
                g.alpha = sigmoid(crate::linalg::dot(w_alpha, k) + b_alpha);
                g.eta = eta_max * sigmoid(crate::linalg::dot(w_eta, k) + b_eta);
                Ok(g)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePath {
    Generic,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub kind: RuleKind,
    pub map: FeatureMapSpec,
    /// Window length `c`; forced to 1 for online rules.
    pub window: usize,
    pub ns_steps: usize,
    pub ns_poly: NsPolynomial,
    pub path: UpdatePath,
}

impl RuleConfig {
    pub fn new(kind: RuleKind, map: FeatureMapSpec) -> Self {
        Self {
            kind,
            map,
            window: 1,
            ns_steps: DEFAULT_NS_STEPS,
            ns_poly: NsPolynomial::CUBIC,
            path: UpdatePath::Generic,
        }
    }

    pub fn with_window(mut self, c: usize) -> Self {
        self.window = c;
        self
    }

    pub fn with_ns_steps(mut self, k: usize) -> Self {
        self.ns_steps = k;
        self
    }

    pub fn with_path(mut self, path: UpdatePath) -> Self {
        self.path = path;
        self
    }

    pub fn effective_window(&self) -> usize {
        if self.kind.windowed() {
            self.window
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        if self.kind.windowed() && self.window == 0 {
            return Err(MemError::Invalid("window length c must be >= 1".into()));
        }
        if self.kind == RuleKind::Atlas && self.ns_steps == 0 {
            return Err(MemError::Invalid("atlas needs ns_steps >= 1".into()));
        }
        Ok(())
    }

    /// Window loss for the given gates (unit gate for online rules).
    pub fn window_loss(&self, gates: &Gates) -> Result<WindowLoss> {
        if self.kind.windowed() {
            WindowLoss::new(self.window, gates.gammas.clone(), self.kind.bias())
        } else {
            WindowLoss::uniform(1, 1.0, self.kind.bias())
        }
    }
}

/// Memory plus the auxiliary state a rule carries between tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleState {
    pub memory: MemoryState,
    pub momentum: Option<GradState>,
    /// Lifted keys and values of the last `c` tokens, oldest first.
    pub window: VecDeque<(Vector, Vector)>,
    pub window_cap: usize,
}

impl RuleState {
    pub fn new(cfg: &RuleConfig, memory: MemoryState) -> Self {
        let momentum = cfg
            .kind
            .has_momentum()
            .then(|| GradState::zeros_like(&memory));
        Self {
            memory,
            momentum,
            window: VecDeque::with_capacity(cfg.effective_window()),
            window_cap: cfg.effective_window(),
        }
    }

    pub fn push(&mut self, phi_k: Vector, v: Vector) {
        self.window.push_back((phi_k, v));
        while self.window.len() > self.window_cap {
            self.window.pop_front();
        }
    }

    pub fn window_pairs(&self) -> Vec<(Vector, Vector)> {
        self.window.iter().cloned().collect()
    }
}

fn require_matrix<'a>(rs: &'a RuleState, rule: &'static str) -> Result<&'a Mat> {
    rs.memory.matrix().ok_or(MemError::Unsupported {
        rule,
        what: "a closed form for non-matrix memories".into(),
    })
}

/// Generic gated GD step over whatever is in the window.
fn generic_window_step(rs: &mut RuleState, wl: &WindowLoss, gates: &Gates) -> Result<f64> {
    let pairs = rs.window_pairs();
    let (loss, grad) = omega_loss_grad(&rs.memory, &pairs, wl)?;
    let step = -gates.eta * wl.base.direction_scale();
    rs.memory.decay_and_add(gates.alpha, step, &grad)?;
    Ok(loss)
}

fn window_loss_value(rs: &RuleState, wl: &WindowLoss) -> Result<f64> {
    let pairs = rs.window_pairs();
    let mut loss = 0.0;
    for (j, (phi, v)) in pairs.iter().enumerate() {
        let y = rs.memory.forward(phi)?;
        let l = match wl.base {
            BiasKind::L2 => {
                let r = y.sub(v);
                r.dot(&r)
            }
            BiasKind::Dot => y.dot(v),
        };
        loss += wl.gate_at(j, pairs.len()) * l;
    }
    Ok(loss)
}

/// `M (αI − η Σ γ φφᵀ) + η Σ γ v φᵀ` for the l2 rules, or `α M + η Σ γ v φᵀ`
/// for the dot rules, built from the explicit transition matrix.
fn closed_form_window(
    rs: &mut RuleState,
    wl: &WindowLoss,
    gates: &Gates,
    rule: &'static str,
) -> Result<f64> {
    let loss = window_loss_value(rs, wl)?;
    let m = require_matrix(rs, rule)?;
    let d = m.cols();
    let pairs = rs.window_pairs();
    let mut write = Mat::zeros(m.rows(), d);
    let next = match wl.base {
        BiasKind::L2 => {
            let mut transition = Mat::identity(d).scaled(gates.alpha);
            for (j, (phi, v)) in pairs.iter().enumerate() {
                let w = gates.eta * wl.gate_at(j, pairs.len());
                transition.add_outer(-w, phi, phi)?;
                write.add_outer(w, v, phi)?;
            }
            m.matmul(&transition)?.add(&write)?
        }
        BiasKind::Dot => {
            for (j, (phi, v)) in pairs.iter().enumerate() {
                write.add_outer(gates.eta * wl.gate_at(j, pairs.len()), v, phi)?;
            }
            m.scaled(gates.alpha).add(&write)?
        }
    };
    rs.memory.weights[0] = next;
    Ok(loss)
}

fn online_step(
    rs: &mut RuleState,
    phi_k: Vector,
    v: Vector,
    gates: &Gates,
    path: UpdatePath,
    bias: BiasKind,
    rule: &'static str,
) -> Result<f64> {
    gates.validate()?;
    rs.push(phi_k, v);
    let wl = WindowLoss::uniform(rs.window.len(), 1.0, bias)?;
    match path {
        UpdatePath::Generic => generic_window_step(rs, &wl, gates),
        UpdatePath::ClosedForm => closed_form_window(rs, &wl, gates, rule),
    }
}

fn windowed_step(
    rs: &mut RuleState,
    phi_k: Vector,
    v: Vector,
    gates: &Gates,
    path: UpdatePath,
    bias: BiasKind,
    rule: &'static str,
) -> Result<f64> {
    gates.validate()?;
    rs.push(phi_k, v);
    let wl = WindowLoss::new(rs.window_cap, gates.gammas.clone(), bias)?;
    match path {
        UpdatePath::Generic => generic_window_step(rs, &wl, gates),
        UpdatePath::ClosedForm => closed_form_window(rs, &wl, gates, rule),
    }
}

/// `M ← α M + η v φ(k)ᵀ`.
pub fn step_hebbian(rs: &mut RuleState, phi_k: Vector, v: Vector, gates: &Gates, path: UpdatePath) -> Result<f64> {
    online_step(rs, phi_k, v, gates, path, BiasKind::Dot, "hebbian")
}

/// `M ← M (αI − η φφᵀ) + η v φᵀ`.
pub fn step_delta(rs: &mut RuleState, phi_k: Vector, v: Vector, gates: &Gates, path: UpdatePath) -> Result<f64> {
    online_step(rs, phi_k, v, gates, path, BiasKind::L2, "delta")
}

/// Deep linear attention: gated GD on the dot bias.
pub fn step_dla(rs: &mut RuleState, phi_k: Vector, v: Vector, gates: &Gates, path: UpdatePath) -> Result<f64> {
    online_step(rs, phi_k, v, gates, path, BiasKind::Dot, "dla")
}

/// Hebbian write in the exponential-lift space.
pub fn step_deeptransformer(rs: &mut RuleState, phi_k: Vector, v: Vector, gates: &Gates, path: UpdatePath) -> Result<f64> {
    online_step(rs, phi_k, v, gates, path, BiasKind::Dot, "deeptransformer")
}

/// Gated GD on the ℓ2 window bias.
pub fn step_omega(rs: &mut RuleState, phi_k: Vector, v: Vector, gates: &Gates, path: UpdatePath) -> Result<f64> {
    windowed_step(rs, phi_k, v, gates, path, BiasKind::L2, "omega")
}

/// Sliding-window linear attention.
pub fn step_swla(rs: &mut RuleState, phi_k: Vector, v: Vector, gates: &Gates, path: UpdatePath) -> Result<f64> {
    windowed_step(rs, phi_k, v, gates, path, BiasKind::Dot, "swla")
}

/// Omega rule in the exponential-lift space.
pub fn step_dot(rs: &mut RuleState, phi_k: Vector, v: Vector, gates: &Gates, path: UpdatePath) -> Result<f64> {
    windowed_step(rs, phi_k, v, gates, path, BiasKind::L2, "dot")
}

/// GD with momentum: `S ← η S − θ d`, `M ← α M + S`.
pub fn step_titans(rs: &mut RuleState, phi_k: Vector, v: Vector, gates: &Gates) -> Result<f64> {
    gates.validate()?;
    rs.push(phi_k, v);
    let wl = WindowLoss::uniform(rs.window.len(), 1.0, BiasKind::L2)?;
    let pairs = rs.window_pairs();
    let (loss, grad) = omega_loss_grad(&rs.memory, &pairs, &wl)?;
    let s = rs.momentum.get_or_insert_with(|| GradState::zeros_like(&rs.memory));
    let mut next = s.scaled(gates.eta);
    next.axpy(-gates.theta * BiasKind::L2.direction_scale(), &grad)?;
    *s = next;
    let s = s.clone();
    rs.memory.decay_and_add(gates.alpha, 1.0, &s)?;
    Ok(loss)
}

/// Muon-style update: `S ← θ S + d`, `M ← α M − η NS_k(S)` per weight matrix.
pub fn step_atlas(
    rs: &mut RuleState,
    phi_k: Vector,
    v: Vector,
    gates: &Gates,
    ns_steps: usize,
    ns_poly: NsPolynomial,
) -> Result<f64> {
    gates.validate()?;
    rs.push(phi_k, v);
    let wl = WindowLoss::new(rs.window_cap, gates.gammas.clone(), BiasKind::L2)?;
    let pairs = rs.window_pairs();
    let (loss, grad) = omega_loss_grad(&rs.memory, &pairs, &wl)?;
    let s = rs.momentum.get_or_insert_with(|| GradState::zeros_like(&rs.memory));
    let mut next = s.scaled(gates.theta);
    next.axpy(BiasKind::L2.direction_scale(), &grad)?;
    *s = next;
    let ortho = orthogonalize(s, ns_steps, ns_poly);
    rs.memory.decay_and_add(gates.alpha, -gates.eta, &ortho)?;
    Ok(loss)
}

/// Newton-Schulz applied to each weight matrix independently.
pub fn orthogonalize(s: &GradState, steps: usize, poly: NsPolynomial) -> GradState {
    GradState {
        grads: s
            .grads
            .iter()
            .map(|g| newton_schulz_with(g, steps, poly))
            .collect(),
    }
}

/// Lifts `k` and applies the configured rule. Returns the pre-update bias value.
pub fn step(cfg: &RuleConfig, rs: &mut RuleState, k: &[f64], v: &[f64], gates: &Gates) -> Result<f64> {
    let phi = cfg.map.apply(k)?;
    step_lifted(cfg, rs, phi, Vector::from(v), gates)
}

/// Like [`step`] but with the key already lifted.
pub fn step_lifted(cfg: &RuleConfig, rs: &mut RuleState, phi: Vector, v: Vector, gates: &Gates) -> Result<f64> {
    let path = cfg.path;
    if path == UpdatePath::ClosedForm && !cfg.kind.has_closed_form() {
        return Err(MemError::Unsupported {
            rule: cfg.kind.name(),
            what: "a closed-form path".into(),
        });
    }
    match cfg.kind {
        RuleKind::Hebbian => step_hebbian(rs, phi, v, gates, path),
        RuleKind::Delta => step_delta(rs, phi, v, gates, path),
        RuleKind::Dla => step_dla(rs, phi, v, gates, path),
        RuleKind::DeepTransformer => step_deeptransformer(rs, phi, v, gates, path),
        RuleKind::Omega => step_omega(rs, phi, v, gates, path),
        RuleKind::Swla => step_swla(rs, phi, v, gates, path),
        RuleKind::Dot => step_dot(rs, phi, v, gates, path),
        RuleKind::Titans => step_titans(rs, phi, v, gates),
        RuleKind::Atlas => step_atlas(rs, phi, v, gates, cfg.ns_steps, cfg.ns_poly),
    }
}

/// One element of an input stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub k: Vector,
    pub v: Vector,
    pub q: Vector,
    pub gates: Gates,
}

/// Assembles a stream, resolving gates from `source`.
pub fn build_stream(
    map: &FeatureMapSpec,
    keys: &[Vector],
    values: &[Vector],
    queries: &[Vector],
    source: &GateSource,
) -> Result<Vec<Token>> {
    if keys.len() != values.len() || keys.len() != queries.len() {
        return Err(crate::error::shape_err("build_stream", keys.len(), values.len()));
    }
    keys.iter()
        .zip(values)
        .zip(queries)
        .enumerate()
        .map(|(t, ((k, v), q))| {
            let phi = map.apply(k)?;
            Ok(Token {
                k: k.clone(),
                v: v.clone(),
                q: q.clone(),
                gates: source.gates_for(t, k, &phi)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SequenceRun {
    /// `y_t = M_t(φ(q_t))` after each write.
    pub outputs: Vec<Vector>,
    /// Pre-update bias value per step.
    pub losses: Vec<f64>,
    pub state: RuleState,
}

/// Drives a rule over a stream, reading after every write.
pub fn run_sequence(cfg: &RuleConfig, memory: MemoryState, stream: &[Token]) -> Result<SequenceRun> {
    cfg.validate()?;
    let mut state = RuleState::new(cfg, memory);
    let mut outputs = Vec::with_capacity(stream.len());
    let mut losses = Vec::with_capacity(stream.len());
    for tok in stream {
        losses.push(step(cfg, &mut state, &tok.k, &tok.v, &tok.gates)?);
        let phi_q = cfg.map.apply(&tok.q)?;
        outputs.push(state.memory.forward(&phi_q)?);
    }
    Ok(SequenceRun {
        outputs,
        losses,
        state,
    })
}

/// Unit keys and queries, Gaussian values, and per-token gates drawn from
/// `α ∈ [0.8, 1]`, `η ∈ [0.01, 0.3]`, `θ ∈ [0, 0.9]`, `γ ∈ [0, 1]`.
pub fn random_token_stream(seed: u64, n: usize, d_k: usize, d_v: usize, c: usize) -> Vec<Token> {
    use crate::rng::{gaussian_vec, seeded, uniform, unit_vec};
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let k = unit_vec(&mut rng, d_k);
            let q = unit_vec(&mut rng, d_k);
            let v = gaussian_vec(&mut rng, d_v, 1.0);
            let alpha = uniform(&mut rng, 0.8, 1.0);
            let eta = uniform(&mut rng, 0.01, 0.3);
            let theta = uniform(&mut rng, 0.0, 0.9);
            let gammas = (0..c).map(|_| uniform(&mut rng, 0.0, 1.0)).collect();
            Token {
                k,
                v,
                q,
                gates: Gates::new(alpha, eta, theta, gammas),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory_arch::{init_memory, Activation, Arch, MemoryDims};
    use crate::rng::{gaussian_mat, gaussian_vec, seeded, unit_vec};

    fn zero_matrix(d_out: usize, d_in: usize) -> MemoryState {
        MemoryState::from_matrix(Mat::zeros(d_out, d_in))
    }

    fn stream(seed: u64, n: usize, d: usize, dv: usize) -> Vec<(Vector, Vector)> {
        let mut rng = seeded(seed);
        (0..n).map(|_| (unit_vec(&mut rng, d), gaussian_vec(&mut rng, dv, 1.0))).collect()
    }

    #[test]
    fn hebbian_cases() {
        let mut rng = seeded(1);
        let m0 = MemoryState::from_matrix(gaussian_mat(&mut rng, 2, 3, 1.0));
        let cfg = RuleConfig::new(RuleKind::Hebbian, FeatureMapSpec::identity());
        let mut rs = RuleState::new(&cfg, m0.clone());
        let g = Gates::constant(0.7, 0.0, 0.0, 1, 1.0);
        step(&cfg, &mut rs, &[1.0, 2.0, 3.0], &[1.0, 1.0], &g).unwrap();
        assert_eq!(rs.memory.weights[0], m0.weights[0].scaled(0.7));

        let mut rs = RuleState::new(&cfg, zero_matrix(2, 3));
        step(&cfg, &mut rs, &[1.0, 2.0, 3.0], &[4.0, 5.0], &Gates::constant(1.0, 1.0, 0.0, 1, 1.0)).unwrap();
        assert_eq!(rs.memory.weights[0], Mat::outer(&[4.0, 5.0], &[1.0, 2.0, 3.0]));

        // direct summation over a stream
        let mut rs = RuleState::new(&cfg, zero_matrix(3, 4));
        let mut sum = Mat::zeros(3, 4);
        for (t, (k, v)) in stream(2, 10, 4, 3).into_iter().enumerate() {
            let eta = 0.1 + 0.05 * t as f64;
            step(&cfg, &mut rs, &k, &v, &Gates::constant(1.0, eta, 0.0, 1, 1.0)).unwrap();
            sum.add_outer(eta, &v, &k).unwrap();
        }
        assert!(rs.memory.weights[0].max_abs_diff(&sum) < 1e-13);
    }

    #[test]
    fn delta_cases() {
        let cfg = RuleConfig::new(RuleKind::Delta, FeatureMapSpec::identity());
        let mut rng = seeded(3);
        let m0 = MemoryState::from_matrix(gaussian_mat(&mut rng, 3, 3, 1.0));
        let k = gaussian_vec(&mut rng, 3, 1.0);
        let fixed_v = m0.forward(&k).unwrap();
        let mut rs = RuleState::new(&cfg, m0.clone());
        step(&cfg, &mut rs, &k, &fixed_v, &Gates::constant(1.0, 0.4, 0.0, 1, 1.0)).unwrap();
        assert!(rs.memory.max_abs_diff(&m0) < 1e-15);

        let v = gaussian_vec(&mut rng, 3, 1.0);
        let mut rs = RuleState::new(&cfg, m0.clone());
        let eta = 1.0 / k.dot(&k);
        step(&cfg, &mut rs, &k, &v, &Gates::constant(1.0, eta, 0.0, 1, 1.0)).unwrap();
        let y = rs.memory.forward(&k).unwrap();
        assert!(crate::linalg::max_abs_diff(&y, &v) <= 1e-10);
    }

    #[test]
    fn closed_form_rejected_for_deep_and_momentum() {
        let deep = init_memory(Arch::Mlp2, MemoryDims::square(3, 3), Activation::Gelu, 0).unwrap();
        let cfg = RuleConfig::new(RuleKind::Delta, FeatureMapSpec::identity()).with_path(UpdatePath::ClosedForm);
        let mut rs = RuleState::new(&cfg, deep);
        let err = step(&cfg, &mut rs, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &Gates::constant(1.0, 0.1, 0.0, 1, 1.0));
        assert!(matches!(err, Err(MemError::Unsupported { .. })));
        let cfg = RuleConfig::new(RuleKind::Titans, FeatureMapSpec::identity()).with_path(UpdatePath::ClosedForm);
        let mut rs = RuleState::new(&cfg, zero_matrix(3, 3));
        assert!(step(&cfg, &mut rs, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &Gates::constant(1.0, 0.1, 0.1, 1, 1.0)).is_err());
    }

    #[test]
    fn titans_zero_gradient_and_degenerate_momentum() {
        let cfg = RuleConfig::new(RuleKind::Titans, FeatureMapSpec::identity());
        let mut rng = seeded(4);
        let m0 = MemoryState::from_matrix(gaussian_mat(&mut rng, 3, 3, 1.0));
        let k = gaussian_vec(&mut rng, 3, 1.0);
        let v = m0.forward(&k).unwrap();
        let mut rs = RuleState::new(&cfg, m0.clone());
        step(&cfg, &mut rs, &k, &v, &Gates::constant(0.9, 0.5, 0.3, 1, 1.0)).unwrap();
        assert_eq!(rs.momentum.as_ref().unwrap().max_abs(), 0.0);
        assert!(rs.memory.max_abs_diff(&MemoryState::from_matrix(m0.weights[0].scaled(0.9))) < 1e-15);

        // momentum decay 0 => plain gated GD with step theta
        let delta = RuleConfig::new(RuleKind::Delta, FeatureMapSpec::identity());
        let mut a = RuleState::new(&cfg, m0.clone());
        let mut b = RuleState::new(&delta, m0.clone());
        for (k, v) in stream(5, 6, 3, 3) {
            step(&cfg, &mut a, &k, &v, &Gates::constant(0.95, 0.0, 0.2, 1, 1.0)).unwrap();
            step(&delta, &mut b, &k, &v, &Gates::constant(0.95, 0.2, 0.0, 1, 1.0)).unwrap();
        }
        assert!(a.memory.max_abs_diff(&b.memory) < 1e-12);
    }

    #[test]
    fn titans_matches_unrolled_recursion() {
        let cfg = RuleConfig::new(RuleKind::Titans, FeatureMapSpec::identity());
        let mut rng = seeded(6);
        let m0 = gaussian_mat(&mut rng, 2, 3, 0.5);
        let mut rs = RuleState::new(&cfg, MemoryState::from_matrix(m0.clone()));
        let mut m = m0;
        let mut s = Mat::zeros(2, 3);
        for (t, (k, v)) in stream(7, 5, 3, 2).into_iter().enumerate() {
            let (alpha, mom, lr) = (0.9 + 0.01 * t as f64, 0.5, 0.3);
            step(&cfg, &mut rs, &k, &v, &Gates::constant(alpha, mom, lr, 1, 1.0)).unwrap();
            let r = m.matvec(&k).unwrap().sub(&v);
            let mut s_next = s.scaled(mom);
            s_next.add_outer(-lr, &r, &k).unwrap();
            s = s_next;
            m = m.scaled(alpha).add(&s).unwrap();
        }
        assert!(rs.memory.weights[0].max_abs_diff(&m) <= 1e-12);
    }

    #[test]
    fn omega_window_one_is_delta() {
        let omega = RuleConfig::new(RuleKind::Omega, FeatureMapSpec::identity()).with_window(1);
        let delta = RuleConfig::new(RuleKind::Delta, FeatureMapSpec::identity());
        let mut a = RuleState::new(&omega, zero_matrix(3, 4));
        let mut b = RuleState::new(&delta, zero_matrix(3, 4));
        for (k, v) in stream(8, 12, 4, 3) {
            step(&omega, &mut a, &k, &v, &Gates::constant(0.9, 0.5, 0.0, 1, 0.5)).unwrap();
            step(&delta, &mut b, &k, &v, &Gates::constant(0.9, 0.25, 0.0, 1, 1.0)).unwrap();
        }
        assert!(a.memory.max_abs_diff(&b.memory) <= 1e-12);
    }

    #[test]
    fn zero_gammas_decay_only() {
        for kind in [RuleKind::Omega, RuleKind::Swla, RuleKind::Dot] {
            let cfg = RuleConfig::new(kind, FeatureMapSpec::identity()).with_window(3);
            let mut rng = seeded(9);
            let m0 = MemoryState::from_matrix(gaussian_mat(&mut rng, 2, 2, 1.0));
            let mut rs = RuleState::new(&cfg, m0.clone());
            step(&cfg, &mut rs, &[1.0, 0.0], &[0.0, 1.0], &Gates::constant(0.8, 1.0, 0.0, 3, 0.0)).unwrap();
            assert_eq!(rs.memory.weights[0], m0.weights[0].scaled(0.8));
        }
    }

    #[test]
    fn atlas_degenerate_and_scale_invariance() {
        let cfg = RuleConfig::new(RuleKind::Atlas, FeatureMapSpec::identity()).with_window(2);
        let mut rng = seeded(10);
        let m0 = MemoryState::from_matrix(gaussian_mat(&mut rng, 3, 3, 1.0));
        // zero gradients: the stream is already interpolated
        let mut rs = RuleState::new(&cfg, m0.clone());
        let k = gaussian_vec(&mut rng, 3, 1.0);
        let v = m0.forward(&k).unwrap();
        step(&cfg, &mut rs, &k, &v, &Gates::constant(0.5, 1.0, 0.9, 2, 1.0)).unwrap();
        assert_eq!(rs.memory.weights[0], m0.weights[0].scaled(0.5));

        let cfg1 = RuleConfig::new(RuleKind::Atlas, FeatureMapSpec::identity()).with_window(1).with_ns_steps(20);
        let v = gaussian_vec(&mut rng, 3, 1.0);
        let mv = m0.forward(&k).unwrap();
        let v2 = v.scaled(2.0).sub(&mv);
        let g = Gates::constant(1.0, 1.0, 0.0, 1, 1.0);
        let mut a = RuleState::new(&cfg1, m0.clone());
        let mut b = RuleState::new(&cfg1, m0.clone());
        step(&cfg1, &mut a, &k, &v, &g).unwrap();
        step(&cfg1, &mut b, &k, &v2, &g).unwrap();
        assert!(a.memory.max_abs_diff(&b.memory) < 1e-12);
    }

    #[test]
    fn atlas_ns_steps_matter() {
        let mut rng = seeded(12);
        let m0 = MemoryState::from_matrix(gaussian_mat(&mut rng, 4, 4, 1.0));
        let toks = stream(13, 6, 4, 4);
        let run = |k: usize| {
            let cfg = RuleConfig::new(RuleKind::Atlas, FeatureMapSpec::identity()).with_window(3).with_ns_steps(k);
            let mut rs = RuleState::new(&cfg, m0.clone());
            for (kk, vv) in &toks {
                step(&cfg, &mut rs, kk, vv, &Gates::constant(1.0, 0.1, 0.5, 3, 1.0)).unwrap();
            }
            orthogonalize(rs.momentum.as_ref().unwrap(), k, NsPolynomial::CUBIC)
        };
        let o1 = run(1);
        let o20 = run(20);
        assert!(o1.max_abs_diff(&o20) > 1e-3);
        let svd = crate::linalg::svd_oracle(&o20.grads[0]).unwrap();
        assert!(svd.sigma.iter().all(|s| (s - 1.0).abs() <= 1e-5), "{:?}", svd.sigma);
    }

    #[test]
    fn dla_alpha_zero_rebuilds_from_current_token() {
        let cfg = RuleConfig::new(RuleKind::Dla, FeatureMapSpec::identity());
        let mut rng = seeded(14);
        let mut rs = RuleState::new(&cfg, MemoryState::from_matrix(gaussian_mat(&mut rng, 2, 2, 1.0)));
        step(&cfg, &mut rs, &[1.0, 2.0], &[3.0, 4.0], &Gates::constant(0.0, 1.0, 0.0, 1, 1.0)).unwrap();
        assert_eq!(rs.memory.weights[0], Mat::outer(&[3.0, 4.0], &[1.0, 2.0]));
    }

    #[test]
    fn deeptransformer_single_pair_is_truncated_e() {
        let map = FeatureMapSpec::exp_truncated(6);
        let cfg = RuleConfig::new(RuleKind::DeepTransformer, map);
        let k = [0.6, 0.8];
        let v = [1.0, -2.0];
        let d = cfg.map.output_dim(2).unwrap();
        let mut rs = RuleState::new(&cfg, zero_matrix(2, d));
        step(&cfg, &mut rs, &k, &v, &Gates::constant(1.0, 1.0, 0.0, 1, 1.0)).unwrap();
        let y = rs.memory.forward(&cfg.map.apply(&k).unwrap()).unwrap();
        let e6: f64 = crate::feature_maps::init_taylor_coeffs(6).iter().sum();
        assert!((y[0] - e6).abs() < 1e-12 && (y[1] + 2.0 * e6).abs() < 1e-12);

        // orthogonal keys
        let mut rs = RuleState::new(&cfg, zero_matrix(2, d));
        let g = Gates::constant(1.0, 1.0, 0.0, 1, 1.0);
        step(&cfg, &mut rs, &[1.0, 0.0], &[1.0, 0.0], &g).unwrap();
        step(&cfg, &mut rs, &[0.0, 1.0], &[0.0, 1.0], &g).unwrap();
        let y = rs.memory.forward(&cfg.map.apply(&[1.0, 0.0]).unwrap()).unwrap();
        assert!((y[0] - e6).abs() < 1e-12 && (y[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dot_first_token_from_zero() {
        let map = FeatureMapSpec::exp_truncated(3);
        let cfg = RuleConfig::new(RuleKind::Dot, map.clone()).with_window(1);
        let d = map.output_dim(2).unwrap();
        let mut rs = RuleState::new(&cfg, zero_matrix(2, d));
        let eta = 1e-3;
        step(&cfg, &mut rs, &[0.6, 0.8], &[2.0, 1.0], &Gates::constant(1.0, eta, 0.0, 1, 1.0)).unwrap();
        let phi = map.apply(&[0.6, 0.8]).unwrap();
        let expect = Mat::outer(&[2.0 * eta, eta], &phi);
        assert!(rs.memory.weights[0].max_abs_diff(&expect) < 1e-16);
    }

    #[test]
    fn run_sequence_empty_and_one_token() {
        let cfg = RuleConfig::new(RuleKind::Delta, FeatureMapSpec::identity());
        let run = run_sequence(&cfg, zero_matrix(2, 2), &[]).unwrap();
        assert!(run.outputs.is_empty());
        assert_eq!(run.state.memory, zero_matrix(2, 2));

        let k = Vector::new(vec![0.3, -1.1]);
        let v = Vector::new(vec![2.0, 0.5]);
        let tok = Token {
            k: k.clone(),
            v: v.clone(),
            q: k.clone(),
            gates: Gates::constant(1.0, 1.0 / k.dot(&k), 0.0, 1, 1.0),
        };
        let run = run_sequence(&cfg, zero_matrix(2, 2), &[tok]).unwrap();
        assert!(crate::linalg::max_abs_diff(&run.outputs[0], &v) < 1e-12);
    }

    #[test]
    fn gate_sources() {
        let base = Gates::constant(1.0, 0.0, 0.0, 1, 1.0);
        let src = GateSource::NormalizedEta { base: base.clone(), scale: 1.0 };
        assert_eq!(src.gates_for(0, &[1.0], &[2.0, 0.0]).unwrap().eta, 0.25);
        let sig = GateSource::TokenSigmoid {
            base,
            w_alpha: vec![0.0],
            b_alpha: 0.0,
            w_eta: vec![0.0],
            b_eta: 0.0,
            eta_max: 2.0,
        };
        let g = sig.gates_for(0, &[3.0], &[3.0]).unwrap();
        assert_eq!((g.alpha, g.eta), (0.5, 1.0));
        assert!(GateSource::Schedule(vec![]).gates_for(0, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn parse_names() {
        for r in RuleKind::ALL {
            assert_eq!(RuleKind::parse(r.name()), Some(r));
        }
        assert_eq!(RuleKind::parse("detla"), None);
    }
}
