//! Memory modules `M(·)` with forward evaluation and hand-derived gradients.
//!
//! Weight layout per architecture (a leading projection `W0: D → d_v` is
//! present only for residual archs whose input dimension differs from the
//! output dimension):
//!
//! | arch        | weights                              | forward                         |
//! |-------------|--------------------------------------|---------------------------------|
//! | `Matrix`    | `[W]`                                | `W x`                           |
//! | `Mlp2`      | `[W0?, W1, W2]`                      | `x + W1 σ(W2 x)`                |
//! | `GatedMlp`  | `[W0?, W1, W2, W3]`                  | `x + W1 (σ(W2 x) ⊙ W3 x)`       |
//! | `Stack(L)`  | `[W0?, (W1, W2) × L]`                | L chained `Mlp2` blocks         |
//!
//! GELU uses the tanh approximation
//! `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, MemError, Result};
use crate::linalg::{dot, Mat, Vector};
use crate::rng::{seeded, uniform_mat};

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Silu,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s + x * s * (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Matrix,
    Mlp2,
    GatedMlp,
    Stack(usize),
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Matrix => "matrix",
            Arch::Mlp2 => "mlp2",
            Arch::GatedMlp => "gated_mlp",
            Arch::Stack(_) => "stack",
        }
    }

    fn mats_per_block(self) -> usize {
        match self {
            Arch::Matrix => 1,
            Arch::Mlp2 | Arch::Stack(_) => 2,
            Arch::GatedMlp => 3,
        }
    }

    fn blocks(self) -> usize {
        match self {
            Arch::Stack(l) => l,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryDims {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Hidden width of each residual block; ignored by `Matrix`.
    pub hidden: usize,
}

impl MemoryDims {
    pub fn square(d: usize, hidden: usize) -> Self {
        Self {
            in_dim: d,
            out_dim: d,
            hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub arch: Arch,
    pub weights: Vec<Mat>,
    pub dims: MemoryDims,
    pub activation: Activation,
    pub projected: bool,
}

/// Gradients congruent with [`MemoryState::weights`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradState {
    pub grads: Vec<Mat>,
}

impl GradState {
    pub fn zeros_like(m: &MemoryState) -> Self {
        Self {
            grads: m
                .weights
                .iter()
                .map(|w| Mat::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grads: self.grads.iter().map(|g| g.scaled(s)).collect(),
        }
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &GradState) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(shape_err("GradState::axpy", self.grads.len(), other.grads.len()));
        }
        for (g, o) in self.grads.iter_mut().zip(&other.grads) {
            g.axpy(a, o)?;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.iter().map(Mat::max_abs).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &GradState) -> f64 {
        self.grads
            .iter()
            .zip(&other.grads)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

struct BlockCache {
    input: Vector,
    pre: Vector,
    act: Vector,
    gate: Option<Vector>,
}

struct ForwardCache {
    lifted: Vector,
    blocks: Vec<BlockCache>,
    output: Vector,
}

impl MemoryState {
    /// Wraps an existing matrix as a matrix memory.
    pub fn from_matrix(w: Mat) -> Self {
        let dims = MemoryDims {
            in_dim: w.cols(),
            out_dim: w.rows(),
            hidden: 0,
        };
        Self {
            arch: Arch::Matrix,
            weights: vec![w],
            dims,
            activation: Activation::Gelu,
            projected: false,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.dims.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.dims.out_dim
    }

    /// The single weight matrix of a matrix memory.
    pub fn matrix(&self) -> Option<&Mat> {
        (self.arch == Arch::Matrix).then(|| &self.weights[0])
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Mat::is_finite)
    }

    fn block_offset(&self) -> usize {
        usize::from(self.projected)
    }

    /// Squared Frobenius norm summed over all weights, square-rooted.
    pub fn frobenius_norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| dot(w.data(), w.data()))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &MemoryState) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    /// `self = alpha · self + step · g`, weight by weight.
    pub fn decay_and_add(&mut self, alpha: f64, step: f64, g: &GradState) -> Result<()> {
        if g.grads.len() != self.weights.len() {
            return Err(shape_err("decay_and_add", self.weights.len(), g.grads.len()));
        }
        for (w, gi) in self.weights.iter_mut().zip(&g.grads) {
            w.scale_in_place(alpha);
            w.axpy(step, gi)?;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        Ok(self.forward_cached(x)?.output)
    }

    fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.dims.in_dim {
            return Err(shape_err("forward", self.dims.in_dim, x.len()));
        }
        let lifted = Vector::from(x);
        if self.arch == Arch::Matrix {
            let output = self.weights[0].matvec(x)?;
            return Ok(ForwardCache {
                lifted,
                blocks: Vec::new(),
                output,
            });
        }
        let mut h = if self.projected {
            self.weights[0].matvec(x)?
        } else {
            lifted.clone()
        };
        let per = self.arch.mats_per_block();
        let mut blocks = Vec::with_capacity(self.arch.blocks());
        for b in 0..self.arch.blocks() {
            let base = self.block_offset() + b * per;
            let w1 = &self.weights[base];
            let w2 = &self.weights[base + 1];
            let pre = w2.matvec(&h)?;
            let act = Vector::new(pre.iter().map(|z| self.activation.eval(*z)).collect());
            let (mixed, gate) = if self.arch == Arch::GatedMlp {
                let u = self.weights[base + 2].matvec(&h)?;
                let m: Vec<f64> = act.iter().zip(u.iter()).map(|(a, g)| a * g).collect();
                (Vector::new(m), Some(u))
            } else {
                (act.clone(), None)
            };
            let out = h.add(&w1.matvec(&mixed)?);
            blocks.push(BlockCache {
                input: h,
                pre,
                act,
                gate,
            });
            h = out;
        }
        Ok(ForwardCache {
            lifted,
            blocks,
            output: h,
        })
    }

    /// Backpropagates `dL/dy` to every weight.
    fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<GradState> {
        let mut grads = GradState::zeros_like(self);
        if self.arch == Arch::Matrix {
            grads.grads[0].add_outer(1.0, dy, &cache.lifted)?;
            return Ok(grads);
        }
        let per = self.arch.mats_per_block();
        let mut dh = Vector::from(dy);
        for (b, bc) in cache.blocks.iter().enumerate().rev() {
            let base = self.block_offset() + b * per;
            let w1 = &self.weights[base];
            let w2 = &self.weights[base + 1];
            let mixed: Vec<f64> = match &bc.gate {
                Some(u) => bc.act.iter().zip(u.iter()).map(|(a, g)| a * g).collect(),
                None => bc.act.to_vec(),
            };
            grads.grads[base].add_outer(1.0, &dh, &mixed)?;
            let dmixed = w1.tmatvec(&dh)?;
            let dpre: Vec<f64> = match &bc.gate {
                Some(u) => dmixed
                    .iter()
                    .zip(u.iter())
                    .zip(bc.pre.iter())
                    .map(|((d, g), z)| d * g * self.activation.deriv(*z))
                    .collect(),
                None => dmixed
                    .iter()
                    .zip(bc.pre.iter())
                    .map(|(d, z)| d * self.activation.deriv(*z))
                    .collect(),
            };
            grads.grads[base + 1].add_outer(1.0, &dpre, &bc.input)?;
            let mut dinput = dh.add(&w2.tmatvec(&dpre)?);
            if bc.gate.is_some() {
                let w3 = &self.weights[base + 2];
                let du: Vec<f64> = dmixed.iter().zip(bc.act.iter()).map(|(d, a)| d * a).collect();
                grads.grads[base + 2].add_outer(1.0, &du, &bc.input)?;
                dinput = dinput.add(&w3.tmatvec(&du)?);
            }
            dh = dinput;
        }
        if self.projected {
            grads.grads[0].add_outer(1.0, &dh, &cache.lifted)?;
        }
        Ok(grads)
    }

    /// `‖M(φ) − v‖²` and its gradient.
    pub fn grad_l2(&self, phi_k: &[f64], v: &[f64]) -> Result<(f64, GradState)> {
        let cache = self.forward_cached(phi_k)?;
        if v.len() != self.dims.out_dim {
            return Err(shape_err("grad_l2", self.dims.out_dim, v.len()));
        }
        let r = cache.output.sub(v);
        let loss = r.dot(&r);
        let g = self.backward(&cache, &r.scaled(2.0))?;
        Ok((loss, g))
    }

    /// `⟨M(φ), v⟩` and its gradient.
    pub fn grad_dot(&self, phi_k: &[f64], v: &[f64]) -> Result<(f64, GradState)> {
        let cache = self.forward_cached(phi_k)?;
        if v.len() != self.dims.out_dim {
            return Err(shape_err("grad_dot", self.dims.out_dim, v.len()));
        }
        let loss = cache.output.dot(v);
        let g = self.backward(&cache, v)?;
        Ok((loss, g))
    }
}

pub fn forward(m: &MemoryState, x: &[f64]) -> Result<Vector> {
    m.forward(x)
}

pub fn grad_l2(m: &MemoryState, phi_k: &[f64], v: &[f64]) -> Result<(f64, GradState)> {
    m.grad_l2(phi_k, v)
}

pub fn grad_dot(m: &MemoryState, phi_k: &[f64], v: &[f64]) -> Result<(f64, GradState)> {
    m.grad_dot(phi_k, v)
}

/// Builds a memory. Matrix memories start at zero; MLP weights are drawn
/// uniformly from `±1/√fan_in`.
pub fn init_memory(
    arch: Arch,
    dims: MemoryDims,
    activation: Activation,
    seed: u64,
) -> Result<MemoryState> {
    if dims.in_dim == 0 || dims.out_dim == 0 {
        return Err(MemError::Invalid("memory dimensions must be positive".into()));
    }
    if arch == Arch::Matrix {
        return Ok(MemoryState {
            arch,
            weights: vec![Mat::zeros(dims.out_dim, dims.in_dim)],
            dims,
            activation,
            projected: false,
        });
    }
    if dims.hidden == 0 {
        return Err(MemError::Invalid("residual memory needs hidden > 0".into()));
    }
    if let Arch::Stack(0) = arch {
        return Err(MemError::Invalid("stack depth must be at least 1".into()));
    }
    let mut rng = seeded(seed);
    let mut weights = Vec::new();
    let projected = dims.in_dim != dims.out_dim;
    let d = dims.out_dim;
    let h = dims.hidden;
    let bound = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
    if projected {
        weights.push(uniform_mat(&mut rng, d, dims.in_dim, bound(dims.in_dim)));
    }
    for _ in 0..arch.blocks() {
        weights.push(uniform_mat(&mut rng, d, h, bound(h)));
        weights.push(uniform_mat(&mut rng, h, d, bound(d)));
        if arch == Arch::GatedMlp {
            weights.push(uniform_mat(&mut rng, h, d, bound(d)));
        }
    }
    Ok(MemoryState {
        arch,
        weights,
        dims,
        activation,
        projected,
    })
}
