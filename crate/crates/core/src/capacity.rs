//! Exact-fit capacity probes.
//!
//! A probe draws `m` unit Gaussian keys and values, lifts the keys, fits a
//! memory to all pairs at once, and declares a fit when every pair is
//! recalled within `tol_fit`. Sweeping `m` locates the boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MemError, Result};
use crate::feature_maps::{monomials_exact, FeatureMapSpec, MapKind};
use crate::linalg::{self_tensor, svd_oracle, Mat, Vector};
use crate::memory_arch::{init_memory, Activation, Arch, MemoryDims, MemoryState};
use crate::rng::{gaussian_vec, seeded_stream, unit_vec};

pub const DEFAULT_TOL_FIT: f64 = 1e-6;
/// Relative singular-value cutoff for rank and pseudoinverse.
pub const RANK_TOL: f64 = 1e-10;
const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Lift {
    Map(FeatureMapSpec),
    /// Bare `x^{⊗p}`.
    Block(usize),
}

impl Lift {
    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        match self {
            Lift::Map(spec) => spec.apply(x),
            Lift::Block(p) => Ok(self_tensor(x, *p)),
        }
    }

    pub fn ambient_dim(&self, d: usize) -> usize {
        match self {
            Lift::Map(spec) => spec.output_dim(d).unwrap_or(usize::MAX),
            Lift::Block(p) => d.pow(*p as u32),
        }
    }

    fn degrees(&self) -> Vec<usize> {
        match self {
            Lift::Map(spec) if spec.kind == MapKind::Identity => vec![1],
            Lift::Map(spec) => (0..=spec.degree).filter(|i| spec.coeffs[*i] != 0.0).collect(),
            Lift::Block(p) => vec![*p],
        }
    }

    /// Count of distinct monomials across the active degrees.
    pub fn monomial_dim(&self, d: usize) -> usize {
        self.degrees().iter().map(|i| monomials_exact(d, *i)).sum()
    }

    /// Dimension of the span reachable from keys on the unit sphere.
    ///
    /// On the sphere `‖x‖² = 1`, so a degree-`i` block spans every lower
    /// degree of the same parity; each parity contributes the monomial count
    /// of its highest active degree.
    pub fn sphere_dim(&self, d: usize) -> usize {
        let degs = self.degrees();
        [0usize, 1]
            .iter()
            .filter_map(|par| degs.iter().filter(|i| *i % 2 == *par).max())
            .map(|q| monomials_exact(d, *q))
            .sum()
    }

    pub fn label(&self) -> String {
        match self {
            Lift::Map(spec) => match spec.kind {
                MapKind::Identity => "identity".into(),
                MapKind::Polynomial => format!("polynomial{}", spec.degree),
                MapKind::ExpTruncated => format!("exp_truncated{}", spec.degree),
            },
            Lift::Block(p) => format!("block{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Fit {
    Pseudoinverse,
    /// Full-batch gradient descent with heavy-ball momentum.
    Gd { iters: usize, step: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityProbe {
    pub d_k: usize,
    pub d_v: usize,
    pub m: usize,
    pub lift: Lift,
    pub arch: Arch,
    /// Hidden width for deep memories.
    pub hidden: usize,
    pub fit: Fit,
    pub tol_fit: f64,
    /// Project keys to the unit sphere (values always are).
    pub unit_keys: bool,
    pub seed: u64,
}


impl CapacityProbe {
    pub fn linear(d_k: usize, d_v: usize, m: usize, seed: u64) -> Self {
        Self {
            d_k,
            d_v,
            m,
            lift: Lift::Map(FeatureMapSpec::identity()),
            arch: Arch::Matrix,
            hidden: 0,
            fit: Fit::Pseudoinverse,
            tol_fit: DEFAULT_TOL_FIT,
            unit_keys: true,
            seed,
        }
    }

    pub fn with_m(&self, m: usize) -> Self {
        Self { m, ..self.clone() }
    }

    /// Dimension the fit boundary should sit at for generic keys.
    pub fn effective_dim(&self) -> usize {
        if self.unit_keys {
            self.lift.sphere_dim(self.d_k)
        } else {
            self.lift.monomial_dim(self.d_k)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub m: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub lift: String,
    pub arch: String,
    pub lifted_dim: usize,
    pub monomial_dim: usize,
    pub effective_dim: usize,
    pub rank: usize,
    /// `max_i ‖M(φ(k_i)) − v_i‖`.
    pub residual: f64,
    pub fits: bool,
    pub retries: usize,
    pub iters: usize,
}

struct Instance {
    lifted: Vec<Vector>,
    values: Vec<Vector>,
    rank: usize,
    retries: usize,
}

fn lifted_rank(lifted: &[Vector]) -> Result<usize> {
    let phi = Mat::from_columns(lifted)?;
    if phi.rows().min(phi.cols()) > crate::linalg::SVD_MAX_DIM {
        return Err(MemError::Invalid(format!(
            "rank check on a {}x{} lifted matrix exceeds the oracle size",
            phi.rows(),
            phi.cols()
        )));
    }
    Ok(svd_oracle(&phi)?.rank(RANK_TOL))
}

/// Draws keys and values, resampling while a set that should be independent is not.
fn draw_instance(probe: &CapacityProbe) -> Result<Instance> {
    let expect_full = probe.m <= probe.effective_dim();
    for retries in 0..MAX_RETRIES {
        let mut krng = seeded_stream(probe.seed, 2 * retries as u64);
        let mut vrng = seeded_stream(probe.seed, 2 * retries as u64 + 1);
        let keys: Vec<Vector> = (0..probe.m)
            .map(|_| {
                if probe.unit_keys {
                    unit_vec(&mut krng, probe.d_k)
                } else {
                    gaussian_vec(&mut krng, probe.d_k, 1.0)
                }
            })
            .collect();
        let values: Vec<Vector> = (0..probe.m).map(|_| unit_vec(&mut vrng, probe.d_v)).collect();
        let lifted = keys
            .iter()
            .map(|k| probe.lift.apply(k))
            .collect::<Result<Vec<_>>>()?;
        let rank = lifted_rank(&lifted)?;
        if !expect_full || rank == probe.m {
            return Ok(Instance {
                lifted,
                values,
                rank,
                retries,
            });
        }
    }
    Err(MemError::Invalid(format!(
        "could not draw {} independent lifted keys in {MAX_RETRIES} attempts",
        probe.m
    )))
}

fn max_residual(m: &MemoryState, xs: &[Vector], vs: &[Vector]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, v) in xs.iter().zip(vs) {
        worst = worst.max(m.forward(x)?.sub(v).norm());
    }
    Ok(worst)
}

/// Minimum-norm least squares `M = V Φ⁺`.
pub fn pseudoinverse_fit(lifted: &[Vector], values: &[Vector]) -> Result<Mat> {
    let phi = Mat::from_columns(lifted)?;
    let v = Mat::from_columns(values)?;
    let pinv = svd_oracle(&phi)?.pinv(RANK_TOL);
    v.matmul(&pinv)
}

/// Heavy-ball GD on `½ Σ ‖M φᵢ − vᵢ‖²` from `M = 0`, with step and momentum
/// tuned to the extreme nonzero singular values of `Φ`; `step` scales the step.
fn gd_matrix_fit(lifted: &[Vector], values: &[Vector], iters: usize, step: f64, tol: f64) -> Result<(Mat, usize)> {
    let phi = Mat::from_columns(lifted)?;
    let v = Mat::from_columns(values)?;
    let svd = svd_oracle(&phi)?;
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok((Mat::zeros(v.rows(), phi.rows()), 0));
    }
    let smin = svd
        .sigma
        .iter()
        .copied()
        .filter(|x| *x > RANK_TOL * smax)
        .fold(smax, f64::min);
    let lr = step * 4.0 / (smax + smin).powi(2);
    let beta = ((smax - smin) / (smax + smin)).powi(2);
    let phit = phi.transpose();
    let mut m = Mat::zeros(v.rows(), phi.rows());
    let mut prev_m = m.clone();
    let mut prev = f64::INFINITY;
    for it in 0..iters {
        let r = m.matmul(&phi)?.sub(&v)?;
        let res = (0..r.cols()).map(|j| r.column(j).norm()).fold(0.0, f64::max);
        // stop once interpolated well below tolerance, or when stalled
        if res <= tol * 1e-3 || (prev.is_finite() && (prev - res).abs() <= 1e-15 * prev.max(1.0)) {
            return Ok((m, it));
        }
        prev = res;
        let mut next = m.clone();
        next.axpy(-lr, &r.matmul(&phit)?)?;
        next.axpy(beta, &m.sub(&prev_m)?)?;
        prev_m = std::mem::replace(&mut m, next);
    }
    Ok((m, iters))
}

/// Full-batch heavy-ball GD on a deep memory; halves the step whenever the loss rises.
pub fn gd_deep_fit(
    mut mem: MemoryState,
    xs: &[Vector],
    vs: &[Vector],
    iters: usize,
    step: f64,
    tol: f64,
) -> Result<(MemoryState, usize, f64)> {
    let momentum = 0.9;
    let mut lr = step;
    let mut velocity = crate::memory_arch::GradState::zeros_like(&mem);
    let loss_grad = |m: &MemoryState| -> Result<(f64, crate::memory_arch::GradState, f64)> {
        let mut g = crate::memory_arch::GradState::zeros_like(m);
        let mut loss = 0.0;
        let mut worst: f64 = 0.0;
        for (x, v) in xs.iter().zip(vs) {
            let (l, gi) = m.grad_l2(x, v)?;
            loss += l;
            worst = worst.max(l.sqrt());
            g.axpy(1.0, &gi)?;
        }
        Ok((loss, g, worst))
    };
    let (mut loss, mut grad, mut worst) = loss_grad(&mem)?;
    for it in 0..iters {
        if worst <= tol {
            return Ok((mem, it, worst));
        }
        let mut v_next = velocity.scaled(momentum);
        v_next.axpy(-lr, &grad)?;
        let mut cand = mem.clone();
        cand.decay_and_add(1.0, 1.0, &v_next)?;
        let (l2, g2, w2) = loss_grad(&cand)?;
        if l2.is_finite() && l2 <= loss * 1.0001 {
            mem = cand;
            velocity = v_next;
            loss = l2;
            grad = g2;
            worst = w2;
        } else {
            lr *= 0.5;
            velocity = crate::memory_arch::GradState::zeros_like(&mem);
            if lr < 1e-12 {
                return Ok((mem, it, worst));
            }
        }
    }
    Ok((mem, iters, worst))
}

fn report(probe: &CapacityProbe, inst: &Instance, residual: f64, iters: usize) -> CapacityReport {
    CapacityReport {
        m: probe.m,
        d_k: probe.d_k,
        d_v: probe.d_v,
        lift: probe.lift.label(),
        arch: probe.arch.name().into(),
        lifted_dim: probe.lift.ambient_dim(probe.d_k),
        monomial_dim: probe.lift.monomial_dim(probe.d_k),
        effective_dim: probe.effective_dim(),
        rank: inst.rank,
        residual,
        fits: residual <= probe.tol_fit,
        retries: inst.retries,
        iters,
    }
}

fn matrix_probe(probe: &CapacityProbe) -> Result<CapacityReport> {
    if probe.arch != Arch::Matrix {
        return Err(MemError::Invalid("matrix probe needs a matrix memory".into()));
    }
    if probe.m == 0 {
        return Err(MemError::Invalid("probe needs m >= 1".into()));
    }
    let inst = draw_instance(probe)?;
    let (w, iters) = match probe.fit {
        Fit::Pseudoinverse => (pseudoinverse_fit(&inst.lifted, &inst.values)?, 0),
        Fit::Gd { iters, step } => gd_matrix_fit(&inst.lifted, &inst.values, iters, step, probe.tol_fit)?,
    };
    let mem = MemoryState::from_matrix(w);
    let residual = max_residual(&mem, &inst.lifted, &inst.values)?;
    Ok(report(probe, &inst, residual, iters))
}

/// Matrix memory over raw keys.
pub fn probe_linear_capacity(probe: &CapacityProbe) -> Result<CapacityReport> {
    match &probe.lift {
        Lift::Map(spec) if spec.kind == MapKind::Identity => matrix_probe(probe),
        _ => Err(MemError::Invalid("linear probe uses the identity map".into())),
    }
}

/// Matrix memory over lifted keys.
pub fn probe_poly_capacity(probe: &CapacityProbe) -> Result<CapacityReport> {
    matrix_probe(probe)
}

/// Residual MLP memory fitted by GD; a non-fit means "not within budget".
pub fn probe_deep_capacity(probe: &CapacityProbe) -> Result<CapacityReport> {
    let Fit::Gd { iters, step } = probe.fit else {
        return Err(MemError::Invalid("deep probes fit by gradient descent".into()));
    };
    if !matches!(probe.arch, Arch::Mlp2 | Arch::GatedMlp | Arch::Stack(_)) {
        return Err(MemError::Invalid("deep probe needs a residual MLP memory".into()));
    }
    if probe.m == 0 {
        return Err(MemError::Invalid("probe needs m >= 1".into()));
    }
    let inst = draw_instance(probe)?;
    let in_dim = inst.lifted[0].dim();
    let dims = MemoryDims {
        in_dim,
        out_dim: probe.d_v,
        hidden: probe.hidden,
    };
    let mem = init_memory(probe.arch, dims, Activation::Gelu, probe.seed ^ 0x5eed)?;
    let (mem, used, _) = gd_deep_fit(mem, &inst.lifted, &inst.values, iters, step, probe.tol_fit)?;
    let residual = max_residual(&mem, &inst.lifted, &inst.values)?;
    Ok(report(probe, &inst, residual, used))
}

/// Runs the probe appropriate to the memory and lift.
pub fn run_probe(probe: &CapacityProbe) -> Result<CapacityReport> {
    match probe.arch {
        Arch::Matrix => probe_poly_capacity(probe),
        _ => probe_deep_capacity(probe),
    }
}

/// Probes every `m`, in parallel, returning reports in input order.
pub fn sweep(base: &CapacityProbe, ms: &[usize]) -> Result<Vec<CapacityReport>> {
    ms.par_iter().map(|m| run_probe(&base.with_m(*m))).collect()
}

/// Largest `m` that fits; 0 when none does.
pub fn fit_boundary(reports: &[CapacityReport]) -> usize {
    reports.iter().filter(|r| r.fits).map(|r| r.m).max().unwrap_or(0)
}
