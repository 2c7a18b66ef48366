//! Online function learning: a small MLP is trained one pair at a time on
//! streams produced by random target functions.

use serde::{Deserialize, Serialize};

use super::optim::{outer_optimizer_step, OptState, OptimizerConfig};
use super::record::RunRecord;
use crate::attention::{sliding_window_attention, softmax_attention, AttnBatch};
use crate::error::{shape_err, MemError, Result};
use crate::linalg::{Mat, Vector};
use crate::memory_arch::Activation;
use crate::rng::{gaussian_mat, gaussian_vec, seeded_stream, uniform_mat, MemRng};

type Layers = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    /// `o = Wᵀ i`, `W = XY` of rank `k`.
    LowRank,
    /// `o = MLP(i)` with a GELU hidden layer of width `d`.
    MlpMap,
    /// `o = MLP(attn(i))`, paired with the raw input.
    AttnMlp,
    /// `o = MLP(attn(i))`, paired with the attention output.
    AttnOutputsAsInputs,
    /// As `AttnMlp` with sliding-window attention.
    SwaMlp,
}

impl SettingKind {
    pub const ALL: [SettingKind; 5] = [
        SettingKind::LowRank,
        SettingKind::MlpMap,
        SettingKind::AttnMlp,
        SettingKind::AttnOutputsAsInputs,
        SettingKind::SwaMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SettingKind::LowRank => "low_rank",
            SettingKind::MlpMap => "mlp_map",
            SettingKind::AttnMlp => "attn_mlp",
            SettingKind::AttnOutputsAsInputs => "attn_outputs_as_inputs",
            SettingKind::SwaMlp => "swa_mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// One-based index in the usual enumeration.
    pub fn number(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).unwrap() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnabilitySetting {
    pub kind: SettingKind,
    pub d: usize,
    pub t: usize,
    /// Rank of the low-rank target.
    pub rank: usize,
    pub swa_window: usize,
    pub seed: u64,
}

impl LearnabilitySetting {
    pub fn new(kind: SettingKind, d: usize, t: usize, seed: u64) -> Self {
        Self {
            kind,
            d,
            t,
            rank: (d / 4).max(1),
            swa_window: 512,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(MemError::Invalid(format!("setting dimension d must be >= 2, got {}", self.d)));
        }
        if self.t == 0 {
            return Err(MemError::Invalid("sequence length t must be >= 1".into()));
        }
        if self.kind == SettingKind::LowRank && !(1..=self.d).contains(&self.rank) {
            return Err(MemError::Invalid(format!("rank must lie in 1..={}, got {}", self.d, self.rank)));
        }
        if self.kind == SettingKind::SwaMlp && self.swa_window == 0 {
            return Err(MemError::Invalid("swa_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Bias-free `W2 gelu(W1 x)` with square weights.
#[derive(Debug, Clone)]
pub struct TargetMlp {
    pub w1: Mat,
    pub w2: Mat,
}

impl TargetMlp {
    pub fn sample(rng: &mut MemRng, d: usize) -> Self {
        let std = 1.0 / (d as f64).sqrt();
        Self {
            w1: gaussian_mat(rng, d, d, std),
            w2: gaussian_mat(rng, d, d, std),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vector> {
        let h = self.w1.matvec(x)?;
        let a: Vec<f64> = h.iter().map(|z| Activation::Gelu.eval(*z)).collect();
        self.w2.matvec(&a)
    }
}

fn rows_of(xs: &[Vector]) -> Result<Mat> {
    Mat::from_rows(&xs.iter().map(|x| x.to_vec()).collect::<Vec<_>>())
}

/// Causal attention outputs over `x W` projections; `window = None` is full attention.
pub fn attention_features(xs: &[Vector], wq: &Mat, wk: &Mat, wv: &Mat, window: Option<usize>) -> Result<Vec<Vector>> {
    let x = rows_of(xs)?;
    let batch = AttnBatch::new(x.matmul(wq)?, x.matmul(wk)?, x.matmul(wv)?, true)?;
    let y = match window {
        None => softmax_attention(&batch)?,
        Some(c) => sliding_window_attention(&batch, c)?,
    };
    Ok((0..y.rows()).map(|r| Vector::from(y.row(r))).collect())
}

/// `W = XY` with unit-variance outputs for unit-variance inputs.
pub fn low_rank_target(s: &LearnabilitySetting) -> Result<Mat> {
    let mut rng = seeded_stream(s.seed, 1);
    let x = gaussian_mat(&mut rng, s.d, s.rank, 1.0 / (s.d as f64).sqrt());
    let y = gaussian_mat(&mut rng, s.rank, s.d, 1.0 / (s.rank as f64).sqrt());
    x.matmul(&y)
}

/// Deterministic `(i_j, o_j)` stream for a setting.
pub fn gen_setting(s: &LearnabilitySetting) -> Result<Vec<(Vector, Vector)>> {
    s.validate()?;
    let d = s.d;
    let mut input_rng = seeded_stream(s.seed, 0);
    let mut target_rng = seeded_stream(s.seed, 1);
    let inputs: Vec<Vector> = (0..s.t).map(|_| gaussian_vec(&mut input_rng, d, 1.0)).collect();
    let std = 1.0 / (d as f64).sqrt();
    match s.kind {
        SettingKind::LowRank => {
            let wt = low_rank_target(s)?.transpose();
            inputs
                .into_iter()
                .map(|i| {
                    let o = wt.matvec(&i)?;
                    Ok((i, o))
                })
                .collect()
        }
        SettingKind::MlpMap => {
            let mlp = TargetMlp::sample(&mut target_rng, d);
            inputs
                .into_iter()
                .map(|i| {
                    let o = mlp.eval(&i)?;
                    Ok((i, o))
                })
                .collect()
        }
        SettingKind::AttnMlp | SettingKind::AttnOutputsAsInputs | SettingKind::SwaMlp => {
            let mlp = TargetMlp::sample(&mut target_rng, d);
            let wq = gaussian_mat(&mut target_rng, d, d, std);
            let wk = gaussian_mat(&mut target_rng, d, d, std);
            let wv = gaussian_mat(&mut target_rng, d, d, std);
            let window = (s.kind == SettingKind::SwaMlp).then_some(s.swa_window);
            let attn = attention_features(&inputs, &wq, &wk, &wv, window)?;
            inputs
                .into_iter()
                .zip(attn)
                .map(|(i, a)| {
                    let o = mlp.eval(&a)?;
                    Ok(if s.kind == SettingKind::AttnOutputsAsInputs { (a, o) } else { (i, o) })
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub hidden_layers: usize,
    /// Hidden width is `expansion · d`.
    pub expansion: usize,
    pub activation: Activation,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            expansion: 1,
            activation: Activation::Gelu,
        }
    }
}

/// Plain MLP with biases: `hidden_layers` activated layers and a linear readout.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

/// Loss and flat gradients `[W0, b0, W1, b1, ...]` of one pair.
#[derive(Debug, Clone)]
pub struct PairGrad {
    pub loss: f64,
    /// False when `‖o‖ = 0` forced the unnormalized loss.
    pub normalized: bool,
    pub grads: Vec<Vec<f64>>,
}

fn loss_scale(o: &[f64]) -> f64 {
    let n2 = crate::linalg::dot(o, o);
    if n2 > 0.0 {
        1.0 / n2
    } else {
        1.0
    }
}

impl Learner {
    pub fn new(spec: LearnerSpec, d: usize, seed: u64) -> Result<Self> {
        if spec.hidden_layers == 0 || spec.expansion == 0 {
            return Err(MemError::Invalid("learner needs >= 1 hidden layer and expansion >= 1".into()));
        }
        let h = d * spec.expansion;
        let mut sizes = vec![d];
        sizes.extend(std::iter::repeat_n(h, spec.hidden_layers));
        sizes.push(d);
        let mut rng = seeded_stream(seed, 2);
        let weights = sizes
            .windows(2)
            .map(|w| uniform_mat(&mut rng, w[1], w[0], 1.0 / (w[0] as f64).sqrt()))
            .collect();
        let biases = sizes[1..].iter().map(|n| vec![0.0; *n]).collect();
        Ok(Self {
            weights,
            biases,
            activation: spec.activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    /// Pre-activations and post-activations per layer; the last entry is the output.
    fn trace(&self, x: &[f64]) -> Result<(Layers, Layers)> {
        if x.len() != self.input_dim() {
            return Err(shape_err("Learner input", self.input_dim(), x.len()));
        }
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post = vec![x.to_vec()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matvec(post.last().unwrap())?.into_inner();
            z.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
            let a = if l == last {
                z.clone()
            } else {
                z.iter().map(|v| self.activation.eval(*v)).collect()
            };
            pre.push(z);
            post.push(a);
        }
        Ok((pre, post))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        Ok(Vector::new(self.trace(x)?.1.pop().unwrap()))
    }

    /// `‖M̂(x) − o‖² / ‖o‖²`, or the bare squared error when `o = 0`.
    pub fn normalized_loss(&self, x: &[f64], o: &[f64]) -> Result<f64> {
        let r = self.forward(x)?.sub(o);
        Ok(loss_scale(o) * r.dot(&r))
    }

    pub fn loss_grad(&self, x: &[f64], o: &[f64]) -> Result<PairGrad> {
        let (pre, post) = self.trace(x)?;
        let y = post.last().unwrap();
        if y.len() != o.len() {
            return Err(shape_err("Learner target", y.len(), o.len()));
        }
        let normalized = crate::linalg::dot(o, o) > 0.0;
        let scale = loss_scale(o);
        let r: Vec<f64> = y.iter().zip(o).map(|(a, b)| a - b).collect();
        let loss = scale * crate::linalg::dot(&r, &r);
        let mut delta: Vec<f64> = r.iter().map(|ri| 2.0 * scale * ri).collect();
        let n = self.weights.len();
        let mut grads = vec![Vec::new(); 2 * n];
        for l in (0..n).rev() {
            let input = &post[l];
            let mut gw = Mat::zeros(self.weights[l].rows(), self.weights[l].cols());
            gw.add_outer(1.0, &delta, input)?;
            grads[2 * l] = gw.data().to_vec();
            grads[2 * l + 1] = delta.clone();
            if l > 0 {
                let back = self.weights[l].tmatvec(&delta)?;
                delta = back
                    .iter()
                    .zip(&pre[l - 1])
                    .map(|(g, z)| g * self.activation.deriv(*z))
                    .collect();
            }
        }
        Ok(PairGrad { loss, normalized, grads })
    }

    pub fn buffer_sizes(&self) -> Vec<usize> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data().len(), b.len()])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineTrainer {
    pub optimizer: OptimizerConfig,
    pub learner: LearnerSpec,
}

impl OnlineTrainer {
    pub fn adam(lr: f64) -> Self {
        Self {
            optimizer: OptimizerConfig::adam(lr),
            learner: LearnerSpec::default(),
        }
    }
}

/// Prequential training: each pair is scored before the learner steps on it.
pub fn run_learnability(setting: &LearnabilitySetting, trainer: &OnlineTrainer, steps: usize) -> Result<RunRecord> {
    if steps > setting.t {
        return Err(MemError::Invalid(format!("steps {steps} exceed sequence length {}", setting.t)));
    }
    let pairs = gen_setting(setting)?;
    let mut learner = Learner::new(trainer.learner, setting.d, setting.seed)?;
    let mut opt = OptState::new(trainer.optimizer, &learner.buffer_sizes())?;
    let mut losses = Vec::with_capacity(steps);
    let mut unnormalized = 0;
    for (i, o) in pairs.iter().take(steps) {
        let pg = learner.loss_grad(i, o)?;
        losses.push(pg.loss);
        if !pg.normalized {
            unnormalized += 1;
        }
        let grads: Vec<&[f64]> = pg.grads.iter().map(|g| g.as_slice()).collect();
        outer_optimizer_step(&mut opt, &mut learner.buffers_mut(), &grads)?;
    }
    Ok(RunRecord {
        setting: setting.kind.name().into(),
        optimizer: trainer.optimizer.kind.name().into(),
        seed: setting.seed,
        losses,
        unnormalized_steps: unnormalized,
    })
}
