//! Reference causal attention. These are ground truth for the memory rules,
//! so they are written as plain per-row loops.

use rayon::prelude::*;

use crate::error::{shape_err, MemError, Result};
use crate::linalg::{dot, Mat};

/// Queries, keys and values, one row per position.
#[derive(Debug, Clone)]
pub struct AttnBatch {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// Divide logits by `√d_k`.
    pub scale: bool,
}

impl AttnBatch {
    pub fn new(q: Mat, k: Mat, v: Mat, scale: bool) -> Result<Self> {
        if q.rows() != k.rows() || k.rows() != v.rows() {
            return Err(shape_err("AttnBatch", q.rows(), format!("{} / {}", k.rows(), v.rows())));
        }
        if q.cols() != k.cols() {
            return Err(shape_err("AttnBatch q/k width", q.cols(), k.cols()));
        }
        Ok(Self { q, k, v, scale })
    }

    pub fn len(&self) -> usize {
        self.q.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn logit(&self, i: usize, j: usize) -> f64 {
        let s = dot(self.q.row(i), self.k.row(j));
        if self.scale {
            s / (self.k.cols() as f64).sqrt()
        } else {
            s
        }
    }
}

fn windowed_softmax(batch: &AttnBatch, window: Option<usize>) -> Result<Mat> {
    let l = batch.len();
    let dv = batch.v.cols();
    let rows: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|i| {
            let lo = window.map_or(0, |c| (i + 1).saturating_sub(c));
            let logits: Vec<f64> = (lo..=i).map(|j| batch.logit(i, j)).collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = w.iter().sum();
            let mut out = vec![0.0; dv];
            for (wj, j) in w.iter().zip(lo..=i) {
                for (o, vv) in out.iter_mut().zip(batch.v.row(j)) {
                    *o += wj * vv;
                }
            }
            out.iter_mut().for_each(|o| *o /= z);
            out
        })
        .collect();
    Mat::from_rows(&rows)
}

/// `y_i = Σ_{j≤i} softmax_j(q_iᵀk_j) v_j`, max-subtracted.
pub fn softmax_attention(batch: &AttnBatch) -> Result<Mat> {
    if batch.is_empty() {
        return Err(MemError::Invalid("attention needs at least one position".into()));
    }
    windowed_softmax(batch, None)
}

/// Softmax restricted to `j ∈ [i − c + 1, i]`.
pub fn sliding_window_attention(batch: &AttnBatch, c: usize) -> Result<Mat> {
    if c == 0 {
        return Err(MemError::Invalid("window must be >= 1".into()));
    }
    if batch.is_empty() {
        return Err(MemError::Invalid("attention needs at least one position".into()));
    }
    windowed_softmax(batch, Some(c))
}

/// `y_t = Σ_{i≤t} v_i exp(q_tᵀ k_i)` with no normaliser. Inputs are expected to
/// satisfy `‖q‖, ‖k‖ ≤ 1`; nothing here guards against overflow.
pub fn unnormalized_exp_attention(batch: &AttnBatch) -> Result<Mat> {
    let l = batch.len();
    let dv = batch.v.cols();
    let mut out = Mat::zeros(l, dv);
    for t in 0..l {
        for i in 0..=t {
            let w = batch.logit(t, i).exp();
            for c in 0..dv {
                out.set(t, c, out.get(t, c) + w * batch.v.get(i, c));
            }
        }
    }
    Ok(out)
}
