mod common;

use common::{max_diff, random_stream, with_gates, zero_matrix};
use memlab_core::attention::{sliding_window_attention, softmax_attention, unnormalized_exp_attention, AttnBatch};
use memlab_core::linalg::{dot, Mat};
use memlab_core::rules::{run_sequence, RuleConfig, RuleKind, Token};
use memlab_core::{FeatureMapSpec, Vector};
use proptest::prelude::*;

fn batch_of(stream: &[Token], scale: bool) -> AttnBatch {
    let rows = |f: fn(&Token) -> &Vector| Mat::from_rows(&stream.iter().map(|t| f(t).to_vec()).collect::<Vec<_>>()).unwrap();
    AttnBatch::new(rows(|t| &t.q), rows(|t| &t.k), rows(|t| &t.v), scale).unwrap()
}

fn rows(m: &Mat) -> Vec<Vector> {
    (0..m.rows()).map(|r| Vector::from(m.row(r))).collect()
}

fn deeptransformer_error(stream: &[Token], p: usize) -> f64 {
    let map = FeatureMapSpec::exp_truncated(p);
    let cfg = RuleConfig::new(RuleKind::DeepTransformer, map.clone());
    let d_in = map.output_dim(stream[0].k.dim()).unwrap();
    let run = run_sequence(&cfg, zero_matrix(stream[0].v.dim(), d_in), stream).unwrap();
    let exact = unnormalized_exp_attention(&batch_of(stream, false)).unwrap();
    max_diff(&run.outputs, &rows(&exact))
}

#[test]
fn deeptransformer_converges_to_exp_attention() {
    let s = random_stream(3, 16, 2, 2, 1);
    let s = with_gates(&s, |g| {
        g.alpha = 1.0;
        g.eta = 1.0;
    });
    let errs: Vec<f64> = [2, 4, 8, 16].iter().map(|p| deeptransformer_error(&s, *p)).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[3] <= 1e-6, "{errs:?}");
}

/// Kernel regression `Σ K(q, k_j) v_j / Σ K(q, k_j)` with `K = exp(qᵀk/√d)`.
fn nadaraya_watson(stream: &[Token], t: usize, lo: usize) -> Vector {
    let d = stream[0].k.dim() as f64;
    let mut num = vec![0.0; stream[0].v.dim()];
    let mut den = 0.0;
    for tok in &stream[lo..=t] {
        let w = (dot(&stream[t].q, &tok.k) / d.sqrt()).exp();
        den += w;
        num.iter_mut().zip(tok.v.iter()).for_each(|(a, b)| *a += w * b);
    }
    Vector::new(num.into_iter().map(|x| x / den).collect())
}

#[test]
fn sliding_window_is_kernel_regression() {
    for seed in 0..5 {
        let s = random_stream(seed, 20, 4, 3, 1);
        for c in [1, 3, 7, 20] {
            let y = rows(&sliding_window_attention(&batch_of(&s, true), c).unwrap());
            let nw: Vec<Vector> = (0..s.len()).map(|t| nadaraya_watson(&s, t, (t + 1).saturating_sub(c))).collect();
            assert!(max_diff(&y, &nw) <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The last output only sees the context as a set.
    #[test]
    fn last_output_is_permutation_invariant(seed in 0u64..500, rot in 1usize..9) {
        let s = random_stream(seed, 10, 3, 2, 1);
        let last = s.len() - 1;
        let q = s[last].q.clone();
        let s: Vec<Token> = s.into_iter().map(|t| Token { q: q.clone(), ..t }).collect();
        let mut p = s.clone();
        p[..last].rotate_left(rot);
        let a = softmax_attention(&batch_of(&s, true)).unwrap();
        let b = softmax_attention(&batch_of(&p, true)).unwrap();
        for c in 0..2 {
            prop_assert!((a.get(last, c) - b.get(last, c)).abs() <= 1e-12);
        }
    }
}
