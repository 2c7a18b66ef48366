#![allow(dead_code)]

use memlab_core::linalg::{Mat, Vector};
use memlab_core::rng::{gaussian_vec, seeded, uniform, unit_vec};
use memlab_core::rules::{Gates, Token};
use memlab_core::MemoryState;

/// Random unit keys/queries, Gaussian values, and per-token random gates.
pub fn random_stream(seed: u64, n: usize, d_k: usize, d_v: usize, c: usize) -> Vec<Token> {
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
            Token { k, v, q, gates: Gates::new(alpha, eta, theta, gammas) }
        })
        .collect()
}

pub fn with_gates(stream: &[Token], f: impl Fn(&mut Gates)) -> Vec<Token> {
    stream
        .iter()
        .cloned()
        .map(|mut t| {
            f(&mut t.gates);
            t
        })
        .collect()
}

pub fn zero_matrix(rows: usize, cols: usize) -> MemoryState {
    MemoryState::from_matrix(Mat::zeros(rows, cols))
}

pub fn max_diff(a: &[Vector], b: &[Vector]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}
