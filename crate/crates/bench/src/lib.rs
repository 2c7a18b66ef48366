//! Shared fixtures for the criterion benches.

use memlab_core::rng::{gaussian_vec, seeded, unit_vec};
use memlab_core::{Gates, Token};

/// Random unit keys/queries with Gaussian values and constant gates.
pub fn random_stream(seed: u64, len: usize, d_k: usize, d_v: usize, gates: &Gates) -> Vec<Token> {
    let mut rng = seeded(seed);
    (0..len)
        .map(|_| Token {
            k: unit_vec(&mut rng, d_k),
            v: gaussian_vec(&mut rng, d_v, 1.0),
            q: unit_vec(&mut rng, d_k),
            gates: gates.clone(),
        })
        .collect()
}
