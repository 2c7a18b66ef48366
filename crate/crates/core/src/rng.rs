//! Seeded sampling helpers. ChaCha8 keeps streams identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{Mat, Vector};

pub type MemRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> MemRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream derived from `(seed, stream)`.
pub fn seeded_stream(seed: u64, stream: u64) -> MemRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian(rng: &mut MemRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vec(rng: &mut MemRng, dim: usize, std: f64) -> Vector {
    Vector::new((0..dim).map(|_| std * gaussian(rng)).collect())
}

/// Gaussian direction projected to the unit sphere.
pub fn unit_vec(rng: &mut MemRng, dim: usize) -> Vector {
    loop {
        let v = gaussian_vec(rng, dim, 1.0);
        let n = v.norm();
        if n > 1e-12 {
            return v.scaled(1.0 / n);
        }
    }
}

pub fn gaussian_mat(rng: &mut MemRng, rows: usize, cols: usize, std: f64) -> Mat {
    let data = (0..rows * cols).map(|_| std * gaussian(rng)).collect();
    Mat::from_vec(rows, cols, data).expect("sized buffer")
}

pub fn uniform_mat(rng: &mut MemRng, rows: usize, cols: usize, bound: f64) -> Mat {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Mat::from_vec(rows, cols, data).expect("sized buffer")
}

pub fn uniform(rng: &mut MemRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..=hi)
}
