//! Seeded generators. Every random quantity in the crate is drawn from a
//! ChaCha stream selected by `(seed, stream)`, so batch results do not depend
//! on the order in which trials execute.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type LabRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for trial `index` of a batch seeded with `seed`.
pub fn trial_rng(seed: u64, index: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, used when an operation takes a plain integer seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal(rng: &mut LabRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vector(rng: &mut LabRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

pub fn normal_complex_vector(rng: &mut LabRng, n: usize) -> DVector<Complex64> {
    DVector::from_fn(n, |_, _| Complex64::new(normal(rng), 0.0))
}

pub fn normal_matrix(rng: &mut LabRng, rows: usize, cols: usize) -> DMatrix<f64> {
    // fill row by row so the draw order matches the logical layout
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = normal(rng);
        }
    }
    m
}
