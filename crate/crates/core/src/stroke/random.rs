//! Seeded random sketches (the uniform-random baseline).
//!
//! The generator is ChaCha8 seeded through `SeedableRng::seed_from_u64`, and a
//! bounded integer `0..=n` is drawn as `(next_u64() * (n + 1)) >> 64` in 128-bit
//! arithmetic. Draw order: stroke count first, then the eight coordinates of
//! each stroke in text order. Any implementation following these three rules
//! reproduces the same sketches.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CanvasConfig, CubicStroke, Sketch};

/// Upper bound (inclusive) of the random stroke count.
pub const MAX_RANDOM_STROKES: u64 = 32;
/// Upper bound (inclusive) of every random coordinate.
pub const RANDOM_COORD_MAX: u64 = 512;

/// Portable seeded integer source used by every seeded generator in the crate.
#[derive(Debug, Clone)]
pub struct SketchRng(ChaCha8Rng);

impl SketchRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `0..=max`.
    pub fn below_inclusive(&mut self, max: u64) -> u64 {
        let span = u128::from(max) + 1;
        ((u128::from(self.0.next_u64()) * span) >> 64) as u64
    }

    /// Uniform real in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }
}

/// A sketch with `0..=32` strokes and coordinates uniform in `0..=512`,
/// on the default canvas.
pub fn random_sketch(seed: u64) -> Sketch {
    let mut rng = SketchRng::new(seed);
    let count = rng.below_inclusive(MAX_RANDOM_STROKES) as usize;
    let paths = (0..count)
        .map(|_| {
            let mut c = [0i32; 8];
            for v in &mut c {
                *v = rng.below_inclusive(RANDOM_COORD_MAX) as i32;
            }
            CubicStroke::from_coords(c)
        })
        .collect();
    Sketch::new(paths, CanvasConfig::default())
}
