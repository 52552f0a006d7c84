//! Seeded workloads shared by the benchmarks.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safe_edit_core::grid::{BinaryGrid, RealGrid};
use safe_edit_core::mask::{LatentMask, SelfAffinity};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth blob plus noise on a `side x side` attention grid, with a lattice
/// affinity whose weights fall off with value difference.
pub fn refinement_problem(side: usize, seed: u64) -> (RealGrid, SelfAffinity) {
    let mut rng = rng(seed);
    let c = side as f64 / 2.0;
    let m = RealGrid::from_fn(side, side, |r, col| {
        let d2 = (r as f64 - c).powi(2) + (col as f64 - c).powi(2);
        ((-d2 / (side as f64)).exp() + 0.1 * rng.random::<f64>()).min(1.0)
    });
    let mut t = Vec::new();
    for r in 0..side {
        for col in 0..side {
            let i = r * side + col;
            let mut link = |j: usize| {
                let w = (-(m.as_slice()[i] - m.as_slice()[j]).powi(2) / 0.02).exp();
                t.push((i, j, w.max(1e-3)));
            };
            if col + 1 < side {
                link(i + 1);
            }
            if r + 1 < side {
                link(i + side);
            }
        }
    }
    let aff = SelfAffinity::from_triplets(side * side, t).expect("valid affinity");
    (m, aff)
}

pub fn random_mask(h: usize, w: usize, seed: u64) -> LatentMask {
    let mut rng = rng(seed);
    LatentMask::new(BinaryGrid::from_fn(h, w, |_, _| rng.random_bool(0.5)))
}

pub fn image_pair(w: u32, h: u32, seed: u64) -> (RgbImage, RgbImage) {
    let mut rng = rng(seed);
    let a = RgbImage::from_fn(w, h, |_, _| Rgb(std::array::from_fn(|_| rng.random())));
    let b = RgbImage::from_fn(w, h, |x, y| {
        Rgb(a
            .get_pixel(x, y)
            .0
            .map(|v| v.saturating_add(rng.random_range(0..8))))
    });
    (a, b)
}
