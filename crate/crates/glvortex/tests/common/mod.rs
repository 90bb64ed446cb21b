#![allow(dead_code)]

use glvortex::linop::{GaugePair, Grid2d};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(1 - |y - c|^2 / rho^2)^4` inside the disk, zero outside.
pub fn bump(y: [f64; 2], c: [f64; 2], rho: f64) -> f64 {
    let d2 = ((y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2)) / (rho * rho);
    if d2 < 1.0 {
        (1.0 - d2).powi(4)
    } else {
        0.0
    }
}

/// A pair made of a few random bumps supported in the disk of radius `reach`.
pub fn random_compact_pair(grid: Grid2d, eps: f64, reach: f64, seed: u64) -> GaugePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = GaugePair::zeros(grid, eps);
    for _ in 0..3 {
        let rho = rng.gen_range(0.3..0.6) * reach;
        let lim = reach - rho;
        let c = [rng.gen_range(-lim..lim) / 2f64.sqrt(), rng.gen_range(-lim..lim) / 2f64.sqrt()];
        let amp: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        for n in 0..grid.nodes() {
            let b = bump(grid.point(n), c, rho);
            if b > 0.0 {
                p.a[n][0] += amp[0] * b;
                p.a[n][1] += amp[1] * b;
                p.f[n] += Complex64::new(amp[2], amp[3]) * b;
            }
        }
    }
    p
}
