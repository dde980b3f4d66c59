//! Synthetic test volumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::volume::Volume;

/// A cube of `n^3` samples resembling a cloud field: a dozen Gaussian cells
/// of random size and strength over a weak layered background.
pub fn storm(n: usize, seed: u64) -> Volume {
    assert!(n > 0, "volume side must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells: Vec<([f64; 3], f64, f64)> = (0..12)
        .map(|_| {
            let c = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let radius = rng.random_range(0.06..0.22);
            let strength = rng.random_range(0.4..1.0);
            (c, radius, strength)
        })
        .collect();
    let mut samples = Vec::with_capacity(n * n * n);
    let unit = |i: usize| (i as f64 + 0.5) / n as f64;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [unit(x), unit(y), unit(z)];
                let mut v = 0.15 * (1.0 - p[2]) + 0.05 * (6.0 * p[0] + 4.0 * p[1]).sin();
                for (c, r, s) in &cells {
                    let d2: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    v += s * (-d2 / (2.0 * r * r)).exp();
                }
                samples.push(v as f32);
            }
        }
    }
    Volume::new(n, n, n, samples).expect("finite synthetic samples")
}
