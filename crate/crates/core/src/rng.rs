//! Seeded random streams. Every consumer derives its own stream from a base
//! seed plus a list of keys, so results never depend on call order elsewhere.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;

pub type Rng = Pcg64;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A PCG stream determined by `seed` and `keys`.
pub fn keyed(seed: u64, keys: &[u64]) -> Rng {
    let mut s = mix(seed);
    for &k in keys {
        s = mix(s ^ mix(k));
    }
    Pcg64::seed_from_u64(s)
}

/// Normal samples truncated to ±2 standard deviations.
pub fn trunc_normal(rng: &mut Rng, n: usize, std: f64) -> Vec<f32> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n)
        .map(|_| loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break (z * std) as f32;
            }
        })
        .collect()
}

/// Uniform samples in `[lo, hi)`.
pub fn uniform(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    use rand::Rng as _;
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
