use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Real, Tensor};

/// I.i.d. standard normal samples, deterministic in `seed`.
pub fn sample_gaussian<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    sample_gaussian_with(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Like [`sample_gaussian`] but drawing from a caller-owned generator.
pub fn sample_gaussian_with<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Child seed for a position in a nested loop, e.g. `(epoch, batch,
/// scene)`. Mixes each part in with the SplitMix64 finaliser so that
/// neighbouring paths give unrelated streams.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(base), |acc, &p| {
        splitmix(acc ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
