//! Seeded random streams.
//!
//! Every random quantity in the simulator is drawn from a substream addressed
//! by the master seed plus a tuple of tags (user, realization, round, ...).
//! Work can therefore be split across threads in any order and still produce
//! the same bytes as a serial run.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

/// Stream purposes. Keeping them in one place prevents two call sites from
/// silently sharing a substream.
pub mod tag {
    pub const BS_IRS: u64 = 1;
    pub const USER_CHANNEL: u64 = 2;
    pub const MEASUREMENT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const MASK: u64 = 6;
    pub const UPLINK: u64 = 7;
    pub const DOWNLINK: u64 = 8;
    pub const LOCAL_BATCH: u64 = 9;
    pub const EVAL: u64 = 10;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream from `seed` and an ordered tag path.
pub fn substream(seed: u64, path: &[u64]) -> Stream {
    let mut key = splitmix(seed);
    for &p in path {
        key = splitmix(key ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(splitmix(key ^ 0xD1B5_4A32_D192_ED03));
    rng
}

/// Derives a child seed (used where a seed, not a stream, is announced).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    substream(seed, path).random()
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Circularly-symmetric complex Gaussian with the given total variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    Complex64::new(s * standard_normal(rng), s * standard_normal(rng))
}
