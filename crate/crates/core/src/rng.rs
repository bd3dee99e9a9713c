//! Deterministic random substreams.
//!
//! Every independent unit of work (a setting, a noise block, a scan sample)
//! draws from its own ChaCha stream keyed by `(seed, tag, index)`, so results
//! do not depend on how the work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub(crate) const SETTING_STREAM: u64 = 0x5e77;
pub(crate) const NOISE_STREAM: u64 = 0x4015e;
pub(crate) const PERMUTATION_STREAM: u64 = 0x9e4;
pub(crate) const SCAN_STREAM: u64 = 0x5ca4;

pub fn substream(seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index);
    rng
}
