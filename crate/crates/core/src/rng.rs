//! Deterministic per-pixel random streams.
//!
//! Every pixel draws from its own ChaCha8 stream. The key is the run seed and
//! the stream id is the pixel address, so a pixel's draws never depend on how
//! the array is partitioned across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type PixelRng = ChaCha8Rng;

/// SplitMix64 finalizer over `seed + salt * golden`.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for pixel (x, y) of a `width` x `height` array.
pub fn pixel_rng_stream(seed: u64, width: u32, height: u32, x: u32, y: u32) -> Result<PixelRng> {
    if x >= width || y >= height {
        return Err(Error::OutOfRange {
            x,
            y,
            width,
            height,
        });
    }
    Ok(pixel_stream_unchecked(seed, x, y))
}

pub(crate) fn pixel_stream_unchecked(seed: u64, x: u32, y: u32) -> PixelRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((y as u64) << 32) | x as u64);
    rng
}

/// Stream for array-wide draws (mismatch maps and the like), disjoint from
/// every pixel stream of the same seed.
pub(crate) fn global_stream(seed: u64, purpose: u64) -> PixelRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xA11A_0000 ^ purpose))
}
