use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-mixed 64-bit seed for sub-stream `(stream, index)` of `seed`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut x = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}

/// Sub-stream identifiers.
pub mod streams {
    pub const NOISE: u64 = 1;
    pub const LATENT_INIT: u64 = 2;
    pub const GENERATOR_INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const RESTORE_INIT: u64 = 5;
    pub const GLO_INIT: u64 = 6;
    pub const DATA: u64 = 7;
}
