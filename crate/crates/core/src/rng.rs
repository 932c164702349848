//! Seed derivation. Every random stream is a pure function of the run seed
//! and a few integer coordinates (epoch, batch, purpose), so any epoch can
//! be replayed without stored generator state.

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix `seed` with `coords` into a child seed.
pub fn derive(seed: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix(seed), |acc, &c| splitmix(acc ^ splitmix(c)))
}

/// Purpose tags for [`derive`].
pub mod stream {
    pub const SHUFFLE: u64 = 1;
    pub const TRAIN_ATTACK: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const INIT: u64 = 5;
    pub const LABELS: u64 = 6;
}
