//! Counter-based normal draws.
//!
//! Every row of every noise array gets its own ChaCha stream, keyed by
//! `(master_seed, realization_index, purpose)` and selected by the row index.
//! Draws therefore never depend on the order in which rows or realizations
//! are generated, nor on how many workers generate them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Purpose tags; distinct tags give independent streams.
pub(crate) const TAG_INCREMENTS: u64 = 0x1;
pub(crate) const TAG_AUXILIARY: u64 = 0x2;
pub(crate) const TAG_SPLIT: u64 = 0x3;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one row of one noise array.
pub(crate) fn row_rng(master_seed: u64, index: u64, tag: u64, row: u64) -> ChaCha8Rng {
    let mut state = master_seed;
    let mut key = [0u8; 32];
    let words = [
        splitmix64(&mut state) ^ index.rotate_left(17),
        splitmix64(&mut state) ^ tag.rotate_left(41),
        splitmix64(&mut state) ^ index,
        splitmix64(&mut state) ^ tag,
    ];
    let mut mix = words[0] ^ words[2].rotate_left(7);
    for (chunk, w) in key.chunks_mut(8).zip(words) {
        chunk.copy_from_slice(&(w ^ splitmix64(&mut mix)).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(row);
    rng
}

/// `len` standard normal draws for the given row.
pub(crate) fn normal_row(master_seed: u64, index: u64, tag: u64, row: u64, len: usize) -> Vec<f64> {
    let mut rng = row_rng(master_seed, index, tag, row);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}
