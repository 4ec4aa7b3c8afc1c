//! Seed derivation. Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value mixed here, so runs are reproducible from the configured integers alone.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output for state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the run at `width` with seed index `seed_index`.
pub fn run_seed(base: u64, width: u64, seed_index: u64) -> u64 {
    splitmix64(base ^ width.rotate_left(17) ^ seed_index.rotate_left(41))
}

/// Independent sub-streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Batches = 2,
    Bias = 3,
    InitLogit = 4,
    Kernel = 5,
    Data = 6,
}

pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    splitmix64(seed ^ (stream as u64).wrapping_mul(GOLDEN).rotate_left(29))
}
