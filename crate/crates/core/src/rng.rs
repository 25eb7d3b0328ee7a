//! Named, reproducible random streams.
//!
//! Every random draw in the pipeline descends from a single global seed.
//! Sub-streams are derived by mixing the parent seed with a stream name and
//! an index, so adding a new consumer never perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const GRAPH: &str = "graph";
pub const CONFOUNDER: &str = "confounder";
pub const TREATMENT: &str = "treatment";
pub const NOISE: &str = "noise";
pub const CENSOR: &str = "censor";
pub const SAMPLER: &str = "sampler";
pub const INIT: &str = "init";
pub const EVAL: &str = "eval";
pub const PAIRS: &str = "pairs";
pub const DATA: &str = "data";
pub const TRAIN: &str = "train";
pub const LLN: &str = "lln";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Derive the seed of the sub-stream `name`/`index` of `seed`.
pub fn derive(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(name)) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive(seed, name, 0))
}

pub fn from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
