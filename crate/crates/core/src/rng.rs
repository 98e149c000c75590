//! Reproducible random streams.
//!
//! A master seed expands into named streams with
//! `splitmix64(master ^ splitmix64(stream_tag))`. Within a stream, every
//! (frame, subcarrier) cell gets its own ChaCha8 stream id, so cells can be
//! generated in any order or in parallel and still produce the same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams of a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Channel,
    Simulation,
    Oracle,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Channel => 1,
            Stream::Simulation => 2,
            Stream::Oracle => 3,
        }
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    splitmix64(master ^ splitmix64(stream.tag()))
}

/// Generator for one (frame, subcarrier) cell.
pub fn cell_rng(seed: u64, frame: u64, subcarrier: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame.wrapping_mul(1 << 20).wrapping_add(subcarrier as u64));
    rng
}

pub fn stream_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
