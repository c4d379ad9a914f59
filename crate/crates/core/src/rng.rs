//! Seeded random streams.
//!
//! Every stochastic source (target diffusion, schedule draws, measurement
//! noise, initial conditions) gets its own ChaCha stream keyed by the master
//! seed, the Monte-Carlo run index and a purpose/owner path. Streams never
//! share state, so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Target = 1,
    Schedule = 2,
    Measurement = 3,
    RobotInit = 4,
    Prior = 5,
    Formation = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from a master seed and a key path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(master), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Seed for `purpose` of owner `(robot, coordinate)` in Monte-Carlo run `run`.
pub fn stream_seed(master: u64, run: u64, purpose: Stream, robot: u64, coord: u64) -> u64 {
    derive_seed(master, &[run, purpose as u64, robot, coord])
}
