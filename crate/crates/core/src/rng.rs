//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream: the key comes from the master seed,
//! the 64-bit stream id packs `(replication, role)`. Two draws never share
//! a keystream block unless they share all three coordinates, so results
//! do not depend on how replications are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u64)]
pub enum StreamRole {
    Brownian = 0,
    Noise = 1,
}

const ROLE_BITS: u32 = 2;

/// `(master seed, replication id)`; the role is chosen at [`SeedKey::stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedKey {
    pub master: u64,
    pub replication: u64,
}

impl SeedKey {
    pub fn new(master: u64, replication: u64) -> Self {
        Self {
            master,
            replication,
        }
    }

    pub fn stream(&self, role: StreamRole) -> ChaCha8Rng {
        debug_assert!(self.replication < (1u64 << (64 - ROLE_BITS)));
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream((self.replication << ROLE_BITS) | role as u64);
        rng
    }
}

impl From<u64> for SeedKey {
    fn from(master: u64) -> Self {
        Self::new(master, 0)
    }
}

/// SplitMix64 finalizer, used to derive independent master seeds from a
/// parent seed and a label.
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    let mut z = parent
        .wrapping_add(label.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
