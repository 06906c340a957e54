//! Reproducible random streams.
//!
//! Every stream is a ChaCha20 generator keyed by a master seed and a purpose
//! tag, with the 64-bit ChaCha stream id carrying a `(tau index, replicate
//! index)` counter. Two streams with different coordinates never overlap, and
//! the draws of a replicate depend only on its coordinates, not on the order
//! in which replicates are scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// What a stream is used for. Distinct purposes get distinct keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Data,
    Posterior,
    Bootstrap,
    TailIntegral,
    User(u32),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Data => 1,
            Purpose::Posterior => 2,
            Purpose::Bootstrap => 3,
            Purpose::TailIntegral => 4,
            Purpose::User(k) => 0x1000_0000 + u64::from(k),
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic random stream.
#[derive(Debug, Clone)]
pub struct Stream(ChaCha20Rng);

impl Stream {
    /// Stream from a plain seed, for one-off use in examples and tests.
    pub fn from_seed(seed: u64) -> Self {
        Self::derive(seed, Purpose::User(0), 0, 0)
    }

    /// Counter-based derivation from `(master seed, purpose, tau index, replicate index)`.
    pub fn derive(master_seed: u64, purpose: Purpose, tau_index: u32, replicate: u32) -> Self {
        let mut state = master_seed ^ purpose.tag().wrapping_mul(0xD605_BBB5_8C8A_BB8B);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream((u64::from(tau_index) << 32) | u64::from(replicate));
        Stream(rng)
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
