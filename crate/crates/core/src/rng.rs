//! Every random stream derives from one root seed, split by purpose and index,
//! so a component can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(root: u64, purpose: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn stream(root: u64, purpose: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, purpose, index))
}
