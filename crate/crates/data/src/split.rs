use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Uniform value in [0, 1) from `sha256(seed_le ‖ id)`.
pub fn hash_unit(id: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    let mut top = [0u8; 8];
    top.copy_from_slice(&d[..8]);
    // 53 high bits → exact double in [0, 1)
    (u64::from_be_bytes(top) >> 11) as f64 / (1u64 << 53) as f64
}

/// Test with probability `test_fraction`, decided by the id hash alone.
pub fn assign_split(id: &str, seed: u64, test_fraction: f64) -> Split {
    if hash_unit(id, seed) < test_fraction {
        Split::Test
    } else {
        Split::Train
    }
}

pub const DEFAULT_TEST_FRACTION: f64 = 0.05;
