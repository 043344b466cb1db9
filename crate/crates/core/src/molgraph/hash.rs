//! Platform-independent 64-bit hashing used by fingerprints and pattern keys.

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Order-dependent combination of two hashes.
pub fn combine(seed: u64, value: u64) -> u64 {
    splitmix64(seed ^ value.rotate_left(17) ^ 0x2545_F491_4F6C_DD1D)
}

pub fn hash_all(values: impl IntoIterator<Item = u64>) -> u64 {
    values.into_iter().fold(0xC0FF_EE00_D15E_A5E5, combine)
}
