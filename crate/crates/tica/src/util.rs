//! Small shared helpers.

/// SplitMix64 mixer; used to derive independent per-sample seeds.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Deterministic seed for item `index` within stream `salt` of `base`.
pub(crate) fn derive_seed(base: u64, salt: u64, index: usize) -> u64 {
    splitmix64(base ^ splitmix64(salt.wrapping_add(1)) ^ ((index as u64) << 1))
}
