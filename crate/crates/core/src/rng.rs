//! Counter-based random numbers: every draw is a pure function of a key
//! tuple, so results never depend on evaluation order or thread count.

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a key tuple into 64 random bits.
pub fn hash(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x243F_6A88_85A3_08D3, |h, &k| splitmix64(h ^ splitmix64(k)))
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn unit(keys: &[u64]) -> f64 {
    (hash(keys) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `[0, n)`; `n` must be positive.
pub fn below(keys: &[u64], n: u64) -> u64 {
    assert!(n > 0);
    ((hash(keys) as u128 * n as u128) >> 64) as u64
}
