//! Stable seed derivation. Values depend only on their inputs, never on
//! platform, process, or the order in which seeds are requested.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// splitmix64 finalizer.
pub fn finalize(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines two seeds into a third.
pub fn mix(a: u64, b: u64) -> u64 {
    finalize(a ^ finalize(b))
}

/// Seed from a base seed and a list of coordinate strings (FNV-1a over the
/// parts, separated so that `["ab", "c"]` and `["a", "bc"]` differ).
pub fn hash_parts(base: u64, parts: &[&str]) -> u64 {
    let mut h = FNV_OFFSET;
    for byte in base.to_le_bytes() {
        h = (h ^ byte as u64).wrapping_mul(FNV_PRIME);
    }
    for part in parts {
        for &byte in part.as_bytes() {
            h = (h ^ byte as u64).wrapping_mul(FNV_PRIME);
        }
        h = (h ^ 0x1f).wrapping_mul(FNV_PRIME);
    }
    finalize(h)
}
