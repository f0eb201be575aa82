//! Exhaustive truth tables for small rings, computed directly in the clear.

use crate::ring::Ring;

fn small_ring(k: u32) -> Ring {
    assert!(k <= 16, "brute-force tables are limited to k <= 16");
    Ring::new(k).expect("valid small ring")
}

/// floor(x / 2^m) for every x in Z_{2^k}.
pub fn floor_div_table(k: u32, m: u32) -> Vec<u128> {
    let r = small_ring(k);
    (0..=r.mask()).map(|x| x >> m).collect()
}

/// Bit k-1 of every x in Z_{2^k}.
pub fn msb_table(k: u32) -> Vec<u8> {
    let r = small_ring(k);
    (0..=r.mask()).map(|x| r.msb(x) as u8).collect()
}

/// table[a][b] = [a < b] for a, b in [0, 2^{k-1}).
pub fn less_than_table(k: u32) -> Vec<Vec<u8>> {
    let half = 1u128 << (small_ring(k).bits() - 1);
    (0..half)
        .map(|a| (0..half).map(|b| (a < b) as u8).collect())
        .collect()
}

/// Clamp of every signed residue of Z_{2^k} to [lo, hi].
pub fn clamp_table(k: u32, lo: i128, hi: i128) -> Vec<u128> {
    let r = small_ring(k);
    (0..=r.mask())
        .map(|x| r.from_i128(r.to_i128(x).clamp(lo, hi)))
        .collect()
}

/// Products a*b mod 2^k for all pairs.
pub fn mul_table(k: u32) -> Vec<Vec<u128>> {
    let r = small_ring(k);
    (0..=r.mask())
        .map(|a| (0..=r.mask()).map(|b| r.mul(a, b)).collect())
        .collect()
}
