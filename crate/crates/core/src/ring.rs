//! Arithmetic in Z_{2^k} for 8 <= k <= 128, backed by a single `u128` word.
//!
//! Values are always kept canonical (bits at positions >= k are zero). Negative
//! quantities exist only as two's-complement residues.

use std::fmt;

use crate::error::{Error, Result};

pub const MIN_BITS: u32 = 8;
pub const MAX_BITS: u32 = 128;
pub const DEFAULT_BITS: u32 = 72;

/// The ring Z_{2^k}. Cheap to copy; carried by sessions and used to reduce raw words.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ring {
    bits: u32,
    mask: u128,
}

impl fmt::Debug for Ring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Z_2^{}", self.bits)
    }
}

impl Default for Ring {
    fn default() -> Self {
        Ring::new(DEFAULT_BITS).unwrap()
    }
}

impl Ring {
    pub fn new(bits: u32) -> Result<Self> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::config(format!(
                "ring width {bits} outside [{MIN_BITS}, {MAX_BITS}]"
            )));
        }
        let mask = if bits == 128 {
            u128::MAX
        } else {
            (1u128 << bits) - 1
        };
        Ok(Ring { bits, mask })
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn mask(&self) -> u128 {
        self.mask
    }

    /// Bytes used for one element on the wire.
    #[inline]
    pub fn byte_len(&self) -> usize {
        self.bits.div_ceil(8) as usize
    }

    #[inline]
    pub fn reduce(&self, v: u128) -> u128 {
        v & self.mask
    }

    #[inline]
    pub fn add(&self, a: u128, b: u128) -> u128 {
        a.wrapping_add(b) & self.mask
    }

    #[inline]
    pub fn sub(&self, a: u128, b: u128) -> u128 {
        a.wrapping_sub(b) & self.mask
    }

    #[inline]
    pub fn neg(&self, a: u128) -> u128 {
        a.wrapping_neg() & self.mask
    }

    // 2^k divides 2^128, so reducing the low word of the product is exact.
    #[inline]
    pub fn mul(&self, a: u128, b: u128) -> u128 {
        a.wrapping_mul(b) & self.mask
    }

    /// Embeds a signed integer as its two's-complement residue.
    #[inline]
    pub fn from_i128(&self, v: i128) -> u128 {
        (v as u128) & self.mask
    }

    /// Interprets a residue as a signed integer in [-2^{k-1}, 2^{k-1}).
    pub fn to_i128(&self, v: u128) -> i128 {
        let v = v & self.mask;
        if self.bits == 128 {
            return v as i128;
        }
        if v >> (self.bits - 1) == 1 {
            (v as i128) - (1i128 << self.bits)
        } else {
            v as i128
        }
    }

    #[inline]
    pub fn msb(&self, v: u128) -> bool {
        (v >> (self.bits - 1)) & 1 == 1
    }

    #[inline]
    pub fn pow2(&self, e: u32) -> u128 {
        if e >= 128 {
            0
        } else {
            (1u128 << e) & self.mask
        }
    }

    pub fn element(&self, v: u128) -> RingElement {
        RingElement {
            value: v & self.mask,
            bits: self.bits as u8,
        }
    }

    /// Little-endian fixed-width encoding, `byte_len()` bytes per element.
    pub fn encode(&self, values: &[u128], out: &mut Vec<u8>) {
        let n = self.byte_len();
        out.reserve(values.len() * n);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes()[..n]);
        }
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Vec<u128>> {
        let n = self.byte_len();
        if !bytes.len().is_multiple_of(n) {
            return Err(Error::Framing(format!(
                "payload of {} bytes is not a multiple of the {n}-byte element width",
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(n)
            .map(|c| {
                let mut buf = [0u8; 16];
                buf[..n].copy_from_slice(c);
                u128::from_le_bytes(buf) & self.mask
            })
            .collect())
    }
}

/// An element of Z_{2^k} that carries its own width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RingElement {
    value: u128,
    bits: u8,
}

impl RingElement {
    pub fn new(value: u128, bits: u32) -> Result<Self> {
        Ok(Ring::new(bits)?.element(value))
    }

    #[inline]
    pub fn value(&self) -> u128 {
        self.value
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits as u32
    }

    pub fn ring(&self) -> Ring {
        Ring::new(self.bits as u32).expect("element width validated on construction")
    }

    fn check(&self, other: &RingElement) -> Result<Ring> {
        if self.bits != other.bits {
            return Err(Error::config(format!(
                "ring width mismatch: {} vs {}",
                self.bits, other.bits
            )));
        }
        Ok(self.ring())
    }

    pub fn add(&self, other: &RingElement) -> Result<RingElement> {
        let r = self.check(other)?;
        Ok(r.element(r.add(self.value, other.value)))
    }

    pub fn sub(&self, other: &RingElement) -> Result<RingElement> {
        let r = self.check(other)?;
        Ok(r.element(r.sub(self.value, other.value)))
    }

    pub fn mul(&self, other: &RingElement) -> Result<RingElement> {
        let r = self.check(other)?;
        Ok(r.element(r.mul(self.value, other.value)))
    }

    /// Bits b_0..b_{k-1}, least significant first.
    pub fn bit_decompose(&self) -> Vec<u8> {
        (0..self.bits)
            .map(|i| ((self.value >> i) & 1) as u8)
            .collect()
    }

    pub fn recompose(bits: &[u8]) -> Result<RingElement> {
        let k = bits.len() as u32;
        let ring = Ring::new(k)?;
        let mut v = 0u128;
        for (i, b) in bits.iter().enumerate() {
            if *b > 1 {
                return Err(Error::config(format!("bit {i} has non-binary value {b}")));
            }
            v |= (*b as u128) << i;
        }
        Ok(ring.element(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn el(v: u128, k: u32) -> RingElement {
        RingElement::new(v, k).unwrap()
    }

    #[test]
    fn add_wraps_at_eight_bits() {
        assert_eq!(el(200, 8).add(&el(100, 8)).unwrap().value(), 44);
    }

    #[test]
    fn add_zero_is_identity() {
        let x = el(0xdead_beef_cafe_f00d_12, 72);
        assert_eq!(x.add(&el(0, 72)).unwrap(), x);
    }

    #[test]
    fn add_exhaustive_k8() {
        for a in 0..256u128 {
            for b in 0..256u128 {
                assert_eq!(el(a, 8).add(&el(b, 8)).unwrap().value(), (a + b) & 255);
            }
        }
    }

    #[test]
    fn mul_wraps() {
        assert_eq!(el(16, 8).mul(&el(16, 8)).unwrap().value(), 0);
        let x = el(0xff_ffff_ffff_ffff_fff1, 72);
        assert_eq!(x.mul(&el(1, 72)).unwrap(), x);
    }

    #[test]
    fn mul_matches_bigint_k72() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ring = Ring::new(72).unwrap();
        let modulus = BigUint::from(1u8) << 72u32;
        for _ in 0..1000 {
            let a = ring.reduce(rng.gen());
            let b = ring.reduce(rng.gen());
            let expect = (BigUint::from(a) * BigUint::from(b)) % &modulus;
            let got = el(a, 72).mul(&el(b, 72)).unwrap().value();
            assert_eq!(BigUint::from(got), expect);
        }
    }

    #[test]
    fn width_mismatch_is_config_error() {
        assert!(matches!(el(1, 8).add(&el(1, 16)), Err(Error::Config(_))));
        assert!(matches!(el(1, 8).mul(&el(1, 16)), Err(Error::Config(_))));
    }

    #[test]
    fn bit_decompose_examples() {
        assert_eq!(el(5, 8).bit_decompose()[..4], [1, 0, 1, 0]);
        assert_eq!(el(0, 8).bit_decompose(), vec![0; 8]);
        for v in 0..256u128 {
            let x = el(v, 8);
            assert_eq!(RingElement::recompose(&x.bit_decompose()).unwrap(), x);
        }
    }

    #[test]
    fn ring_axioms_exhaustive_k8() {
        let r = Ring::new(8).unwrap();
        for a in 0..256u128 {
            for b in 0..256u128 {
                assert_eq!(r.add(a, b), r.add(b, a));
                assert_eq!(r.mul(a, b), r.mul(b, a));
                assert_eq!(r.add(r.sub(a, b), b), a);
            }
        }
        // triples sampled on a stride to keep runtime reasonable
        for a in (0..256u128).step_by(7) {
            for b in (0..256u128).step_by(5) {
                for c in (0..256u128).step_by(3) {
                    assert_eq!(r.add(r.add(a, b), c), r.add(a, r.add(b, c)));
                    assert_eq!(r.mul(r.mul(a, b), c), r.mul(a, r.mul(b, c)));
                    assert_eq!(r.mul(a, r.add(b, c)), r.add(r.mul(a, b), r.mul(a, c)));
                }
            }
        }
    }

    #[test]
    fn signed_embedding() {
        let r = Ring::new(16).unwrap();
        assert_eq!(r.from_i128(-1), 0xffff);
        assert_eq!(r.to_i128(0xffff), -1);
        assert_eq!(r.to_i128(0x7fff), 0x7fff);
        assert!(r.msb(0x8000));
    }

    #[test]
    fn encode_decode_widths() {
        for k in [8, 16, 31, 72, 128] {
            let r = Ring::new(k).unwrap();
            let vals = vec![0, 1, r.mask(), r.mask() / 3];
            let mut buf = Vec::new();
            r.encode(&vals, &mut buf);
            assert_eq!(buf.len(), vals.len() * r.byte_len());
            assert_eq!(r.decode(&buf).unwrap(), vals);
        }
    }

    proptest::proptest! {
        #[test]
        fn canonical_closure(a: u128, b: u128, k in 8u32..=128) {
            let r = Ring::new(k).unwrap();
            let (a, b) = (r.reduce(a), r.reduce(b));
            for v in [r.add(a, b), r.sub(a, b), r.mul(a, b), r.neg(a)] {
                proptest::prop_assert!(v <= r.mask());
            }
        }
    }
}
