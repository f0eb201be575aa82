//! Replicated sharing over Z_2, the MSB adder circuit, secure comparison,
//! bit-to-arithmetic conversion through daBits, oblivious selection and clamping.

use crate::arith::{self, RepShare};
use crate::error::{Error, Result};
use crate::ring::Ring;
use crate::session::{DaBit, PartySession};
use crate::transport::PartyId;

/// Packed bit vector, 64 bits per word, bit i at word i/64, position i%64.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitVec {
    words: Vec<u64>,
    len: usize,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        BitVec {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        let mut v = BitVec::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        words.truncate(len.div_ceil(64));
        let mut v = BitVec { words, len };
        v.clear_tail();
        v
    }

    fn clear_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(w) = self.words.last_mut() {
                *w &= (1u64 << r) - 1;
            }
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        ((self.words[i / 64] >> (i % 64)) & 1) as u8
    }

    #[inline]
    pub fn set(&mut self, i: usize, b: u8) {
        let m = 1u64 << (i % 64);
        if b & 1 == 1 {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn xor(&self, o: &BitVec) -> BitVec {
        debug_assert_eq!(self.len, o.len);
        BitVec {
            words: self.words.iter().zip(&o.words).map(|(a, b)| a ^ b).collect(),
            len: self.len,
        }
    }

    pub fn and(&self, o: &BitVec) -> BitVec {
        debug_assert_eq!(self.len, o.len);
        BitVec {
            words: self.words.iter().zip(&o.words).map(|(a, b)| a & b).collect(),
            len: self.len,
        }
    }

    pub fn gather(&self, idx: &[usize]) -> BitVec {
        let mut v = BitVec::zeros(idx.len());
        for (j, &i) in idx.iter().enumerate() {
            v.set(j, self.get(i));
        }
        v
    }

    /// ceil(len / 8) bytes, little-endian bit order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(n);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(n);
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Framing(format!(
                "expected {} bytes for {len} bits, received {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let words = bytes
            .chunks(8)
            .map(|c| {
                let mut buf = [0u8; 8];
                buf[..c.len()].copy_from_slice(c);
                u64::from_le_bytes(buf)
            })
            .collect();
        Ok(BitVec::from_words(words, len))
    }
}

/// One party's pair of components of a replicated Z_2 sharing of a bit vector.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BinShareVec {
    pub a: BitVec,
    pub b: BitVec,
}

impl BinShareVec {
    pub fn zeros(len: usize) -> Self {
        BinShareVec {
            a: BitVec::zeros(len),
            b: BitVec::zeros(len),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn xor(&self, o: &BinShareVec) -> BinShareVec {
        BinShareVec {
            a: self.a.xor(&o.a),
            b: self.b.xor(&o.b),
        }
    }

    /// XOR with a public vector, folded into component 1 as for arithmetic constants.
    pub fn xor_public(&self, party: PartyId, c: &BitVec) -> BinShareVec {
        match party.id() {
            1 => BinShareVec {
                a: self.a.xor(c),
                b: self.b.clone(),
            },
            3 => BinShareVec {
                a: self.a.clone(),
                b: self.b.xor(c),
            },
            _ => self.clone(),
        }
    }

    pub fn gather(&self, idx: &[usize]) -> BinShareVec {
        BinShareVec {
            a: self.a.gather(idx),
            b: self.b.gather(idx),
        }
    }

    pub fn concat(parts: &[&BinShareVec]) -> BinShareVec {
        let len: usize = parts.iter().map(|p| p.len()).sum();
        let mut out = BinShareVec::zeros(len);
        let mut off = 0;
        for p in parts {
            for i in 0..p.len() {
                out.a.set(off + i, p.a.get(i));
                out.b.set(off + i, p.b.get(i));
            }
            off += p.len();
        }
        out
    }

    pub fn slice(&self, start: usize, len: usize) -> BinShareVec {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather(&idx)
    }
}

pub fn bin_xor(a: &BinShareVec, b: &BinShareVec) -> Result<BinShareVec> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "xor of {} and {} bits",
            a.len(),
            b.len()
        )));
    }
    Ok(a.xor(b))
}

/// Batched AND gates, one bit per gate per party on the wire.
pub fn bin_and(sess: &mut PartySession, x: &BinShareVec, y: &BinShareVec) -> Result<BinShareVec> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "and of {} and {} bits",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n == 0 {
        return Ok(BinShareVec::zeros(0));
    }
    let me = sess.id();
    let zero = BitVec::from_words(sess.zero_share_bits(n.div_ceil(64)), n);
    let t = x
        .a
        .and(&y.a)
        .xor(&x.a.and(&y.b))
        .xor(&x.b.and(&y.a))
        .xor(&zero);
    let got = sess
        .net()
        .round(vec![(me.prev(), t.to_bytes())], &[me.next()])?;
    let from_next = BitVec::from_bytes(&got[0], n)?;
    Ok(BinShareVec { a: t, b: from_next })
}

pub fn bin_open(sess: &mut PartySession, x: &BinShareVec) -> Result<BitVec> {
    let me = sess.id();
    let got = sess
        .net()
        .round(vec![(me.next(), x.a.to_bytes())], &[me.prev()])?;
    let missing = BitVec::from_bytes(&got[0], x.len())?;
    Ok(x.a.xor(&x.b).xor(&missing))
}

fn bin_owner_components(sess: &mut PartySession, v: &BitVec) -> (BinShareVec, BitVec) {
    let w = v.len().div_ceil(64);
    let c0 = BitVec::from_words(sess.prev_words(w), v.len());
    let c1 = BitVec::from_words(sess.next_words(w), v.len());
    let third = v.xor(&c0).xor(&c1);
    (BinShareVec { a: c0, b: c1 }, third)
}

/// Every party shares `len` bits of its own in one round; sharings indexed by owner.
pub fn bin_input_share_all(sess: &mut PartySession, mine: &BitVec) -> Result<[BinShareVec; 3]> {
    let me = sess.id();
    let len = mine.len();
    let w = len.div_ceil(64);
    let mut out: [BinShareVec; 3] = Default::default();
    let mut partial: [BitVec; 3] = Default::default();
    let mut third = BitVec::default();
    for owner in PartyId::ALL {
        if owner == me {
            let (s, t) = bin_owner_components(sess, mine);
            out[owner.index()] = s;
            third = t;
        } else if me.prev() == owner {
            partial[owner.index()] = BitVec::from_words(sess.prev_words(w), len);
        } else {
            partial[owner.index()] = BitVec::from_words(sess.next_words(w), len);
        }
    }
    let payload = third.to_bytes();
    let got = sess.net().round(
        vec![(me.next(), payload.clone()), (me.prev(), payload)],
        &[me.next(), me.prev()],
    )?;
    let from_next = BitVec::from_bytes(&got[0], len)?;
    let from_prev = BitVec::from_bytes(&got[1], len)?;
    out[me.prev().index()] = BinShareVec {
        a: std::mem::take(&mut partial[me.prev().index()]),
        b: from_prev,
    };
    out[me.next().index()] = BinShareVec {
        a: from_next,
        b: std::mem::take(&mut partial[me.next().index()]),
    };
    Ok(out)
}

/// Binary sharings of u = x_1 + x_2 and v = x_3, bit j*k + i holding bit i of
/// value j. v's sharing is (0, 0, x_3) and needs no interaction; u is known to
/// P_1 only, so P_1 masks it with the stream it shares with P_3 and sends the
/// masked word to P_2.
fn summand_sharings(sess: &mut PartySession, xs: &[RepShare]) -> Result<(BinShareVec, BinShareVec)> {
    let ring = sess.ring();
    let k = ring.bits() as usize;
    let len = xs.len() * k;
    let w = len.div_ceil(64);
    let words_of = |vals: &mut dyn Iterator<Item = u128>| {
        let mut v = BitVec::zeros(len);
        for (j, x) in vals.enumerate() {
            for i in 0..k {
                v.set(j * k + i, ((x >> i) & 1) as u8);
            }
        }
        v
    };
    let zero = BitVec::zeros(len);
    let me = sess.id();
    let (u, v) = match me.id() {
        1 => {
            let c0 = BitVec::from_words(sess.prev_words(w), len);
            let uval = words_of(&mut xs.iter().map(|s| ring.add(s.a, s.b)));
            let c1 = uval.xor(&c0);
            sess.net().round(vec![(PartyId::P2, c1.to_bytes())], &[])?;
            (
                BinShareVec { a: c0, b: c1 },
                BinShareVec {
                    a: zero.clone(),
                    b: zero,
                },
            )
        }
        2 => {
            let got = sess.net().round(vec![], &[PartyId::P1])?;
            let c1 = BitVec::from_bytes(&got[0], len)?;
            let x3 = words_of(&mut xs.iter().map(|s| s.b));
            (
                BinShareVec {
                    a: c1,
                    b: zero.clone(),
                },
                BinShareVec { a: zero, b: x3 },
            )
        }
        _ => {
            let c0 = BitVec::from_words(sess.next_words(w), len);
            let x3 = words_of(&mut xs.iter().map(|s| s.a));
            (
                BinShareVec {
                    a: zero.clone(),
                    b: c0,
                },
                BinShareVec { a: x3, b: zero },
            )
        }
    };
    Ok((u, v))
}

/// Binary sharing of bit k-1 of each shared value: the carry out of the low
/// k-1 bits of u + v, XOR the top bits of u and v. The carry comes from a
/// Kogge-Stone style prefix tree pruned to the single output it needs, so
/// rounds grow with log2(k-1).
pub fn msb(sess: &mut PartySession, xs: &[RepShare]) -> Result<BinShareVec> {
    let n = xs.len();
    if n == 0 {
        return Ok(BinShareVec::zeros(0));
    }
    let k = sess.ring().bits() as usize;
    let (u, v) = summand_sharings(sess, xs)?;
    let p_all = u.xor(&v);

    let low: Vec<usize> = (0..n).flat_map(|j| (0..k - 1).map(move |i| j * k + i)).collect();
    let top: Vec<usize> = (0..n).map(|j| j * k + k - 1).collect();

    // level nodes: per value, w consecutive (generate, propagate) pairs
    let mut w = k - 1;
    let mut g = bin_and(sess, &u.gather(&low), &v.gather(&low))?;
    let mut p = p_all.gather(&low);

    while w > 1 {
        let pairs = w / 2;
        let nw = w.div_ceil(2);
        let mut hi_idx = Vec::with_capacity(n * pairs);
        let mut lo_idx = Vec::with_capacity(n * pairs);
        // propagate of a combined node is only needed when it does not start at bit 0
        let mut php_idx = Vec::new();
        let mut plo_idx = Vec::new();
        for j in 0..n {
            for q in 0..pairs {
                hi_idx.push(j * w + 2 * q + 1);
                lo_idx.push(j * w + 2 * q);
                if q > 0 {
                    php_idx.push(j * w + 2 * q + 1);
                    plo_idx.push(j * w + 2 * q);
                }
            }
        }
        let lhs = BinShareVec::concat(&[&p.gather(&hi_idx), &p.gather(&php_idx)]);
        let rhs = BinShareVec::concat(&[&g.gather(&lo_idx), &p.gather(&plo_idx)]);
        let prod = bin_and(sess, &lhs, &rhs)?;
        let ghi = g.gather(&hi_idx);

        let mut ng = BinShareVec::zeros(n * nw);
        let mut np = BinShareVec::zeros(n * nw);
        let mut pp = n * pairs;
        for j in 0..n {
            for q in 0..pairs {
                let t = j * pairs + q;
                ng.a.set(j * nw + q, ghi.a.get(t) ^ prod.a.get(t));
                ng.b.set(j * nw + q, ghi.b.get(t) ^ prod.b.get(t));
                if q > 0 {
                    np.a.set(j * nw + q, prod.a.get(pp));
                    np.b.set(j * nw + q, prod.b.get(pp));
                    pp += 1;
                }
            }
            if w % 2 == 1 {
                let src = j * w + w - 1;
                let dst = j * nw + nw - 1;
                ng.a.set(dst, g.a.get(src));
                ng.b.set(dst, g.b.get(src));
                np.a.set(dst, p.a.get(src));
                np.b.set(dst, p.b.get(src));
            }
        }
        g = ng;
        p = np;
        w = nw;
    }
    Ok(p_all.gather(&top).xor(&g))
}

/// Communication rounds of one `msb` batch over Z_{2^k}.
pub fn msb_rounds(k: u32) -> u64 {
    let levels = (k - 1).next_power_of_two().trailing_zeros() as u64;
    2 + levels
}

/// Rounds of a `bit_to_arith` batch, counting a daBit pool refill.
pub const B2A_ROUNDS_WORST: u64 = 1 + DABIT_ROUNDS;

/// Rounds of one `generate_dabits` batch.
pub const DABIT_ROUNDS: u64 = 4;

/// Worst-case rounds of `clamp`: comparisons, conversion, selection.
pub fn clamp_rounds(k: u32) -> u64 {
    msb_rounds(k) + B2A_ROUNDS_WORST + 1
}

/// Shared bit [a < b]. Valid when a - b is meaningful as a two's-complement
/// value, e.g. both operands in [0, 2^{k-1}).
pub fn less_than(sess: &mut PartySession, a: &[RepShare], b: &[RepShare]) -> Result<BinShareVec> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "less_than operands have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ring = sess.ring();
    let d = arith::sub_vec(ring, a, b);
    msb(sess, &d)
}

/// Produces `n` fresh daBits: every party shares a local bit in both domains,
/// binary XOR is local, arithmetic XOR costs two multiplications.
pub fn generate_dabits(sess: &mut PartySession, n: usize) -> Result<Vec<DaBit>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let bits: Vec<u8> = (0..n).map(|_| sess.local_bit()).collect();
    let as_ring: Vec<u128> = bits.iter().map(|&b| b as u128).collect();
    let [a1, a2, a3] = arith::input_share_all(sess, &as_ring)?;
    let [b1, b2, b3] = bin_input_share_all(sess, &BitVec::from_bits(&bits))?;
    let x = arith::xor_bits(sess, &a1, &a2)?;
    let arith_bits = arith::xor_bits(sess, &x, &a3)?;
    let bin_bits = b1.xor(&b2).xor(&b3);
    Ok(arith_bits
        .into_iter()
        .enumerate()
        .map(|(i, arith)| DaBit {
            bin: (bin_bits.a.get(i), bin_bits.b.get(i)),
            arith,
        })
        .collect())
}

/// Makes sure at least `n` daBits are pooled, refilling in batches.
pub fn ensure_dabits(sess: &mut PartySession, n: usize) -> Result<()> {
    let have = sess.dabits.len();
    if have < n {
        let want = (n - have).max(sess.dabit_batch());
        let fresh = generate_dabits(sess, want)?;
        sess.dabits.extend(fresh);
    }
    Ok(())
}

/// Converts shared bits to arithmetic shares: open c = b XOR r for a daBit r,
/// then output r or 1 - r depending on c. One opening of the packed bits.
pub fn bit_to_arith(sess: &mut PartySession, bits: &BinShareVec) -> Result<Vec<RepShare>> {
    let n = bits.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    ensure_dabits(sess, n)?;
    let ring = sess.ring();
    let me = sess.id();
    let rs: Vec<DaBit> = sess.dabits.drain(..n).collect();
    let mut rb = BinShareVec::zeros(n);
    for (i, d) in rs.iter().enumerate() {
        rb.a.set(i, d.bin.0);
        rb.b.set(i, d.bin.1);
    }
    let c = bin_open(sess, &bits.xor(&rb))?;
    Ok(rs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            if c.get(i) == 1 {
                d.arith.neg(ring).add_const(ring, me, 1)
            } else {
                d.arith
            }
        })
        .collect())
}

/// Arithmetic shares of [a < b].
pub fn less_than_arith(sess: &mut PartySession, a: &[RepShare], b: &[RepShare]) -> Result<Vec<RepShare>> {
    let bits = less_than(sess, a, b)?;
    bit_to_arith(sess, &bits)
}

/// a_s = s * (a1 - a0) + a0 for shared bits s. One multiplication.
pub fn select(
    sess: &mut PartySession,
    s: &[RepShare],
    a1: &[RepShare],
    a0: &[RepShare],
) -> Result<Vec<RepShare>> {
    if s.len() != a1.len() || s.len() != a0.len() {
        return Err(Error::shape("select operands differ in length"));
    }
    let ring = sess.ring();
    let d = arith::sub_vec(ring, a1, a0);
    let p = arith::mul(sess, s, &d)?;
    Ok(arith::add_vec(ring, &p, a0))
}

/// min(max(x, lo), hi) for public lo <= hi. Both comparisons share one adder
/// batch and both selections one multiplication round. Requires that neither
/// x - lo nor hi - x wraps the signed range, i.e. signed x in
/// [hi - 2^{k-1} + 1, lo + 2^{k-1} - 1]; the output-stage headroom guarantees
/// this for activations.
pub fn clamp(sess: &mut PartySession, x: &[RepShare], lo: u128, hi: u128) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    let me = sess.id();
    let n = x.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let lo = ring.reduce(lo);
    let hi = ring.reduce(hi);
    // x - lo is negative iff x < lo; hi - x is negative iff x > hi
    let below: Vec<RepShare> = x.iter().map(|s| s.add_const(ring, me, ring.neg(lo))).collect();
    let above: Vec<RepShare> = x.iter().map(|s| s.neg(ring).add_const(ring, me, hi)).collect();
    let mut diffs = below.clone();
    diffs.extend_from_slice(&above);
    let bits = msb(sess, &diffs)?;
    let sel = bit_to_arith(sess, &bits)?;
    let mut deltas: Vec<RepShare> = below.iter().map(|d| d.neg(ring)).collect();
    deltas.extend_from_slice(&above);
    let p = arith::mul(sess, &sel, &deltas)?;
    Ok((0..n)
        .map(|i| x[i].add(ring, p[i]).add(ring, p[n + i]))
        .collect())
}

/// Cleartext helpers used by tests across modules.
pub fn clear_clamp(ring: Ring, x: u128, lo: u128, hi: u128) -> u128 {
    let v = ring.to_i128(x).clamp(lo as i128, hi as i128);
    ring.from_i128(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::{input_share_raw, open};
    use crate::oracle::brute;
    use crate::session::run_local;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(k: u32) -> Ring {
        Ring::new(k).unwrap()
    }

    fn shared<F, R>(k: u32, vals: &[u128], f: F) -> [R; 3]
    where
        F: Fn(&mut PartySession, &[RepShare]) -> Result<R> + Sync,
        R: Send,
    {
        run_local(ring(k), 31, |s| {
            let v = if s.id() == PartyId::P1 { Some(vals) } else { None };
            let x = input_share_raw(s, PartyId::P1, v, vals.len())?;
            f(s, &x)
        })
        .unwrap()
    }

    fn share_bits(s: &mut PartySession, bits: &[u8]) -> Result<BinShareVec> {
        let mine = if s.id() == PartyId::P1 {
            BitVec::from_bits(bits)
        } else {
            BitVec::zeros(bits.len())
        };
        let [o, _, _] = bin_input_share_all(s, &mine)?;
        Ok(o)
    }

    #[test]
    fn bitvec_bytes_round_trip() {
        let bits: Vec<u8> = (0..77).map(|i| ((i * 7) % 3 == 0) as u8).collect();
        let v = BitVec::from_bits(&bits);
        let bytes = v.to_bytes();
        assert_eq!(bytes.len(), 10);
        assert_eq!(BitVec::from_bytes(&bytes, 77).unwrap().to_bits(), bits);
    }

    #[test]
    fn xor_self_is_zero_and_and_truth_table() {
        let out = run_local(ring(16), 2, |s| {
            let x = share_bits(s, &[0, 0, 1, 1])?;
            let y = share_bits(s, &[0, 1, 0, 1])?;
            let z = bin_and(s, &x, &y)?;
            Ok((bin_open(s, &z)?.to_bits(), bin_open(s, &x.xor(&x))?.to_bits()))
        })
        .unwrap();
        assert_eq!(out[0].0, vec![0, 0, 0, 1]);
        assert_eq!(out[0].1, vec![0, 0, 0, 0]);
    }

    #[test]
    fn and_gates_bit_packed() {
        let out = run_local(ring(16), 3, |s| {
            let x = share_bits(s, &[1; 64])?;
            let before = s.stats();
            let _ = bin_and(s, &x, &x)?;
            Ok(s.stats().since(&before))
        })
        .unwrap();
        for d in out {
            assert_eq!(d.bytes_sent(), 8);
        }
    }

    #[test]
    fn msb_exhaustive_k8() {
        let vals: Vec<u128> = (0..256).collect();
        let table = brute::msb_table(8);
        let [o, _, _] = shared(8, &vals, |s, x| {
            let b = msb(s, x)?;
            Ok(bin_open(s, &b)?.to_bits())
        });
        assert_eq!(o, table);
    }

    #[test]
    fn msb_random_k72() {
        let r = ring(72);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut vals: Vec<u128> = (0..10_000).map(|_| r.reduce(rng.gen())).collect();
        vals[0] = 0;
        let [o, _, _] = shared(72, &vals, |s, x| { let b = msb(s, x)?; Ok(bin_open(s, &b)?.to_bits()) });
        for (v, b) in vals.iter().zip(o) {
            assert_eq!(r.msb(*v) as u8, b);
        }
    }

    #[test]
    fn msb_and_bits_within_gate_count() {
        // per adder: (k-1) generate gates plus at most 2 per tree node
        for k in [8u32, 16, 33, 72] {
            let [d, _, _] = shared(k, &[1, 2, 3], |s, x| {
                let before = s.stats();
                msb(s, x)?;
                Ok(s.stats().since(&before))
            });
            let gates = 3 * (k as u64 - 1) * 3;
            // P1 also sends the masked summand, k bits per value
            assert!(d.bytes_sent() * 8 <= gates + 3 * k as u64 + 64, "k={k}");
            let levels = (k - 1).next_power_of_two().trailing_zeros() as u64;
            assert_eq!(d.rounds, 2 + levels);
        }
    }

    #[test]
    fn less_than_exhaustive_k8() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for x in 0..128u128 {
            for y in 0..128u128 {
                a.push(x);
                b.push(y);
            }
        }
        let n = a.len();
        let mut vals = a.clone();
        vals.extend(&b);
        let table = brute::less_than_table(8);
        let [o, _, _] = shared(8, &vals, |s, x| {
            let (xa, xb) = x.split_at(n);
            let b = less_than(s, xa, xb)?;
            Ok(bin_open(s, &b)?.to_bits())
        });
        for i in 0..n {
            assert_eq!(o[i], table[a[i] as usize][b[i] as usize], "{} < {}", a[i], b[i]);
        }
    }

    #[test]
    fn less_than_strict_and_successor() {
        let r = ring(72);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let xs: Vec<u128> = (0..200).map(|_| rng.gen::<u128>() >> 58).collect();
        let mut vals = vec![3u128, 3];
        vals.extend(xs.iter().copied());
        vals.extend(xs.iter().map(|x| r.add(*x, 1)));
        let [o, _, _] = shared(72, &vals, |s, x| {
            let mut a = vec![x[0]];
            let mut b = vec![x[1]];
            a.extend_from_slice(&x[2..202]);
            b.extend_from_slice(&x[202..]);
            let bits = less_than(s, &a, &b)?;
            Ok(bin_open(s, &bits)?.to_bits())
        });
        assert_eq!(o[0], 0);
        assert!(o[1..].iter().all(|&b| b == 1));
    }

    #[test]
    fn comparison_is_a_strict_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trip: Vec<[u128; 3]> = (0..300)
            .map(|_| [rng.gen_range(0..1u128 << 20), rng.gen_range(0..1u128 << 20), rng.gen_range(0..1u128 << 20)])
            .collect();
        let vals: Vec<u128> = trip.iter().flatten().copied().collect();
        let [o, _, _] = shared(32, &vals, |s, x| {
            let mut l = Vec::new();
            let mut r = Vec::new();
            for t in x.chunks(3) {
                // ab, ba, bc, ac
                l.extend([t[0], t[1], t[1], t[0]]);
                r.extend([t[1], t[0], t[2], t[2]]);
            }
            let bits = less_than(s, &l, &r)?;
            Ok(bin_open(s, &bits)?.to_bits())
        });
        for c in o.chunks(4) {
            assert!(c[0] + c[1] <= 1, "antisymmetry");
            if c[0] == 1 && c[2] == 1 {
                assert_eq!(c[3], 1, "transitivity");
            }
        }
    }

    #[test]
    fn bit_to_arith_round_trip_and_cost() {
        let out = run_local(ring(72), 5, |s| {
            ensure_dabits(s, 64)?;
            let bits: Vec<u8> = (0..64).map(|i| (i % 3 == 0) as u8).collect();
            let b = share_bits(s, &bits)?;
            let before = s.stats();
            let a = bit_to_arith(s, &b)?;
            let cost = s.stats().since(&before);
            let zero = bit_to_arith(s, &BinShareVec::zeros(1))?;
            Ok((bits, open(s, &a)?, cost, open(s, &zero)?))
        })
        .unwrap();
        for (bits, vals, cost, zero) in out {
            assert_eq!(vals, bits.iter().map(|&b| b as u128).collect::<Vec<_>>());
            assert_eq!(cost.bytes_sent(), 8);
            assert_eq!(cost.rounds, 1);
            assert_eq!(zero, vec![0]);
        }
    }

    #[test]
    fn dabits_agree_across_domains() {
        let out = run_local(ring(64), 6, |s| {
            let d = generate_dabits(s, 500)?;
            let mut bin = BinShareVec::zeros(d.len());
            for (i, x) in d.iter().enumerate() {
                bin.a.set(i, x.bin.0);
                bin.b.set(i, x.bin.1);
            }
            let arith: Vec<RepShare> = d.iter().map(|x| x.arith).collect();
            Ok((bin_open(s, &bin)?.to_bits(), open(s, &arith)?))
        })
        .unwrap();
        let (bin, arith) = &out[0];
        for (b, a) in bin.iter().zip(arith) {
            assert_eq!(*b as u128, *a);
        }
        let ones = bin.iter().filter(|&&b| b == 1).count();
        assert!((150..350).contains(&ones));
    }

    #[test]
    fn select_cases() {
        let r = ring(72);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 300;
        let s_bits: Vec<u128> = (0..n).map(|i| if i < 2 { i as u128 } else { rng.gen_range(0..2) }).collect();
        let a1: Vec<u128> = (0..n).map(|_| r.reduce(rng.gen())).collect();
        let a0: Vec<u128> = (0..n).map(|_| r.reduce(rng.gen())).collect();
        let vals: Vec<u128> = s_bits.iter().chain(&a1).chain(&a0).copied().collect();
        let [o, _, _] = shared(72, &vals, |s, x| {
            let out = select(s, &x[..n], &x[n..2 * n], &x[2 * n..])?;
            let same = select(s, &x[..n], &x[n..2 * n], &x[n..2 * n])?;
            Ok((open(s, &out)?, open(s, &same)?))
        });
        for i in 0..n {
            assert_eq!(o.0[i], if s_bits[i] == 1 { a1[i] } else { a0[i] });
            assert_eq!(o.1[i], a1[i]);
        }
    }

    #[test]
    fn clamp_examples_and_exhaustive_k16() {
        let [o, _, _] = shared(72, &[300, 42], |s, x| { let c = clamp(s, x, 0, 255)?; open(s, &c) });
        assert_eq!(o, vec![255, 42]);
        let vals: Vec<u128> = (0..1024).collect();
        let r = ring(16);
        let [o, _, _] = shared(16, &vals, |s, x| { let c = clamp(s, x, 0, 255)?; open(s, &c) });
        for (x, c) in vals.iter().zip(o) {
            assert_eq!(c, clear_clamp(r, *x, 0, 255));
        }
    }

    #[test]
    fn clamp_handles_negative_values() {
        let r = ring(32);
        let vals: Vec<u128> = [-5i128, -1, 0, 7, 300].iter().map(|v| r.from_i128(*v)).collect();
        let [o, _, _] = shared(32, &vals, |s, x| { let c = clamp(s, x, 3, 200)?; open(s, &c) });
        assert_eq!(o, vec![3, 3, 3, 7, 200]);
    }
}
