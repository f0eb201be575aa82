//! Replicated 2-of-3 arithmetic sharing over Z_{2^k}.
//!
//! x = x_1 + x_2 + x_3 and party P_i holds (x_i, x_{i+1}). A `RepShare` is one
//! party's pair; which pair it is follows from the session's party id.

use crate::error::{Error, Result};
use crate::ring::{Ring, RingElement};
use crate::session::PartySession;
use crate::transport::PartyId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct RepShare {
    /// x_i for party P_i
    pub a: u128,
    /// x_{i+1}
    pub b: u128,
}

impl RepShare {
    pub const ZERO: RepShare = RepShare { a: 0, b: 0 };

    #[inline]
    pub fn new(a: u128, b: u128) -> Self {
        RepShare { a, b }
    }

    #[inline]
    pub fn add(self, ring: Ring, o: RepShare) -> RepShare {
        RepShare::new(ring.add(self.a, o.a), ring.add(self.b, o.b))
    }

    #[inline]
    pub fn sub(self, ring: Ring, o: RepShare) -> RepShare {
        RepShare::new(ring.sub(self.a, o.a), ring.sub(self.b, o.b))
    }

    #[inline]
    pub fn neg(self, ring: Ring) -> RepShare {
        RepShare::new(ring.neg(self.a), ring.neg(self.b))
    }

    #[inline]
    pub fn mul_const(self, ring: Ring, c: u128) -> RepShare {
        RepShare::new(ring.mul(self.a, c), ring.mul(self.b, c))
    }

    /// Adds a public constant. The constant lands in component x_1, held by
    /// P_1 (first slot) and P_3 (second slot).
    #[inline]
    pub fn add_const(self, ring: Ring, party: PartyId, c: u128) -> RepShare {
        match party.id() {
            1 => RepShare::new(ring.add(self.a, c), self.b),
            3 => RepShare::new(self.a, ring.add(self.b, c)),
            _ => self,
        }
    }

    /// This party's share of a public constant.
    #[inline]
    pub fn constant(ring: Ring, party: PartyId, c: u128) -> RepShare {
        RepShare::ZERO.add_const(ring, party, ring.reduce(c))
    }

    /// Local part of a product: a_i b_i + a_i b_{i+1} + a_{i+1} b_i.
    #[inline]
    pub fn cross_term(self, ring: Ring, o: RepShare) -> u128 {
        let t = self
            .a
            .wrapping_mul(o.a)
            .wrapping_add(self.a.wrapping_mul(o.b))
            .wrapping_add(self.b.wrapping_mul(o.a));
        ring.reduce(t)
    }
}

pub(crate) fn encode(ring: Ring, v: &[u128]) -> Vec<u8> {
    let mut out = Vec::new();
    ring.encode(v, &mut out);
    out
}

pub(crate) fn decode_n(ring: Ring, bytes: &[u8], n: usize) -> Result<Vec<u128>> {
    let v = ring.decode(bytes)?;
    if v.len() != n {
        return Err(Error::Framing(format!(
            "expected {n} ring elements, received {}",
            v.len()
        )));
    }
    Ok(v)
}

pub fn add_vec(ring: Ring, a: &[RepShare], b: &[RepShare]) -> Vec<RepShare> {
    a.iter().zip(b).map(|(x, y)| x.add(ring, *y)).collect()
}

pub fn sub_vec(ring: Ring, a: &[RepShare], b: &[RepShare]) -> Vec<RepShare> {
    a.iter().zip(b).map(|(x, y)| x.sub(ring, *y)).collect()
}

/// Secret-shares values owned by `owner`. The owner passes `Some(values)`,
/// every other party passes `None`; all parties pass the same `n`.
///
/// The owner's two components come from the pairwise streams, so only the
/// third component x - x_o - x_{o+1} travels, to both other parties.
pub fn input_share(
    sess: &mut PartySession,
    owner: PartyId,
    values: Option<&[RingElement]>,
    n: usize,
) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    let raw = match values {
        Some(vs) => {
            if vs.len() != n {
                return Err(Error::shape(format!(
                    "owner supplied {} values, expected {n}",
                    vs.len()
                )));
            }
            if let Some(bad) = vs.iter().find(|v| v.bits() != ring.bits()) {
                return Err(Error::config(format!(
                    "input of width {} in a Z_2^{} session",
                    bad.bits(),
                    ring.bits()
                )));
            }
            Some(vs.iter().map(|v| v.value()).collect::<Vec<_>>())
        }
        None => None,
    };
    input_share_raw(sess, owner, raw.as_deref(), n)
}

pub fn input_share_raw(
    sess: &mut PartySession,
    owner: PartyId,
    values: Option<&[u128]>,
    n: usize,
) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    let me = sess.id();
    if me == owner {
        let values = values.ok_or_else(|| Error::config("input owner must supply values"))?;
        if values.len() != n {
            return Err(Error::shape(format!(
                "owner supplied {} values, expected {n}",
                values.len()
            )));
        }
        let (shares, third) = owner_components(sess, values);
        let payload = encode(ring, &third);
        sess.net().round(
            vec![(me.next(), payload.clone()), (me.prev(), payload)],
            &[],
        )?;
        Ok(shares)
    } else if me.prev() == owner {
        let mine: Vec<u128> = (0..n).map(|_| sess.prev_elem()).collect();
        let got = sess.net().round(vec![], &[owner])?;
        let third = decode_n(ring, &got[0], n)?;
        Ok(mine.into_iter().zip(third).map(|(a, b)| RepShare::new(a, b)).collect())
    } else {
        let mine: Vec<u128> = (0..n).map(|_| sess.next_elem()).collect();
        let got = sess.net().round(vec![], &[owner])?;
        let third = decode_n(ring, &got[0], n)?;
        Ok(third.into_iter().zip(mine).map(|(a, b)| RepShare::new(a, b)).collect())
    }
}

fn owner_components(sess: &mut PartySession, values: &[u128]) -> (Vec<RepShare>, Vec<u128>) {
    let ring = sess.ring();
    let mut shares = Vec::with_capacity(values.len());
    let mut third = Vec::with_capacity(values.len());
    for &x in values {
        let c0 = sess.prev_elem();
        let c1 = sess.next_elem();
        shares.push(RepShare::new(c0, c1));
        third.push(ring.sub(ring.sub(ring.reduce(x), c0), c1));
    }
    (shares, third)
}

/// Every party shares `n` values of its own in a single round. Returns the
/// sharings indexed by owner.
pub fn input_share_all(sess: &mut PartySession, mine: &[u128]) -> Result<[Vec<RepShare>; 3]> {
    let ring = sess.ring();
    let me = sess.id();
    let n = mine.len();
    let mut out: [Vec<RepShare>; 3] = Default::default();
    let mut my_third = Vec::new();
    let mut partial: [Vec<u128>; 3] = Default::default();
    // PRG draws happen in owner order so both holders of each stream stay in step.
    for owner in PartyId::ALL {
        if owner == me {
            let (s, t) = owner_components(sess, mine);
            out[owner.index()] = s;
            my_third = t;
        } else if me.prev() == owner {
            partial[owner.index()] = (0..n).map(|_| sess.prev_elem()).collect();
        } else {
            partial[owner.index()] = (0..n).map(|_| sess.next_elem()).collect();
        }
    }
    let payload = encode(ring, &my_third);
    let got = sess.net().round(
        vec![(me.next(), payload.clone()), (me.prev(), payload)],
        &[me.next(), me.prev()],
    )?;
    let from_next = decode_n(ring, &got[0], n)?;
    let from_prev = decode_n(ring, &got[1], n)?;
    out[me.prev().index()] = partial[me.prev().index()]
        .iter()
        .zip(from_prev)
        .map(|(&a, b)| RepShare::new(a, b))
        .collect();
    out[me.next().index()] = from_next
        .into_iter()
        .zip(&partial[me.next().index()])
        .map(|(a, &b)| RepShare::new(a, b))
        .collect();
    Ok(out)
}

/// Reveals shared values to all parties. Each party sends its first component
/// to its successor: one ring element per value.
pub fn open(sess: &mut PartySession, xs: &[RepShare]) -> Result<Vec<u128>> {
    let ring = sess.ring();
    let me = sess.id();
    let firsts: Vec<u128> = xs.iter().map(|s| s.a).collect();
    let got = sess
        .net()
        .round(vec![(me.next(), encode(ring, &firsts))], &[me.prev()])?;
    let missing = decode_n(ring, &got[0], xs.len())?;
    Ok(xs
        .iter()
        .zip(missing)
        .map(|(s, m)| ring.add(ring.add(s.a, s.b), m))
        .collect())
}

/// Like `open`, but each party also forwards its second component so the
/// successor can check the component they are both supposed to hold. Costs
/// twice the traffic; a debugging aid, not an integrity mechanism.
pub fn open_checked(sess: &mut PartySession, xs: &[RepShare]) -> Result<Vec<u128>> {
    let ring = sess.ring();
    let me = sess.id();
    let n = xs.len();
    let mut payload: Vec<u128> = xs.iter().map(|s| s.a).collect();
    payload.extend(xs.iter().map(|s| s.b));
    let got = sess
        .net()
        .round(vec![(me.next(), encode(ring, &payload))], &[me.prev()])?;
    let v = decode_n(ring, &got[0], 2 * n)?;
    let (missing, prev_second) = v.split_at(n);
    for (i, (s, p)) in xs.iter().zip(prev_second).enumerate() {
        if s.a != *p {
            return Err(Error::Consistency(format!(
                "element {i}: {} and {} disagree on their common component",
                me.prev(),
                me
            )));
        }
    }
    Ok(xs
        .iter()
        .zip(missing)
        .map(|(s, m)| ring.add(ring.add(s.a, s.b), *m))
        .collect())
}

/// Turns per-party additive terms t_i (summing to the secret) into a fresh
/// replicated sharing. t_i is masked with a zero sharing and sent to P_{i-1};
/// P_i then holds (t_i, t_{i+1}). One ring element per value per party.
pub fn reshare(sess: &mut PartySession, terms: Vec<u128>) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    let me = sess.id();
    let zero = sess.zero_share(terms.len());
    let masked: Vec<u128> = terms
        .iter()
        .zip(zero)
        .map(|(&t, z)| ring.add(t, z))
        .collect();
    let got = sess
        .net()
        .round(vec![(me.prev(), encode(ring, &masked))], &[me.next()])?;
    let from_next = decode_n(ring, &got[0], masked.len())?;
    Ok(masked
        .into_iter()
        .zip(from_next)
        .map(|(a, b)| RepShare::new(a, b))
        .collect())
}

pub fn mul(sess: &mut PartySession, a: &[RepShare], b: &[RepShare]) -> Result<Vec<RepShare>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "mul operands have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ring = sess.ring();
    let terms = a.iter().zip(b).map(|(x, y)| x.cross_term(ring, *y)).collect();
    reshare(sess, terms)
}

/// Local cross-term sum of a dot product; add to other terms before `reshare`.
pub fn dot_terms(ring: Ring, a: &[RepShare], b: &[RepShare]) -> u128 {
    a.iter()
        .zip(b)
        .fold(0u128, |acc, (x, y)| ring.add(acc, x.cross_term(ring, *y)))
}

/// Batched inner products. Communication equals one `mul` per output,
/// independent of vector lengths.
pub fn dot(sess: &mut PartySession, rows: &[(&[RepShare], &[RepShare])]) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    let mut terms = Vec::with_capacity(rows.len());
    for (i, (a, b)) in rows.iter().enumerate() {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::shape(format!(
                "dot row {i}: lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
        terms.push(dot_terms(ring, a, b));
    }
    reshare(sess, terms)
}

/// Arithmetic XOR of shared bits: x + y - 2xy.
pub fn xor_bits(sess: &mut PartySession, x: &[RepShare], y: &[RepShare]) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    let prod = mul(sess, x, y)?;
    Ok(x.iter()
        .zip(y)
        .zip(prod)
        .map(|((a, b), p)| a.add(ring, *b).sub(ring, p.mul_const(ring, 2)))
        .collect())
}

/// `n` shared uniform bits. Every party shares a local bit and the three are
/// combined with two arithmetic XORs.
pub fn rand_bits(sess: &mut PartySession, n: usize) -> Result<Vec<RepShare>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mine: Vec<u128> = (0..n).map(|_| sess.local_bit() as u128).collect();
    let [b1, b2, b3] = input_share_all(sess, &mine)?;
    let x = xor_bits(sess, &b1, &b2)?;
    xor_bits(sess, &x, &b3)
}

pub fn rand_bit(sess: &mut PartySession) -> Result<RepShare> {
    Ok(rand_bits(sess, 1)?[0])
}

/// 2-out-of-2 view of a replicated sharing: P_1 gets x_1 + x_2, P_2 gets x_3,
/// P_3 gets nothing. Local.
pub fn to_two_party(ring: Ring, party: PartyId, s: RepShare) -> Option<u128> {
    match party.id() {
        1 => Some(ring.add(s.a, s.b)),
        2 => Some(s.b),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::run_local;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(k: u32) -> Ring {
        Ring::new(k).unwrap()
    }

    /// P1 shares `vals`, everyone applies `f`, result is opened.
    fn eval<F>(k: u32, vals: Vec<u128>, f: F) -> Vec<u128>
    where
        F: Fn(&mut PartySession, &[RepShare]) -> Result<Vec<RepShare>> + Sync,
    {
        let n = vals.len();
        let [a, b, c] = run_local(ring(k), 11, |s| {
            let v = if s.id() == PartyId::P1 { Some(&vals[..]) } else { None };
            let sh = input_share_raw(s, PartyId::P1, v, n)?;
            let out = f(s, &sh)?;
            open(s, &out)
        })
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        a
    }

    #[test]
    fn share_open_round_trip() {
        assert_eq!(eval(72, vec![0, 42], |_, x| Ok(x.to_vec())), vec![0, 42]);
        let r = ring(72);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<u128> = (0..1000).map(|_| r.reduce(rng.gen())).collect();
        assert_eq!(eval(72, vals.clone(), |_, x| Ok(x.to_vec())), vals);
    }

    #[test]
    fn replicated_structure_holds() {
        let r = ring(64);
        let [p1, p2, p3] = run_local(r, 5, |s| {
            let v = if s.id() == PartyId::P2 { Some(&[1234u128][..]) } else { None };
            input_share_raw(s, PartyId::P2, v, 1)
        })
        .unwrap();
        assert_eq!(p1[0].b, p2[0].a);
        assert_eq!(p2[0].b, p3[0].a);
        assert_eq!(p3[0].b, p1[0].a);
        assert_eq!(r.add(r.add(p1[0].a, p2[0].a), p3[0].a), 1234);
    }

    #[test]
    fn input_width_mismatch_rejected() {
        let r = ring(32);
        let res = run_local(r, 1, |s| {
            if s.id() == PartyId::P1 {
                let x = RingElement::new(5, 16).unwrap();
                input_share(s, PartyId::P1, Some(&[x]), 1)
            } else {
                Ok(vec![])
            }
        });
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn local_ops() {
        let r = ring(8);
        assert_eq!(eval(8, vec![7], |_, x| Ok(vec![x[0].mul_const(r, 3)])), vec![21]);
        assert_eq!(
            eval(8, vec![5], |s, x| Ok(vec![x[0].add_const(r, s.id(), 250)])),
            vec![255]
        );
        assert_eq!(
            eval(8, vec![5, 9], |_, x| Ok(vec![x[0].add(r, x[1]), x[0].sub(r, x[1])])),
            vec![14, r.sub(5, 9)]
        );
    }

    #[test]
    fn local_ops_cost_nothing() {
        let r = ring(72);
        let [d, _, _] = run_local(r, 2, |s| {
            let v = if s.id() == PartyId::P1 { Some(&[9u128][..]) } else { None };
            let mut x = input_share_raw(s, PartyId::P1, v, 1)?[0];
            let before = s.stats();
            for i in 0..10_000u128 {
                x = x.add_const(r, s.id(), i).mul_const(r, 3).add(r, x).sub(r, x);
            }
            Ok(s.stats().since(&before))
        })
        .unwrap();
        assert_eq!(d.bytes_sent(), 0);
        assert_eq!(d.rounds, 0);
    }

    #[test]
    fn mul_exhaustive_sample_k8() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pairs: Vec<(u128, u128)> = (0..1024).map(|_| (rng.gen_range(0..256), rng.gen_range(0..256))).collect();
        let mut vals: Vec<u128> = pairs.iter().map(|p| p.0).collect();
        vals.extend(pairs.iter().map(|p| p.1));
        let out = eval(8, vals, |s, x| {
            let (a, b) = x.split_at(1024);
            mul(s, a, b)
        });
        for (i, (a, b)) in pairs.iter().enumerate() {
            assert_eq!(out[i], (a * b) & 255);
        }
        assert_eq!(eval(8, vec![0, 77], |s, x| mul(s, &x[..1], &x[1..])), vec![0]);
    }

    #[test]
    fn mul_and_open_cost_one_element() {
        let r = ring(72);
        let stats = run_local(r, 4, |s| {
            let v = if s.id() == PartyId::P1 { Some(&[3u128, 4][..]) } else { None };
            let x = input_share_raw(s, PartyId::P1, v, 2)?;
            let t0 = s.stats();
            let p = mul(s, &x[..1], &x[1..])?;
            let t1 = s.stats();
            open(s, &p)?;
            let t2 = s.stats();
            Ok((t1.since(&t0), t2.since(&t1)))
        })
        .unwrap();
        for (m, o) in stats {
            assert_eq!(m.bytes_sent(), r.byte_len() as u64);
            assert_eq!(o.bytes_sent(), r.byte_len() as u64);
            assert_eq!(m.rounds, 1);
        }
    }

    #[test]
    fn dot_matches_cleartext() {
        let r = ring(72);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [1usize, 16, 1024] {
            let a: Vec<u128> = (0..n).map(|_| r.reduce(rng.gen())).collect();
            let b: Vec<u128> = (0..n).map(|_| r.reduce(rng.gen())).collect();
            let expect = a.iter().zip(&b).fold(0, |acc, (x, y)| r.add(acc, r.mul(*x, *y)));
            let mut vals = a.clone();
            vals.extend(&b);
            let out = eval(72, vals, |s, x| {
                let (xa, xb) = x.split_at(n);
                dot(s, &[(xa, xb)])
            });
            assert_eq!(out, vec![expect]);
        }
    }

    #[test]
    fn dot_shape_errors() {
        let r = ring(16);
        let res = run_local(r, 1, |s| dot(s, &[(&[RepShare::ZERO; 2][..], &[RepShare::ZERO; 3][..])]));
        assert!(matches!(res, Err(Error::Shape(_))));
        let res = run_local(r, 1, |s| dot(s, &[(&[][..], &[][..])]));
        assert!(matches!(res, Err(Error::Shape(_))));
    }

    #[test]
    fn rand_bits_are_bits() {
        let r = ring(72);
        let out = run_local(r, 21, |s| {
            let b = rand_bits(s, 20_000)?;
            let one_minus: Vec<RepShare> = b
                .iter()
                .map(|x| x.neg(r).add_const(r, s.id(), 1))
                .collect();
            let z = mul(s, &b, &one_minus)?;
            Ok((open(s, &b)?, open(s, &z)?))
        })
        .unwrap();
        let (bits, zeros) = &out[0];
        assert!(bits.iter().all(|&b| b <= 1));
        assert!(zeros.iter().all(|&z| z == 0));
        let mean = bits.iter().sum::<u128>() as f64 / bits.len() as f64;
        assert!((0.48..=0.52).contains(&mean), "mean {mean}");
    }

    #[test]
    fn two_party_view_reconstructs() {
        let r = ring(72);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<u128> = (0..50).map(|_| r.reduce(rng.gen())).chain([0]).collect();
        let outs = run_local(r, 8, |s| {
            let v = if s.id() == PartyId::P3 { Some(&vals[..]) } else { None };
            let x = input_share_raw(s, PartyId::P3, v, vals.len())?;
            let before = s.stats();
            let t: Vec<Option<u128>> = x.iter().map(|sh| to_two_party(r, s.id(), *sh)).collect();
            assert_eq!(s.stats(), before);
            Ok(t)
        })
        .unwrap();
        for (i, v) in vals.iter().enumerate() {
            assert!(outs[2][i].is_none());
            assert_eq!(r.add(outs[0][i].unwrap(), outs[1][i].unwrap()), *v);
        }
    }

    #[test]
    fn open_checked_detects_disagreement() {
        let r = ring(32);
        let res = run_local(r, 1, |s| {
            let v = if s.id() == PartyId::P1 { Some(&[5u128][..]) } else { None };
            let mut x = input_share_raw(s, PartyId::P1, v, 1)?;
            if s.id() == PartyId::P2 {
                x[0].b = r.add(x[0].b, 1);
            }
            open_checked(s, &x)
        });
        assert!(matches!(res, Err(Error::Consistency(_))));
        let ok = run_local(r, 1, |s| {
            let v = if s.id() == PartyId::P1 { Some(&[5u128][..]) } else { None };
            let x = input_share_raw(s, PartyId::P1, v, 1)?;
            open_checked(s, &x)
        })
        .unwrap();
        assert_eq!(ok[0], vec![5]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn reconstruction_soundness(x: u128, y: u128, c: u128, k in 8u32..=128) {
            let r = ring(k);
            let (x, y, c) = (r.reduce(x), r.reduce(y), r.reduce(c));
            let out = eval(k, vec![x, y], |s, v| {
                let p = mul(s, &v[..1], &v[1..])?;
                let q = p[0].add(r, v[0]).mul_const(r, c).add_const(r, s.id(), c).sub(r, v[1]);
                Ok(vec![q])
            });
            let expect = r.sub(r.add(r.mul(r.add(r.mul(x, y), x), c), c), y);
            proptest::prop_assert_eq!(out, vec![expect]);
        }
    }
}
