//! Truncation of shared values by public and secret shift amounts.
//!
//! All protocols take batches and require MSB(x) = 0 on their inputs. The
//! probabilistic variants return floor(x / 2^m) + u where u is 1 with
//! probability (x mod 2^m) / 2^m.

use serde::{Deserialize, Serialize};

use crate::arith::{self, decode_n, encode, RepShare};
use crate::binary;
use crate::error::{Error, Result};
use crate::ring::Ring;
use crate::session::PartySession;
use crate::transport::PartyId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncKind {
    /// Symmetric black-box protocol built from k shared random bits.
    Probabilistic,
    /// Three-party variant where P3 deals the mask as correlated randomness.
    #[default]
    SpecialProbabilistic,
    /// Exact floor, mask-and-open plus a borrow comparison.
    Exact,
}

impl TruncKind {
    pub fn is_exact(self) -> bool {
        matches!(self, TruncKind::Exact)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    Floor,
    Nearest,
}

#[derive(Clone, Debug)]
pub enum Shift {
    Public(u32),
    /// Shares of 2^{bound - m} for a hidden m <= bound.
    Secret { pow: Vec<RepShare>, bound: u32 },
}

/// A batch truncation: value, shift, protocol, rounding.
#[derive(Clone, Debug)]
pub struct TruncRequest {
    pub value: Vec<RepShare>,
    pub shift: Shift,
    pub kind: TruncKind,
    pub rounding: Rounding,
}

impl TruncRequest {
    /// Checks the shift range and, for secret shifts, that 2^{M-m} x cannot
    /// overflow for inputs of at most `value_bits` bits (worst case m = 0).
    pub fn validate(&self, ring: Ring, value_bits: u32) -> Result<()> {
        let (m, extra) = match &self.shift {
            Shift::Public(m) => (*m, 0),
            Shift::Secret { pow, bound } => {
                if pow.len() != self.value.len() {
                    return Err(Error::shape("one shift power per truncated value"));
                }
                (*bound, *bound)
            }
        };
        check_shift(ring, m)?;
        let round_bit = matches!(self.rounding, Rounding::Nearest) as u32;
        let need = value_bits + extra + round_bit + 1;
        if need > ring.bits() {
            return Err(Error::Headroom {
                required: need,
                available: ring.bits(),
            });
        }
        Ok(())
    }

    pub fn execute(&self, sess: &mut PartySession) -> Result<Vec<RepShare>> {
        match (&self.shift, self.rounding) {
            (Shift::Public(m), Rounding::Floor) => trunc(sess, &self.value, *m, self.kind),
            (Shift::Public(m), Rounding::Nearest) => {
                let ring = sess.ring();
                let me = sess.id();
                let half = ring.pow2(m.saturating_sub(1));
                let v: Vec<RepShare> = self.value.iter().map(|x| x.add_const(ring, me, half)).collect();
                trunc(sess, &v, *m, self.kind)
            }
            (Shift::Secret { pow, bound }, Rounding::Floor) => {
                trunc_priv(sess, &self.value, pow, *bound, self.kind)
            }
            (Shift::Secret { pow, bound }, Rounding::Nearest) => {
                round_nearest(sess, &self.value, pow, *bound, self.kind)
            }
        }
    }
}

pub fn check_shift(ring: Ring, m: u32) -> Result<()> {
    if m == 0 || m + 1 >= ring.bits() {
        return Err(Error::config(format!(
            "truncation shift {m} outside (0, {})",
            ring.bits() - 1
        )));
    }
    Ok(())
}

#[inline]
fn low_mask(bits: u32) -> u128 {
    if bits >= 128 {
        u128::MAX
    } else {
        (1u128 << bits) - 1
    }
}

/// The public parts of the TruncPr output for an opened c = x + r: the bits
/// m..k-2 of c, and its top bit, which decides how r_{k-1} enters.
struct OpenedMask {
    shifted: u128,
    top: bool,
}

fn opened(ring: Ring, c: u128, m: u32) -> OpenedMask {
    let k = ring.bits();
    OpenedMask {
        shifted: (c >> m) & low_mask(k - m - 1),
        top: ring.msb(c),
    }
}

struct PrCore {
    out: Vec<RepShare>,
    opened: Vec<u128>,
    low: Vec<RepShare>,
}

fn trunc_pr_core(sess: &mut PartySession, x: &[RepShare], m: u32, want_low: bool) -> Result<PrCore> {
    let ring = sess.ring();
    check_shift(ring, m)?;
    let me = sess.id();
    let k = ring.bits() as usize;
    let n = x.len();
    let bits = arith::rand_bits(sess, n * k)?;

    let mut masked = Vec::with_capacity(n);
    for (j, xj) in x.iter().enumerate() {
        let r = bits[j * k..(j + 1) * k]
            .iter()
            .enumerate()
            .fold(RepShare::ZERO, |acc, (i, b)| acc.add(ring, b.mul_const(ring, ring.pow2(i as u32))));
        masked.push(xj.add(ring, r));
    }
    let c = arith::open(sess, &masked)?;

    let m_us = m as usize;
    let top_weight = ring.pow2(k as u32 - m - 1);
    let mut out = Vec::with_capacity(n);
    let mut low = Vec::new();
    for j in 0..n {
        let rb = &bits[j * k..(j + 1) * k];
        let o = opened(ring, c[j], m);
        let mid = rb[m_us..k - 1]
            .iter()
            .enumerate()
            .fold(RepShare::ZERO, |acc, (i, b)| acc.add(ring, b.mul_const(ring, ring.pow2(i as u32))));
        let b = if o.top {
            rb[k - 1].neg(ring).add_const(ring, me, 1)
        } else {
            rb[k - 1]
        };
        out.push(
            RepShare::constant(ring, me, o.shifted)
                .sub(ring, mid)
                .add(ring, b.mul_const(ring, top_weight)),
        );
        if want_low {
            low.push(
                rb[..m_us]
                    .iter()
                    .enumerate()
                    .fold(RepShare::ZERO, |acc, (i, b)| acc.add(ring, b.mul_const(ring, ring.pow2(i as u32)))),
            );
        }
    }
    Ok(PrCore {
        out,
        opened: c,
        low,
    })
}

/// Black-box probabilistic truncation.
pub fn trunc_pr(sess: &mut PartySession, x: &[RepShare], m: u32) -> Result<Vec<RepShare>> {
    if x.is_empty() {
        check_shift(sess.ring(), m)?;
        return Ok(Vec::new());
    }
    Ok(trunc_pr_core(sess, x, m, false)?.out)
}

/// Exact floor(x / 2^m). Runs the probabilistic core and subtracts the borrow
/// [c mod 2^m < r mod 2^m], computed with one batched comparison.
pub fn trunc_exact(sess: &mut PartySession, x: &[RepShare], m: u32) -> Result<Vec<RepShare>> {
    if x.is_empty() {
        check_shift(sess.ring(), m)?;
        return Ok(Vec::new());
    }
    let ring = sess.ring();
    let me = sess.id();
    let core = trunc_pr_core(sess, x, m, true)?;
    let c_low: Vec<RepShare> = core
        .opened
        .iter()
        .map(|c| RepShare::constant(ring, me, c & low_mask(m)))
        .collect();
    let borrow = binary::less_than_arith(sess, &c_low, &core.low)?;
    Ok(arith::sub_vec(ring, &core.out, &borrow))
}

/// Values P1 and P2 see inside the special truncation; lets tests check the
/// correctness identity on the actual transcript.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpTrace {
    /// y'_i, the party's output share of the two-party truncation
    pub y_prime: Vec<u128>,
    /// ŷ_i, the mask received from P3
    pub y_hat: Vec<u128>,
    /// ỹ_i, the value received from the other computing party
    pub y_tilde: Vec<u128>,
}

/// Special three-party probabilistic truncation. P3 deals 2-of-2 sharings of
/// the mask r, of its top bit and of its middle bits, plus output masks y_1
/// and y_3; P1 and P2 run two-party TruncPr and re-form a replicated sharing.
/// Traffic is a constant number of ring elements per value.
pub fn trunc_pr_sp(sess: &mut PartySession, x: &[RepShare], m: u32) -> Result<Vec<RepShare>> {
    Ok(trunc_pr_sp_traced(sess, x, m)?.0)
}

pub fn trunc_pr_sp_traced(
    sess: &mut PartySession,
    x: &[RepShare],
    m: u32,
) -> Result<(Vec<RepShare>, Option<SpTrace>)> {
    let ring = sess.ring();
    check_shift(ring, m)?;
    let n = x.len();
    if n == 0 {
        return Ok((Vec::new(), None));
    }
    let me = sess.id();
    let k = ring.bits();

    if me == PartyId::P3 {
        let mut to_p1 = Vec::with_capacity(4 * n);
        let mut to_p2 = Vec::with_capacity(4 * n);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let r = sess.local_elem();
            let top = (r >> (k - 1)) & 1;
            let mid = (r >> m) & low_mask(k - m - 1);
            for v in [r, top, mid] {
                let s1 = sess.local_elem();
                to_p1.push(s1);
                to_p2.push(ring.sub(v, s1));
            }
            let y1 = sess.local_elem();
            let y3 = sess.local_elem();
            to_p1.push(y1);
            to_p2.push(y3);
            out.push(RepShare::new(y3, y1));
        }
        sess.net().round(
            vec![
                (PartyId::P1, encode(ring, &to_p1)),
                (PartyId::P2, encode(ring, &to_p2)),
            ],
            &[],
        )?;
        return Ok((out, None));
    }

    let other = if me == PartyId::P1 { PartyId::P2 } else { PartyId::P1 };
    let lead = me == PartyId::P1;
    let got = sess.net().round(vec![], &[PartyId::P3])?;
    let corr = decode_n(ring, &got[0], 4 * n)?;

    let c_share: Vec<u128> = x
        .iter()
        .zip(corr.chunks_exact(4))
        .map(|(s, c)| ring.add(arith::to_two_party(ring, me, *s).unwrap(), c[0]))
        .collect();
    let theirs = sess.net().exchange(other, encode(ring, &c_share))?;
    let theirs = decode_n(ring, &theirs, n)?;

    let top_weight = ring.pow2(k - m - 1);
    let mut y_prime = Vec::with_capacity(n);
    let mut y_hat = Vec::with_capacity(n);
    let mut diff = Vec::with_capacity(n);
    for j in 0..n {
        let c = ring.add(c_share[j], theirs[j]);
        let o = opened(ring, c, m);
        let cr = &corr[4 * j..4 * j + 4];
        let one = lead as u128;
        let b = if o.top { ring.sub(one, cr[1]) } else { cr[1] };
        let public = if lead { o.shifted } else { 0 };
        let yp = ring.add(ring.sub(public, cr[2]), ring.mul(b, top_weight));
        y_prime.push(yp);
        y_hat.push(cr[3]);
        diff.push(ring.sub(yp, cr[3]));
    }
    let got = sess.net().exchange(other, encode(ring, &diff))?;
    let y_tilde = decode_n(ring, &got, n)?;

    let out = (0..n)
        .map(|j| {
            let mid = ring.add(diff[j], y_tilde[j]);
            if lead {
                RepShare::new(y_hat[j], mid)
            } else {
                RepShare::new(mid, y_hat[j])
            }
        })
        .collect();
    Ok((
        out,
        Some(SpTrace {
            y_prime,
            y_hat,
            y_tilde,
        }),
    ))
}

/// Worst-case rounds of one `trunc` batch over Z_{2^k}.
pub fn trunc_rounds(kind: TruncKind, k: u32) -> u64 {
    // rand_bits: input sharing plus two multiplications; then one opening
    let pr = 4;
    match kind {
        TruncKind::Probabilistic => pr,
        TruncKind::SpecialProbabilistic => 3,
        TruncKind::Exact => pr + binary::msb_rounds(k) + binary::B2A_ROUNDS_WORST,
    }
}

pub fn trunc(sess: &mut PartySession, x: &[RepShare], m: u32, kind: TruncKind) -> Result<Vec<RepShare>> {
    match kind {
        TruncKind::Probabilistic => trunc_pr(sess, x, m),
        TruncKind::SpecialProbabilistic => trunc_pr_sp(sess, x, m),
        TruncKind::Exact => trunc_exact(sess, x, m),
    }
}

/// floor(x / 2^m) for a hidden m, given shares of 2^{M-m}: multiply, then
/// truncate by the public bound M.
pub fn trunc_priv(
    sess: &mut PartySession,
    x: &[RepShare],
    pow: &[RepShare],
    bound: u32,
    kind: TruncKind,
) -> Result<Vec<RepShare>> {
    check_shift(sess.ring(), bound)?;
    let prod = arith::mul(sess, pow, x)?;
    trunc(sess, &prod, bound, kind)
}

/// Round-to-nearest with ties up: floor((2^{M-m} x + 2^{M-1}) / 2^M).
pub fn round_nearest(
    sess: &mut PartySession,
    x: &[RepShare],
    pow: &[RepShare],
    bound: u32,
    kind: TruncKind,
) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    check_shift(ring, bound)?;
    let me = sess.id();
    let prod = arith::mul(sess, pow, x)?;
    let half = ring.pow2(bound - 1);
    let biased: Vec<RepShare> = prod.iter().map(|p| p.add_const(ring, me, half)).collect();
    trunc(sess, &biased, bound, kind)
}

/// Truncation of two's-complement values with |x| < 2^{k-2}: lift by 2^{k-2}
/// so the MSB is clear, truncate, then remove 2^{k-2-m}. The lift is a
/// multiple of 2^m, so the result keeps floor semantics.
pub fn trunc_signed(sess: &mut PartySession, x: &[RepShare], m: u32, kind: TruncKind) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    check_shift(ring, m)?;
    let me = sess.id();
    let k = ring.bits();
    let lift = ring.pow2(k - 2);
    let lifted: Vec<RepShare> = x.iter().map(|s| s.add_const(ring, me, lift)).collect();
    let t = trunc(sess, &lifted, m, kind)?;
    let back = ring.neg(ring.pow2(k - 2 - m));
    Ok(t.into_iter().map(|s| s.add_const(ring, me, back)).collect())
}

/// `round_nearest` for signed inputs, as used by the quantized output stage.
pub fn round_nearest_signed(
    sess: &mut PartySession,
    x: &[RepShare],
    pow: &[RepShare],
    bound: u32,
    kind: TruncKind,
) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    check_shift(ring, bound)?;
    let me = sess.id();
    let prod = arith::mul(sess, pow, x)?;
    let half = ring.pow2(bound - 1);
    let biased: Vec<RepShare> = prod.iter().map(|p| p.add_const(ring, me, half)).collect();
    trunc_signed(sess, &biased, bound, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::{input_share_raw, open};
    use crate::oracle::brute;
    use crate::session::run_local;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [TruncKind; 3] = [
        TruncKind::Probabilistic,
        TruncKind::SpecialProbabilistic,
        TruncKind::Exact,
    ];

    fn shared<F, R>(k: u32, seed: u64, vals: &[u128], f: F) -> R
    where
        F: Fn(&mut PartySession, &[RepShare]) -> Result<R> + Sync,
        R: Send,
    {
        let [a, _, _] = run_local(Ring::new(k).unwrap(), seed, |s| {
            let v = if s.id() == PartyId::P1 { Some(vals) } else { None };
            let x = input_share_raw(s, PartyId::P1, v, vals.len())?;
            f(s, &x)
        })
        .unwrap();
        a
    }

    fn run_trunc(k: u32, seed: u64, vals: &[u128], m: u32, kind: TruncKind) -> Vec<u128> {
        shared(k, seed, vals, |s, x| {
            let t = trunc(s, x, m, kind)?;
            open(s, &t)
        })
    }

    #[test]
    fn rejects_bad_shift() {
        let r = Ring::new(16).unwrap();
        assert!(check_shift(r, 0).is_err());
        assert!(check_shift(r, 15).is_err());
        assert!(check_shift(r, 14).is_ok());
        let res = run_local(r, 1, |s| trunc_pr(s, &[RepShare::ZERO], 0));
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn seven_by_four_is_one_or_two() {
        for kind in [TruncKind::Probabilistic, TruncKind::SpecialProbabilistic] {
            let out = run_trunc(32, 3, &[7; 2000], 2, kind);
            let twos = out.iter().filter(|&&v| v == 2).count() as f64 / 2000.0;
            assert!(out.iter().all(|&v| v == 1 || v == 2));
            assert!((twos - 0.75).abs() < 0.05, "{kind:?}: {twos}");
        }
        assert!(run_trunc(32, 3, &[7; 50], 2, TruncKind::Exact).iter().all(|&v| v == 1));
    }

    #[test]
    fn zero_fraction_is_exact_for_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in ALL {
            let m = 9;
            let qs: Vec<u128> = (0..200).map(|_| rng.gen_range(0..1u128 << 40)).collect();
            let xs: Vec<u128> = qs.iter().map(|q| q << m).collect();
            assert_eq!(run_trunc(72, 4, &xs, m, kind), qs, "{kind:?}");
        }
    }

    #[test]
    fn bias_tracks_fraction_k32() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 10_000;
        for _ in 0..20 {
            let m = rng.gen_range(1..12u32);
            let x = rng.gen_range(0..1u128 << 30);
            let expect = (x & ((1 << m) - 1)) as f64 / (1u128 << m) as f64;
            let out = run_trunc(32, rng.gen(), &vec![x; trials], m, TruncKind::Probabilistic);
            let floor = x >> m;
            assert!(out.iter().all(|&v| v == floor || v == floor + 1));
            let ups = out.iter().filter(|&&v| v == floor + 1).count() as f64 / trials as f64;
            assert!((ups - expect).abs() <= 0.02, "x={x} m={m}: {ups} vs {expect}");
        }
    }

    #[test]
    fn special_range_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<u128> = (0..2000).map(|_| rng.gen_range(0..1u128 << 70)).collect();
        let m = 17;
        let out = run_trunc(72, 5, &xs, m, TruncKind::SpecialProbabilistic);
        for (x, y) in xs.iter().zip(out) {
            assert!(y == x >> m || y == (x >> m) + 1);
        }
    }

    #[test]
    fn special_component_identity() {
        let xs: Vec<u128> = (0..100).map(|i| i * 12345).collect();
        let [p1, p2, p3] = run_local(Ring::new(64).unwrap(), 9, |s| {
            let v = if s.id() == PartyId::P1 { Some(&xs[..]) } else { None };
            let x = input_share_raw(s, PartyId::P1, v, xs.len())?;
            trunc_pr_sp_traced(s, &x, 6)
        })
        .unwrap();
        let r = Ring::new(64).unwrap();
        let (t1, t2) = (p1.1.unwrap(), p2.1.unwrap());
        assert!(p3.1.is_none());
        for j in 0..xs.len() {
            let lhs = r.add(r.sub(t1.y_prime[j], t1.y_hat[j]), t1.y_tilde[j]);
            let rhs = r.add(t2.y_tilde[j], r.sub(t2.y_prime[j], t2.y_hat[j]));
            assert_eq!(lhs, rhs);
            assert_eq!(p1.0[j].b, p2.0[j].a);
            assert_eq!(p2.0[j].b, p3.0[j].a);
            assert_eq!(p3.0[j].b, p1.0[j].a);
        }
    }

    #[test]
    fn exact_exhaustive_k16() {
        let xs: Vec<u128> = (0..1u128 << 14).collect();
        for m in [1, 3, 7] {
            let table = brute::floor_div_table(16, m);
            let out = run_trunc(16, m as u64, &xs, m, TruncKind::Exact);
            for (x, y) in xs.iter().zip(out) {
                assert_eq!(y, table[*x as usize]);
            }
        }
    }

    #[test]
    fn exact_is_deterministic_in_value() {
        let a = run_trunc(40, 1, &[123_456_789], 5, TruncKind::Exact);
        let b = run_trunc(40, 2, &[123_456_789], 5, TruncKind::Exact);
        assert_eq!(a, b);
        assert_eq!(a, vec![123_456_789 >> 5]);
    }

    #[test]
    fn outputs_keep_headroom() {
        let r = Ring::new(32).unwrap();
        let xs: Vec<u128> = vec![0, 1, (1 << 31) - 1, 1 << 30];
        for kind in ALL {
            for y in run_trunc(32, 7, &xs, 1, kind) {
                assert!(!r.msb(y));
            }
        }
    }

    fn priv_run(vals: &[u128], ms: &[u32], bound: u32, kind: TruncKind, nearest: bool) -> (Vec<u128>, u64) {
        let n = vals.len();
        let mut all = vals.to_vec();
        all.extend(ms.iter().map(|m| 1u128 << (bound - m)));
        shared(72, 13, &all, |s, x| {
            let before = s.stats();
            let t = if nearest {
                round_nearest(s, &x[..n], &x[n..], bound, kind)?
            } else {
                trunc_priv(s, &x[..n], &x[n..], bound, kind)?
            };
            let bytes = s.stats().since(&before).bytes_sent();
            Ok((open(s, &t)?, bytes))
        })
    }

    #[test]
    fn secret_shift_identity_power() {
        let (out, _) = priv_run(&[1000, 77], &[24, 24], 24, TruncKind::Exact, false);
        assert_eq!(out, vec![1000 >> 24, 77 >> 24]);
        let (out, _) = priv_run(&[1 << 30, 77 << 24], &[24, 24], 24, TruncKind::Exact, false);
        assert_eq!(out, vec![1 << 6, 77]);
    }

    #[test]
    fn secret_shift_exact_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let xs: Vec<u128> = (0..500).map(|_| rng.gen_range(0..1u128 << 20)).collect();
        let ms: Vec<u32> = (0..500).map(|_| rng.gen_range(0..=24)).collect();
        let (out, _) = priv_run(&xs, &ms, 24, TruncKind::Exact, false);
        for i in 0..xs.len() {
            assert_eq!(out[i], xs[i] >> ms[i]);
        }
    }

    #[test]
    fn secret_shift_cost_independent_of_m() {
        let bytes: Vec<u64> = [0u32, 5, 24]
            .iter()
            .map(|&m| priv_run(&[99; 8], &[m; 8], 24, TruncKind::SpecialProbabilistic, false).1)
            .collect();
        assert!(bytes.windows(2).all(|w| w[0] == w[1]), "{bytes:?}");
    }

    #[test]
    fn round_nearest_ties_up() {
        let (out, _) = priv_run(&[6, 5], &[2, 2], 24, TruncKind::Exact, true);
        assert_eq!(out, vec![2, 1]);
    }

    #[test]
    fn round_nearest_matches_float_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let xs: Vec<u128> = (0..400).map(|_| rng.gen_range(0..1u128 << 40)).collect();
        let ms: Vec<u32> = (0..400).map(|_| rng.gen_range(1..=24)).collect();
        let (out, _) = priv_run(&xs, &ms, 24, TruncKind::Exact, true);
        for i in 0..xs.len() {
            let q = xs[i] as f64 / (1u128 << ms[i]) as f64;
            // x < 2^40 keeps q and q + 0.5 exact in a double
            let expect = (q + 0.5).floor() as u128;
            assert_eq!(out[i], expect, "x={} m={}", xs[i], ms[i]);
        }
    }

    #[test]
    fn signed_truncation_floors() {
        let r = Ring::new(48).unwrap();
        let vals: Vec<i128> = vec![-7, -8, -1, 0, 7, 1 << 40, -(1 << 40) - 3];
        let enc: Vec<u128> = vals.iter().map(|v| r.from_i128(*v)).collect();
        let out = shared(48, 2, &enc, |s, x| {
            let t = trunc_signed(s, x, 2, TruncKind::Exact)?;
            open(s, &t)
        });
        for (v, y) in vals.iter().zip(out) {
            assert_eq!(r.to_i128(y), v.div_euclid(4));
        }
    }

    #[test]
    fn request_validation() {
        let r = Ring::new(72).unwrap();
        let req = TruncRequest {
            value: vec![RepShare::ZERO],
            shift: Shift::Secret {
                pow: vec![RepShare::ZERO],
                bound: 40,
            },
            kind: TruncKind::Exact,
            rounding: Rounding::Nearest,
        };
        assert!(req.validate(r, 30).is_ok());
        assert!(matches!(req.validate(r, 31), Err(Error::Headroom { .. })));
    }

    #[test]
    fn request_executes_public_nearest() {
        let out = shared(32, 3, &[6, 5], |s, x| {
            let req = TruncRequest {
                value: x.to_vec(),
                shift: Shift::Public(2),
                kind: TruncKind::Exact,
                rounding: Rounding::Nearest,
            };
            let t = req.execute(s)?;
            open(s, &t)
        });
        assert_eq!(out, vec![2, 1]);
    }
}
