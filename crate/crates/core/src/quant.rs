//! Quantization parameters, the fixed-point multiplier, and the secure
//! quantized operators built from them: the output stage, pooling, argmax.

use serde::{Deserialize, Serialize};

use crate::arith::{self, RepShare};
use crate::binary;
use crate::error::{Error, Result};
use crate::ring::Ring;
use crate::session::PartySession;
use crate::trunc::{self, TruncKind};

/// Fractional bits of the normalized multiplier and of pooling reciprocals.
pub const MULTIPLIER_BITS: u32 = 31;

/// Affine quantization: real = scale · (q − zero_point).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: u8,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: u8) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config(format!("scale must be positive and finite, got {scale}")));
        }
        Ok(QuantParams { scale, zero_point })
    }

    pub fn quantize(&self, alpha: f64) -> u8 {
        let q = (alpha / self.scale).round() + self.zero_point as f64;
        q.clamp(0.0, 255.0) as u8
    }

    pub fn dequantize(&self, q: u8) -> f64 {
        self.scale * (q as f64 - self.zero_point as f64)
    }
}

/// m ≈ m' · 2^{-shift} with m' ∈ [2^30, 2^31] and shift = n + 31, where
/// m = 2^{-n} m'' and m'' ∈ [0.5, 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedMultiplier {
    pub m_prime: u32,
    pub shift: u32,
}

impl FixedMultiplier {
    pub fn n(&self) -> u32 {
        self.shift - MULTIPLIER_BITS
    }

    pub fn to_f64(&self) -> f64 {
        self.m_prime as f64 * (-(self.shift as f64)).exp2()
    }

    /// Exponent of the power 2^{bound − shift} shared alongside m'.
    pub fn pow_exponent(&self, bound: u32) -> Result<u32> {
        bound.checked_sub(self.shift).ok_or_else(|| {
            Error::config(format!("multiplier shift {} exceeds bound {bound}", self.shift))
        })
    }
}

pub fn normalize_multiplier(m: f64) -> Result<FixedMultiplier> {
    if !(m > 0.0 && m < 1.0) || m < f64::MIN_POSITIVE {
        return Err(Error::UnsupportedMultiplier(m));
    }
    // m = f · 2^e with f ∈ [0.5, 1)
    let biased = ((m.to_bits() >> 52) & 0x7ff) as i32;
    let e = biased - 1022;
    let f = m * (-(e as f64)).exp2();
    debug_assert!((0.5..1.0).contains(&f));
    let n = (-e) as u32;
    let m_prime = (f * (1u64 << MULTIPLIER_BITS) as f64).round() as u64;
    Ok(FixedMultiplier {
        m_prime: m_prime as u32,
        shift: n + MULTIPLIER_BITS,
    })
}

/// A layer multiplier as held by one party: shares of m' and of 2^{L − ℓ}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SharedMultiplier {
    pub m_prime: RepShare,
    pub pow: RepShare,
}

/// An activation tensor held by one party.
#[derive(Clone, Debug)]
pub struct QuantizedTensorShare {
    pub shape: Vec<usize>,
    pub data: Vec<RepShare>,
    pub zero_point: RepShare,
}

impl QuantizedTensorShare {
    pub fn new(shape: Vec<usize>, data: Vec<RepShare>, zero_point: RepShare) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(QuantizedTensorShare {
            shape,
            data,
            zero_point,
        })
    }
}

/// This party's additive term of Σ (a_i − z1)(b_i − z2) + bias.
pub fn conv_dot_term(ring: Ring, a: &[RepShare], b: &[RepShare], z1: RepShare, z2: RepShare, bias: RepShare) -> u128 {
    a.iter().zip(b).fold(bias.a, |acc, (x, w)| {
        ring.add(acc, x.sub(ring, z1).cross_term(ring, w.sub(ring, z2)))
    })
}

pub fn secure_conv_dot(
    sess: &mut PartySession,
    window_a: &[RepShare],
    window_b: &[RepShare],
    z1: RepShare,
    z2: RepShare,
    bias: RepShare,
) -> Result<RepShare> {
    Ok(secure_conv_dots(sess, &[(window_a, window_b, bias)], z1, z2)?[0])
}

/// Batched `secure_conv_dot` with shared zero-points. One reshare round and
/// one ring element per output, whatever the window length.
pub fn secure_conv_dots(
    sess: &mut PartySession,
    rows: &[(&[RepShare], &[RepShare], RepShare)],
    z1: RepShare,
    z2: RepShare,
) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    let mut terms = Vec::with_capacity(rows.len());
    for (i, (a, b, bias)) in rows.iter().enumerate() {
        if a.len() != b.len() {
            return Err(Error::shape(format!(
                "conv window {i}: lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
        terms.push(conv_dot_term(ring, a, b, z1, z2, *bias));
    }
    arith::reshare(sess, terms)
}

/// Bits of ring headroom the output stage needs for accumulators bounded by
/// |s| <= acc_bound, shift ceiling `bound` and smallest layer shift `min_shift`.
pub fn output_stage_headroom(acc_bound: u128, bound: u32, min_shift: u32) -> u32 {
    let acc_bits = 128 - (acc_bound + 1).leading_zeros();
    // |2^{L-ℓ} m' s| + 2^{L-1} must stay below 2^{k-2} so the signed lift
    // leaves the MSB clear
    (acc_bits + MULTIPLIER_BITS + (bound - min_shift)).max(bound - 1) + 3
}

/// z3 + round_nearest(2^{-ℓ} m' s), before the clamp.
pub fn quantized_output_stage_preclamp(
    sess: &mut PartySession,
    s: &[RepShare],
    mult: &SharedMultiplier,
    z3: RepShare,
    bound: u32,
    kind: TruncKind,
) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    let n = s.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scaled = arith::mul(sess, &vec![mult.m_prime; n], s)?;
    let rounded = trunc::round_nearest_signed(sess, &scaled, &vec![mult.pow; n], bound, kind)?;
    Ok(rounded.into_iter().map(|r| r.add(ring, z3)).collect())
}

/// clamp(z3 + round_nearest(2^{-ℓ} m' s), lo, hi): the quantized activation.
#[allow(clippy::too_many_arguments)]
pub fn quantized_output_stage(
    sess: &mut PartySession,
    s: &[RepShare],
    mult: &SharedMultiplier,
    z3: RepShare,
    bound: u32,
    clamp_lo: u8,
    clamp_hi: u8,
    kind: TruncKind,
) -> Result<Vec<RepShare>> {
    if clamp_lo > clamp_hi {
        return Err(Error::config(format!("empty clamp range [{clamp_lo}, {clamp_hi}]")));
    }
    let pre = quantized_output_stage_preclamp(sess, s, mult, z3, bound, kind)?;
    binary::clamp(sess, &pre, clamp_lo as u128, clamp_hi as u128)
}

/// Pairwise tournament over every group at once. At each level the right
/// element wins iff left < right, so on ties the lower index survives.
/// Returns the winning value of each group, and its index when requested.
fn tournament(
    sess: &mut PartySession,
    groups: &[Vec<RepShare>],
    with_index: bool,
) -> Result<(Vec<RepShare>, Vec<RepShare>)> {
    let ring = sess.ring();
    let me = sess.id();
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::shape("empty window"));
    }
    let mut vals: Vec<Vec<RepShare>> = groups.to_vec();
    let mut idxs: Vec<Vec<RepShare>> = groups
        .iter()
        .map(|g| {
            if with_index {
                (0..g.len()).map(|i| RepShare::constant(ring, me, i as u128)).collect()
            } else {
                Vec::new()
            }
        })
        .collect();

    while vals.iter().any(|g| g.len() > 1) {
        let (mut left, mut right, mut li, mut ri) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (g, ix) in vals.iter().zip(&idxs) {
            for p in 0..g.len() / 2 {
                left.push(g[2 * p]);
                right.push(g[2 * p + 1]);
                if with_index {
                    li.push(ix[2 * p]);
                    ri.push(ix[2 * p + 1]);
                }
            }
        }
        let lt = binary::less_than_arith(sess, &left, &right)?;
        let (sel, hi, lo) = if with_index {
            let mut sel = lt.clone();
            sel.extend_from_slice(&lt);
            left.extend_from_slice(&li);
            right.extend_from_slice(&ri);
            (sel, right, left)
        } else {
            (lt, right, left)
        };
        let won = binary::select(sess, &sel, &hi, &lo)?;
        let pairs = won.len() / if with_index { 2 } else { 1 };

        let mut cursor = 0;
        for (g, ix) in vals.iter_mut().zip(idxs.iter_mut()) {
            let half = g.len() / 2;
            let odd = g.len() % 2 == 1;
            let mut next: Vec<RepShare> = won[cursor..cursor + half].to_vec();
            let mut next_idx: Vec<RepShare> = if with_index {
                won[pairs + cursor..pairs + cursor + half].to_vec()
            } else {
                Vec::new()
            };
            if odd {
                next.push(*g.last().unwrap());
                if with_index {
                    next_idx.push(*ix.last().unwrap());
                }
            }
            cursor += half;
            *g = next;
            *ix = next_idx;
        }
    }
    let best = vals.into_iter().map(|g| g[0]).collect();
    let best_idx = if with_index {
        idxs.into_iter().map(|g| g[0]).collect()
    } else {
        Vec::new()
    };
    Ok((best, best_idx))
}

/// Maximum of each window; comparisons of all windows share each level.
pub fn max_pool(sess: &mut PartySession, windows: &[Vec<RepShare>]) -> Result<Vec<RepShare>> {
    Ok(tournament(sess, windows, false)?.0)
}

/// Rounded mean of each window using the window length as divisor.
pub fn avg_pool(sess: &mut PartySession, windows: &[Vec<RepShare>], divisor: u32, kind: TruncKind) -> Result<Vec<RepShare>> {
    avg_pool_with(sess, windows, &vec![divisor; windows.len()], kind)
}

/// Rounded mean with a public divisor per window: multiply the window sum by
/// the 31-bit reciprocal, add one half and truncate by 31.
pub fn avg_pool_with(
    sess: &mut PartySession,
    windows: &[Vec<RepShare>],
    divisors: &[u32],
    kind: TruncKind,
) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    let me = sess.id();
    if windows.len() != divisors.len() {
        return Err(Error::shape("one divisor per window"));
    }
    if ring.bits() < MULTIPLIER_BITS + 11 {
        return Err(Error::Headroom {
            required: MULTIPLIER_BITS + 11,
            available: ring.bits(),
        });
    }
    let mut scaled = Vec::with_capacity(windows.len());
    for (w, &d) in windows.iter().zip(divisors) {
        if w.is_empty() || d == 0 {
            return Err(Error::shape("empty pooling window"));
        }
        let sum = w.iter().fold(RepShare::ZERO, |acc, x| acc.add(ring, *x));
        let recip = crate::oracle::stage::reciprocal(d) as u128;
        scaled.push(
            sum.mul_const(ring, recip)
                .add_const(ring, me, 1 << (MULTIPLIER_BITS - 1)),
        );
    }
    trunc::trunc(sess, &scaled, MULTIPLIER_BITS, kind)
}

/// Index of the largest score, opened to everyone; scores stay hidden.
pub fn secure_argmax(sess: &mut PartySession, scores: &[RepShare]) -> Result<usize> {
    Ok(secure_argmax_batch(sess, &[scores.to_vec()])?[0])
}

pub fn secure_argmax_batch(sess: &mut PartySession, groups: &[Vec<RepShare>]) -> Result<Vec<usize>> {
    let (_, idx) = tournament(sess, groups, true)?;
    let opened = arith::open(sess, &idx)?;
    Ok(opened.into_iter().map(|i| i as usize).collect())
}
