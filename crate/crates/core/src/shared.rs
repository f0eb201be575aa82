//! A model as held by one party: public skeleton plus replicated shares of
//! every weight, bias, zero-point, multiplier and shift power.

use rand::RngCore;

use crate::arith::{self, RepShare};
use crate::error::{Error, Result};
use crate::model::{put16, Reader, Sq8Model, TensorData, TensorRole};
use crate::quant::SharedMultiplier;
use crate::ring::Ring;
use crate::session::PartySession;
use crate::transport::PartyId;

pub const SHARE_MAGIC: [u8; 4] = *b"SQ8S";
pub const SHARE_VERSION: u16 = 1;

#[derive(Clone, Debug)]
pub struct SharedModel {
    /// Model without weight data; identical at every party.
    pub skeleton: Sq8Model,
    pub party: PartyId,
    pub ring: Ring,
    /// Per tensor: shared weights or biases (empty for activations).
    pub values: Vec<Vec<RepShare>>,
    /// Per tensor: shared zero-point (weights and activations).
    pub zero_points: Vec<RepShare>,
    /// Per layer: shared m' and 2^{L - ℓ} for layers with weights.
    pub multipliers: Vec<Option<SharedMultiplier>>,
}

/// Secret values in canonical order: per tensor its data and zero-point,
/// then per weighted layer m' and 2^{L-ℓ}.
pub fn secret_values(model: &Sq8Model, ring: Ring) -> Result<Vec<u128>> {
    let mut out = Vec::new();
    for t in &model.tensors {
        match (&t.data, t.role) {
            (TensorData::U8(v), TensorRole::WeightsU8) => {
                out.extend(v.iter().map(|&x| x as u128));
                out.push(t.quant.zero_point as u128);
            }
            (TensorData::I32(v), TensorRole::BiasI32) => {
                out.extend(v.iter().map(|&x| ring.from_i128(x as i128)));
            }
            (TensorData::Absent, TensorRole::Activation) => out.push(t.quant.zero_point as u128),
            _ => return Err(Error::Format(format!("tensor {} has no data to share", t.id))),
        }
    }
    for l in &model.layers {
        if let Some(m) = l.multiplier {
            out.push(m.m_prime as u128);
            out.push(ring.pow2(m.pow_exponent(model.header.shift_bound)?));
        }
    }
    Ok(out)
}

/// Length of `secret_values` for a model with this skeleton.
pub fn secret_count(skeleton: &Sq8Model) -> usize {
    let tensors: usize = skeleton
        .tensors
        .iter()
        .map(|t| match t.role {
            TensorRole::WeightsU8 => t.len() + 1,
            TensorRole::BiasI32 => t.len(),
            TensorRole::Activation => 1,
        })
        .sum();
    tensors + 2 * skeleton.layers.iter().filter(|l| l.multiplier.is_some()).count()
}

impl SharedModel {
    /// Reassembles a party's view from shares in canonical order.
    pub fn from_flat(skeleton: Sq8Model, party: PartyId, ring: Ring, flat: &[RepShare]) -> Result<Self> {
        skeleton.check_ring(ring)?;
        if flat.len() != secret_count(&skeleton) {
            return Err(Error::Format(format!(
                "expected {} shares, got {}",
                secret_count(&skeleton),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        let mut values = Vec::with_capacity(skeleton.tensors.len());
        let mut zero_points = Vec::with_capacity(skeleton.tensors.len());
        for t in &skeleton.tensors {
            match t.role {
                TensorRole::WeightsU8 => {
                    values.push(it.by_ref().take(t.len()).collect());
                    zero_points.push(it.next().unwrap());
                }
                TensorRole::BiasI32 => {
                    values.push(it.by_ref().take(t.len()).collect());
                    zero_points.push(RepShare::ZERO);
                }
                TensorRole::Activation => {
                    values.push(Vec::new());
                    zero_points.push(it.next().unwrap());
                }
            }
        }
        let multipliers = skeleton
            .layers
            .iter()
            .map(|l| {
                l.multiplier.map(|_| SharedMultiplier {
                    m_prime: it.next().unwrap(),
                    pow: it.next().unwrap(),
                })
            })
            .collect();
        Ok(SharedModel {
            skeleton,
            party,
            ring,
            values,
            zero_points,
            multipliers,
        })
    }

    fn flat(&self) -> Vec<RepShare> {
        let mut out = Vec::new();
        for (t, (v, z)) in self.skeleton.tensors.iter().zip(self.values.iter().zip(&self.zero_points)) {
            out.extend_from_slice(v);
            if t.role != TensorRole::BiasI32 {
                out.push(*z);
            }
        }
        for m in self.multipliers.iter().flatten() {
            out.push(m.m_prime);
            out.push(m.pow);
        }
        out
    }

    /// Number of shared scalars this party holds.
    pub fn share_count(&self) -> usize {
        secret_count(&self.skeleton)
    }

    /// Debug: opens every share and rebuilds the plaintext model.
    pub fn reveal(&self, sess: &mut PartySession) -> Result<Sq8Model> {
        let ring = self.ring;
        let opened = arith::open(sess, &self.flat())?;
        let mut model = self.skeleton.clone();
        let mut at = 0;
        for t in &mut model.tensors {
            let n = t.len();
            match t.role {
                TensorRole::WeightsU8 => {
                    t.data = TensorData::U8(opened[at..at + n].iter().map(|&v| v as u8).collect());
                    at += n + 1;
                }
                TensorRole::BiasI32 => {
                    t.data = TensorData::I32(opened[at..at + n].iter().map(|&v| ring.to_i128(v) as i32).collect());
                    at += n;
                }
                TensorRole::Activation => at += 1,
            }
        }
        Ok(model)
    }

    // ---- share files ----

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = SHARE_MAGIC.to_vec();
        put16(&mut w, SHARE_VERSION);
        w.push(self.party.id());
        w.push(self.ring.bits() as u8);
        let skel = self.skeleton.to_bytes();
        w.extend_from_slice(&(skel.len() as u64).to_le_bytes());
        w.extend_from_slice(&skel);
        let flat = self.flat();
        w.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        let mut elems = Vec::with_capacity(2 * flat.len());
        for s in &flat {
            elems.push(s.a);
            elems.push(s.b);
        }
        self.ring.encode(&elems, &mut w);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != SHARE_MAGIC {
            return Err(Error::Format("bad magic, not an SQ8 share file".into()));
        }
        let version = r.u16()?;
        if version != SHARE_VERSION {
            return Err(Error::Format(format!("unsupported share file version {version}")));
        }
        let party = PartyId::new(r.u8()?)?;
        let bits = r.u8()? as u32;
        let ring = Ring::new(if bits == 0 { 128 } else { bits })?;
        let skel_len = r.u64()? as usize;
        let skeleton = Sq8Model::from_bytes(r.take(skel_len)?)?;
        if skeleton.has_data() {
            return Err(Error::Format("share file embeds plaintext weights".into()));
        }
        let n = r.u64()? as usize;
        let raw = r.take(n.checked_mul(2 * ring.byte_len()).ok_or_else(|| Error::Format("share count overflows".into()))?)?;
        if !r.is_done() {
            return Err(Error::Format("trailing bytes after shares".into()));
        }
        let elems = ring.decode(raw)?;
        let flat: Vec<RepShare> = elems.chunks_exact(2).map(|c| RepShare::new(c[0], c[1])).collect();
        Self::from_flat(skeleton, party, ring, &flat)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Offline dealer: the model owner splits every secret into three additive
/// parts x1 + x2 + x3 and hands P_i the pair (x_i, x_{i+1}).
pub fn deal(model: &Sq8Model, ring: Ring, rng: &mut impl RngCore) -> Result<[SharedModel; 3]> {
    model.check_ring(ring)?;
    let secrets = secret_values(model, ring)?;
    let mut per_party: [Vec<RepShare>; 3] = Default::default();
    for x in secrets {
        let x1 = ring.reduce(((rng.next_u64() as u128) << 64) | rng.next_u64() as u128);
        let x2 = ring.reduce(((rng.next_u64() as u128) << 64) | rng.next_u64() as u128);
        let parts = [x1, x2, ring.sub(ring.sub(x, x1), x2)];
        for (i, v) in per_party.iter_mut().enumerate() {
            v.push(RepShare::new(parts[i], parts[(i + 1) % 3]));
        }
    }
    let skeleton = model.skeleton();
    let [a, b, c] = per_party;
    Ok([
        SharedModel::from_flat(skeleton.clone(), PartyId::P1, ring, &a)?,
        SharedModel::from_flat(skeleton.clone(), PartyId::P2, ring, &b)?,
        SharedModel::from_flat(skeleton, PartyId::P3, ring, &c)?,
    ])
}

/// Online sharing: `owner` holds the plaintext model and inputs every secret
/// into the session; the others pass `None`. All parties know the skeleton.
pub fn share_model(sess: &mut PartySession, owner: PartyId, model: Option<&Sq8Model>, skeleton: &Sq8Model) -> Result<SharedModel> {
    let ring = sess.ring();
    let n = secret_count(skeleton);
    let values = if sess.id() == owner {
        let m = model.ok_or_else(|| Error::config("the model owner must supply the model"))?;
        if &m.skeleton() != skeleton {
            return Err(Error::config("model does not match the agreed skeleton"));
        }
        Some(secret_values(m, ring)?)
    } else {
        None
    };
    let flat = arith::input_share_raw(sess, owner, values.as_deref(), n)?;
    SharedModel::from_flat(skeleton.clone(), sess.id(), ring, &flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use crate::session::run_local;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring() -> Ring {
        Ring::new(72).unwrap()
    }

    #[test]
    fn dealt_shares_reveal_the_model() {
        let m = fixture::random_model(1);
        let shares = deal(&m, ring(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let out = run_local(ring(), 3, |s| shares[s.id().index()].reveal(s)).unwrap();
        for r in out {
            assert_eq!(r, m);
        }
    }

    #[test]
    fn networked_sharing_reveals_the_model() {
        let m = fixture::random_mixed_model(5);
        let skel = m.skeleton();
        let out = run_local(ring(), 4, |s| {
            let mine = (s.id() == PartyId::P1).then_some(&m);
            let sh = share_model(s, PartyId::P1, mine, &skel)?;
            assert_eq!(sh.share_count(), secret_count(&skel));
            sh.reveal(s)
        })
        .unwrap();
        assert_eq!(out[2], m);
    }

    #[test]
    fn shift_powers_open_to_powers_of_two() {
        let m = fixture::random_model(6);
        let shares = deal(&m, ring(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let [pows, _, _] = run_local(ring(), 8, |s| {
            let sh = &shares[s.id().index()];
            let p: Vec<RepShare> = sh.multipliers.iter().flatten().map(|m| m.pow).collect();
            arith::open(s, &p)
        })
        .unwrap();
        assert_eq!(pows.len(), 3);
        for p in pows {
            assert!(p.is_power_of_two());
        }
    }

    #[test]
    fn share_count_equals_parameter_count() {
        let m = fixture::random_model(9);
        let params: usize = m
            .tensors
            .iter()
            .filter(|t| t.role != TensorRole::Activation)
            .map(|t| t.len())
            .sum();
        let zps = m.tensors.iter().filter(|t| t.role != TensorRole::BiasI32).count();
        let mults = 2 * m.layers.iter().filter(|l| l.multiplier.is_some()).count();
        assert_eq!(secret_count(&m.skeleton()), params + zps + mults);
    }

    #[test]
    fn share_file_round_trip() {
        let m = fixture::random_model(10);
        let shares = deal(&m, ring(), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        for sh in &shares {
            let back = SharedModel::from_bytes(&sh.to_bytes()).unwrap();
            assert_eq!(back.flat(), sh.flat());
            assert_eq!(back.party, sh.party);
            assert_eq!(back.skeleton, sh.skeleton);
        }
        let mut bad = shares[0].to_bytes();
        bad.truncate(bad.len() - 3);
        assert!(SharedModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn sharing_rejects_narrow_ring() {
        let m = fixture::random_model(12);
        let err = deal(&m, Ring::new(40).unwrap(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, Error::Headroom { .. }));
    }
}
