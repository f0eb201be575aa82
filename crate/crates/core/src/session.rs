//! Per-party protocol state: identity, ring, network, and correlated randomness.

use std::collections::VecDeque;
use std::thread;

use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::arith::RepShare;
use crate::error::{Error, Result};
use crate::ring::Ring;
use crate::transport::{local_mesh, CommStats, Network, PartyId};

pub const DEFAULT_DABIT_BATCH: usize = 1024;

/// Seeds for one three-party session. `pair[i]` is known to the party with
/// index i and its successor; `local[i]` only to party i.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionSeeds {
    pub pair: [[u8; 32]; 3],
    pub local: [[u8; 32]; 3],
}

impl SessionSeeds {
    /// Deterministic seeds for tests and reproducible runs. Insecure.
    pub fn from_master(master: u64) -> Self {
        let derive = |label: &str, i: usize| -> [u8; 32] {
            let mut h = Sha256::new();
            h.update(b"sq8-session-seed");
            h.update(master.to_le_bytes());
            h.update(label.as_bytes());
            h.update([i as u8]);
            let mut out = [0u8; 32];
            out.copy_from_slice(&h.finalize());
            out
        };
        SessionSeeds {
            pair: [derive("pair", 0), derive("pair", 1), derive("pair", 2)],
            local: [derive("local", 0), derive("local", 1), derive("local", 2)],
        }
    }
}

/// A daBit held by one party: the same random bit shared over Z_2 and Z_{2^k}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DaBit {
    pub bin: (u8, u8),
    pub arith: RepShare,
}

pub struct PartySession {
    id: PartyId,
    ring: Ring,
    net: Network,
    /// Stream shared with the next party.
    prg_next: ChaCha12Rng,
    /// Stream shared with the previous party.
    prg_prev: ChaCha12Rng,
    local: ChaCha12Rng,
    pub(crate) dabits: VecDeque<DaBit>,
    dabit_batch: usize,
}

impl PartySession {
    pub fn new(ring: Ring, net: Network, seeds: &SessionSeeds) -> Self {
        let id = net.me();
        PartySession {
            id,
            ring,
            prg_next: ChaCha12Rng::from_seed(seeds.pair[id.index()]),
            prg_prev: ChaCha12Rng::from_seed(seeds.pair[id.prev().index()]),
            local: ChaCha12Rng::from_seed(seeds.local[id.index()]),
            net,
            dabits: VecDeque::new(),
            dabit_batch: DEFAULT_DABIT_BATCH,
        }
    }

    /// Agrees on fresh pairwise seeds: each party samples the seed it shares
    /// with its successor and sends it there. One round.
    pub fn with_random_setup(ring: Ring, mut net: Network) -> Result<Self> {
        let me = net.me();
        let mut mine = [0u8; 32];
        OsRng.fill_bytes(&mut mine);
        let got = net.round(vec![(me.next(), mine.to_vec())], &[me.prev()])?;
        let from_prev: [u8; 32] = got[0]
            .as_slice()
            .try_into()
            .map_err(|_| Error::Framing("seed message must be 32 bytes".into()))?;
        let mut local = [0u8; 32];
        OsRng.fill_bytes(&mut local);
        Ok(PartySession {
            id: me,
            ring,
            prg_next: ChaCha12Rng::from_seed(mine),
            prg_prev: ChaCha12Rng::from_seed(from_prev),
            local: ChaCha12Rng::from_seed(local),
            net,
            dabits: VecDeque::new(),
            dabit_batch: DEFAULT_DABIT_BATCH,
        })
    }

    #[inline]
    pub fn id(&self) -> PartyId {
        self.id
    }

    #[inline]
    pub fn ring(&self) -> Ring {
        self.ring
    }

    pub fn net(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn stats(&self) -> CommStats {
        *self.net.stats()
    }

    pub fn transcript_digest(&self) -> [u8; 32] {
        self.net.transcript_digest()
    }

    pub fn set_dabit_batch(&mut self, n: usize) {
        self.dabit_batch = n.max(1);
    }

    pub fn dabit_batch(&self) -> usize {
        self.dabit_batch
    }

    pub(crate) fn next_elem(&mut self) -> u128 {
        self.ring.reduce(next_u128(&mut self.prg_next))
    }

    pub(crate) fn prev_elem(&mut self) -> u128 {
        self.ring.reduce(next_u128(&mut self.prg_prev))
    }

    pub(crate) fn local_elem(&mut self) -> u128 {
        self.ring.reduce(next_u128(&mut self.local))
    }

    pub(crate) fn local_bit(&mut self) -> u8 {
        (self.local.next_u32() & 1) as u8
    }

    pub(crate) fn next_words(&mut self, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.prg_next.next_u64()).collect()
    }

    pub(crate) fn prev_words(&mut self, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.prg_prev.next_u64()).collect()
    }

    /// This party's component of a fresh zero sharing: F(s_{i,i+1}) - F(s_{i-1,i}).
    pub(crate) fn zero_share(&mut self, n: usize) -> Vec<u128> {
        (0..n)
            .map(|_| {
                let a = self.next_elem();
                let b = self.prev_elem();
                self.ring.sub(a, b)
            })
            .collect()
    }

    /// Same over Z_2, as packed 64-bit words.
    pub(crate) fn zero_share_bits(&mut self, words: usize) -> Vec<u64> {
        let a = self.next_words(words);
        let b = self.prev_words(words);
        a.into_iter().zip(b).map(|(x, y)| x ^ y).collect()
    }
}

fn next_u128(rng: &mut ChaCha12Rng) -> u128 {
    let lo = rng.next_u64() as u128;
    let hi = rng.next_u64() as u128;
    lo | (hi << 64)
}

/// Runs `f` for all three parties on the given networks, one thread each.
/// Returns the per-party results in party order, or the first error.
pub fn run_parties<R, F>(ring: Ring, nets: [Network; 3], seeds: &SessionSeeds, f: F) -> Result<[R; 3]>
where
    R: Send,
    F: Fn(&mut PartySession) -> Result<R> + Sync,
{
    let results: Vec<Result<R>> = thread::scope(|s| {
        let handles: Vec<_> = nets
            .into_iter()
            .map(|net| {
                let f = &f;
                s.spawn(move || {
                    let mut sess = PartySession::new(ring, net, seeds);
                    f(&mut sess)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("party thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(3);
    for r in results {
        out.push(r?);
    }
    Ok(out.try_into().ok().expect("three results"))
}

/// `run_parties` over a fresh in-process mesh with seeds derived from `master`.
pub fn run_local<R, F>(ring: Ring, master: u64, f: F) -> Result<[R; 3]>
where
    R: Send,
    F: Fn(&mut PartySession) -> Result<R> + Sync,
{
    run_parties(ring, local_mesh(), &SessionSeeds::from_master(master), f)
}
