//! Microbenchmarks over an in-process mesh, printed as CSV.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sq8_core::arith::{self, RepShare};
use sq8_core::session::run_local;
use sq8_core::trunc::{self, TruncKind};
use sq8_core::{PartyId, Ring};

use crate::CliError;

pub const SOPS_HEADER: &str = "count,length,k,bytes_per_party,rounds,wall_ms";
pub const TRUNC_HEADER: &str = "proto,k,shift,count,bytes_per_party,rounds,wall_ms";

pub struct Row {
    pub bytes_per_party: u64,
    pub rounds: u64,
    pub wall_ms: f64,
}

fn random_values(n: usize, bits: u32, seed: u64) -> Vec<u128> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = (1u128 << bits) - 1;
    (0..n).map(|_| rng.gen::<u128>() & mask).collect()
}

/// `count` dot products of `length` terms each. Sharing the operands is
/// excluded from the measurement.
pub fn sops(count: usize, length: usize, k: u32, seed: u64) -> Result<Row, CliError> {
    if count == 0 || length == 0 {
        return Err(CliError::config("count and length must be positive"));
    }
    let ring = Ring::new(k)?;
    let n = count * length;
    let xs = random_values(n, k.min(8), seed);
    let ys = random_values(n, k.min(8), seed + 1);
    let rows = run_local(ring, seed, |sess| {
        let p1 = sess.id() == PartyId::P1;
        let a = arith::input_share_raw(sess, PartyId::P1, p1.then_some(&xs[..]), n)?;
        let b = arith::input_share_raw(sess, PartyId::P1, p1.then_some(&ys[..]), n)?;
        let pairs: Vec<(&[RepShare], &[RepShare])> = a.chunks(length).zip(b.chunks(length)).collect();
        let before = sess.stats();
        let t0 = Instant::now();
        arith::dot(sess, &pairs)?;
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        let d = sess.stats().since(&before);
        Ok((d.bytes_sent(), d.rounds, wall))
    })?;
    Ok(summarize(&rows))
}

/// One batch of `count` truncations by `shift` bits.
pub fn trunc(kind: TruncKind, k: u32, shift: u32, count: usize, seed: u64) -> Result<Row, CliError> {
    let ring = Ring::new(k)?;
    trunc::check_shift(ring, shift).map_err(CliError::from)?;
    // leave the top bits clear, as the protocols require for small values
    let xs = random_values(count, k.saturating_sub(3).max(1), seed);
    let rows = run_local(ring, seed, |sess| {
        let p1 = sess.id() == PartyId::P1;
        let x = arith::input_share_raw(sess, PartyId::P1, p1.then_some(&xs[..]), count)?;
        let before = sess.stats();
        let t0 = Instant::now();
        trunc::trunc(sess, &x, shift, kind)?;
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        let d = sess.stats().since(&before);
        Ok((d.bytes_sent(), d.rounds, wall))
    })?;
    Ok(summarize(&rows))
}

fn summarize(rows: &[(u64, u64, f64); 3]) -> Row {
    Row {
        bytes_per_party: rows.iter().map(|r| r.0).sum::<u64>() / 3,
        rounds: rows.iter().map(|r| r.1).max().unwrap_or(0),
        wall_ms: rows.iter().map(|r| r.2).fold(0.0, f64::max),
    }
}

pub fn write_sops(out: &mut impl Write, counts: &[usize], lengths: &[usize], k: u32, seed: u64) -> Result<(), CliError> {
    writeln!(out, "{SOPS_HEADER}")?;
    for &count in counts {
        for &length in lengths {
            let r = sops(count, length, k, seed)?;
            writeln!(out, "{count},{length},{k},{},{},{:.3}", r.bytes_per_party, r.rounds, r.wall_ms)?;
        }
    }
    Ok(())
}

pub fn write_trunc(
    out: &mut impl Write,
    proto: &str,
    kind: TruncKind,
    ks: &[u32],
    shift: u32,
    count: usize,
    seed: u64,
) -> Result<(), CliError> {
    writeln!(out, "{TRUNC_HEADER}")?;
    for &k in ks {
        let r = trunc(kind, k, shift, count, seed)?;
        writeln!(out, "{proto},{k},{shift},{count},{},{},{:.3}", r.bytes_per_party, r.rounds, r.wall_ms)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_traffic_does_not_depend_on_length() {
        let a = sops(50, 256, 64, 1).unwrap();
        let b = sops(50, 1024, 64, 1).unwrap();
        assert_eq!(a.bytes_per_party, b.bytes_per_party);
        assert_eq!(a.rounds, 1);
    }

    #[test]
    fn special_truncation_traffic_is_linear_in_k() {
        let a = trunc(TruncKind::SpecialProbabilistic, 32, 8, 200, 1).unwrap();
        let b = trunc(TruncKind::SpecialProbabilistic, 64, 8, 200, 1).unwrap();
        let ratio = b.bytes_per_party as f64 / a.bytes_per_party as f64;
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn csv_has_header_and_one_row_per_point() {
        let mut out = Vec::new();
        write_trunc(&mut out, "pr", TruncKind::Probabilistic, &[16, 32], 4, 10, 3).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRUNC_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("pr,16,4,10,"));
    }
}
