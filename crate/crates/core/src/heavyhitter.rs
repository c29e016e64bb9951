//! Central detection of TIDs used across many providers.
//!
//! Each provider hashes a TID to an `l`-bit value `v`, receives a fresh
//! uniformly random `l`-bit challenge `r` from the server, and answers with
//! the single bit `<v, r>` over GF(2). The server keeps one signed counter per
//! possible `l`-bit value `x` and moves it up when `<x, r>` equals the
//! reported bit, down otherwise. A value reported by a fraction `p` of all
//! `N` reports ends with an expected counter of `pN`; values whose counter
//! exceeds `τN` are published.
//!
//! The all-zero challenge is drawn like any other. Every counter then moves
//! up together, a uniform bias of `2^-l` per report.
//!
//! Snapshot file layout (little-endian):
//!
//! ```text
//! "HHS1" | l: u8 | N: u64 | 2^l counters: i64
//! ```

use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufRead, Read, Write};

use rand::{Rng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dp::MAX_SKETCH_BITS;
use crate::token::Tid;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"HHS1";

#[derive(Debug, Error)]
pub enum HeavyHitterError {
    #[error("sketch width must be in 1..={MAX_SKETCH_BITS}, got {0}")]
    InvalidBits(u8),
    #[error("challenge {0:016x} is unknown or already used")]
    UnknownChallenge(u64),
    #[error("report width {got} does not match sketch width {expected}")]
    WidthMismatch { expected: u8, got: u8 },
    #[error("challenge {r:x} does not fit in {bits} bits")]
    ChallengeOutOfRange { r: u32, bits: u8 },
    #[error("sketch has no reports")]
    EmptySketch,
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_report(report: &Report, bits: u8) -> Result<(), HeavyHitterError> {
    let c = report.challenge;
    if c.bits != bits {
        return Err(HeavyHitterError::WidthMismatch { expected: bits, got: c.bits });
    }
    if c.r & !mask(bits) != 0 {
        return Err(HeavyHitterError::ChallengeOutOfRange { r: c.r, bits });
    }
    Ok(())
}

fn check_bits(bits: u8) -> Result<(), HeavyHitterError> {
    if (1..=MAX_SKETCH_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(HeavyHitterError::InvalidBits(bits))
    }
}

fn mask(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

/// Parity of the bitwise AND: the GF(2) inner product.
pub fn inner_product(a: u32, b: u32) -> bool {
    (a & b).count_ones() & 1 == 1
}

/// First `bits` bits of SHA-256 over the raw bytes.
pub fn hash_bits(bytes: &[u8], bits: u8) -> u32 {
    let digest = Sha256::digest(bytes);
    let head = u32::from_be_bytes(digest[..4].try_into().unwrap());
    head >> (32 - bits as u32)
}

/// The `l`-bit hash of a TID.
pub fn tid_bits(tid: &Tid, bits: u8) -> u32 {
    hash_bits(tid.as_bytes(), bits)
}

/// A uniformly random `l`-bit challenge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Challenge {
    pub bits: u8,
    pub r: u32,
}

impl Challenge {
    pub fn random<R: Rng + ?Sized>(bits: u8, rng: &mut R) -> Self {
        Challenge { bits, r: rng.next_u32() & mask(bits) }
    }

    pub fn to_hex(&self) -> String {
        let width = (self.bits as usize).div_ceil(4);
        format!("{:0width$x}", self.r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Report {
    pub challenge: Challenge,
    pub bit: bool,
}

/// Provider side: answer a challenge for one TID.
pub fn client_report(tid: &Tid, challenge: Challenge) -> Report {
    report_for_value(tid_bits(tid, challenge.bits), challenge)
}

/// Provider side, given an already hashed value.
pub fn report_for_value(v: u32, challenge: Challenge) -> Report {
    Report { challenge, bit: inner_product(v, challenge.r) }
}

/// In-place unnormalized Walsh–Hadamard transform:
/// `out[x] = Σ_r (-1)^<x,r> in[r]`. The length must be a power of two.
pub fn walsh_hadamard(values: &mut [i64]) {
    let n = values.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in values.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Signed sums of reports grouped by challenge, `a[r] = Σ (-1)^b`.
/// Shards accumulate independently and merge before one transform.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportAccumulator {
    bits: u8,
    sums: Vec<i64>,
    reports: u64,
}

impl ReportAccumulator {
    pub fn new(bits: u8) -> Result<Self, HeavyHitterError> {
        check_bits(bits)?;
        Ok(ReportAccumulator { bits, sums: vec![0; 1 << bits], reports: 0 })
    }

    pub fn add(&mut self, report: &Report) -> Result<(), HeavyHitterError> {
        check_report(report, self.bits)?;
        self.sums[report.challenge.r as usize] += if report.bit { -1 } else { 1 };
        self.reports += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ReportAccumulator) -> Result<(), HeavyHitterError> {
        if other.bits != self.bits {
            return Err(HeavyHitterError::WidthMismatch { expected: self.bits, got: other.bits });
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.reports += other.reports;
        Ok(())
    }

    pub fn reports(&self) -> u64 {
        self.reports
    }
}

/// The server's counter table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SketchState {
    bits: u8,
    counters: Vec<i64>,
    reports: u64,
}

impl SketchState {
    pub fn new(bits: u8) -> Result<Self, HeavyHitterError> {
        check_bits(bits)?;
        Ok(SketchState { bits, counters: vec![0; 1 << bits], reports: 0 })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    /// Number of reports folded in (`N`).
    pub fn reports(&self) -> u64 {
        self.reports
    }

    pub fn counters(&self) -> &[i64] {
        &self.counters
    }

    pub fn counter(&self, x: u32) -> i64 {
        self.counters[x as usize]
    }

    /// Apply one report: every `x` with `<x, r> = b` gains one, all others
    /// lose one.
    pub fn apply(&mut self, report: &Report) -> Result<(), HeavyHitterError> {
        check_report(report, self.bits)?;
        let r = report.challenge.r;
        for (x, c) in self.counters.iter_mut().enumerate() {
            if inner_product(x as u32, r) == report.bit {
                *c += 1;
            } else {
                *c -= 1;
            }
        }
        self.reports += 1;
        Ok(())
    }

    /// Same result as applying each report in turn, in `O(2^l · l)` after
    /// accumulation.
    pub fn apply_batch<'a, I>(&mut self, reports: I) -> Result<(), HeavyHitterError>
    where
        I: IntoIterator<Item = &'a Report>,
    {
        let mut acc = ReportAccumulator::new(self.bits)?;
        for report in reports {
            acc.add(report)?;
        }
        self.apply_accumulated(acc)
    }

    pub fn apply_accumulated(&mut self, acc: ReportAccumulator) -> Result<(), HeavyHitterError> {
        if acc.bits != self.bits {
            return Err(HeavyHitterError::WidthMismatch { expected: self.bits, got: acc.bits });
        }
        if acc.reports == 0 {
            return Ok(());
        }
        let mut sums = acc.sums;
        walsh_hadamard(&mut sums);
        for (c, d) in self.counters.iter_mut().zip(sums) {
            *c += d;
        }
        self.reports += acc.reports;
        Ok(())
    }

    /// All `x` with `T[x] > τN`.
    pub fn publish(&self, tau: f64) -> Result<BTreeSet<u32>, HeavyHitterError> {
        if self.reports == 0 {
            return Err(HeavyHitterError::EmptySketch);
        }
        let threshold = tau * self.reports as f64;
        Ok(self
            .counters
            .iter()
            .enumerate()
            .filter(|(_, &c)| c as f64 > threshold)
            .map(|(x, _)| x as u32)
            .collect())
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&SNAPSHOT_MAGIC)?;
        w.write_all(&[self.bits])?;
        w.write_all(&self.reports.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.counters.len() * 8);
        for c in &self.counters {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self, HeavyHitterError> {
        let bad = |m: &str| HeavyHitterError::BadSnapshot(m.to_string());
        let mut header = [0u8; 13];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        if header[..4] != SNAPSHOT_MAGIC {
            return Err(bad("bad magic"));
        }
        let bits = header[4];
        check_bits(bits)?;
        let reports = u64::from_le_bytes(header[5..13].try_into().unwrap());
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 8 << bits {
            return Err(bad("counter table length"));
        }
        let counters: Vec<i64> = body
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if counters.iter().any(|c| c.unsigned_abs() > reports) {
            return Err(bad("counter exceeds report count"));
        }
        Ok(SketchState { bits, counters, reports })
    }
}

/// Provider-side check against the published list.
pub fn check_published(tid: &Tid, published: &BTreeSet<u32>, bits: u8) -> bool {
    published.contains(&tid_bits(tid, bits))
}

/// Sketch plus the log of outstanding one-time challenges.
pub struct HeavyHitterServer<R> {
    state: SketchState,
    tau: f64,
    outstanding: HashMap<u64, Challenge>,
    rng: R,
}

impl<R: RngCore> HeavyHitterServer<R> {
    pub fn new(bits: u8, tau: f64, rng: R) -> Result<Self, HeavyHitterError> {
        Ok(Self::from_state(SketchState::new(bits)?, tau, rng))
    }

    pub fn from_state(state: SketchState, tau: f64, rng: R) -> Self {
        HeavyHitterServer { state, tau, outstanding: HashMap::new(), rng }
    }

    pub fn state(&self) -> &SketchState {
        &self.state
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    /// Issue a fresh challenge under an unused nonce.
    pub fn issue_challenge(&mut self) -> (u64, Challenge) {
        let challenge = Challenge::random(self.state.bits, &mut self.rng);
        loop {
            let nonce = self.rng.next_u64();
            if let std::collections::hash_map::Entry::Vacant(slot) = self.outstanding.entry(nonce) {
                slot.insert(challenge);
                return (nonce, challenge);
            }
        }
    }

    /// Consume the challenge for `nonce` and fold the bit into the sketch.
    pub fn submit(&mut self, nonce: u64, bit: bool) -> Result<(), HeavyHitterError> {
        let challenge =
            self.outstanding.remove(&nonce).ok_or(HeavyHitterError::UnknownChallenge(nonce))?;
        self.state.apply(&Report { challenge, bit })
    }

    /// Batched ingestion. All nonces are validated first; on any failure
    /// nothing is consumed.
    pub fn submit_batch(&mut self, answers: &[(u64, bool)]) -> Result<(), HeavyHitterError> {
        let mut seen = std::collections::HashSet::with_capacity(answers.len());
        for &(nonce, _) in answers {
            if !self.outstanding.contains_key(&nonce) || !seen.insert(nonce) {
                return Err(HeavyHitterError::UnknownChallenge(nonce));
            }
        }
        let mut acc = ReportAccumulator::new(self.state.bits)?;
        for &(nonce, bit) in answers {
            let challenge = self.outstanding.remove(&nonce).expect("validated above");
            acc.add(&Report { challenge, bit })?;
        }
        self.state.apply_accumulated(acc)
    }

    pub fn published(&self) -> Result<BTreeSet<u32>, HeavyHitterError> {
        self.state.publish(self.tau)
    }

    /// Answer one protocol line:
    ///
    /// ```text
    /// CHALLENGE?          -> <nonce hex>,<r hex>
    /// REPORT <nonce>,<b>  -> OK
    /// PUBLISHED?          -> <x hex>,<x hex>,...   (empty line if none)
    /// ```
    ///
    /// Failures answer `ERR <message>`.
    pub fn handle_line(&mut self, line: &str) -> String {
        let line = line.trim();
        if line == "CHALLENGE?" {
            let (nonce, c) = self.issue_challenge();
            return format!("{nonce:016x},{}", c.to_hex());
        }
        if line == "PUBLISHED?" {
            let width = (self.state.bits as usize).div_ceil(4);
            return match self.published() {
                Ok(set) => set
                    .iter()
                    .map(|x| format!("{x:0width$x}"))
                    .collect::<Vec<_>>()
                    .join(","),
                Err(e) => format!("ERR {e}"),
            };
        }
        if let Some(rest) = line.strip_prefix("REPORT ") {
            let parsed = rest.trim().split_once(',').and_then(|(n, b)| {
                let nonce = u64::from_str_radix(n.trim(), 16).ok()?;
                let bit = match b.trim() {
                    "0" => false,
                    "1" => true,
                    _ => return None,
                };
                Some((nonce, bit))
            });
            return match parsed {
                Some((nonce, bit)) => match self.submit(nonce, bit) {
                    Ok(()) => "OK".to_string(),
                    Err(e) => format!("ERR {e}"),
                },
                None => "ERR malformed report".to_string(),
            };
        }
        "ERR unknown command".to_string()
    }

    /// Serve the line protocol until end of input.
    pub fn serve<I: BufRead, O: Write>(&mut self, input: I, mut output: O) -> io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(output, "{}", self.handle_line(&line))?;
            output.flush()?;
        }
        Ok(())
    }
}

/// Parse a `<nonce hex>,<r hex>` challenge line.
pub fn parse_challenge_line(line: &str, bits: u8) -> Option<(u64, Challenge)> {
    let (n, r) = line.trim().split_once(',')?;
    let nonce = u64::from_str_radix(n.trim(), 16).ok()?;
    let r = u32::from_str_radix(r.trim(), 16).ok()?;
    (r <= mask(bits)).then_some((nonce, Challenge { bits, r }))
}

/// Parse a published list line (comma separated hex, possibly empty).
pub fn parse_published_line(line: &str) -> Option<BTreeSet<u32>> {
    let line = line.trim();
    if line.is_empty() {
        return Some(BTreeSet::new());
    }
    line.split(',').map(|x| u32::from_str_radix(x.trim(), 16).ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn inner_product_cases() {
        for v in 0..16 {
            assert!(!inner_product(v, 0));
            assert!(!inner_product(0, v));
        }
        assert!(inner_product(1, 1));
        assert!(!inner_product(0b11, 0b11));
        assert!(inner_product(0b101, 0b100));
    }

    #[test]
    fn single_bit_update() {
        let mut s = SketchState::new(1).unwrap();
        s.apply(&Report { challenge: Challenge { bits: 1, r: 1 }, bit: true }).unwrap();
        assert_eq!(s.counters(), &[-1, 1]);
        assert_eq!(s.reports(), 1);
    }

    #[test]
    fn update_moves_half_up_half_down() {
        // enumerate every (r, b) at l = 3
        for r in 0..8u32 {
            for bit in [false, true] {
                let mut s = SketchState::new(3).unwrap();
                s.apply(&Report { challenge: Challenge { bits: 3, r }, bit }).unwrap();
                let up = s.counters().iter().filter(|&&c| c == 1).count();
                let down = s.counters().iter().filter(|&&c| c == -1).count();
                let total: i64 = s.counters().iter().sum();
                if r == 0 {
                    // <x, 0> = 0 for all x
                    assert_eq!((up, down), if bit { (0, 8) } else { (8, 0) });
                } else {
                    assert_eq!((up, down, total), (4, 4, 0));
                }
            }
        }
    }

    #[test]
    fn batch_matches_naive_small() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let reports: Vec<Report> = (0..200)
            .map(|_| {
                let c = Challenge::random(6, &mut rng);
                Report { challenge: c, bit: rng.gen() }
            })
            .collect();
        let mut naive = SketchState::new(6).unwrap();
        for r in &reports {
            naive.apply(r).unwrap();
        }
        let mut batched = SketchState::new(6).unwrap();
        batched.apply_batch(&reports).unwrap();
        assert_eq!(naive, batched);

        let mut single = SketchState::new(6).unwrap();
        single.apply_batch(&reports[..1]).unwrap();
        let mut one = SketchState::new(6).unwrap();
        one.apply(&reports[0]).unwrap();
        assert_eq!(single, one);

        let before = batched.clone();
        batched.apply_batch(&[]).unwrap();
        assert_eq!(before, batched);
    }

    #[test]
    fn publish_edges() {
        let s = SketchState::new(4).unwrap();
        assert!(matches!(s.publish(0.5), Err(HeavyHitterError::EmptySketch)));
        let mut s = SketchState::new(4).unwrap();
        let v = 0b1011;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..50 {
            s.apply(&report_for_value(v, Challenge::random(4, &mut rng))).unwrap();
        }
        assert_eq!(s.counter(v), 50);
        assert!(s.publish(0.9).unwrap().contains(&v));
        assert!(s.publish(1.0).unwrap().is_empty());
        assert!(s.publish(1.5).unwrap().is_empty());

        let mut zero = SketchState::new(4).unwrap();
        zero.reports = 10;
        assert!(zero.publish(0.0).unwrap().is_empty());
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut s = SketchState::new(4).unwrap();
        let r = Report { challenge: Challenge { bits: 5, r: 1 }, bit: false };
        assert!(matches!(s.apply(&r), Err(HeavyHitterError::WidthMismatch { .. })));
        assert!(matches!(s.apply_batch(&[r]), Err(HeavyHitterError::WidthMismatch { .. })));
        let wide = Report { challenge: Challenge { bits: s.bits(), r: 1 << s.bits() }, bit: true };
        assert!(matches!(s.apply(&wide), Err(HeavyHitterError::ChallengeOutOfRange { .. })));
        assert!(matches!(s.apply_batch(&[wide]), Err(HeavyHitterError::ChallengeOutOfRange { .. })));
        assert!(matches!(SketchState::new(0), Err(HeavyHitterError::InvalidBits(0))));
        assert!(matches!(SketchState::new(25), Err(HeavyHitterError::InvalidBits(25))));
    }

    #[test]
    fn challenges_are_single_use() {
        let rng = ChaCha20Rng::seed_from_u64(4);
        let mut server = HeavyHitterServer::new(8, 0.5, rng).unwrap();
        let (nonce, c) = server.issue_challenge();
        let bit = report_for_value(7, c).bit;
        server.submit(nonce, bit).unwrap();
        assert!(matches!(server.submit(nonce, bit), Err(HeavyHitterError::UnknownChallenge(_))));
        assert!(matches!(server.submit(12345, bit), Err(HeavyHitterError::UnknownChallenge(_))));

        let (a, _) = server.issue_challenge();
        let (b, _) = server.issue_challenge();
        assert!(server.submit_batch(&[(a, true), (a, true)]).is_err());
        assert_eq!(server.outstanding(), 2);
        server.submit_batch(&[(a, true), (b, false)]).unwrap();
        assert_eq!(server.outstanding(), 0);
        assert_eq!(server.state().reports(), 3);
    }

    #[test]
    fn line_protocol() {
        let rng = ChaCha20Rng::seed_from_u64(5);
        let mut server = HeavyHitterServer::new(12, 0.9, rng).unwrap();
        assert!(server.handle_line("PUBLISHED?").starts_with("ERR"));
        let v = 0xabc;
        for _ in 0..40 {
            let line = server.handle_line("CHALLENGE?");
            let (nonce, c) = parse_challenge_line(&line, 12).unwrap();
            assert_eq!(line.split(',').nth(1).unwrap().len(), 3);
            let bit = report_for_value(v, c).bit as u8;
            assert_eq!(server.handle_line(&format!("REPORT {nonce:016x},{bit}")), "OK");
            assert!(server.handle_line(&format!("REPORT {nonce:016x},{bit}")).starts_with("ERR"));
        }
        assert_eq!(server.handle_line("PUBLISHED?"), "abc");
        assert_eq!(parse_published_line("abc").unwrap(), BTreeSet::from([0xabc]));
        assert_eq!(parse_published_line("").unwrap(), BTreeSet::new());
        assert_eq!(server.handle_line("REPORT zz"), "ERR malformed report");
        assert_eq!(server.handle_line("HELLO"), "ERR unknown command");

        let mut out = Vec::new();
        server.serve("CHALLENGE?\n\nPUBLISHED?\n".as_bytes(), &mut out).unwrap();
        let out = String::from_utf8(out).unwrap();
        assert_eq!(out.lines().count(), 2);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut s = SketchState::new(5).unwrap();
        for _ in 0..30 {
            let c = Challenge::random(5, &mut rng);
            s.apply(&Report { challenge: c, bit: rng.gen() }).unwrap();
        }
        let mut buf = Vec::new();
        s.write_snapshot(&mut buf).unwrap();
        assert_eq!(buf.len(), 13 + 8 * 32);
        assert_eq!(&buf[..4], b"HHS1");
        assert_eq!(buf[4], 5);
        assert_eq!(u64::from_le_bytes(buf[5..13].try_into().unwrap()), 30);
        assert_eq!(SketchState::read_snapshot(&buf[..]).unwrap(), s);
        assert!(SketchState::read_snapshot(&buf[..20]).is_err());
        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(SketchState::read_snapshot(&corrupt[..]).is_err());
    }

    #[test]
    fn colliding_tids_both_flagged() {
        // search for two distinct TIDs with equal 16-bit hashes
        let bits = 16;
        let mut seen = HashMap::new();
        let (a, b) = (0u64..)
            .find_map(|i| {
                let tid = Tid(i.to_le_bytes().to_vec());
                let h = tid_bits(&tid, bits);
                seen.insert(h, tid.clone()).map(|prev| (prev, tid))
            })
            .unwrap();
        assert_ne!(a, b);
        let published = BTreeSet::from([tid_bits(&a, bits)]);
        assert!(check_published(&a, &published, bits));
        assert!(check_published(&b, &published, bits));
        assert!(!check_published(&a, &BTreeSet::new(), bits));
    }
}
