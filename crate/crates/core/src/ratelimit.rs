//! Per-provider use limits for each TID within fixed epochs.
//!
//! Epochs are aligned to multiples of the policy's `epoch_seconds` counted
//! from Unix time zero. The ledger only holds the current epoch; moving into
//! a later epoch clears it.

use std::collections::{BTreeMap, HashMap};

use crate::aggregate::Event;
use crate::dp::Policy;
use crate::token::TidHash;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    /// Accepted; `uses` is the count for this TID in the epoch including this one.
    Accept { uses: u32 },
    Reject(RejectReason),
}

impl Decision {
    pub fn is_accept(&self) -> bool {
        matches!(self, Decision::Accept { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    OverLimit,
    /// The presentation time falls in an epoch the ledger has already left.
    StaleEpoch,
}

#[derive(Clone, Debug)]
pub struct UsageLedger {
    epoch_seconds: u64,
    rate_limit: u32,
    epoch: Option<u64>,
    counts: HashMap<TidHash, u32>,
}

impl UsageLedger {
    pub fn new(policy: &Policy) -> Self {
        Self::with_limits(policy.epoch_seconds(), policy.rate_limit())
    }

    /// # Panics
    /// If `epoch_seconds` is zero.
    pub fn with_limits(epoch_seconds: u64, rate_limit: u32) -> Self {
        assert!(epoch_seconds > 0, "epoch_seconds must be positive");
        UsageLedger { epoch_seconds, rate_limit, epoch: None, counts: HashMap::new() }
    }

    pub fn epoch_of(&self, now: u64) -> u64 {
        now / self.epoch_seconds
    }

    /// `[start, end)` of the epoch the ledger currently tracks.
    pub fn epoch_bounds(&self) -> Option<(u64, u64)> {
        self.epoch.map(|e| (e * self.epoch_seconds, (e + 1) * self.epoch_seconds))
    }

    pub fn uses(&self, tid: &TidHash) -> u32 {
        self.counts.get(tid).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn check_and_record(&mut self, tid: &TidHash, now: u64) -> Decision {
        let epoch = self.epoch_of(now);
        match self.epoch {
            Some(current) if epoch < current => return Decision::Reject(RejectReason::StaleEpoch),
            Some(current) if epoch == current => {}
            _ => {
                self.epoch = Some(epoch);
                self.counts.clear();
            }
        }
        let uses = self.counts.entry(*tid).or_insert(0);
        if *uses >= self.rate_limit {
            return Decision::Reject(RejectReason::OverLimit);
        }
        *uses += 1;
        Decision::Accept { uses: *uses }
    }

    /// Rebuild the ledger from an event log, as of `now`. Only events in the
    /// epoch containing `now` count.
    pub fn replay<'a, I>(policy: &Policy, events: I, now: u64) -> Self
    where
        I: IntoIterator<Item = &'a Event>,
    {
        let mut ledger = Self::new(policy);
        let epoch = ledger.epoch_of(now);
        ledger.epoch = Some(epoch);
        for e in events {
            if ledger.epoch_of(e.at) == epoch {
                let uses = ledger.counts.entry(e.tid_hash).or_insert(0);
                *uses = uses.saturating_add(1);
            }
        }
        ledger
    }
}

/// Uses of each TID hash per epoch across an event log.
pub fn usage_by_epoch<'a, I>(events: I, epoch_seconds: u64) -> BTreeMap<(u64, TidHash), u32>
where
    I: IntoIterator<Item = &'a Event>,
{
    let mut out = BTreeMap::new();
    for e in events {
        *out.entry((e.at / epoch_seconds, e.tid_hash)).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tid(b: u8) -> TidHash {
        TidHash([b; 16])
    }

    #[test]
    fn fresh_tid_accepted() {
        let mut l = UsageLedger::with_limits(100, 3);
        assert_eq!(l.check_and_record(&tid(1), 0), Decision::Accept { uses: 1 });
    }

    #[test]
    fn fourth_use_rejected() {
        let mut l = UsageLedger::with_limits(100, 3);
        let got: Vec<_> = (0..4).map(|i| l.check_and_record(&tid(1), i)).collect();
        assert_eq!(
            got,
            vec![
                Decision::Accept { uses: 1 },
                Decision::Accept { uses: 2 },
                Decision::Accept { uses: 3 },
                Decision::Reject(RejectReason::OverLimit)
            ]
        );
        assert_eq!(l.uses(&tid(1)), 3);
        assert!(!l.check_and_record(&tid(1), 5).is_accept());
        assert_eq!(l.uses(&tid(1)), 3);
    }

    #[test]
    fn rollover_resets() {
        let mut l = UsageLedger::with_limits(100, 1);
        assert!(l.check_and_record(&tid(1), 99).is_accept());
        assert!(!l.check_and_record(&tid(1), 99).is_accept());
        assert!(l.check_and_record(&tid(1), 100).is_accept());
        assert_eq!(l.epoch_bounds(), Some((100, 200)));
        assert_eq!(l.check_and_record(&tid(2), 50), Decision::Reject(RejectReason::StaleEpoch));
    }

    #[test]
    fn usage_by_epoch_groups() {
        let ev = |at, b| Event { at, token_value: 0, tid_hash: tid(b) };
        let events = [ev(0, 1), ev(5, 1), ev(10, 1), ev(11, 2)];
        let usage = usage_by_epoch(&events, 10);
        assert_eq!(usage[&(0, tid(1))], 2);
        assert_eq!(usage[&(1, tid(1))], 1);
        assert_eq!(usage[&(1, tid(2))], 1);
    }
}
