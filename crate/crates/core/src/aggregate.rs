//! Verifier-side tallies and group risk estimates.
//!
//! Verified tokens are persisted as an append-only event log, one line per
//! accepted token:
//!
//! ```text
//! 2026-10-16T09:30:00Z,1,6f1ed002ab5595859014ebf0951522d9
//! ```
//!
//! i.e. `RFC3339 UTC timestamp,token value,hex of the 16-byte TID hash`.
//! Tallies are always recomputed from the log.

use std::fs::OpenOptions;
use std::io::{self, BufRead, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::dp::{self, DpError, FrequencyEstimate, Policy, PolicyId};
use crate::token::{TidHash, TokenPayload};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("policy mismatch: tally is for {expected}, got {got}")]
    PolicyMismatch { expected: PolicyId, got: PolicyId },
    #[error("token value {value} out of range for k = {k}")]
    ValueOutOfRange { value: u8, k: usize },
    #[error("tallies have different numbers of levels ({0} vs {1})")]
    LevelMismatch(usize, usize),
    #[error("event log line {line}: {reason}")]
    BadEvent { line: usize, reason: String },
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Closed time interval `[start, end]` in Unix seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn hull(self, other: Window) -> Window {
        Window { start: self.start.min(other.start), end: self.end.max(other.end) }
    }

    fn extend(self, at: u64) -> Window {
        self.hull(Window { start: at, end: at })
    }
}

/// Raw response counts collected under one policy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponseTally {
    policy_id: PolicyId,
    counts: Vec<u64>,
    window: Option<Window>,
}

impl ResponseTally {
    pub fn new(policy: &Policy) -> Self {
        ResponseTally { policy_id: policy.id(), counts: vec![0; policy.k() as usize], window: None }
    }

    pub fn from_counts(policy: &Policy, counts: Vec<u64>) -> Result<Self, AggregateError> {
        if counts.len() != policy.k() as usize {
            return Err(AggregateError::LevelMismatch(counts.len(), policy.k() as usize));
        }
        Ok(ResponseTally { policy_id: policy.id(), counts, window: None })
    }

    pub fn policy_id(&self) -> PolicyId {
        self.policy_id
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn window(&self) -> Option<Window> {
        self.window
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count one verified token observed at `at`. On error the tally is left
    /// untouched.
    pub fn record(&mut self, payload: &TokenPayload, at: u64) -> Result<(), AggregateError> {
        if payload.policy_id != self.policy_id {
            return Err(AggregateError::PolicyMismatch {
                expected: self.policy_id,
                got: payload.policy_id,
            });
        }
        self.record_value(payload.token_value, at)
    }

    /// Count a bare token value (already checked against this tally's policy).
    pub fn record_value(&mut self, value: u8, at: u64) -> Result<(), AggregateError> {
        let k = self.counts.len();
        let slot = self
            .counts
            .get_mut(value as usize)
            .ok_or(AggregateError::ValueOutOfRange { value, k })?;
        *slot += 1;
        self.window = Some(match self.window {
            Some(w) => w.extend(at),
            None => Window { start: at, end: at },
        });
        Ok(())
    }

    /// Elementwise sum; the window becomes the hull of both.
    pub fn merge(&self, other: &ResponseTally) -> Result<ResponseTally, AggregateError> {
        if self.policy_id != other.policy_id {
            return Err(AggregateError::PolicyMismatch {
                expected: self.policy_id,
                got: other.policy_id,
            });
        }
        if self.counts.len() != other.counts.len() {
            return Err(AggregateError::LevelMismatch(self.counts.len(), other.counts.len()));
        }
        let counts = self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect();
        let window = match (self.window, other.window) {
            (Some(a), Some(b)) => Some(a.hull(b)),
            (a, b) => a.or(b),
        };
        Ok(ResponseTally { policy_id: self.policy_id, counts, window })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    pub estimate: FrequencyEstimate,
    pub expected_risk: f64,
    pub risk_sum: f64,
}

/// Debias a tally into per-level frequencies, mean risk and total risk.
pub fn aggregate(tally: &ResponseTally, policy: &Policy) -> Result<AggregateReport, AggregateError> {
    if tally.policy_id != policy.id() {
        return Err(AggregateError::PolicyMismatch { expected: policy.id(), got: tally.policy_id });
    }
    let estimate = dp::debias(&tally.counts, policy)?;
    let expected_risk = estimate.expected_risk();
    let risk_sum = estimate.risk_sum();
    Ok(AggregateReport { estimate, expected_risk, risk_sum })
}

/// One accepted token in the event log.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub at: u64,
    pub token_value: u8,
    pub tid_hash: TidHash,
}

impl Event {
    pub fn to_line(&self) -> String {
        format!("{},{},{}", format_timestamp(self.at), self.token_value, self.tid_hash)
    }

    pub fn parse_line(line: &str) -> Result<Event, String> {
        let mut parts = line.trim().split(',');
        let (Some(ts), Some(value), Some(hash), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err("expected 3 comma-separated fields".into());
        };
        let at = parse_timestamp(ts)?;
        let token_value = value.parse::<u8>().map_err(|e| format!("token value: {e}"))?;
        let tid_hash = hash.parse::<TidHash>().map_err(|e| format!("tid hash: {e}"))?;
        Ok(Event { at, token_value, tid_hash })
    }
}

pub fn format_timestamp(secs: u64) -> String {
    DateTime::<Utc>::from_timestamp(secs as i64, 0)
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| secs.to_string())
}

pub fn parse_timestamp(s: &str) -> Result<u64, String> {
    let t = DateTime::parse_from_rfc3339(s.trim()).map_err(|e| format!("timestamp {s:?}: {e}"))?;
    u64::try_from(t.timestamp()).map_err(|_| format!("timestamp {s:?} before 1970"))
}

/// Read every event from a log. Blank lines are skipped.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<Event>, AggregateError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = Event::parse_line(&line)
            .map_err(|reason| AggregateError::BadEvent { line: i + 1, reason })?;
        events.push(event);
    }
    Ok(events)
}

pub fn read_event_log(path: &Path) -> Result<Vec<Event>, AggregateError> {
    let file = std::fs::File::open(path)?;
    read_events(io::BufReader::new(file))
}

/// Append one event, creating the log if needed.
pub fn append_event(path: &Path, event: &Event) -> Result<(), AggregateError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{}", event.to_line())?;
    file.sync_data()?;
    Ok(())
}

/// Rebuild a tally from events, keeping those inside `window` when given.
pub fn tally_events<'a, I>(
    policy: &Policy,
    events: I,
    window: Option<Window>,
) -> Result<ResponseTally, AggregateError>
where
    I: IntoIterator<Item = &'a Event>,
{
    let mut tally = ResponseTally::new(policy);
    for e in events {
        if let Some(w) = window {
            if e.at < w.start || e.at > w.end {
                continue;
            }
        }
        tally.record_value(e.token_value, e.at)?;
    }
    Ok(tally)
}
