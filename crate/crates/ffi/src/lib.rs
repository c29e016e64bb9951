//! C ABI over the `healthtoken` library.
//!
//! Every function returns an [`HtStatus`]. Objects are opaque handles created
//! by a `*_new` style function and released with the matching `*_free`.
//! Strings are NUL-terminated UTF-8. Output strings are written into caller
//! buffers; when a buffer is too small the call returns
//! `HT_STATUS_BUFFER_TOO_SMALL` and stores the required size (including the
//! terminating NUL) in `*written`. A description of the most recent failure
//! on the calling thread is available from [`ht_last_error`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use healthtoken::aggregate::{self, ResponseTally};
use healthtoken::dp::{self, ExpEpsilon, Policy, PolicyId, PolicyParams, RiskStatus};
use healthtoken::heavyhitter::{self, Challenge, Report, SketchState};
use healthtoken::ratelimit::{Decision, RejectReason, UsageLedger};
use healthtoken::token::{
    self, IssuerKey, IssuerPublicKey, PolicyRegistry, SignatureScheme, SignedToken, TidHash,
    TokenError, TrustStore,
};
use rand::rngs::OsRng;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Malformed = 4,
    UntrustedIssuer = 5,
    InvalidSignature = 6,
    UnknownPolicy = 7,
    ValueOutOfRange = 8,
    Expired = 9,
    RateLimited = 10,
    StaleEpoch = 11,
    Empty = 12,
    Internal = 13,
}

/// Signature algorithm selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HtScheme {
    P256 = 0,
    P521 = 1,
}

/// Fields of a successfully verified token.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct HtVerified {
    pub policy_id: [u8; 16],
    pub token_value: u8,
    pub issuer_key_id: [u8; 8],
    pub issued_at: u64,
    pub tid_hash: [u8; 16],
}

/// Mechanism parameters.
pub struct HtPolicy(Policy);
/// Issuer signing key.
pub struct HtIssuerKey(IssuerKey);
/// Trusted issuer keys together with the known policies.
pub struct HtVerifier {
    trust: TrustStore,
    registry: PolicyRegistry,
}
/// Per-level response counts for one policy.
pub struct HtTally(ResponseTally);
/// Per-epoch TID usage counts.
pub struct HtLedger(UsageLedger);
/// Heavy-hitter counter table.
pub struct HtSketch(SketchState);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: HtStatus, message: impl Into<String>) -> HtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
    status
}

fn guard(f: impl FnOnce() -> HtStatus) -> HtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(HtStatus::Internal, "internal panic"),
    }
}

fn token_status(e: &TokenError) -> HtStatus {
    match e {
        TokenError::Malformed(_) => HtStatus::Malformed,
        TokenError::UntrustedIssuer(_) => HtStatus::UntrustedIssuer,
        TokenError::InvalidSignature => HtStatus::InvalidSignature,
        TokenError::UnknownPolicy(_) => HtStatus::UnknownPolicy,
        TokenError::ValueOutOfRange { .. } => HtStatus::ValueOutOfRange,
        TokenError::Expired { .. } => HtStatus::Expired,
        TokenError::Signing => HtStatus::Internal,
        TokenError::Key(_) | TokenError::Dp(_) => HtStatus::InvalidArgument,
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, HtStatus> {
    if p.is_null() {
        return Err(fail(HtStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(HtStatus::InvalidArgument, "string is not UTF-8"))
}

unsafe fn write_str(s: &str, buf: *mut c_char, len: usize, written: *mut usize) -> HtStatus {
    let need = s.len() + 1;
    if !written.is_null() {
        *written = need;
    }
    if buf.is_null() || len < need {
        return fail(HtStatus::BufferTooSmall, format!("need {need} bytes"));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    HtStatus::Ok
}

unsafe fn read16(p: *const u8) -> [u8; 16] {
    let mut out = [0u8; 16];
    ptr::copy_nonoverlapping(p, out.as_mut_ptr(), 16);
    out
}

macro_rules! nonnull {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            return fail(HtStatus::NullArgument, concat!("null argument: ", stringify!($p)));
        })+
    };
}

/// Copy the last error message of this thread into `buf`.
#[no_mangle]
pub unsafe extern "C" fn ht_last_error(buf: *mut c_char, len: usize, written: *mut usize) -> HtStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    write_str(&msg, buf, len, written)
}

/// Create a policy from a 16-byte `id`. `epsilon` accepts `log(a)`, `log(a/b)`, a decimal or
/// `inf`.
#[no_mangle]
pub unsafe extern "C" fn ht_policy_new(
    id: *const u8,
    k: u16,
    epsilon: *const c_char,
    epoch_seconds: u64,
    rate_limit: u32,
    sketch_bits: u8,
    tau: f64,
    out: *mut *mut HtPolicy,
) -> HtStatus {
    guard(|| {
        nonnull!(id, out);
        let eps = match str_arg(epsilon) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let exp_epsilon: ExpEpsilon = match eps.parse() {
            Ok(v) => v,
            Err(e) => return fail(HtStatus::InvalidArgument, format!("{e}")),
        };
        let mut params = PolicyParams::new(PolicyId(read16(id)), k, exp_epsilon);
        params.epoch_seconds = epoch_seconds;
        params.rate_limit = rate_limit;
        params.sketch_bits = sketch_bits;
        params.tau = tau;
        match Policy::try_from(params) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(HtPolicy(p)));
                HtStatus::Ok
            }
            Err(e) => fail(HtStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ht_policy_free(policy: *mut HtPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Randomize a true status with OS randomness.
#[no_mangle]
pub unsafe extern "C" fn ht_randomize(policy: *const HtPolicy, truth: u8, out_value: *mut u8) -> HtStatus {
    guard(|| {
        nonnull!(policy, out_value);
        match dp::randomize(RiskStatus(truth), &(*policy).0, &mut OsRng) {
            Ok(v) => {
                *out_value = v.value();
                HtStatus::Ok
            }
            Err(e) => fail(HtStatus::ValueOutOfRange, e.to_string()),
        }
    })
}

/// Debias `k` response counts into `k` frequency estimates.
#[no_mangle]
pub unsafe extern "C" fn ht_debias(
    policy: *const HtPolicy,
    counts: *const u64,
    k: usize,
    out_freq: *mut f64,
) -> HtStatus {
    guard(|| {
        nonnull!(policy, counts, out_freq);
        let counts = std::slice::from_raw_parts(counts, k);
        match dp::debias(counts, &(*policy).0) {
            Ok(est) => {
                ptr::copy_nonoverlapping(est.per_level.as_ptr(), out_freq, k);
                HtStatus::Ok
            }
            Err(dp::DpError::EmptyAggregate) => fail(HtStatus::Empty, "no responses"),
            Err(e) => fail(HtStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ht_issuer_key_generate(scheme: HtScheme, out: *mut *mut HtIssuerKey) -> HtStatus {
    guard(|| {
        nonnull!(out);
        let scheme = match scheme {
            HtScheme::P256 => SignatureScheme::P256,
            HtScheme::P521 => SignatureScheme::P521,
        };
        *out = Box::into_raw(Box::new(HtIssuerKey(IssuerKey::generate(scheme, &mut OsRng))));
        HtStatus::Ok
    })
}

/// Load a PKCS#8 PEM secret key.
#[no_mangle]
pub unsafe extern "C" fn ht_issuer_key_from_pem(pem: *const c_char, out: *mut *mut HtIssuerKey) -> HtStatus {
    guard(|| {
        nonnull!(out);
        let pem = match str_arg(pem) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match IssuerKey::from_pkcs8_pem(pem) {
            Ok(k) => {
                *out = Box::into_raw(Box::new(HtIssuerKey(k)));
                HtStatus::Ok
            }
            Err(e) => fail(HtStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Write the SPKI PEM public key.
#[no_mangle]
pub unsafe extern "C" fn ht_issuer_key_public_pem(
    key: *const HtIssuerKey,
    buf: *mut c_char,
    len: usize,
    written: *mut usize,
) -> HtStatus {
    guard(|| {
        nonnull!(key);
        match (*key).0.public_key().to_spki_pem() {
            Ok(pem) => write_str(&pem, buf, len, written),
            Err(e) => fail(HtStatus::Internal, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ht_issuer_key_free(key: *mut HtIssuerKey) {
    if !key.is_null() {
        drop(Box::from_raw(key));
    }
}

/// Randomize `truth`, sign, and write the token text form.
#[no_mangle]
pub unsafe extern "C" fn ht_issue(
    key: *const HtIssuerKey,
    policy: *const HtPolicy,
    truth: u8,
    now: u64,
    buf: *mut c_char,
    len: usize,
    written: *mut usize,
) -> HtStatus {
    guard(|| {
        nonnull!(key, policy);
        match token::issue(RiskStatus(truth), &(*policy).0, &(*key).0, now, &mut OsRng) {
            Ok((signed, _)) => write_str(&signed.encode_text(), buf, len, written),
            Err(e) => fail(token_status(&e), e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ht_verifier_new(out: *mut *mut HtVerifier) -> HtStatus {
    guard(|| {
        nonnull!(out);
        let v = HtVerifier { trust: TrustStore::new(), registry: PolicyRegistry::new() };
        *out = Box::into_raw(Box::new(v));
        HtStatus::Ok
    })
}

/// Trust an issuer given its SPKI PEM public key.
#[no_mangle]
pub unsafe extern "C" fn ht_verifier_add_key_pem(verifier: *mut HtVerifier, pem: *const c_char) -> HtStatus {
    guard(|| {
        nonnull!(verifier);
        let pem = match str_arg(pem) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match IssuerPublicKey::from_spki_pem(pem) {
            Ok(k) => {
                (*verifier).trust.insert(k);
                HtStatus::Ok
            }
            Err(e) => fail(HtStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Register a copy of `policy`.
#[no_mangle]
pub unsafe extern "C" fn ht_verifier_add_policy(verifier: *mut HtVerifier, policy: *const HtPolicy) -> HtStatus {
    guard(|| {
        nonnull!(verifier, policy);
        (*verifier).registry.insert((*policy).0.clone());
        HtStatus::Ok
    })
}

/// Verify a token text form at time `now`.
#[no_mangle]
pub unsafe extern "C" fn ht_verify_text(
    verifier: *const HtVerifier,
    text: *const c_char,
    now: u64,
    out: *mut HtVerified,
) -> HtStatus {
    guard(|| {
        nonnull!(verifier, out);
        let text = match str_arg(text) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let v = &*verifier;
        match token::verify_text(text, &v.trust, &v.registry, now) {
            Ok((payload, tid)) => {
                *out = HtVerified {
                    policy_id: payload.policy_id.0,
                    token_value: payload.token_value,
                    issuer_key_id: payload.issuer_key_id.0,
                    issued_at: payload.issued_at,
                    tid_hash: tid.hash().0,
                };
                HtStatus::Ok
            }
            Err(e) => fail(token_status(&e), e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ht_verifier_free(verifier: *mut HtVerifier) {
    if !verifier.is_null() {
        drop(Box::from_raw(verifier));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ht_tally_new(policy: *const HtPolicy, out: *mut *mut HtTally) -> HtStatus {
    guard(|| {
        nonnull!(policy, out);
        *out = Box::into_raw(Box::new(HtTally(ResponseTally::new(&(*policy).0))));
        HtStatus::Ok
    })
}

/// Count one verified token value observed at time `at`.
#[no_mangle]
pub unsafe extern "C" fn ht_tally_record(tally: *mut HtTally, value: u8, at: u64) -> HtStatus {
    guard(|| {
        nonnull!(tally);
        match (*tally).0.record_value(value, at) {
            Ok(()) => HtStatus::Ok,
            Err(e) => fail(HtStatus::ValueOutOfRange, e.to_string()),
        }
    })
}

/// Debias the tally. `out_freq` must hold `k` values.
#[no_mangle]
pub unsafe extern "C" fn ht_tally_aggregate(
    tally: *const HtTally,
    policy: *const HtPolicy,
    out_freq: *mut f64,
    out_expected_risk: *mut f64,
    out_risk_sum: *mut f64,
) -> HtStatus {
    guard(|| {
        nonnull!(tally, policy, out_freq, out_expected_risk, out_risk_sum);
        match aggregate::aggregate(&(*tally).0, &(*policy).0) {
            Ok(report) => {
                let f = &report.estimate.per_level;
                ptr::copy_nonoverlapping(f.as_ptr(), out_freq, f.len());
                *out_expected_risk = report.expected_risk;
                *out_risk_sum = report.risk_sum;
                HtStatus::Ok
            }
            Err(aggregate::AggregateError::Dp(dp::DpError::EmptyAggregate)) => fail(HtStatus::Empty, "no responses"),
            Err(e) => fail(HtStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ht_tally_n(tally: *const HtTally, out: *mut u64) -> HtStatus {
    guard(|| {
        nonnull!(tally, out);
        *out = (*tally).0.n();
        HtStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn ht_tally_free(tally: *mut HtTally) {
    if !tally.is_null() {
        drop(Box::from_raw(tally));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ht_ledger_new(policy: *const HtPolicy, out: *mut *mut HtLedger) -> HtStatus {
    guard(|| {
        nonnull!(policy, out);
        *out = Box::into_raw(Box::new(HtLedger(UsageLedger::new(&(*policy).0))));
        HtStatus::Ok
    })
}

/// Record one use of a 16-byte TID hash. Returns `HT_STATUS_RATE_LIMITED` once the
/// per-epoch limit is exhausted.
#[no_mangle]
pub unsafe extern "C" fn ht_ledger_check(
    ledger: *mut HtLedger,
    tid_hash: *const u8,
    now: u64,
    out_uses: *mut u32,
) -> HtStatus {
    guard(|| {
        nonnull!(ledger, tid_hash);
        match (*ledger).0.check_and_record(&TidHash(read16(tid_hash)), now) {
            Decision::Accept { uses } => {
                if !out_uses.is_null() {
                    *out_uses = uses;
                }
                HtStatus::Ok
            }
            Decision::Reject(RejectReason::OverLimit) => fail(HtStatus::RateLimited, "use limit reached"),
            Decision::Reject(RejectReason::StaleEpoch) => fail(HtStatus::StaleEpoch, "time precedes the current epoch"),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ht_ledger_free(ledger: *mut HtLedger) {
    if !ledger.is_null() {
        drop(Box::from_raw(ledger));
    }
}

/// Provider side: the report bit for a token under challenge `r`.
#[no_mangle]
pub unsafe extern "C" fn ht_report_bit(text: *const c_char, bits: u8, r: u32, out_bit: *mut u8) -> HtStatus {
    guard(|| {
        nonnull!(out_bit);
        let text = match str_arg(text) {
            Ok(s) => s,
            Err(st) => return st,
        };
        if !(1..=dp::MAX_SKETCH_BITS).contains(&bits) {
            return fail(HtStatus::InvalidArgument, "bits out of range");
        }
        match SignedToken::decode_text(text) {
            Ok(t) => {
                *out_bit = heavyhitter::client_report(&t.tid(), Challenge { bits, r }).bit as u8;
                HtStatus::Ok
            }
            Err(e) => fail(token_status(&e), e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ht_sketch_new(bits: u8, out: *mut *mut HtSketch) -> HtStatus {
    guard(|| {
        nonnull!(out);
        match SketchState::new(bits) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(HtSketch(s)));
                HtStatus::Ok
            }
            Err(e) => fail(HtStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Fold one report (challenge `r`, answer `bit`) into the counters.
#[no_mangle]
pub unsafe extern "C" fn ht_sketch_apply(sketch: *mut HtSketch, r: u32, bit: u8) -> HtStatus {
    guard(|| {
        nonnull!(sketch);
        let s = &mut (*sketch).0;
        let report = Report { challenge: Challenge { bits: s.bits(), r }, bit: bit != 0 };
        match s.apply(&report) {
            Ok(()) => HtStatus::Ok,
            Err(e) => fail(HtStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Values whose counter exceeds `tau` times the report count, ascending.
/// `*count` receives the number of values even when `cap` is too small.
#[no_mangle]
pub unsafe extern "C" fn ht_sketch_publish(
    sketch: *const HtSketch,
    tau: f64,
    out: *mut u32,
    cap: usize,
    count: *mut usize,
) -> HtStatus {
    guard(|| {
        nonnull!(sketch, count);
        let set = match (*sketch).0.publish(tau) {
            Ok(s) => s,
            Err(heavyhitter::HeavyHitterError::EmptySketch) => return fail(HtStatus::Empty, "no reports"),
            Err(e) => return fail(HtStatus::InvalidArgument, e.to_string()),
        };
        *count = set.len();
        if set.len() > cap || (out.is_null() && !set.is_empty()) {
            return fail(HtStatus::BufferTooSmall, format!("need {} slots", set.len()));
        }
        for (i, v) in set.into_iter().enumerate() {
            *out.add(i) = v;
        }
        HtStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn ht_sketch_free(sketch: *mut HtSketch) {
    if !sketch.is_null() {
        drop(Box::from_raw(sketch));
    }
}
