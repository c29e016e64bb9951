//! k-ary randomized response and the matching debiasing estimator.
//!
//! A [`Policy`] fixes the public mechanism parameters. The privacy level is
//! stored as an exact rational value of `e^ε` so that signed artifacts,
//! sampling and debiasing never depend on float formatting or on the
//! platform's `exp` implementation.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use thiserror::Error;

/// Rationals for `e^ε` above this value are treated as the no-noise limit.
pub const MAX_EXP_EPSILON: u64 = 1_000_000_000_000_000;

/// Largest denominator used when a decimal ε is rounded to a rational `e^ε`.
pub const MAX_DECIMAL_DENOMINATOR: u64 = 1_000_000;

/// Upper bound on `k`: token values travel as a single byte.
pub const MAX_LEVELS: u16 = 256;

/// Upper bound on the heavy-hitter sketch width.
pub const MAX_SKETCH_BITS: u8 = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("k must be in 2..={MAX_LEVELS}, got {0}")]
    InvalidLevels(u16),
    #[error("risk status {value} is out of range for k = {k}")]
    StatusOutOfRange { value: u8, k: u16 },
    #[error("epsilon must be positive (e^epsilon > 1)")]
    NonPositiveEpsilon,
    #[error("cannot parse epsilon {0:?}")]
    EpsilonSyntax(String),
    #[error("tau must lie strictly between 0 and 1, got {0}")]
    InvalidTau(f64),
    #[error("sketch_bits must be in 1..={MAX_SKETCH_BITS}, got {0}")]
    InvalidSketchBits(u8),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("tally has {got} levels, policy has k = {k}")]
    TallyLength { got: usize, k: u16 },
    #[error("cannot debias an empty aggregate")]
    EmptyAggregate,
}

/// Opaque 16-byte policy identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolicyId(pub [u8; 16]);

impl PolicyId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolicyId({})", self.to_hex())
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for PolicyId {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut id = [0u8; 16];
        hex::decode_to_slice(s.trim(), &mut id)?;
        Ok(PolicyId(id))
    }
}

/// The privacy parameter, held as the exact value of `e^ε`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExpEpsilon {
    /// `e^ε = num / den`, reduced, with `num > den`.
    Ratio { num: u64, den: u64 },
    /// `e^ε` beyond [`MAX_EXP_EPSILON`]: the mechanism never perturbs.
    Unbounded,
}

impl ExpEpsilon {
    /// `ε = log(num / den)`.
    pub fn from_ratio(num: u64, den: u64) -> Result<Self, DpError> {
        if den == 0 {
            return Err(DpError::EpsilonSyntax(format!("{num}/0")));
        }
        if num <= den {
            return Err(DpError::NonPositiveEpsilon);
        }
        let g = num.gcd(&den);
        let (num, den) = (num / g, den / g);
        if num / den >= MAX_EXP_EPSILON {
            return Ok(ExpEpsilon::Unbounded);
        }
        Ok(ExpEpsilon::Ratio { num, den })
    }

    /// Convert a decimal ε to a rational `e^ε` with denominator at most
    /// [`MAX_DECIMAL_DENOMINATOR`], using fixed-point big-integer arithmetic.
    pub fn from_decimal(epsilon: &str) -> Result<Self, DpError> {
        let (mantissa, scale) = parse_decimal(epsilon)?;
        if !mantissa.is_positive() {
            return Err(DpError::NonPositiveEpsilon);
        }
        // ln(MAX_EXP_EPSILON) ~= 34.54
        if mantissa >= BigInt::from(35u32) * BigInt::from(10u32).pow(scale) {
            return Ok(ExpEpsilon::Unbounded);
        }
        let fixed = FixedPoint::new(80);
        let x = fixed.scale_decimal(&mantissa.to_biguint().unwrap(), scale);
        let e = fixed.exp(&x);
        let (num, den) = best_rational(&e, &fixed.one, MAX_DECIMAL_DENOMINATOR);
        Self::from_ratio(num, den)
    }

    /// `e^ε` as a float (infinite for [`ExpEpsilon::Unbounded`]).
    pub fn value(&self) -> f64 {
        match *self {
            ExpEpsilon::Ratio { num, den } => num as f64 / den as f64,
            ExpEpsilon::Unbounded => f64::INFINITY,
        }
    }

    /// ε itself, for display and plotting only.
    pub fn epsilon(&self) -> f64 {
        self.value().ln()
    }

    /// Numerator and denominator of `e^ε`; `(1, 0)` for the unbounded case.
    pub fn parts(&self) -> (u64, u64) {
        match *self {
            ExpEpsilon::Ratio { num, den } => (num, den),
            ExpEpsilon::Unbounded => (1, 0),
        }
    }
}

impl fmt::Display for ExpEpsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpEpsilon::Ratio { num, den: 1 } => write!(f, "log({num})"),
            ExpEpsilon::Ratio { num, den } => write!(f, "log({num}/{den})"),
            ExpEpsilon::Unbounded => f.write_str("inf"),
        }
    }
}

/// Accepts `log(a)`, `log(a/b)`, `ln(a/b)`, `log a/b`, `inf` or a decimal ε.
impl FromStr for ExpEpsilon {
    type Err = DpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        if lower == "inf" || lower == "infinity" {
            return Ok(ExpEpsilon::Unbounded);
        }
        let body = lower
            .strip_prefix("log")
            .or_else(|| lower.strip_prefix("ln"))
            .map(|rest| rest.trim().trim_start_matches('(').trim_end_matches(')').trim());
        match body {
            Some(body) => {
                let bad = || DpError::EpsilonSyntax(s.to_string());
                let (num, den) = match body.split_once('/') {
                    Some((a, b)) => (a.trim(), b.trim()),
                    None => (body, "1"),
                };
                let num = num.parse::<u64>().map_err(|_| bad())?;
                let den = den.parse::<u64>().map_err(|_| bad())?;
                Self::from_ratio(num, den)
            }
            None => Self::from_decimal(s),
        }
    }
}

fn parse_decimal(s: &str) -> Result<(BigInt, u32), DpError> {
    let bad = || DpError::EpsilonSyntax(s.to_string());
    let s = s.trim();
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let joined = format!("{int_part}{frac_part}");
    let mut mantissa: BigInt = joined.parse::<BigUint>().map_err(|_| bad())?.into();
    if neg {
        mantissa = -mantissa;
    }
    Ok((mantissa, frac_part.len() as u32))
}

struct FixedPoint {
    digits: u32,
    one: BigUint,
}

impl FixedPoint {
    fn new(digits: u32) -> Self {
        FixedPoint { digits, one: BigUint::from(10u32).pow(digits) }
    }

    fn scale_decimal(&self, mantissa: &BigUint, scale: u32) -> BigUint {
        if scale <= self.digits {
            mantissa * BigUint::from(10u32).pow(self.digits - scale)
        } else {
            mantissa / BigUint::from(10u32).pow(scale - self.digits)
        }
    }

    fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) / &self.one
    }

    fn exp(&self, x: &BigUint) -> BigUint {
        // exp(x) = exp(x / 2^j)^(2^j), with x / 2^j < 1/2 for fast convergence
        let half = &self.one >> 1;
        let mut reduced = x.clone();
        let mut squarings = 0;
        while reduced > half {
            reduced >>= 1;
            squarings += 1;
        }
        let mut sum = self.one.clone();
        let mut term = self.one.clone();
        for i in 1u32.. {
            term = self.mul(&term, &reduced) / BigUint::from(i);
            if term.is_zero() {
                break;
            }
            sum += &term;
        }
        for _ in 0..squarings {
            sum = self.mul(&sum, &sum);
        }
        sum
    }
}

/// Best rational approximation of `value / scale` with denominator bounded
/// by `max_den`, via continued fractions and semiconvergents.
fn best_rational(value: &BigUint, scale: &BigUint, max_den: u64) -> (u64, u64) {
    let max_den = BigUint::from(max_den);
    let (mut p0, mut q0, mut p1, mut q1) =
        (BigUint::zero(), BigUint::one(), BigUint::one(), BigUint::zero());
    let (mut n, mut d) = (value.clone(), scale.clone());
    loop {
        if d.is_zero() {
            break;
        }
        let a = &n / &d;
        let q2 = &q0 + &a * &q1;
        if q2 > max_den {
            // largest semiconvergent that still fits
            let t = (&max_den - &q0) / &q1;
            let (ps, qs) = (&p0 + &t * &p1, &q0 + &t * &q1);
            let x = BigInt::from(value.clone());
            let s = BigInt::from(scale.clone());
            let err = |p: &BigUint, q: &BigUint| {
                (BigInt::from(p.clone()) * &s - &x * BigInt::from(q.clone())).abs()
                    * BigInt::from(max_den.clone())
                    / BigInt::from(q.clone())
            };
            if !qs.is_zero() && err(&ps, &qs) < err(&p1, &q1) {
                p1 = ps;
                q1 = qs;
            }
            break;
        }
        let p2 = &p0 + &a * &p1;
        p0 = std::mem::replace(&mut p1, p2);
        q0 = std::mem::replace(&mut q1, q2);
        let r = &n % &d;
        n = std::mem::replace(&mut d, r);
    }
    (
        p1.to_u64().unwrap_or(u64::MAX),
        q1.to_u64().unwrap_or(1),
    )
}

/// Plain constructor input for [`Policy`].
#[derive(Clone, Debug)]
pub struct PolicyParams {
    pub id: PolicyId,
    pub k: u16,
    pub exp_epsilon: ExpEpsilon,
    pub epoch_seconds: u64,
    pub rate_limit: u32,
    pub sketch_bits: u8,
    pub tau: f64,
}

impl PolicyParams {
    pub fn new(id: PolicyId, k: u16, exp_epsilon: ExpEpsilon) -> Self {
        PolicyParams {
            id,
            k,
            exp_epsilon,
            epoch_seconds: 86_400,
            rate_limit: 3,
            sketch_bits: 16,
            tau: 0.02,
        }
    }
}

/// Validated public mechanism parameters shared by issuers, verifiers and the
/// central sketch server.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    id: PolicyId,
    k: u16,
    exp_epsilon: ExpEpsilon,
    epoch_seconds: u64,
    rate_limit: u32,
    sketch_bits: u8,
    tau: f64,
}

impl TryFrom<PolicyParams> for Policy {
    type Error = DpError;

    fn try_from(p: PolicyParams) -> Result<Self, DpError> {
        if !(2..=MAX_LEVELS).contains(&p.k) {
            return Err(DpError::InvalidLevels(p.k));
        }
        if let ExpEpsilon::Ratio { num, den } = p.exp_epsilon {
            if num <= den || den == 0 {
                return Err(DpError::NonPositiveEpsilon);
            }
        }
        if p.epoch_seconds == 0 {
            return Err(DpError::NonPositive("epoch_seconds"));
        }
        if p.rate_limit == 0 {
            return Err(DpError::NonPositive("rate_limit"));
        }
        if !(1..=MAX_SKETCH_BITS).contains(&p.sketch_bits) {
            return Err(DpError::InvalidSketchBits(p.sketch_bits));
        }
        if !(p.tau > 0.0 && p.tau < 1.0) {
            return Err(DpError::InvalidTau(p.tau));
        }
        Ok(Policy {
            id: p.id,
            k: p.k,
            exp_epsilon: p.exp_epsilon,
            epoch_seconds: p.epoch_seconds,
            rate_limit: p.rate_limit,
            sketch_bits: p.sketch_bits,
            tau: p.tau,
        })
    }
}

impl Policy {
    /// A policy with default epoch, rate-limit and sketch parameters.
    pub fn new(id: PolicyId, k: u16, exp_epsilon: ExpEpsilon) -> Result<Self, DpError> {
        PolicyParams::new(id, k, exp_epsilon).try_into()
    }

    pub fn id(&self) -> PolicyId {
        self.id
    }

    pub fn k(&self) -> u16 {
        self.k
    }

    pub fn exp_epsilon(&self) -> ExpEpsilon {
        self.exp_epsilon
    }

    pub fn epoch_seconds(&self) -> u64 {
        self.epoch_seconds
    }

    pub fn rate_limit(&self) -> u32 {
        self.rate_limit
    }

    pub fn sketch_bits(&self) -> u8 {
        self.sketch_bits
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn params(&self) -> PolicyParams {
        PolicyParams {
            id: self.id,
            k: self.k,
            exp_epsilon: self.exp_epsilon,
            epoch_seconds: self.epoch_seconds,
            rate_limit: self.rate_limit,
            sketch_bits: self.sketch_bits,
            tau: self.tau,
        }
    }

    /// Probability that the first (biased) coin keeps the true value:
    /// `(e^ε - 1) / (e^ε + k - 1)`.
    pub fn keep_probability(&self) -> KeepProbability {
        match self.exp_epsilon {
            ExpEpsilon::Ratio { num, den } => {
                let (num, den, k) = (num as u128, den as u128, self.k as u128);
                KeepProbability { num: num - den, den: num + (k - 1) * den }
            }
            ExpEpsilon::Unbounded => KeepProbability { num: 1, den: 1 },
        }
    }

    /// Multiplier `(e^ε + k - 1) / (e^ε - 1)` applied by the debiasing step.
    pub fn debias_factor(&self) -> f64 {
        let keep = self.keep_probability();
        keep.den as f64 / keep.num as f64
    }

    /// Closed-form output distribution of [`randomize`] for a given input.
    pub fn output_pmf(&self, truth: RiskStatus) -> Vec<f64> {
        let k = self.k as usize;
        match self.exp_epsilon {
            ExpEpsilon::Ratio { num, den } => {
                let e = num as f64 / den as f64;
                let total = e + (k as f64 - 1.0);
                (0..k)
                    .map(|j| if j == truth.0 as usize { e / total } else { 1.0 / total })
                    .collect()
            }
            ExpEpsilon::Unbounded => {
                (0..k).map(|j| if j == truth.0 as usize { 1.0 } else { 0.0 }).collect()
            }
        }
    }

    pub fn status(&self, value: u8) -> Result<RiskStatus, DpError> {
        if (value as u16) < self.k {
            Ok(RiskStatus(value))
        } else {
            Err(DpError::StatusOutOfRange { value, k: self.k })
        }
    }
}

/// Exact rational probability `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeepProbability {
    pub num: u128,
    pub den: u128,
}

impl KeepProbability {
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        self.num == self.den || rng.gen_range(0..self.den) < self.num
    }
}

/// Ordinal transmission-risk level in `0..k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RiskStatus(pub u8);

impl RiskStatus {
    pub fn value(self) -> u8 {
        self.0
    }
}

/// Perturb a true status: keep it with probability
/// `(e^ε - 1) / (e^ε + k - 1)`, otherwise answer uniformly at random over all
/// `k` levels (which may land on the truth again).
pub fn randomize<R: Rng + ?Sized>(
    truth: RiskStatus,
    policy: &Policy,
    rng: &mut R,
) -> Result<RiskStatus, DpError> {
    let truth = policy.status(truth.0)?;
    if policy.keep_probability().sample(rng) {
        Ok(truth)
    } else {
        Ok(RiskStatus(rng.gen_range(0..policy.k) as u8))
    }
}

/// Debiased frequency estimate over the `k` levels.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyEstimate {
    pub per_level: Vec<f64>,
    pub n: u64,
}

impl FrequencyEstimate {
    /// `Σ i · f̂[i]`, the estimated mean token value.
    pub fn expected_risk(&self) -> f64 {
        expected_risk(&self.per_level)
    }

    /// Estimated total risk of the `n` contributors.
    pub fn risk_sum(&self) -> f64 {
        self.n as f64 * self.expected_risk()
    }
}

pub fn expected_risk(per_level: &[f64]) -> f64 {
    per_level.iter().enumerate().map(|(i, f)| i as f64 * f).sum()
}

/// Unbiased frequency estimate from observed response counts:
/// `f̂ = (e^ε + k - 1)/(e^ε - 1) · (f̃ - 1/k) + 1/k`. Entries may be negative
/// and are returned unclipped; they always sum to one.
pub fn debias(counts: &[u64], policy: &Policy) -> Result<FrequencyEstimate, DpError> {
    let k = policy.k as usize;
    if counts.len() != k {
        return Err(DpError::TallyLength { got: counts.len(), k: policy.k });
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(DpError::EmptyAggregate);
    }
    let factor = policy.debias_factor();
    let uniform = 1.0 / k as f64;
    let per_level = counts
        .iter()
        .map(|&c| factor * (c as f64 / n as f64 - uniform) + uniform)
        .collect();
    Ok(FrequencyEstimate { per_level, n })
}

/// Debiased total risk `n · Σ i · f̂[i]`.
pub fn estimate_risk_sum(counts: &[u64], policy: &Policy) -> Result<f64, DpError> {
    Ok(debias(counts, policy)?.risk_sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn policy(k: u16, eps: &str) -> Policy {
        Policy::new(PolicyId([7; 16]), k, eps.parse().unwrap()).unwrap()
    }

    #[test]
    fn parses_log_forms() {
        assert_eq!("log(3)".parse::<ExpEpsilon>().unwrap(), ExpEpsilon::Ratio { num: 3, den: 1 });
        assert_eq!("log 5/3".parse::<ExpEpsilon>().unwrap(), ExpEpsilon::Ratio { num: 5, den: 3 });
        assert_eq!("ln(14/2)".parse::<ExpEpsilon>().unwrap(), ExpEpsilon::Ratio { num: 7, den: 1 });
        assert_eq!("inf".parse::<ExpEpsilon>().unwrap(), ExpEpsilon::Unbounded);
        assert_eq!("log(1)".parse::<ExpEpsilon>(), Err(DpError::NonPositiveEpsilon));
        assert!("log(x)".parse::<ExpEpsilon>().is_err());
    }

    #[test]
    fn decimal_epsilon_rounds_to_rational() {
        // ln 3 = 1.0986122886681098...
        let e: ExpEpsilon = "1.0986122886681098".parse().unwrap();
        assert_eq!(e, ExpEpsilon::Ratio { num: 3, den: 1 });
        let e: ExpEpsilon = "1".parse().unwrap();
        let (num, den) = e.parts();
        assert!(den <= MAX_DECIMAL_DENOMINATOR);
        assert!((num as f64 / den as f64 - std::f64::consts::E).abs() < 1e-11);
        assert_eq!("0".parse::<ExpEpsilon>(), Err(DpError::NonPositiveEpsilon));
        assert_eq!("-1.5".parse::<ExpEpsilon>(), Err(DpError::NonPositiveEpsilon));
        assert_eq!("40".parse::<ExpEpsilon>().unwrap(), ExpEpsilon::Unbounded);
    }

    #[test]
    fn keep_probability_log3_k2_is_half() {
        let p = policy(2, "log(3)").keep_probability();
        assert_eq!((p.num, p.den), (2, 4));
        assert_eq!(p.value(), 0.5);
    }

    #[test]
    fn policy_validation() {
        let id = PolicyId([0; 16]);
        let e = ExpEpsilon::Ratio { num: 3, den: 1 };
        assert_eq!(Policy::new(id, 1, e), Err(DpError::InvalidLevels(1)));
        let mut p = PolicyParams::new(id, 2, e);
        p.tau = 1.0;
        assert!(matches!(Policy::try_from(p.clone()), Err(DpError::InvalidTau(_))));
        p.tau = 0.5;
        p.sketch_bits = 25;
        assert_eq!(Policy::try_from(p.clone()), Err(DpError::InvalidSketchBits(25)));
        p.sketch_bits = 0;
        assert_eq!(Policy::try_from(p), Err(DpError::InvalidSketchBits(0)));
    }

    #[test]
    fn randomize_rejects_out_of_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let err = randomize(RiskStatus(2), &policy(2, "log(3)"), &mut rng).unwrap_err();
        assert_eq!(err, DpError::StatusOutOfRange { value: 2, k: 2 });
    }

    #[test]
    fn randomize_unbounded_is_identity() {
        let p = policy(4, "inf");
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for v in 0..4 {
            for _ in 0..100 {
                assert_eq!(randomize(RiskStatus(v), &p, &mut rng).unwrap(), RiskStatus(v));
            }
        }
    }

    #[test]
    fn randomize_k4_log3_marginal() {
        let p = policy(4, "log(3)");
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let draws = 1_000_000;
        let hits = (0..draws)
            .filter(|_| randomize(RiskStatus(1), &p, &mut rng).unwrap() == RiskStatus(1))
            .count();
        let freq = hits as f64 / draws as f64;
        assert!((freq - 0.5).abs() <= 0.002, "{freq}");
    }

    #[test]
    fn debias_examples() {
        let p = policy(2, "log(3)");
        assert_eq!(debias(&[50, 50], &p).unwrap().per_level, vec![0.5, 0.5]);
        assert_eq!(debias(&[100, 0], &p).unwrap().per_level, vec![1.5, -0.5]);
        assert_eq!(debias(&[75, 25], &p).unwrap().per_level, vec![1.0, 0.0]);
        assert_eq!(debias(&[0, 0], &p), Err(DpError::EmptyAggregate));
        assert!(matches!(debias(&[1, 2, 3], &p), Err(DpError::TallyLength { .. })));
    }

    #[test]
    fn expected_risk_examples() {
        assert_eq!(expected_risk(&[1.0, 0.0]), 0.0);
        assert_eq!(expected_risk(&[0.5, 0.5]), 0.5);
        assert_eq!(expected_risk(&[0.5, -0.5, 1.0]), 1.5);
    }

    #[test]
    fn risk_sum_examples() {
        let p = policy(2, "log(3)");
        assert_eq!(estimate_risk_sum(&[10, 0], &p).unwrap(), -5.0);
        assert_eq!(estimate_risk_sum(&[5, 5], &p).unwrap(), 5.0);
        assert!((estimate_risk_sum(&[30, 70], &p).unwrap() - 90.0).abs() < 1e-9);
        assert!((estimate_risk_sum(&[100, 0], &policy(2, "inf")).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pmf_sums_to_one() {
        for k in [2u16, 3, 10, 256] {
            let p = policy(k, "log(7)");
            let s: f64 = p.output_pmf(RiskStatus(1)).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
