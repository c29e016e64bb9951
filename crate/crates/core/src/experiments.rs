//! Monte Carlo error curves for the group mean-risk estimate.
//!
//! For each group size `n` a trial draws `n` true statuses, randomizes each
//! one, debiases the tally and records `|Ê[X] - mean of the drawn statuses|`.
//! Every trial gets its own generator seeded from `(seed, n, trial)`, so curves
//! are reproducible and trials can run in any order.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::dp::{self, DpError, ExpEpsilon, Policy, PolicyId, RiskStatus};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("group size must be at least 1")]
    EmptyGroup,
    #[error("invalid truth distribution")]
    BadTruth,
    #[error("unknown preset {0:?} (expected fig2 or fig3)")]
    UnknownPreset(String),
    #[error(transparent)]
    Dp(#[from] DpError),
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub k: u16,
    pub exp_epsilon: ExpEpsilon,
    pub group_sizes: Vec<usize>,
    pub trials: usize,
    /// Weights over `0..k`; uniform when `None`.
    pub truth_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(k: u16, exp_epsilon: ExpEpsilon, seed: u64) -> Self {
        ExperimentConfig {
            k,
            exp_epsilon,
            group_sizes: (1..=500).collect(),
            trials: 100,
            truth_weights: None,
            seed,
        }
    }

    pub fn policy(&self) -> Result<Policy, DpError> {
        Policy::new(PolicyId([0; 16]), self.k, self.exp_epsilon)
    }

    fn truth_distribution(&self) -> Result<WeightedIndex<f64>, ExperimentError> {
        let weights = self.truth_weights.clone().unwrap_or_else(|| vec![1.0; self.k as usize]);
        if weights.len() != self.k as usize {
            return Err(ExperimentError::BadTruth);
        }
        WeightedIndex::new(weights).map_err(|_| ExperimentError::BadTruth)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for one trial.
pub fn trial_rng(seed: u64, n: usize, trial: usize) -> ChaCha20Rng {
    let s = splitmix(splitmix(splitmix(seed) ^ n as u64) ^ trial as u64);
    ChaCha20Rng::seed_from_u64(s)
}

/// Absolute error of the debiased mean-risk estimate for one group of `n`.
pub fn run_trial<R: Rng + ?Sized>(
    config: &ExperimentConfig,
    n: usize,
    rng: &mut R,
) -> Result<f64, ExperimentError> {
    let policy = config.policy()?;
    let truth = config.truth_distribution()?;
    trial_error(&policy, &truth, n, rng)
}

fn trial_error<R: Rng + ?Sized>(
    policy: &Policy,
    truth: &WeightedIndex<f64>,
    n: usize,
    rng: &mut R,
) -> Result<f64, ExperimentError> {
    if n == 0 {
        return Err(ExperimentError::EmptyGroup);
    }
    let mut counts = vec![0u64; policy.k() as usize];
    let mut true_total = 0u64;
    for _ in 0..n {
        let status = truth.sample(rng) as u8;
        true_total += status as u64;
        let reported = dp::randomize(RiskStatus(status), policy, rng)?;
        counts[reported.value() as usize] += 1;
    }
    let estimate = dp::debias(&counts, policy)?;
    Ok((estimate.expected_risk() - true_total as f64 / n as f64).abs())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub n: usize,
    pub mean_abs_error: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCurve {
    pub label: String,
    pub k: u16,
    pub exp_epsilon: ExpEpsilon,
    pub points: Vec<CurvePoint>,
}

impl ErrorCurve {
    pub fn at(&self, n: usize) -> Option<f64> {
        self.points.iter().find(|p| p.n == n).map(|p| p.mean_abs_error)
    }
}

/// Mean absolute error for every configured group size.
pub fn run_curve(config: &ExperimentConfig, label: &str) -> Result<ErrorCurve, ExperimentError> {
    let policy = config.policy()?;
    let truth = config.truth_distribution()?;
    let mut points = Vec::with_capacity(config.group_sizes.len());
    for &n in &config.group_sizes {
        let mut total = 0.0;
        for trial in 0..config.trials {
            let mut rng = trial_rng(config.seed, n, trial);
            total += trial_error(&policy, &truth, n, &mut rng)?;
        }
        points.push(CurvePoint {
            n,
            mean_abs_error: total / config.trials.max(1) as f64,
            trials: config.trials,
        });
    }
    Ok(ErrorCurve { label: label.to_string(), k: config.k, exp_epsilon: config.exp_epsilon, points })
}

/// Canned experiment families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// ε = log 3 with k = 2, 3, 4.
    Fig2,
    /// k = 2 with ε = log(5/3), log 3, log 7.
    Fig3,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
        }
    }

    pub fn configs(self, seed: u64) -> Vec<ExperimentConfig> {
        let ratio = |num, den| ExpEpsilon::Ratio { num, den };
        match self {
            Preset::Fig2 => {
                [2, 3, 4].into_iter().map(|k| ExperimentConfig::new(k, ratio(3, 1), seed)).collect()
            }
            Preset::Fig3 => [ratio(5, 3), ratio(3, 1), ratio(7, 1)]
                .into_iter()
                .map(|e| ExperimentConfig::new(2, e, seed))
                .collect(),
        }
    }
}

impl FromStr for Preset {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            other => Err(ExperimentError::UnknownPreset(other.to_string())),
        }
    }
}

pub fn run_configs(
    preset: &str,
    configs: &[ExperimentConfig],
) -> Result<Vec<ErrorCurve>, ExperimentError> {
    configs.iter().map(|c| run_curve(c, preset)).collect()
}

pub const CSV_HEADER: &str = "preset,k,epsilon_num,epsilon_den,n,mean_abs_error,trials";

pub fn write_csv<W: Write>(mut w: W, curves: &[ErrorCurve]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for curve in curves {
        let (num, den) = curve.exp_epsilon.parts();
        for p in &curve.points {
            writeln!(
                w,
                "{},{},{num},{den},{},{:.8},{}",
                curve.label, curve.k, p.n, p.mean_abs_error, p.trials
            )?;
        }
    }
    Ok(())
}

/// Least-squares `C` for `err(n) ≈ C / √n` over points with `lo <= n <= hi`.
pub fn fit_inverse_sqrt(curve: &ErrorCurve, lo: usize, hi: usize) -> f64 {
    let (num, den) = curve
        .points
        .iter()
        .filter(|p| p.n >= lo && p.n <= hi)
        .fold((0.0, 0.0), |(num, den), p| {
            let x = 1.0 / (p.n as f64).sqrt();
            (num + p.mean_abs_error * x, den + x * x)
        });
    num / den
}

/// Short text summary: error at the largest group size per curve, plus the
/// observed direction of the error as ε and k change.
pub fn summary(curves: &[ErrorCurve]) -> String {
    let mut out = String::new();
    let mut last = Vec::new();
    for c in curves {
        if let Some(p) = c.points.last() {
            let _ = writeln!(
                out,
                "{} k={} eps={} ({:.4}): mean |error| at n={} is {:.4}",
                c.label,
                c.k,
                c.exp_epsilon,
                c.exp_epsilon.epsilon(),
                p.n,
                p.mean_abs_error
            );
            last.push((c.k, c.exp_epsilon.value(), p.mean_abs_error));
        }
    }
    let same_k = last.windows(2).all(|w| w[0].0 == w[1].0);
    let same_eps = last.windows(2).all(|w| w[0].1 == w[1].1);
    if last.len() > 1 && same_k && !same_eps {
        let mut by_eps = last.clone();
        by_eps.sort_by(|a, b| a.1.total_cmp(&b.1));
        let falling = by_eps.windows(2).all(|w| w[1].2 <= w[0].2);
        let _ = writeln!(
            out,
            "note: error is {} as epsilon grows; a larger epsilon keeps the true value more often and adds less noise, so any claim that error rises with epsilon does not hold",
            if falling { "non-increasing" } else { "NOT monotone" }
        );
    }
    if last.len() > 1 && same_eps && !same_k {
        let mut by_k = last;
        by_k.sort_by_key(|x| x.0);
        let rising = by_k.windows(2).all(|w| w[1].2 > w[0].2);
        let _ = writeln!(
            out,
            "note: error {} with k",
            if rising { "increases" } else { "is NOT increasing" }
        );
    }
    out
}

/// Plain-text line plot of the curves, one marker character per curve.
pub fn render_ascii(curves: &[ErrorCurve], width: usize, height: usize) -> String {
    const MARKS: &[u8] = b"*o+x#@";
    let width = width.max(10);
    let height = height.max(5);
    let max_n = curves.iter().flat_map(|c| c.points.iter().map(|p| p.n)).max().unwrap_or(1);
    let min_n = curves.iter().flat_map(|c| c.points.iter().map(|p| p.n)).min().unwrap_or(0);
    let max_err = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.mean_abs_error))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut grid = vec![vec![b' '; width]; height];
    for (ci, c) in curves.iter().enumerate() {
        let mark = MARKS[ci % MARKS.len()];
        for p in &c.points {
            let span = (max_n - min_n).max(1) as f64;
            let col = (((p.n - min_n) as f64 / span) * (width - 1) as f64).round() as usize;
            let row = ((p.mean_abs_error / max_err) * (height - 1) as f64).round() as usize;
            grid[height - 1 - row.min(height - 1)][col.min(width - 1)] = mark;
        }
    }
    let mut out = String::new();
    for (i, row) in grid.iter().enumerate() {
        let label = if i == 0 { format!("{max_err:>8.4}") } else if i == height - 1 { format!("{:>8.4}", 0.0) } else { " ".repeat(8) };
        let _ = writeln!(out, "{label} |{}", String::from_utf8_lossy(row));
    }
    let _ = writeln!(out, "{} +{}", " ".repeat(8), "-".repeat(width));
    let _ = writeln!(out, "{}  n={min_n}{}n={max_n}", " ".repeat(8), " ".repeat(width.saturating_sub(12)));
    for (ci, c) in curves.iter().enumerate() {
        let _ = writeln!(
            out,
            "  {} {} k={} eps={}",
            MARKS[ci % MARKS.len()] as char,
            c.label,
            c.k,
            c.exp_epsilon
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(k: u16, e: ExpEpsilon) -> ExperimentConfig {
        ExperimentConfig { group_sizes: vec![1, 10, 50], trials: 20, ..ExperimentConfig::new(k, e, 1) }
    }

    #[test]
    fn no_noise_limit_has_zero_error() {
        let cfg = small(3, ExpEpsilon::Unbounded);
        let curve = run_curve(&cfg, "t").unwrap();
        assert!(curve.points.iter().all(|p| p.mean_abs_error < 1e-12));
    }

    #[test]
    fn single_user_error_support() {
        // truth 0, k = 2, e^ε = 3: estimate is -0.5 or 1.5, so the error is 0.5 or 1.5
        let cfg = ExperimentConfig {
            truth_weights: Some(vec![1.0, 0.0]),
            ..ExperimentConfig::new(2, ExpEpsilon::Ratio { num: 3, den: 1 }, 0)
        };
        for t in 0..200 {
            let e = run_trial(&cfg, 1, &mut trial_rng(0, 1, t)).unwrap();
            assert!((e - 0.5).abs() < 1e-12 || (e - 1.5).abs() < 1e-12, "{e}");
        }
        assert!(matches!(
            run_trial(&cfg, 0, &mut trial_rng(0, 0, 0)),
            Err(ExperimentError::EmptyGroup)
        ));
    }

    #[test]
    fn presets() {
        let fig2 = Preset::Fig2.configs(0);
        assert_eq!(fig2.iter().map(|c| c.k).collect::<Vec<_>>(), vec![2, 3, 4]);
        let fig3 = Preset::Fig3.configs(0);
        let keeps: Vec<f64> =
            fig3.iter().map(|c| c.policy().unwrap().keep_probability().value()).collect();
        assert_eq!(keeps, vec![0.25, 0.5, 0.75]);
        assert!(fig2.iter().all(|c| c.group_sizes.len() == 500 && c.trials == 100));
        assert!("fig9".parse::<Preset>().is_err());
    }

    #[test]
    fn csv_is_deterministic() {
        let cfg = small(2, ExpEpsilon::Ratio { num: 3, den: 1 });
        let write = || {
            let curve = run_curve(&cfg, "fig2").unwrap();
            let mut out = Vec::new();
            write_csv(&mut out, &[curve]).unwrap();
            String::from_utf8(out).unwrap()
        };
        let a = write();
        assert_eq!(a, write());
        assert!(a.starts_with("preset,k,epsilon_num,epsilon_den,n,mean_abs_error,trials\nfig2,2,3,1,1,"));
        assert_eq!(a.lines().count(), 4);
    }

    #[test]
    fn plot_and_summary_render() {
        let curves = vec![
            run_curve(&small(2, ExpEpsilon::Ratio { num: 3, den: 1 }), "fig3").unwrap(),
            run_curve(&small(2, ExpEpsilon::Ratio { num: 7, den: 1 }), "fig3").unwrap(),
        ];
        let plot = render_ascii(&curves, 40, 10);
        assert!(plot.contains('*') && plot.contains('o'));
        let s = summary(&curves);
        assert!(s.contains("as epsilon grows"));
    }
}
