//! Command-line front end. Each subcommand parses its inputs, calls into the
//! library and formats the result.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 verification failure,
//! 3 rate-limit rejection, 4 I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rand::rngs::OsRng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::admission::{self, AdmissionMode, RiskCap, ShopConfig};
use crate::aggregate::{self, Event, Window};
use crate::config::{Config, ConfigError};
use crate::dp::{ExpEpsilon, Policy, PolicyId, RiskStatus};
use crate::experiments::{self, Preset};
use crate::heavyhitter::{self, HeavyHitterServer, SketchState};
use crate::ratelimit::{self, Decision, UsageLedger};
use crate::token::{self, IssuerKey, SignatureScheme, SignedToken};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_RATE_LIMIT: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "healthtoken", version, about = "Differentially private health tokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an issuer key pair (PKCS#8 and SPKI PEM files).
    Keygen {
        #[arg(long, default_value = "p256")]
        scheme: String,
        #[arg(long)]
        secret: PathBuf,
        #[arg(long)]
        public: PathBuf,
        /// Deterministic key for testing; omit to use the OS generator.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Issue a signed token for a true risk status and print its text form.
    Issue {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        status: u8,
        #[arg(long)]
        now: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify tokens (text form, one per line on stdin or via --token).
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Require tokens to carry this policy id.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        token: Option<String>,
        #[arg(long)]
        now: Option<u64>,
        /// Enforce the per-epoch use limit against this event log and append
        /// accepted tokens to it.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Debias event logs into frequencies, mean risk and total risk (CSV).
    Aggregate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: String,
        /// RFC3339 start of the time window (inclusive).
        #[arg(long)]
        from: Option<String>,
        /// RFC3339 end of the time window (inclusive).
        #[arg(long)]
        to: Option<String>,
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Print TID hashes used more than --threshold times within an epoch.
    AuditLedger {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 0)]
        threshold: u32,
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Discrete-event simulation of threshold admission (CSV trace).
    SimulateShop {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long = "R")]
        cap: String,
        #[arg(long, default_value_t = 2)]
        k: u16,
        #[arg(long, default_value = "log(3)")]
        epsilon: String,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Central heavy-hitter server speaking the line protocol on stdin/stdout.
    HhServer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, requires = "config")]
        policy: Option<String>,
        #[arg(long, default_value_t = 16)]
        bits: u8,
        #[arg(long, default_value_t = 0.02)]
        tau: f64,
        /// Loaded at start if present, written at end of input.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Provider side: answer a challenge for a token, or check a token
    /// against a published list.
    HhReport {
        #[arg(long, default_value_t = 16)]
        bits: u8,
        #[arg(long)]
        token: Option<String>,
        /// `<nonce hex>,<r hex>` as returned by `CHALLENGE?`.
        #[arg(long, conflicts_with = "published")]
        challenge: Option<String>,
        /// Comma-separated hex values as returned by `PUBLISHED?`.
        #[arg(long)]
        published: Option<String>,
    },
    /// Monte Carlo error curves.
    Experiment {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 500)]
        max_n: usize,
        /// Write a plain-text plot of the curves here.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    fn verify(message: impl Into<String>) -> Self {
        CliError { code: EXIT_VERIFY, message: message.into() }
    }

    fn io(context: &str, e: impl std::fmt::Display) -> Self {
        CliError { code: EXIT_IO, message: format!("{context}: {e}") }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => EXIT_IO,
            _ => EXIT_USAGE,
        };
        CliError { code, message: e.to_string() }
    }
}

type CliResult = Result<i32, CliError>;

/// Standard streams, swappable for tests.
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(io.stdout, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(io.stderr, "{rendered}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, io) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(command: Command, io: &mut Io<'_>) -> CliResult {
    match command {
        Command::Keygen { scheme, secret, public, seed } => keygen(&scheme, &secret, &public, seed, io),
        Command::Issue { config, policy, key, status, now, seed } => {
            issue(&config, &policy, &key, status, now, seed, io)
        }
        Command::Verify { config, policy, token, now, log } => {
            verify(&config, policy.as_deref(), token, now, log.as_deref(), io)
        }
        Command::Aggregate { config, policy, from, to, logs } => {
            aggregate_logs(&config, &policy, from.as_deref(), to.as_deref(), &logs, io)
        }
        Command::AuditLedger { config, policy, threshold, logs } => {
            audit(&config, &policy, threshold, &logs, io)
        }
        Command::SimulateShop { lambda, mu, cap, k, epsilon, batch, seed, duration, out } => {
            simulate_shop(lambda, mu, &cap, k, &epsilon, batch, seed, duration, out.as_deref(), io)
        }
        Command::HhServer { config, policy, bits, tau, snapshot, seed } => {
            hh_server(config.as_deref(), policy.as_deref(), bits, tau, snapshot.as_deref(), seed, io)
        }
        Command::HhReport { bits, token, challenge, published } => {
            hh_report(bits, token, challenge.as_deref(), published.as_deref(), io)
        }
        Command::Experiment { preset, seed, out, trials, max_n, plot } => {
            experiment(&preset, seed, out.as_deref(), trials, max_n, plot.as_deref(), io)
        }
    }
}

fn now_or(now: Option<u64>) -> u64 {
    now.unwrap_or_else(|| {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    })
}

fn parse_policy_id(s: &str) -> Result<PolicyId, CliError> {
    s.parse().map_err(|_| CliError::usage(format!("policy id {s:?} is not 32 hex characters")))
}

fn lookup<'c>(config: &'c Config, id: &str) -> Result<&'c Policy, CliError> {
    let id = parse_policy_id(id)?;
    config.policy(&id).ok_or_else(|| CliError::usage(format!("policy {id} is not in the config")))
}

fn write_out(io: &mut Io<'_>, text: &str) -> Result<(), CliError> {
    io.stdout.write_all(text.as_bytes()).map_err(|e| CliError::io("stdout", e))
}

fn keygen(scheme: &str, secret: &Path, public: &Path, seed: Option<u64>, io: &mut Io<'_>) -> CliResult {
    let scheme: SignatureScheme = scheme.parse().map_err(|e: token::TokenError| CliError::usage(e.to_string()))?;
    let key = match seed {
        Some(s) => IssuerKey::generate(scheme, &mut ChaCha20Rng::seed_from_u64(s)),
        None => IssuerKey::generate(scheme, &mut OsRng),
    };
    let sk = key.to_pkcs8_pem().map_err(|e| CliError::usage(e.to_string()))?;
    let pk = key.public_key().to_spki_pem().map_err(|e| CliError::usage(e.to_string()))?;
    fs::write(secret, sk).map_err(|e| CliError::io(&secret.display().to_string(), e))?;
    fs::write(public, pk).map_err(|e| CliError::io(&public.display().to_string(), e))?;
    write_out(io, &format!("{scheme},{}\n", key.key_id()))?;
    Ok(EXIT_OK)
}

fn issue(
    config: &Path,
    policy: &str,
    key: &Path,
    status: u8,
    now: Option<u64>,
    seed: Option<u64>,
    io: &mut Io<'_>,
) -> CliResult {
    let config = Config::load(config)?;
    let policy = lookup(&config, policy)?;
    let pem = fs::read_to_string(key).map_err(|e| CliError::io(&key.display().to_string(), e))?;
    let key = IssuerKey::from_pkcs8_pem(&pem).map_err(|e| CliError::usage(e.to_string()))?;
    let now = now_or(now);
    let result = match seed {
        Some(s) => token::issue(RiskStatus(status), policy, &key, now, &mut ChaCha20Rng::seed_from_u64(s)),
        None => token::issue(RiskStatus(status), policy, &key, now, &mut OsRng),
    };
    let (signed, truth) = result.map_err(|e| CliError::usage(e.to_string()))?;
    write_out(io, &format!("{}\n", signed.encode_text()))?;
    let _ = writeln!(io.stderr, "true status: {}", truth.value());
    Ok(EXIT_OK)
}

fn verify(
    config: &Path,
    policy: Option<&str>,
    token_text: Option<String>,
    now: Option<u64>,
    log: Option<&Path>,
    io: &mut Io<'_>,
) -> CliResult {
    let config = Config::load(config)?;
    let required = policy.map(parse_policy_id).transpose()?;
    let now = now_or(now);
    let tokens: Vec<String> = match token_text {
        Some(t) => vec![t],
        None => {
            let mut buf = String::new();
            io.stdin.read_to_string(&mut buf).map_err(|e| CliError::io("stdin", e))?;
            buf.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
        }
    };
    if tokens.is_empty() {
        return Err(CliError::verify("no token given"));
    }
    let mut ledgers: std::collections::HashMap<PolicyId, UsageLedger> = Default::default();
    let events = match log {
        Some(path) if path.exists() => {
            aggregate::read_event_log(path).map_err(|e| CliError::io(&path.display().to_string(), e))?
        }
        _ => Vec::new(),
    };
    let mut code = EXIT_OK;
    for text in tokens {
        let outcome = token::verify_text(&text, &config.trust, &config.registry, now);
        let (payload, tid) = match outcome {
            Ok(v) => v,
            Err(e) => {
                let _ = writeln!(io.stderr, "rejected: {e}");
                if code == EXIT_OK {
                    code = EXIT_VERIFY;
                }
                continue;
            }
        };
        if let Some(required) = required {
            if payload.policy_id != required {
                let _ = writeln!(io.stderr, "rejected: token is for policy {}", payload.policy_id);
                if code == EXIT_OK {
                    code = EXIT_VERIFY;
                }
                continue;
            }
        }
        let tid_hash = tid.hash();
        if let Some(path) = log {
            let policy = config.policy(&payload.policy_id).expect("verified above");
            let ledger = ledgers
                .entry(payload.policy_id)
                .or_insert_with(|| UsageLedger::replay(policy, &events, now));
            match ledger.check_and_record(&tid_hash, now) {
                Decision::Accept { .. } => {
                    let event = Event { at: now, token_value: payload.token_value, tid_hash };
                    aggregate::append_event(path, &event)
                        .map_err(|e| CliError::io(&path.display().to_string(), e))?;
                }
                Decision::Reject(reason) => {
                    let _ = writeln!(io.stderr, "rejected: rate limit ({reason:?})");
                    if code == EXIT_OK {
                        code = EXIT_RATE_LIMIT;
                    }
                    continue;
                }
            }
        }
        write_out(io, &format!("{},{}\n", payload.token_value, tid_hash))?;
    }
    Ok(code)
}

fn parse_window(from: Option<&str>, to: Option<&str>) -> Result<Option<Window>, CliError> {
    if from.is_none() && to.is_none() {
        return Ok(None);
    }
    let start = from.map(aggregate::parse_timestamp).transpose().map_err(CliError::usage)?.unwrap_or(0);
    let end = to.map(aggregate::parse_timestamp).transpose().map_err(CliError::usage)?.unwrap_or(u64::MAX);
    Ok(Some(Window { start, end }))
}

fn read_logs(logs: &[PathBuf]) -> Result<Vec<Event>, CliError> {
    let mut events = Vec::new();
    for path in logs {
        let mut more = aggregate::read_event_log(path).map_err(|e| match e {
            aggregate::AggregateError::Io(e) => CliError::io(&path.display().to_string(), e),
            other => CliError::usage(format!("{}: {other}", path.display())),
        })?;
        events.append(&mut more);
    }
    Ok(events)
}

fn aggregate_logs(
    config: &Path,
    policy: &str,
    from: Option<&str>,
    to: Option<&str>,
    logs: &[PathBuf],
    io: &mut Io<'_>,
) -> CliResult {
    let config = Config::load(config)?;
    let policy = lookup(&config, policy)?;
    let window = parse_window(from, to)?;
    let events = read_logs(logs)?;
    let tally = aggregate::tally_events(policy, &events, window).map_err(|e| CliError::usage(e.to_string()))?;
    let report = aggregate::aggregate(&tally, policy).map_err(|e| CliError::usage(e.to_string()))?;
    let mut header = vec!["n".to_string()];
    header.extend((0..policy.k()).map(|i| format!("f{i}")));
    header.extend(["expected_risk".to_string(), "risk_sum".to_string()]);
    let mut row = vec![report.estimate.n.to_string()];
    row.extend(report.estimate.per_level.iter().map(|f| format!("{f:.6}")));
    row.push(format!("{:.6}", report.expected_risk));
    row.push(format!("{:.6}", report.risk_sum));
    write_out(io, &format!("{}\n{}\n", header.join(","), row.join(",")))?;
    Ok(EXIT_OK)
}

fn audit(config: &Path, policy: &str, threshold: u32, logs: &[PathBuf], io: &mut Io<'_>) -> CliResult {
    let config = Config::load(config)?;
    let policy = lookup(&config, policy)?;
    let events = read_logs(logs)?;
    let usage = ratelimit::usage_by_epoch(&events, policy.epoch_seconds());
    let mut out = String::from("epoch_start,tid_hash,count\n");
    for ((epoch, tid), count) in usage {
        if count > threshold {
            let start = aggregate::format_timestamp(epoch * policy.epoch_seconds());
            out.push_str(&format!("{start},{tid},{count}\n"));
        }
    }
    write_out(io, &out)?;
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn simulate_shop(
    lambda: f64,
    mu: f64,
    cap: &str,
    k: u16,
    epsilon: &str,
    batch: usize,
    seed: u64,
    duration: f64,
    out: Option<&Path>,
    io: &mut Io<'_>,
) -> CliResult {
    let cap: RiskCap = cap.parse().map_err(|_| CliError::usage(format!("bad --R {cap:?}")))?;
    let exp_epsilon: ExpEpsilon = epsilon.parse().map_err(|e| CliError::usage(format!("{e}")))?;
    let policy = Policy::new(PolicyId([0; 16]), k, exp_epsilon).map_err(|e| CliError::usage(e.to_string()))?;
    let mode = if batch == 1 { AdmissionMode::Single } else { AdmissionMode::Batch(batch) };
    let config = ShopConfig { arrival_rate: lambda, mean_dwell: mu, cap, mode, duration, truth_weights: None };
    let trace = admission::simulate(&config, &policy, &mut ChaCha20Rng::seed_from_u64(seed))
        .map_err(|e| CliError::usage(e.to_string()))?;
    let mut buf = Vec::new();
    admission::write_trace(&mut buf, &trace).map_err(|e| CliError::io("trace", e))?;
    match out {
        Some(path) => fs::write(path, buf).map_err(|e| CliError::io(&path.display().to_string(), e))?,
        None => io.stdout.write_all(&buf).map_err(|e| CliError::io("stdout", e))?,
    }
    Ok(EXIT_OK)
}

fn hh_server(
    config: Option<&Path>,
    policy: Option<&str>,
    bits: u8,
    tau: f64,
    snapshot: Option<&Path>,
    seed: Option<u64>,
    io: &mut Io<'_>,
) -> CliResult {
    let (bits, tau) = match (config, policy) {
        (Some(c), Some(p)) => {
            let config = Config::load(c)?;
            let policy = lookup(&config, p)?;
            (policy.sketch_bits(), policy.tau())
        }
        _ => (bits, tau),
    };
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CliError::usage(format!("tau must lie in (0, 1), got {tau}")));
    }
    let state = match snapshot {
        Some(path) if path.exists() => {
            let bytes = fs::read(path).map_err(|e| CliError::io(&path.display().to_string(), e))?;
            let state = SketchState::read_snapshot(&bytes[..]).map_err(|e| CliError::usage(e.to_string()))?;
            if state.bits() != bits {
                return Err(CliError::usage(format!(
                    "snapshot has width {}, expected {bits}",
                    state.bits()
                )));
            }
            state
        }
        _ => SketchState::new(bits).map_err(|e| CliError::usage(e.to_string()))?,
    };
    let rng = match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_rng(OsRng).map_err(|e| CliError::io("rng", e))?,
    };
    let mut server = HeavyHitterServer::from_state(state, tau, rng);
    server.serve(&mut *io.stdin, &mut *io.stdout).map_err(|e| CliError::io("protocol", e))?;
    if let Some(path) = snapshot {
        let mut buf = Vec::new();
        server.state().write_snapshot(&mut buf).map_err(|e| CliError::io("snapshot", e))?;
        fs::write(path, buf).map_err(|e| CliError::io(&path.display().to_string(), e))?;
    }
    Ok(EXIT_OK)
}

fn hh_report(
    bits: u8,
    token_text: Option<String>,
    challenge: Option<&str>,
    published: Option<&str>,
    io: &mut Io<'_>,
) -> CliResult {
    if !(1..=crate::dp::MAX_SKETCH_BITS).contains(&bits) {
        return Err(CliError::usage(format!("bits must be in 1..=24, got {bits}")));
    }
    let text = match token_text {
        Some(t) => t,
        None => {
            let mut buf = String::new();
            io.stdin.read_line(&mut buf).map_err(|e| CliError::io("stdin", e))?;
            buf
        }
    };
    let token = SignedToken::decode_text(&text).map_err(|e| CliError::verify(e.to_string()))?;
    let tid = token.tid();
    if let Some(line) = challenge {
        let (nonce, c) = heavyhitter::parse_challenge_line(line, bits)
            .ok_or_else(|| CliError::usage(format!("bad challenge {line:?}")))?;
        let report = heavyhitter::client_report(&tid, c);
        write_out(io, &format!("REPORT {nonce:016x},{}\n", report.bit as u8))?;
        return Ok(EXIT_OK);
    }
    if let Some(list) = published {
        let set = heavyhitter::parse_published_line(list)
            .ok_or_else(|| CliError::usage(format!("bad published list {list:?}")))?;
        let flagged = heavyhitter::check_published(&tid, &set, bits);
        write_out(io, &format!("{flagged}\n"))?;
        return Ok(EXIT_OK);
    }
    Err(CliError::usage("one of --challenge or --published is required"))
}

fn experiment(
    preset: &str,
    seed: u64,
    out: Option<&Path>,
    trials: usize,
    max_n: usize,
    plot: Option<&Path>,
    io: &mut Io<'_>,
) -> CliResult {
    let preset: Preset = preset.parse().map_err(|e: experiments::ExperimentError| CliError::usage(e.to_string()))?;
    if trials == 0 || max_n == 0 {
        return Err(CliError::usage("--trials and --max-n must be positive"));
    }
    let configs: Vec<_> = preset
        .configs(seed)
        .into_iter()
        .map(|c| experiments::ExperimentConfig { trials, group_sizes: (1..=max_n).collect(), ..c })
        .collect();
    let curves = experiments::run_configs(preset.name(), &configs).map_err(|e| CliError::usage(e.to_string()))?;
    let mut buf = Vec::new();
    experiments::write_csv(&mut buf, &curves).map_err(|e| CliError::io("csv", e))?;
    match out {
        Some(path) => fs::write(path, buf).map_err(|e| CliError::io(&path.display().to_string(), e))?,
        None => io.stdout.write_all(&buf).map_err(|e| CliError::io("stdout", e))?,
    }
    if let Some(path) = plot {
        fs::write(path, experiments::render_ascii(&curves, 72, 20))
            .map_err(|e| CliError::io(&path.display().to_string(), e))?;
    }
    let _ = write!(io.stderr, "{}", experiments::summary(&curves));
    Ok(EXIT_OK)
}

/// Run with the process's real streams.
pub fn main_with_std_io() -> i32 {
    let stdin = io::stdin();
    let mut stdin = stdin.lock();
    let stdout = io::stdout();
    let mut stdout = stdout.lock();
    let stderr = io::stderr();
    let mut stderr = stderr.lock();
    let mut io = Io { stdin: &mut stdin, stdout: &mut stdout, stderr: &mut stderr };
    run(std::env::args_os(), &mut io)
}
