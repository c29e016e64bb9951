//! Shared configuration file.
//!
//! ```toml
//! [[policy]]
//! id = "00112233445566778899aabbccddeeff"
//! k = 2
//! epsilon = "log(3)"      # log(a), log(a/b), a decimal, or "inf"
//! epoch_seconds = 86400   # optional, default 86400
//! rate_limit = 3          # optional, default 3
//! sketch_bits = 16        # optional, default 16
//! tau = 0.02              # optional, default 0.02
//!
//! [trust]
//! issuer_keys = ["issuer.pub.pem"]
//!
//! [paths]
//! event_log = "events.log"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Trusted key files must exist when the config is loaded.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::dp::{DpError, ExpEpsilon, Policy, PolicyId, PolicyParams};
use crate::token::{IssuerPublicKey, PolicyRegistry, TokenError, TrustStore};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("policy {id}: {source}")]
    Policy { id: String, source: DpError },
    #[error("policy id {0:?} is not 32 hex characters")]
    BadPolicyId(String),
    #[error("duplicate policy id {0}")]
    DuplicatePolicy(PolicyId),
    #[error("trusted key {path}: {source}")]
    Key { path: PathBuf, source: TokenError },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    policy: Vec<RawPolicy>,
    #[serde(default)]
    trust: RawTrust,
    #[serde(default)]
    paths: RawPaths,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    id: String,
    k: u16,
    epsilon: String,
    epoch_seconds: Option<u64>,
    rate_limit: Option<u32>,
    sketch_bits: Option<u8>,
    tau: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrust {
    #[serde(default)]
    issuer_keys: Vec<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPaths {
    event_log: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Config {
    pub registry: PolicyRegistry,
    pub trust: TrustStore,
    pub event_log: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Config, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut registry = PolicyRegistry::new();
        let mut seen = HashSet::new();
        for p in raw.policy {
            let id: PolicyId = p.id.parse().map_err(|_| ConfigError::BadPolicyId(p.id.clone()))?;
            if !seen.insert(id) {
                return Err(ConfigError::DuplicatePolicy(id));
            }
            let wrap = |source| ConfigError::Policy { id: p.id.clone(), source };
            let exp_epsilon: ExpEpsilon = p.epsilon.parse().map_err(wrap)?;
            let mut params = PolicyParams::new(id, p.k, exp_epsilon);
            if let Some(v) = p.epoch_seconds {
                params.epoch_seconds = v;
            }
            if let Some(v) = p.rate_limit {
                params.rate_limit = v;
            }
            if let Some(v) = p.sketch_bits {
                params.sketch_bits = v;
            }
            if let Some(v) = p.tau {
                params.tau = v;
            }
            registry.insert(Policy::try_from(params).map_err(wrap)?);
        }
        let mut trust = TrustStore::new();
        for key in raw.trust.issuer_keys {
            let path = base.join(key);
            let pem = std::fs::read_to_string(&path)
                .map_err(|source| ConfigError::Io { path: path.clone(), source })?;
            let key = IssuerPublicKey::from_spki_pem(&pem)
                .map_err(|source| ConfigError::Key { path: path.clone(), source })?;
            trust.insert(key);
        }
        Ok(Config { registry, trust, event_log: raw.paths.event_log.map(|p| base.join(p)) })
    }

    pub fn policy(&self, id: &PolicyId) -> Option<&Policy> {
        self.registry.get(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::{IssuerKey, SignatureScheme};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn parses_full_config() {
        let dir = tempfile::tempdir().unwrap();
        let key = IssuerKey::generate(SignatureScheme::P256, &mut ChaCha20Rng::seed_from_u64(1));
        std::fs::write(dir.path().join("issuer.pub.pem"), key.public_key().to_spki_pem().unwrap())
            .unwrap();
        let text = r#"
            [[policy]]
            id = "00112233445566778899aabbccddeeff"
            k = 3
            epsilon = "log(5/3)"
            rate_limit = 5

            [[policy]]
            id = "ffeeddccbbaa99887766554433221100"
            k = 2
            epsilon = "1.0986122886681098"
            sketch_bits = 12
            tau = 0.1

            [trust]
            issuer_keys = ["issuer.pub.pem"]

            [paths]
            event_log = "events.log"
        "#;
        let cfg = Config::parse(text, dir.path()).unwrap();
        let a = cfg.policy(&"00112233445566778899aabbccddeeff".parse().unwrap()).unwrap();
        assert_eq!(a.k(), 3);
        assert_eq!(a.rate_limit(), 5);
        assert_eq!(a.epoch_seconds(), 86_400);
        let b = cfg.policy(&"ffeeddccbbaa99887766554433221100".parse().unwrap()).unwrap();
        assert_eq!(b.exp_epsilon(), ExpEpsilon::Ratio { num: 3, den: 1 });
        assert_eq!(b.sketch_bits(), 12);
        assert!(cfg.trust.get(&key.key_id()).is_some());
        assert_eq!(cfg.event_log.unwrap(), dir.path().join("events.log"));
    }

    #[test]
    fn rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        let dup = r#"
            [[policy]]
            id = "00112233445566778899aabbccddeeff"
            k = 2
            epsilon = "log(3)"
            [[policy]]
            id = "00112233445566778899aabbccddeeff"
            k = 2
            epsilon = "log(3)"
        "#;
        assert!(matches!(Config::parse(dup, dir.path()), Err(ConfigError::DuplicatePolicy(_))));
        let missing_key = "[trust]\nissuer_keys = [\"nope.pem\"]\n";
        assert!(matches!(Config::parse(missing_key, dir.path()), Err(ConfigError::Io { .. })));
        let bad_k = "[[policy]]\nid = \"00112233445566778899aabbccddeeff\"\nk = 1\nepsilon = \"log(3)\"\n";
        assert!(matches!(Config::parse(bad_k, dir.path()), Err(ConfigError::Policy { .. })));
        let bad_id = "[[policy]]\nid = \"0011\"\nk = 2\nepsilon = \"log(3)\"\n";
        assert!(matches!(Config::parse(bad_id, dir.path()), Err(ConfigError::BadPolicyId(_))));
        assert!(matches!(Config::parse("[bogus]\n", dir.path()), Err(ConfigError::Syntax(_))));
    }
}
