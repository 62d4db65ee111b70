//! Node configuration file (TOML).
//!
//! ```toml
//! listen = "0.0.0.0:8443"
//! address = "127.0.0.1:8443"
//! roster = "ring.roster"
//! authority_pub = "authority.pub"
//! keypair = "exit.key"
//!
//! [exit]
//! caches = ["127.0.0.1:8080"]
//! keydist = [{ prefix = "http://a.example/", address = "127.0.0.1:5353" }]
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exitproxy::FlashcrowdSettings;
use crate::keydist::DEFAULT_KEY_CACHE_TTL_SECS;
use crate::membership::DEFAULT_PEER_WINDOW_SECS;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Cache,
    Exit,
    Keydist,
    Client,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    /// Socket address to bind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<String>,
    /// Address other nodes use for us; defaults to `listen`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roster: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authority_pub: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypair: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit: Option<ExitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keydist: Option<KeydistConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client: Option<ClientConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub capacity: usize,
    pub strict_allowlist: bool,
    /// Origin public key files.
    pub trusted_origins: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_file: Option<PathBuf>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { capacity: 100_000, strict_allowlist: false, trusted_origins: Vec::new(), log_file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeydistEntry {
    pub prefix: String,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExitConfig {
    pub caches: Vec<String>,
    pub keydist: Vec<KeydistEntry>,
    pub key_cache_ttl_secs: u64,
    pub flashcrowd: FlashcrowdSettings,
}

impl Default for ExitConfig {
    fn default() -> Self {
        ExitConfig {
            caches: Vec::new(),
            keydist: Vec::new(),
            key_cache_ttl_secs: DEFAULT_KEY_CACHE_TTL_SECS,
            flashcrowd: FlashcrowdSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeydistConfig {
    /// Origin state directory written by `ocdn publish`.
    pub origin_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub mode: String,
    /// Seed peers to gossip with.
    pub peers: Vec<String>,
    pub wait_secs: u64,
    pub peer_window_secs: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            mode: "direct".into(),
            peers: Vec::new(),
            wait_secs: 30,
            peer_window_secs: DEFAULT_PEER_WINDOW_SECS,
        }
    }
}

impl NodeConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: NodeConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.roster, &mut self.authority_pub, &mut self.keypair].into_iter().flatten() {
            fix(p);
        }
        if let Some(c) = &mut self.cache {
            c.trusted_origins.iter_mut().for_each(fix);
            if let Some(l) = &mut c.log_file {
                fix(l);
            }
        }
        if let Some(d) = self.keydist.as_mut().and_then(|k| k.origin_dir.as_mut()) {
            fix(d);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for addr in self.listen.iter().chain(self.address.iter()) {
            if addr.parse::<std::net::SocketAddr>().is_err() && !addr.contains(':') {
                return Err(ConfigError::Invalid(format!("address {addr:?} needs host:port")));
            }
        }
        if let Some(c) = &self.cache {
            if c.capacity == 0 {
                return Err(ConfigError::Invalid("cache.capacity must be positive".into()));
            }
        }
        if let Some(e) = &self.exit {
            let f = &e.flashcrowd;
            if !(f.threshold_per_sec > 0.0 && f.window_secs > 0.0 && f.ttl_secs >= 0.0 && f.ttl_secs.is_finite()) {
                return Err(ConfigError::Invalid("exit.flashcrowd values must be positive".into()));
            }
        }
        if let Some(c) = &self.client {
            c.mode.parse::<crate::clientproxy::Mode>().map_err(ConfigError::Invalid)?;
        }
        Ok(())
    }

    /// `address`, else `listen`.
    pub fn public_address(&self) -> Option<&str> {
        self.address.as_deref().or(self.listen.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
role = "exit"
listen = "0.0.0.0:8443"
address = "127.0.0.1:8443"
roster = "ring.roster"
authority_pub = "authority.pub"
keypair = "exit.key"

[exit]
caches = ["127.0.0.1:8080", "127.0.0.1:8081"]
keydist = [{ prefix = "http://a.example/", address = "127.0.0.1:5353" }]
key_cache_ttl_secs = 60

[exit.flashcrowd]
threshold_per_sec = 20.0

[client]
mode = "routed:2"
peers = ["127.0.0.1:7001"]
"#;

    #[test]
    fn parse_and_defaults() {
        let c = NodeConfig::parse(FULL).unwrap();
        let e = c.exit.as_ref().unwrap();
        assert_eq!(e.caches.len(), 2);
        assert_eq!(e.keydist[0].address, "127.0.0.1:5353");
        assert_eq!(e.flashcrowd.threshold_per_sec, 20.0);
        assert_eq!(e.flashcrowd.window_secs, 10.0);
        assert_eq!(c.client.as_ref().unwrap().wait_secs, 30);
        assert_eq!(c.public_address(), Some("127.0.0.1:8443"));
    }

    #[test]
    fn round_trip_is_idempotent() {
        let once = NodeConfig::parse(FULL).unwrap();
        let text = once.to_toml();
        let twice = NodeConfig::parse(&text).unwrap();
        assert_eq!(once, twice);
        assert_eq!(text, twice.to_toml());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(NodeConfig::parse("bogus = 1").is_err());
        assert!(NodeConfig::parse("[exit]\ncaches = []\nextra = 2").is_err());
        assert!(NodeConfig::parse("[client]\nmode = \"teleport\"").is_err());
        assert!(NodeConfig::parse("[cache]\ncapacity = 0").is_err());
        assert!(NodeConfig::parse("listen = \"nohost\"").is_err());
        assert!(NodeConfig::parse("[exit.flashcrowd]\nthreshold_per_sec = nan").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("node.toml");
        fs::write(&p, "roster = \"r.roster\"\nkeypair = \"/abs/k\"\n[keydist]\norigin_dir = \"origin\"\n").unwrap();
        let c = NodeConfig::load(&p).unwrap();
        assert_eq!(c.roster.unwrap(), dir.path().join("r.roster"));
        assert_eq!(c.keypair.unwrap(), PathBuf::from("/abs/k"));
        assert_eq!(c.keydist.unwrap().origin_dir.unwrap(), dir.path().join("origin"));
    }
}
