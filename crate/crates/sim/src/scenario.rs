//! Scenario files (JSON).
//!
//! ```json
//! {
//!   "nodes": { "caches": 2, "exits": 3, "clients": 8 },
//!   "alpha_ms": 10,
//!   "workload": { "zipf": { "urls": 100, "exponent": 1.0, "requests": 5000 } },
//!   "seed": 7
//! }
//! ```

use std::path::Path;

use ocdn_core::MAX_ENCODINGS;
use ocdn_node::clientproxy::Mode;
use ocdn_node::exitproxy::FlashcrowdSettings;
use ocdn_node::meter::CostModel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeCounts {
    pub caches: usize,
    pub exits: usize,
    pub clients: usize,
}

impl Default for NodeCounts {
    fn default() -> Self {
        NodeCounts { caches: 2, exits: 3, clients: 8 }
    }
}

/// Which clock drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    /// Modeled latency and compute; fully reproducible.
    #[default]
    Virtual,
    /// Wall clock: latency is slept, compute takes as long as it takes.
    Native,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeSpec {
    Fixed(usize),
    /// Heavy-tailed web object sizes, see [`crate::workload::surge_size`].
    Surge,
}

impl Default for SizeSpec {
    fn default() -> Self {
        SizeSpec::Fixed(1024)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListItem {
    /// Generated when absent.
    #[serde(default)]
    pub url: Option<String>,
    pub size: usize,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "one_u32")]
    pub count: u32,
    #[serde(default = "one_u8")]
    pub encodings: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZipfSpec {
    pub urls: usize,
    /// 0 gives a uniform workload.
    pub exponent: f64,
    pub requests: usize,
    /// Each request picks one of these uniformly.
    pub modes: Vec<String>,
    pub sizes: SizeSpec,
    /// Publish popular URLs under several encodings.
    pub flatten: bool,
    pub encoding_cap: u8,
}

impl Default for ZipfSpec {
    fn default() -> Self {
        ZipfSpec {
            urls: 100,
            exponent: 1.0,
            requests: 1000,
            modes: vec![default_mode()],
            sizes: SizeSpec::default(),
            flatten: false,
            encoding_cap: MAX_ENCODINGS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workload {
    List(Vec<ListItem>),
    Zipf(ZipfSpec),
}

impl Default for Workload {
    fn default() -> Self {
        Workload::List(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub nodes: NodeCounts,
    /// Extra one-way latency on every link that touches a client.
    pub alpha_ms: f64,
    /// One-way latency on every link.
    pub base_latency_ms: f64,
    /// 0 disables serialization delay.
    pub bandwidth_mbps: f64,
    pub cost: CostModel,
    pub clock: ClockKind,
    pub flashcrowd: FlashcrowdSettings,
    pub key_lifetime_secs: u64,
    pub key_cache_ttl_secs: u64,
    pub vnodes: u32,
    /// Request `i` starts no earlier than `i * interarrival_ms`.
    pub interarrival_ms: f64,
    /// Record what every exit proxy sees, for the compromised-exit analysis.
    pub observe_exits: bool,
    pub workload: Workload,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            nodes: NodeCounts::default(),
            alpha_ms: 0.0,
            base_latency_ms: 0.5,
            bandwidth_mbps: 1000.0,
            cost: CostModel::default(),
            clock: ClockKind::Virtual,
            flashcrowd: FlashcrowdSettings::default(),
            key_lifetime_secs: ocdn_node::publisher::DEFAULT_KEY_LIFETIME_SECS,
            key_cache_ttl_secs: ocdn_node::keydist::DEFAULT_KEY_CACHE_TTL_SECS,
            vnodes: ocdn_core::ring::DEFAULT_VNODES,
            interarrival_ms: 0.0,
            observe_exits: false,
            workload: Workload::default(),
            seed: 0,
        }
    }
}

fn default_mode() -> String {
    "direct".into()
}

fn one_u32() -> u32 {
    1
}

fn one_u8() -> u8 {
    1
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let n = &self.nodes;
        if n.caches == 0 || n.exits == 0 || n.clients == 0 {
            return bad("every role needs at least one node".into());
        }
        if n.caches > 250 || n.exits > 250 || n.clients > 250 * 250 {
            return bad("too many nodes for the address plan".into());
        }
        for (name, v) in [
            ("alpha_ms", self.alpha_ms),
            ("base_latency_ms", self.base_latency_ms),
            ("bandwidth_mbps", self.bandwidth_mbps),
            ("interarrival_ms", self.interarrival_ms),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        if self.vnodes == 0 {
            return bad("vnodes must be positive".into());
        }
        let check_mode = |m: &str| -> Result<(), ScenarioError> {
            let mode: Mode = m.parse().map_err(ScenarioError::Invalid)?;
            if mode.peers_needed() >= n.clients {
                return bad(format!("mode {m} needs {} other clients", mode.peers_needed()));
            }
            Ok(())
        };
        match &self.workload {
            Workload::List(items) => {
                for it in items {
                    check_mode(&it.mode)?;
                    if it.encodings == 0 || it.encodings > MAX_ENCODINGS {
                        return bad(format!("encodings must be in 1..={MAX_ENCODINGS}"));
                    }
                    if let Some(u) = &it.url {
                        ocdn_core::CanonicalUrl::parse(u).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                    }
                }
            }
            Workload::Zipf(z) => {
                if z.urls == 0 {
                    return bad("zipf.urls must be positive".into());
                }
                if !z.exponent.is_finite() || z.exponent < 0.0 {
                    return bad("zipf.exponent must be non-negative".into());
                }
                if z.modes.is_empty() {
                    return bad("zipf.modes is empty".into());
                }
                for m in &z.modes {
                    check_mode(m)?;
                }
                if z.encoding_cap == 0 || z.encoding_cap > MAX_ENCODINGS {
                    return bad(format!("zipf.encoding_cap must be in 1..={MAX_ENCODINGS}"));
                }
            }
        }
        Ok(())
    }
}
