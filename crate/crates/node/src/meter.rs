//! Per-operation timing. Each metered call records its native duration and
//! charges a modeled cost to the node's clock, so virtual-time runs stay
//! deterministic while the native numbers are still reported.

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    /// Client maps a URL to its exit proxy through the ring.
    ExitLookup,
    /// Exit derives the obfuscated id.
    HmacDerivation,
    /// Exit opens the content envelope with the shared key.
    SharedKeyDecrypt,
    /// Exit encrypts the response under the session key.
    SessionKeyEncrypt,
    /// Client opens the response.
    ClientDecrypt,
    SessionKeySeal,
    SessionKeyUnseal,
    UrlEncrypt,
    UrlDecrypt,
    SharedKeySeal,
    SharedKeyUnseal,
    ContentSeal,
    UpdateSign,
    UpdateVerify,
}

impl Op {
    pub const ALL: [Op; 14] = [
        Op::ExitLookup,
        Op::HmacDerivation,
        Op::SharedKeyDecrypt,
        Op::SessionKeyEncrypt,
        Op::ClientDecrypt,
        Op::SessionKeySeal,
        Op::SessionKeyUnseal,
        Op::UrlEncrypt,
        Op::UrlDecrypt,
        Op::SharedKeySeal,
        Op::SharedKeyUnseal,
        Op::ContentSeal,
        Op::UpdateSign,
        Op::UpdateVerify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::ExitLookup => "exit_lookup",
            Op::HmacDerivation => "hmac_derivation",
            Op::SharedKeyDecrypt => "shared_key_decrypt",
            Op::SessionKeyEncrypt => "session_key_encrypt",
            Op::ClientDecrypt => "client_decrypt",
            Op::SessionKeySeal => "session_key_seal",
            Op::SessionKeyUnseal => "session_key_unseal",
            Op::UrlEncrypt => "url_encrypt",
            Op::UrlDecrypt => "url_decrypt",
            Op::SharedKeySeal => "shared_key_seal",
            Op::SharedKeyUnseal => "shared_key_unseal",
            Op::ContentSeal => "content_seal",
            Op::UpdateSign => "update_sign",
            Op::UpdateVerify => "update_verify",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Modeled compute cost in milliseconds: `fixed + bytes * per_byte`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub rsa_private_ms: f64,
    pub rsa_public_ms: f64,
    pub hmac_ms: f64,
    pub ring_lookup_ms: f64,
    pub symmetric_fixed_ms: f64,
    /// AES-GCM throughput, in milliseconds per byte.
    pub symmetric_ms_per_byte: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            rsa_private_ms: 1.5,
            rsa_public_ms: 0.05,
            hmac_ms: 0.002,
            ring_lookup_ms: 0.01,
            symmetric_fixed_ms: 0.002,
            // 500 MB/s
            symmetric_ms_per_byte: 1.0 / 500_000.0,
        }
    }
}

impl CostModel {
    pub fn free() -> Self {
        CostModel {
            rsa_private_ms: 0.0,
            rsa_public_ms: 0.0,
            hmac_ms: 0.0,
            ring_lookup_ms: 0.0,
            symmetric_fixed_ms: 0.0,
            symmetric_ms_per_byte: 0.0,
        }
    }

    pub fn cost_ms(&self, op: Op, bytes: usize) -> f64 {
        let sym = self.symmetric_fixed_ms + bytes as f64 * self.symmetric_ms_per_byte;
        match op {
            Op::ExitLookup => self.ring_lookup_ms,
            Op::HmacDerivation => self.hmac_ms,
            Op::SessionKeySeal | Op::SharedKeySeal | Op::UpdateVerify => self.rsa_public_ms,
            Op::SessionKeyUnseal | Op::SharedKeyUnseal | Op::UpdateSign => self.rsa_private_ms,
            Op::SharedKeyDecrypt
            | Op::SessionKeyEncrypt
            | Op::ClientDecrypt
            | Op::UrlEncrypt
            | Op::UrlDecrypt
            | Op::ContentSeal => sym,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSample {
    pub node: String,
    pub op: Op,
    pub bytes: usize,
    pub native_us: f64,
    pub modeled_ms: f64,
}

/// Shared sink for samples from every node in a run.
#[derive(Default)]
pub struct OpLog {
    samples: Mutex<Vec<OpSample>>,
}

impl OpLog {
    pub fn new() -> Arc<Self> {
        Arc::new(OpLog::default())
    }

    pub fn push(&self, sample: OpSample) {
        self.samples.lock().unwrap_or_else(|e| e.into_inner()).push(sample);
    }

    pub fn samples(&self) -> Vec<OpSample> {
        self.samples.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn clear(&self) {
        self.samples.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }
}

/// A node's view of timing: its clock, the cost model and the shared log.
#[derive(Clone)]
pub struct Meter {
    node: String,
    clock: Arc<dyn Clock>,
    cost: CostModel,
    log: Option<Arc<OpLog>>,
}

impl Meter {
    pub fn new(node: impl Into<String>, clock: Arc<dyn Clock>, cost: CostModel, log: Option<Arc<OpLog>>) -> Self {
        Meter { node: node.into(), clock, cost, log }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn node(&self) -> &str {
        &self.node
    }

    /// Runs `f`, recording op `op` over `bytes` bytes of input.
    pub fn time<T>(&self, op: Op, bytes: usize, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let native_us = start.elapsed().as_secs_f64() * 1e6;
        let modeled_ms = self.cost.cost_ms(op, bytes);
        self.clock.charge(modeled_ms);
        if let Some(log) = &self.log {
            log.push(OpSample { node: self.node.clone(), op, bytes, native_us, modeled_ms });
        }
        out
    }
}
