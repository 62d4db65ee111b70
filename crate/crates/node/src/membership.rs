//! Client proxy membership: signed join/leave announcements spread by
//! push-pull gossip.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ANNOUNCE_TAG: &[u8] = b"ocdn-announce-v1";
/// How far ahead of local time an announcement may be stamped.
const MAX_SKEW_SECS: u64 = 300;
pub const ANTI_ENTROPY_SECS: u64 = 30;
pub const DEFAULT_PEER_WINDOW_SECS: u64 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnounceKind {
    Join,
    Leave,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Announcement {
    pub address: String,
    pub kind: AnnounceKind,
    pub timestamp: u64,
    pub public_key: String,
    pub signature: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MembershipError {
    #[error("bad key or signature encoding")]
    Encoding,
    #[error("signature does not verify")]
    BadSignature,
    #[error("address is held by a different key")]
    KeyMismatch,
    #[error("timestamp too far in the future")]
    FromTheFuture,
}

fn message(kind: AnnounceKind, timestamp: u64, address: &str) -> Vec<u8> {
    let mut m = ANNOUNCE_TAG.to_vec();
    m.push(match kind {
        AnnounceKind::Join => b'J',
        AnnounceKind::Leave => b'L',
    });
    m.extend_from_slice(&timestamp.to_be_bytes());
    m.extend_from_slice(address.as_bytes());
    m
}

impl Announcement {
    pub fn sign(key: &SigningKey, address: &str, kind: AnnounceKind, timestamp: u64) -> Self {
        let sig = key.sign(&message(kind, timestamp, address));
        Announcement {
            address: address.to_string(),
            kind,
            timestamp,
            public_key: B64.encode(key.verifying_key().as_bytes()),
            signature: B64.encode(sig.to_bytes()),
        }
    }

    pub fn verify(&self) -> Result<(), MembershipError> {
        let pk: [u8; 32] =
            B64.decode(&self.public_key).ok().and_then(|b| b.try_into().ok()).ok_or(MembershipError::Encoding)?;
        let sig: [u8; 64] =
            B64.decode(&self.signature).ok().and_then(|b| b.try_into().ok()).ok_or(MembershipError::Encoding)?;
        let vk = VerifyingKey::from_bytes(&pk).map_err(|_| MembershipError::Encoding)?;
        vk.verify(&message(self.kind, self.timestamp, &self.address), &Signature::from_bytes(&sig))
            .map_err(|_| MembershipError::BadSignature)
    }

    pub fn parse_list(body: &[u8]) -> Result<Vec<Announcement>, serde_json::Error> {
        serde_json::from_slice(body)
    }
}

/// Known client proxies, newest announcement per address.
pub struct PeerTable {
    self_address: String,
    /// `None` keeps peers until they leave.
    window_secs: Option<u64>,
    entries: Mutex<BTreeMap<String, Announcement>>,
    own: Mutex<Option<Announcement>>,
}

impl PeerTable {
    pub fn new(self_address: impl Into<String>, window_secs: Option<u64>) -> Self {
        PeerTable {
            self_address: self_address.into(),
            window_secs,
            entries: Mutex::new(BTreeMap::new()),
            own: Mutex::new(None),
        }
    }

    /// Replaces our own announcement; it is included in every snapshot.
    pub fn set_own(&self, ann: Announcement) {
        *self.own.lock().unwrap_or_else(|e| e.into_inner()) = Some(ann);
    }

    /// Accepts `ann` if it verifies and is newer than what we hold. Returns
    /// whether the table changed.
    pub fn merge(&self, ann: Announcement, now: u64) -> Result<bool, MembershipError> {
        ann.verify()?;
        if ann.timestamp > now.saturating_add(MAX_SKEW_SECS) {
            return Err(MembershipError::FromTheFuture);
        }
        if ann.address == self.self_address {
            return Ok(false);
        }
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(old) = entries.get(&ann.address) {
            if old.public_key != ann.public_key {
                return Err(MembershipError::KeyMismatch);
            }
            if old.timestamp >= ann.timestamp {
                return Ok(false);
            }
        }
        entries.insert(ann.address.clone(), ann);
        Ok(true)
    }

    /// Merges everything valid; returns how many entries changed.
    pub fn merge_all(&self, anns: Vec<Announcement>, now: u64) -> usize {
        anns.into_iter().filter(|a| matches!(self.merge(a.clone(), now), Ok(true))).count()
    }

    fn fresh(&self, a: &Announcement, now: u64) -> bool {
        self.window_secs.map_or(true, |w| a.timestamp.saturating_add(w) >= now)
    }

    /// Joined, fresh peers other than ourselves.
    pub fn live_peers(&self, now: u64) -> Vec<String> {
        let entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries
            .values()
            .filter(|a| a.kind == AnnounceKind::Join && self.fresh(a, now))
            .map(|a| a.address.clone())
            .collect()
    }

    /// Every live address including our own.
    pub fn known(&self, now: u64) -> BTreeSet<String> {
        let mut s: BTreeSet<String> = self.live_peers(now).into_iter().collect();
        s.insert(self.self_address.clone());
        s
    }

    /// Drops stale entries.
    pub fn prune(&self, now: u64) {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries.retain(|_, a| self.window_secs.map_or(true, |w| a.timestamp.saturating_add(w) >= now));
    }

    /// What we tell peers during gossip.
    pub fn snapshot(&self) -> Vec<Announcement> {
        let mut out: Vec<Announcement> =
            self.entries.lock().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        if let Some(own) = self.own.lock().unwrap_or_else(|e| e.into_inner()).clone() {
            out.push(own);
        }
        out
    }
}
