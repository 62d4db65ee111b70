//! Shared-key distribution.
//!
//! An origin's key service answers queries from exit proxies, one JSON
//! object per line. A proxy identifies itself with its self-certifying id
//! and public key; the service checks that the key hashes to the id and that
//! the id owns the URL on the ring, then returns the shared key sealed to
//! that public key together with its expiry and the number of published
//! encodings.
//!
//! [`KeyFetcher`] is the proxy side: a per-URL cache with coalesced refresh.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ocdn_core::{
    open_session_key, position_of_url, seal_session_key, CanonicalUrl, KeyId, KeyPair, PublicKey, Ring,
    SelfCertifyingId, SessionKey, SharedKey,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{HttpRequest, HttpResponse};
use crate::meter::{Meter, Op};
use crate::transport::{Service, Transport, TransportError};

/// Longest a proxy keeps a key without asking again.
pub const DEFAULT_KEY_CACHE_TTL_SECS: u64 = 300;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyQuery {
    pub qname: String,
    pub proxy_id: String,
    pub proxy_pub: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrvRecord {
    pub sealed_key: String,
    pub key_id: String,
    pub expires_at: u64,
    pub encodings: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RefusalCode {
    BadId,
    NotOwner,
    Unknown,
    Expired,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum KeyResponse {
    #[serde(rename = "OK")]
    Ok { srv: SrvRecord },
    #[serde(rename = "REFUSED")]
    Refused { code: RefusalCode },
}

impl KeyResponse {
    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }
}

impl KeyQuery {
    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }
}

/// Where an origin's keys come from: the key for the URL's prefix and how
/// many encodings of that URL were published.
pub trait KeySource: Send + Sync {
    fn lookup(&self, url: &CanonicalUrl) -> Option<(SharedKey, u8)>;
}

/// Fixed in-memory key table keyed by URL prefix.
#[derive(Default)]
pub struct StaticKeys {
    pub keys: Vec<(String, SharedKey)>,
    pub encodings: HashMap<String, u8>,
}

impl KeySource for StaticKeys {
    fn lookup(&self, url: &CanonicalUrl) -> Option<(SharedKey, u8)> {
        let key = longest_prefix(self.keys.iter().map(|(p, k)| (p.as_str(), k)), url.as_str())?;
        Some((key.clone(), self.encodings.get(url.as_str()).copied().unwrap_or(1)))
    }
}

/// Value of the longest prefix of `s` among `entries`.
pub fn longest_prefix<'a, T>(entries: impl Iterator<Item = (&'a str, T)>, s: &str) -> Option<T> {
    entries.filter(|(p, _)| s.starts_with(p)).max_by_key(|(p, _)| p.len()).map(|(_, v)| v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryLogEntry {
    pub t_ms: f64,
    pub proxy_id: String,
    pub url: String,
    pub outcome: Result<KeyId, RefusalCode>,
}

/// The origin's authoritative key service.
pub struct KeydistServer {
    source: Arc<dyn KeySource>,
    ring: RwLock<Ring>,
    meter: Meter,
    rng: Mutex<ChaCha20Rng>,
    log: Mutex<Vec<QueryLogEntry>>,
}

impl KeydistServer {
    pub fn new(source: Arc<dyn KeySource>, ring: Ring, meter: Meter, seed: u64) -> Self {
        KeydistServer {
            source,
            ring: RwLock::new(ring),
            meter,
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn set_ring(&self, ring: Ring) {
        *self.ring.write().unwrap_or_else(|e| e.into_inner()) = ring;
    }

    pub fn ring(&self) -> Ring {
        self.ring.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn query_log(&self) -> Vec<QueryLogEntry> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn answer_key_query(&self, q: &KeyQuery) -> KeyResponse {
        let outcome = self.answer_inner(q);
        let logged = match &outcome {
            Ok(srv) => KeyId::from_hex(&srv.key_id).map_err(|_| RefusalCode::Malformed),
            Err(code) => Err(*code),
        };
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(QueryLogEntry {
            t_ms: self.meter.clock().now_ms(),
            proxy_id: q.proxy_id.clone(),
            url: q.qname.clone(),
            outcome: logged,
        });
        match outcome {
            Ok(srv) => KeyResponse::Ok { srv },
            Err(code) => KeyResponse::Refused { code },
        }
    }

    fn answer_inner(&self, q: &KeyQuery) -> Result<SrvRecord, RefusalCode> {
        let proxy_pub = PublicKey::from_base64(&q.proxy_pub).map_err(|_| RefusalCode::BadId)?;
        let proxy_id = SelfCertifyingId::parse(&q.proxy_id).map_err(|_| RefusalCode::BadId)?;
        if !proxy_id.verify(&proxy_pub) {
            return Err(RefusalCode::BadId);
        }
        let url = CanonicalUrl::parse(&q.qname).map_err(|_| RefusalCode::Malformed)?;
        let (key, encodings) = self.source.lookup(&url).ok_or(RefusalCode::Unknown)?;
        let encodings = encodings.max(1);
        let ring = self.ring.read().unwrap_or_else(|e| e.into_inner());
        let owns = (0..encodings).any(|i| {
            ring.owners_of(&position_of_url(&url, i)).map(|owners| owners.contains(&&proxy_id)).unwrap_or(false)
        });
        drop(ring);
        if !owns {
            return Err(RefusalCode::NotOwner);
        }
        if !key.is_valid_at(self.meter.clock().unix_secs()) {
            return Err(RefusalCode::Expired);
        }
        let wrapped = SessionKey::from_bytes(*key.key_bytes());
        let sealed = self.meter.time(Op::SharedKeySeal, 32, || {
            let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
            seal_session_key(&mut *rng, &proxy_pub, &wrapped)
        });
        let sealed = sealed.map_err(|_| RefusalCode::BadId)?;
        Ok(SrvRecord {
            sealed_key: B64.encode(sealed),
            key_id: key.key_id().to_hex(),
            expires_at: key.expires_at(),
            encodings,
        })
    }
}

impl Service for KeydistServer {
    fn handle_http(&self, _peer: &str, _req: HttpRequest) -> HttpResponse {
        HttpResponse::new(404)
    }

    fn handle_line(&self, _peer: &str, line: &str) -> Option<String> {
        let resp = match KeyQuery::parse(line) {
            Ok(q) => self.answer_key_query(&q),
            Err(_) => KeyResponse::Refused { code: RefusalCode::Malformed },
        };
        Some(resp.to_line())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FetchError {
    #[error("key service refused: {0:?}")]
    Refused(RefusalCode),
    #[error("no key service configured for {0}")]
    NoKeyServer(String),
    #[error("key service unreachable: {0}")]
    Transport(#[from] TransportError),
    #[error("bad key response: {0}")]
    Protocol(String),
}

impl FetchError {
    /// Worth retrying later without configuration changes.
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Transport(_))
    }
}

#[derive(Debug, Clone)]
pub struct CachedKey {
    pub key: SharedKey,
    pub encodings: u8,
    /// Unix seconds; never later than the key's expiry.
    pub valid_until: u64,
}

/// Proxy identity used in key queries.
pub struct ProxyIdentity {
    pub address: String,
    pub id: SelfCertifyingId,
    pub keypair: KeyPair,
}

/// Proxy-side key cache. One entry per URL; concurrent misses for the same
/// URL share a single query.
pub struct KeyFetcher {
    identity: Arc<ProxyIdentity>,
    /// `(url prefix, key service address)`.
    directory: RwLock<Vec<(String, String)>>,
    transport: Arc<dyn Transport>,
    meter: Meter,
    ttl_secs: u64,
    entries: Mutex<HashMap<String, CachedKey>>,
    slots: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    fetches: AtomicU64,
}

impl KeyFetcher {
    pub fn new(
        identity: Arc<ProxyIdentity>,
        directory: Vec<(String, String)>,
        transport: Arc<dyn Transport>,
        meter: Meter,
        ttl_secs: u64,
    ) -> Self {
        KeyFetcher {
            identity,
            directory: RwLock::new(directory),
            transport,
            meter,
            ttl_secs,
            entries: Mutex::new(HashMap::new()),
            slots: Mutex::new(HashMap::new()),
            fetches: AtomicU64::new(0),
        }
    }

    pub fn set_directory(&self, directory: Vec<(String, String)>) {
        *self.directory.write().unwrap_or_else(|e| e.into_inner()) = directory;
    }

    /// Wire round trips performed so far.
    pub fn fetch_count(&self) -> u64 {
        self.fetches.load(Ordering::SeqCst)
    }

    fn cached(&self, url: &str, now: u64) -> Option<CachedKey> {
        let entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries.get(url).filter(|c| now < c.valid_until && c.key.is_valid_at(now)).cloned()
    }

    /// Drops every cached key, e.g. after a ring change.
    pub fn invalidate_all(&self) {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }

    pub fn fetch(&self, url: &CanonicalUrl) -> Result<CachedKey, FetchError> {
        let now = self.meter.clock().unix_secs();
        if let Some(c) = self.cached(url.as_str(), now) {
            return Ok(c);
        }
        let slot = {
            let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
            slots.entry(url.as_str().to_string()).or_default().clone()
        };
        let _guard = slot.lock().unwrap_or_else(|e| e.into_inner());
        // Someone else may have refreshed while we waited for the slot.
        let now = self.meter.clock().unix_secs();
        if let Some(c) = self.cached(url.as_str(), now) {
            return Ok(c);
        }
        let fresh = self.query(url)?;
        let now = self.meter.clock().unix_secs();
        if !fresh.key.is_valid_at(now) {
            return Err(FetchError::Refused(RefusalCode::Expired));
        }
        let entry = CachedKey { valid_until: fresh.key.expires_at().min(now.saturating_add(self.ttl_secs)), ..fresh };
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).insert(url.as_str().to_string(), entry.clone());
        Ok(entry)
    }

    fn query(&self, url: &CanonicalUrl) -> Result<CachedKey, FetchError> {
        let server = {
            let dir = self.directory.read().unwrap_or_else(|e| e.into_inner());
            longest_prefix(dir.iter().map(|(p, a)| (p.as_str(), a.clone())), url.as_str())
        }
        .ok_or_else(|| FetchError::NoKeyServer(url.origin_prefix()))?;
        let q = KeyQuery {
            qname: url.as_str().to_string(),
            proxy_id: self.identity.id.to_string(),
            proxy_pub: self.identity.keypair.public_key().to_base64(),
        };
        self.fetches.fetch_add(1, Ordering::SeqCst);
        let line = self.transport.line(&self.identity.address, &server, &q.to_line())?;
        let srv = match KeyResponse::parse(&line).map_err(|e| FetchError::Protocol(e.to_string()))? {
            KeyResponse::Ok { srv } => srv,
            KeyResponse::Refused { code } => return Err(FetchError::Refused(code)),
        };
        let sealed = B64.decode(&srv.sealed_key).map_err(|_| FetchError::Protocol("sealed key encoding".into()))?;
        let opened = self
            .meter
            .time(Op::SharedKeyUnseal, sealed.len(), || open_session_key(&self.identity.keypair, &sealed))
            .map_err(|_| FetchError::Protocol("sealed key does not open".into()))?;
        let key = SharedKey::with_expiry(*opened.as_bytes(), srv.expires_at);
        if key.key_id().to_hex() != srv.key_id {
            return Err(FetchError::Protocol("key id mismatch".into()));
        }
        if srv.encodings == 0 || srv.encodings > ocdn_core::MAX_ENCODINGS {
            return Err(FetchError::Protocol("encoding count out of range".into()));
        }
        Ok(CachedKey { key, encodings: srv.encodings, valid_until: srv.expires_at })
    }
}
