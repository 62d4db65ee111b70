//! Cache node: an oblivious object store keyed by obfuscated id.
//!
//! Writes must carry an origin signature. The first writer of an id binds
//! its origin; later updates must come from the same key. Every object
//! request is appended to an access log that the adversary harness can read.

use std::fs::File;
use std::io::Write;
use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use lru::LruCache;
use ocdn_core::sign::{verify_bytes, verify_update_bytes};
use ocdn_core::{ContentEnvelope, ObfuscatedId, PublicKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{HttpRequest, HttpResponse};
use crate::meter::{Meter, Op};
use crate::transport::Service;
use crate::wire::{HDR_ORIGIN, HDR_SIG};

pub const CACHE_PREFIX: &str = "/cache/";
pub const PLAIN_PREFIX: &str = "/plain/";
pub const LOG_PATH: &str = "/admin/log";
const PLAIN_LABEL: &[u8] = b"ocdn-plain-v1";

#[derive(Debug, Clone)]
pub struct CacheSettings {
    /// Maximum number of stored objects per namespace before LRU eviction.
    pub capacity: usize,
    /// Reject writes from origins not in `trusted_origins`.
    pub strict_allowlist: bool,
    /// SHA-256 fingerprints of trusted origin keys.
    pub trusted_origins: Vec<[u8; 32]>,
}

impl Default for CacheSettings {
    fn default() -> Self {
        CacheSettings { capacity: 100_000, strict_allowlist: false, trusted_origins: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub id: ObfuscatedId,
    pub envelope: Vec<u8>,
    pub origin_fingerprint: [u8; 32],
    pub stored_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessLogRecord {
    pub t_ms: f64,
    pub unix: u64,
    pub peer: String,
    pub verb: String,
    /// Id hex for object requests; the request path otherwise.
    pub id: String,
    pub status: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Stored,
    Updated,
    Unchanged,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("signature does not verify")]
    BadSignature,
    #[error("update from a different origin")]
    OriginMismatch,
    #[error("origin is not on the allowlist")]
    Untrusted,
    #[error("malformed request: {0}")]
    Malformed(String),
}

impl CacheError {
    fn status(&self) -> u16 {
        match self {
            CacheError::Malformed(_) => 400,
            _ => 403,
        }
    }
}

/// Message signed for plaintext (non-participating) objects.
pub fn plain_message(path: &str, body: &[u8]) -> Vec<u8> {
    let mut m = PLAIN_LABEL.to_vec();
    m.extend_from_slice(path.as_bytes());
    m.push(0);
    m.extend_from_slice(body);
    m
}

/// Path under which a URL's plaintext copy is stored: scheme dropped.
pub fn plain_path(url: &ocdn_core::CanonicalUrl) -> String {
    let s = url.as_str();
    let rest = s.split_once("://").map(|(_, r)| r).unwrap_or(s);
    format!("{PLAIN_PREFIX}{rest}")
}

pub struct CacheNode {
    meter: Meter,
    settings: CacheSettings,
    entries: Mutex<LruCache<ObfuscatedId, CacheEntry>>,
    plain: Mutex<LruCache<String, CacheEntry>>,
    log: Mutex<Vec<AccessLogRecord>>,
    log_file: Option<Mutex<File>>,
    gets: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl CacheNode {
    pub fn new(meter: Meter, settings: CacheSettings) -> Self {
        let cap = NonZeroUsize::new(settings.capacity.max(1)).expect("nonzero");
        CacheNode {
            meter,
            settings,
            entries: Mutex::new(LruCache::new(cap)),
            plain: Mutex::new(LruCache::new(cap)),
            log: Mutex::new(Vec::new()),
            log_file: None,
            gets: AtomicU64::new(0),
        }
    }

    /// Also appends every log record as a JSON line to `path`.
    pub fn with_log_file(mut self, path: &Path) -> std::io::Result<Self> {
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        self.log_file = Some(Mutex::new(f));
        Ok(self)
    }

    fn record(&self, peer: &str, verb: &str, id: &str, status: u16) {
        let clock = self.meter.clock();
        let rec = AccessLogRecord {
            t_ms: clock.now_ms(),
            unix: clock.unix_secs(),
            peer: peer.to_string(),
            verb: verb.to_string(),
            id: id.chars().take(256).collect(),
            status,
        };
        if let Some(f) = &self.log_file {
            if let Ok(line) = serde_json::to_string(&rec) {
                let _ = writeln!(lock(f), "{line}");
            }
        }
        lock(&self.log).push(rec);
    }

    fn check_origin(&self, fingerprint: &[u8; 32]) -> Result<(), CacheError> {
        if self.settings.strict_allowlist && !self.settings.trusted_origins.contains(fingerprint) {
            return Err(CacheError::Untrusted);
        }
        Ok(())
    }

    fn store<K: std::hash::Hash + Eq + Clone>(
        map: &Mutex<LruCache<K, CacheEntry>>,
        key: K,
        entry: CacheEntry,
    ) -> Result<PutOutcome, CacheError> {
        let mut m = lock(map);
        // Origin check and write happen under one lock so concurrent writers linearize.
        let outcome = match m.peek(&key) {
            Some(old) if old.origin_fingerprint != entry.origin_fingerprint => return Err(CacheError::OriginMismatch),
            Some(old) if old.envelope == entry.envelope => PutOutcome::Unchanged,
            Some(_) => PutOutcome::Updated,
            None => PutOutcome::Stored,
        };
        if outcome != PutOutcome::Unchanged {
            m.put(key, entry);
        } else {
            m.promote(&key);
        }
        Ok(outcome)
    }

    /// Stores an envelope after checking the origin's signature over `(id, envelope)`.
    pub fn put_object(
        &self,
        peer: &str,
        id: ObfuscatedId,
        envelope: Vec<u8>,
        origin_pub: &PublicKey,
        signature: &[u8],
    ) -> Result<PutOutcome, CacheError> {
        let result = self.put_object_inner(id, envelope, origin_pub, signature);
        self.record(peer, "PUT", &id.to_hex(), put_status(&result));
        result
    }

    fn put_object_inner(
        &self,
        id: ObfuscatedId,
        envelope: Vec<u8>,
        origin_pub: &PublicKey,
        signature: &[u8],
    ) -> Result<PutOutcome, CacheError> {
        ContentEnvelope::from_bytes(&envelope).map_err(|e| CacheError::Malformed(e.to_string()))?;
        let fingerprint = origin_pub.fingerprint();
        self.check_origin(&fingerprint)?;
        self.meter
            .time(Op::UpdateVerify, envelope.len(), || verify_update_bytes(origin_pub, &id, &envelope, signature))
            .map_err(|_| CacheError::BadSignature)?;
        let entry =
            CacheEntry { id, envelope, origin_fingerprint: fingerprint, stored_at: self.meter.clock().unix_secs() };
        Self::store(&self.entries, id, entry)
    }

    pub fn get_object(&self, peer: &str, id: &ObfuscatedId) -> Option<Vec<u8>> {
        self.gets.fetch_add(1, Ordering::Relaxed);
        let found = lock(&self.entries).get(id).map(|e| e.envelope.clone());
        self.record(peer, "GET", &id.to_hex(), if found.is_some() { 200 } else { 404 });
        found
    }

    /// Stores a plaintext object for partial deployment and the baseline path.
    pub fn put_plain(
        &self,
        peer: &str,
        path: &str,
        body: Vec<u8>,
        origin_pub: &PublicKey,
        signature: &[u8],
    ) -> Result<PutOutcome, CacheError> {
        let result = (|| {
            let fingerprint = origin_pub.fingerprint();
            self.check_origin(&fingerprint)?;
            verify_bytes(origin_pub, &plain_message(path, &body), signature).map_err(|_| CacheError::BadSignature)?;
            let entry = CacheEntry {
                id: ObfuscatedId([0; 32]),
                envelope: body,
                origin_fingerprint: fingerprint,
                stored_at: self.meter.clock().unix_secs(),
            };
            Self::store(&self.plain, path.to_string(), entry)
        })();
        self.record(peer, "PUT", path, put_status(&result));
        result
    }

    pub fn get_plain(&self, peer: &str, path: &str) -> Option<Vec<u8>> {
        self.gets.fetch_add(1, Ordering::Relaxed);
        let found = lock(&self.plain).get(path).map(|e| e.envelope.clone());
        self.record(peer, "GET", path, if found.is_some() { 200 } else { 404 });
        found
    }

    pub fn dump_log(&self) -> Vec<AccessLogRecord> {
        lock(&self.log).clone()
    }

    pub fn get_count(&self) -> u64 {
        self.gets.load(Ordering::Relaxed)
    }

    /// Every stored `(id, envelope)` in id order.
    pub fn stored(&self) -> Vec<CacheEntry> {
        let mut v: Vec<CacheEntry> = lock(&self.entries).iter().map(|(_, e)| e.clone()).collect();
        v.sort_by_key(|a| a.id);
        v
    }

    /// Every stored plaintext object as `(path, body)`, path order.
    pub fn stored_plain(&self) -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<(String, Vec<u8>)> =
            lock(&self.plain).iter().map(|(k, e)| (k.clone(), e.envelope.clone())).collect();
        v.sort();
        v
    }

    pub fn len(&self) -> usize {
        lock(&self.entries).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn handle_put(&self, peer: &str, req: &HttpRequest, target: Target) -> HttpResponse {
        let auth = (|| {
            let origin = req.get_header(HDR_ORIGIN).ok_or("missing origin")?;
            let origin = PublicKey::from_base64(origin.trim()).map_err(|_| "bad origin key")?;
            let sig = req.get_header(HDR_SIG).ok_or("missing signature")?;
            let sig = B64.decode(sig.trim()).map_err(|_| "bad signature encoding")?;
            Ok::<_, &str>((origin, sig))
        })();
        let (origin, sig) = match auth {
            Ok(a) => a,
            Err(e) => {
                self.record(peer, "PUT", target.label(&req.path), 400);
                return HttpResponse::text(400, e);
            }
        };
        let result = match target {
            Target::Object(id) => self.put_object(peer, id, req.body.clone(), &origin, &sig),
            Target::Plain => self.put_plain(peer, &req.path, req.body.clone(), &origin, &sig),
        };
        match result {
            Ok(PutOutcome::Stored) => HttpResponse::new(201),
            Ok(_) => HttpResponse::new(200),
            Err(e) => HttpResponse::text(e.status(), &e.to_string()),
        }
    }
}

fn put_status(r: &Result<PutOutcome, CacheError>) -> u16 {
    match r {
        Ok(PutOutcome::Stored) => 201,
        Ok(_) => 200,
        Err(e) => e.status(),
    }
}

enum Target {
    Object(ObfuscatedId),
    Plain,
}

impl Target {
    fn label<'a>(&self, path: &'a str) -> &'a str {
        path.strip_prefix(CACHE_PREFIX).unwrap_or(path)
    }
}

fn is_loopback(peer: &str) -> bool {
    peer.parse::<SocketAddr>().map(|a| a.ip().is_loopback()).unwrap_or(false)
}

impl Service for CacheNode {
    fn handle_http(&self, peer: &str, req: HttpRequest) -> HttpResponse {
        if req.path == LOG_PATH {
            if req.method != "GET" {
                return HttpResponse::new(405);
            }
            if !is_loopback(peer) {
                return HttpResponse::new(403);
            }
            let mut out = String::new();
            for r in self.dump_log() {
                out.push_str(&serde_json::to_string(&r).unwrap_or_default());
                out.push('\n');
            }
            return HttpResponse::with_body(200, out.into_bytes()).header("Content-Type", "application/x-ndjson");
        }
        if let Some(hex_id) = req.path.strip_prefix(CACHE_PREFIX) {
            let id = match ObfuscatedId::from_hex(hex_id) {
                Ok(id) => id,
                Err(_) => {
                    self.record(peer, &req.method, hex_id, 400);
                    return HttpResponse::text(400, "bad id");
                }
            };
            return match req.method.as_str() {
                "GET" => match self.get_object(peer, &id) {
                    Some(env) => HttpResponse::with_body(200, env).header("Content-Type", "application/octet-stream"),
                    None => HttpResponse::new(404),
                },
                "PUT" => self.handle_put(peer, &req, Target::Object(id)),
                other => {
                    self.record(peer, other, hex_id, 405);
                    HttpResponse::new(405)
                }
            };
        }
        if req.path.starts_with(PLAIN_PREFIX) {
            return match req.method.as_str() {
                "GET" => match self.get_plain(peer, &req.path) {
                    Some(body) => HttpResponse::with_body(200, body),
                    None => HttpResponse::new(404),
                },
                "PUT" => self.handle_put(peer, &req, Target::Plain),
                other => {
                    self.record(peer, other, &req.path, 405);
                    HttpResponse::new(405)
                }
            };
        }
        HttpResponse::new(404)
    }
}

#[cfg(test)]
mod tests {
    use ocdn_core::sign::{sign_bytes, sign_update_bytes};
    use ocdn_core::{seal_content, KeyPair, SharedKey};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use std::sync::Arc;

    use super::*;
    use crate::clock::VirtualClock;
    use crate::meter::CostModel;
    use crate::test_support::keys;

    fn node(settings: CacheSettings) -> CacheNode {
        let meter = Meter::new("cache", Arc::new(VirtualClock::new(0)), CostModel::free(), None);
        CacheNode::new(meter, settings)
    }

    fn envelope(body: &[u8]) -> Vec<u8> {
        let k = SharedKey::from_bytes([4; 32], 0, 100).unwrap();
        seal_content(&mut ChaCha20Rng::seed_from_u64(body.len() as u64), &k, body).unwrap().to_bytes()
    }

    fn signed(kp: &KeyPair, id: &ObfuscatedId, env: &[u8]) -> Vec<u8> {
        sign_update_bytes(kp, id, env)
    }

    #[test]
    fn put_then_get_returns_identical_bytes() {
        let n = node(CacheSettings::default());
        let kp = &keys()[0];
        let id = ObfuscatedId([1; 32]);
        let env = envelope(b"hello");
        assert_eq!(n.put_object("o", id, env.clone(), kp.public_key(), &signed(kp, &id, &env)), Ok(PutOutcome::Stored));
        assert_eq!(n.get_object("x", &id).unwrap(), env);
        assert_eq!(n.get_object("x", &ObfuscatedId([2; 32])), None);
    }

    #[test]
    fn reput_is_idempotent_and_updates_need_same_origin() {
        let n = node(CacheSettings::default());
        let (a, b) = (&keys()[0], &keys()[1]);
        let id = ObfuscatedId([1; 32]);
        let env = envelope(b"v1");
        let sig = signed(a, &id, &env);
        n.put_object("o", id, env.clone(), a.public_key(), &sig).unwrap();
        assert_eq!(n.put_object("o", id, env.clone(), a.public_key(), &sig), Ok(PutOutcome::Unchanged));
        let env2 = envelope(b"version two");
        assert_eq!(
            n.put_object("o", id, env2.clone(), b.public_key(), &signed(b, &id, &env2)),
            Err(CacheError::OriginMismatch)
        );
        assert_eq!(
            n.put_object("o", id, env2.clone(), a.public_key(), &signed(a, &id, &env2)),
            Ok(PutOutcome::Updated)
        );
        assert_eq!(n.get_object("x", &id).unwrap(), env2);
    }

    #[test]
    fn bad_signatures_and_allowlist() {
        let (a, b) = (&keys()[0], &keys()[1]);
        let id = ObfuscatedId([1; 32]);
        let env = envelope(b"v1");
        let n = node(CacheSettings::default());
        assert_eq!(
            n.put_object("o", id, env.clone(), a.public_key(), &signed(b, &id, &env)),
            Err(CacheError::BadSignature)
        );
        assert_eq!(n.put_object("o", id, env.clone(), a.public_key(), &[]), Err(CacheError::BadSignature));
        let strict = node(CacheSettings {
            strict_allowlist: true,
            trusted_origins: vec![a.public_key().fingerprint()],
            ..CacheSettings::default()
        });
        assert_eq!(
            strict.put_object("o", id, env.clone(), b.public_key(), &signed(b, &id, &env)),
            Err(CacheError::Untrusted)
        );
        assert!(strict.put_object("o", id, env.clone(), a.public_key(), &signed(a, &id, &env)).is_ok());
    }

    #[test]
    fn non_envelopes_are_refused() {
        let n = node(CacheSettings::default());
        let kp = &keys()[0];
        let id = ObfuscatedId([1; 32]);
        let body = b"plaintext http://secret.example/".to_vec();
        assert!(matches!(
            n.put_object("o", id, body.clone(), kp.public_key(), &signed(kp, &id, &body)),
            Err(CacheError::Malformed(_))
        ));
    }

    #[test]
    fn log_has_one_record_per_request() {
        let n = node(CacheSettings::default());
        assert!(n.dump_log().is_empty());
        let ids: Vec<ObfuscatedId> = (0..1000u32)
            .map(|i| {
                let mut b = [0u8; 32];
                b[..4].copy_from_slice(&i.to_be_bytes());
                ObfuscatedId(b)
            })
            .collect();
        for id in &ids {
            n.get_object("10.1.0.1:8443", id);
        }
        let log = n.dump_log();
        assert_eq!(log.len(), 1000);
        for (rec, id) in log.iter().zip(&ids) {
            assert_eq!(rec.id, id.to_hex());
            assert_eq!(rec.verb, "GET");
        }
    }

    #[test]
    fn lru_evicts_by_count() {
        let n = node(CacheSettings { capacity: 2, ..CacheSettings::default() });
        let kp = &keys()[0];
        let env = envelope(b"x");
        for i in 0..3u8 {
            let id = ObfuscatedId([i; 32]);
            n.put_object("o", id, env.clone(), kp.public_key(), &signed(kp, &id, &env)).unwrap();
        }
        assert_eq!(n.len(), 2);
        assert!(n.get_object("x", &ObfuscatedId([0; 32])).is_none());
        assert!(n.get_object("x", &ObfuscatedId([2; 32])).is_some());
    }

    #[test]
    fn http_interface() {
        let n = node(CacheSettings::default());
        let kp = &keys()[0];
        let id = ObfuscatedId([7; 32]);
        let env = envelope(b"over http");
        let put = HttpRequest::new("PUT", format!("/cache/{}", id.to_hex()))
            .header(HDR_ORIGIN, kp.public_key().to_base64())
            .header(HDR_SIG, B64.encode(signed(kp, &id, &env)))
            .body(env.clone());
        assert_eq!(n.handle_http("o", put.clone()).status, 201);
        assert_eq!(n.handle_http("o", put).status, 200);
        let get = n.handle_http("x", HttpRequest::new("GET", format!("/cache/{}", id.to_hex())));
        assert_eq!((get.status, get.body), (200, env));
        assert_eq!(n.handle_http("x", HttpRequest::new("GET", format!("/cache/{}", "0".repeat(64)))).status, 404);
        assert_eq!(n.handle_http("x", HttpRequest::new("GET", "/cache/nothex")).status, 400);
        let unsigned = HttpRequest::new("PUT", format!("/cache/{}", id.to_hex())).body(envelope(b"evil"));
        assert_eq!(n.handle_http("o", unsigned).status, 400);
        assert_eq!(n.dump_log().len(), 6);
        assert_eq!(n.handle_http("10.0.0.9:1", HttpRequest::new("GET", LOG_PATH)).status, 403);
        let log = n.handle_http("127.0.0.1:5555", HttpRequest::new("GET", LOG_PATH));
        assert_eq!(log.status, 200);
        assert_eq!(String::from_utf8(log.body).unwrap().lines().count(), 6);
    }

    #[test]
    fn plaintext_objects() {
        let n = node(CacheSettings::default());
        let kp = &keys()[0];
        let url = ocdn_core::CanonicalUrl::parse("http://a.example/p").unwrap();
        let path = plain_path(&url);
        assert_eq!(path, "/plain/a.example/p");
        let sig = sign_bytes(kp, &plain_message(&path, b"body"));
        assert_eq!(n.put_plain("o", &path, b"body".to_vec(), kp.public_key(), &sig), Ok(PutOutcome::Stored));
        assert_eq!(n.get_plain("c", &path).unwrap(), b"body");
        assert_eq!(n.put_plain("o", &path, b"other".to_vec(), kp.public_key(), &sig), Err(CacheError::BadSignature));
    }
}
