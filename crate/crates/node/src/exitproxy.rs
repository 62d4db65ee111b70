//! Exit proxy: the only party that sees both a request's URL and, through the
//! key service, the shared key. It never learns who originated a request.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use ocdn_core::{
    decrypt_url, derive_obfuscated_id, open_content, open_session_key, seal_response, CanonicalUrl, ContentEnvelope,
    CryptoError, ObfuscatedId, SessionKey,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::cachenode::CACHE_PREFIX;
use crate::http::{HttpRequest, HttpResponse};
use crate::keydist::{FetchError, KeyFetcher, ProxyIdentity, RefusalCode};
use crate::meter::{Meter, Op};
use crate::transport::{Service, Transport};
use crate::wire::{Delivery, ResponseStatus, RoutedRequest, DELIVER_PATH, RELAY_PATH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlashcrowdSettings {
    pub enabled: bool,
    /// Requests per second for one id that make it hot.
    pub threshold_per_sec: f64,
    pub window_secs: f64,
    /// How long a hot envelope is served locally.
    pub ttl_secs: f64,
}

impl Default for FlashcrowdSettings {
    fn default() -> Self {
        FlashcrowdSettings { enabled: true, threshold_per_sec: 50.0, window_secs: 10.0, ttl_secs: 10.0 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExitSettings {
    pub caches: Vec<String>,
    pub flashcrowd: FlashcrowdSettings,
}

/// What an exit sees about one request. Used to model a curious exit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExitObservation {
    pub request_id: [u8; 16],
    /// The neighbour the request arrived from.
    pub prev_hop: String,
    pub route: Vec<String>,
    pub url: Option<CanonicalUrl>,
}

pub type Observer = Arc<dyn Fn(&ExitObservation) + Send + Sync>;

#[derive(Debug, Default)]
pub struct ExitStats {
    pub relays: AtomicU64,
    pub ok: AtomicU64,
    pub failed: AtomicU64,
    pub cache_gets: AtomicU64,
    pub flash_hits: AtomicU64,
}

#[derive(Default)]
struct Flashcrowd {
    recent: HashMap<ObfuscatedId, VecDeque<f64>>,
    hot: HashMap<ObfuscatedId, (Vec<u8>, f64)>,
}

impl Flashcrowd {
    /// Records a request at `now_ms` and reports whether the id is now hot.
    fn note(&mut self, s: &FlashcrowdSettings, id: ObfuscatedId, now_ms: f64) -> bool {
        let window_ms = s.window_secs * 1000.0;
        let q = self.recent.entry(id).or_default();
        q.push_back(now_ms);
        while q.front().is_some_and(|t| *t <= now_ms - window_ms) {
            q.pop_front();
        }
        q.len() as f64 / s.window_secs >= s.threshold_per_sec
    }

    fn get(&mut self, id: &ObfuscatedId, now_ms: f64) -> Option<Vec<u8>> {
        match self.hot.get(id) {
            Some((bytes, until)) if now_ms < *until => Some(bytes.clone()),
            Some(_) => {
                self.hot.remove(id);
                None
            }
            None => None,
        }
    }
}

pub struct ExitProxy {
    identity: Arc<ProxyIdentity>,
    fetcher: KeyFetcher,
    transport: Arc<dyn Transport>,
    meter: Meter,
    settings: ExitSettings,
    rng: Mutex<ChaCha20Rng>,
    next_cache: AtomicUsize,
    flash: Mutex<Flashcrowd>,
    pending: Mutex<HashMap<[u8; 16], Vec<String>>>,
    observer: RwLock<Option<Observer>>,
    stats: ExitStats,
}

enum Fetched {
    Envelope(Vec<u8>),
    Missing,
    Unreachable,
}

impl ExitProxy {
    pub fn new(
        identity: Arc<ProxyIdentity>,
        fetcher: KeyFetcher,
        transport: Arc<dyn Transport>,
        meter: Meter,
        settings: ExitSettings,
        seed: u64,
    ) -> Self {
        ExitProxy {
            identity,
            fetcher,
            transport,
            meter,
            settings,
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            next_cache: AtomicUsize::new(0),
            flash: Mutex::new(Flashcrowd::default()),
            pending: Mutex::new(HashMap::new()),
            observer: RwLock::new(None),
            stats: ExitStats::default(),
        }
    }

    pub fn address(&self) -> &str {
        &self.identity.address
    }

    pub fn fetcher(&self) -> &KeyFetcher {
        &self.fetcher
    }

    pub fn stats(&self) -> &ExitStats {
        &self.stats
    }

    pub fn set_observer(&self, observer: Option<Observer>) {
        *self.observer.write().unwrap_or_else(|e| e.into_inner()) = observer;
    }

    /// Requests accepted but not yet answered.
    pub fn pending_len(&self) -> usize {
        self.pending.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    fn observe(&self, obs: ExitObservation) {
        let observer = self.observer.read().unwrap_or_else(|e| e.into_inner()).clone();
        if let Some(f) = observer {
            f(&obs);
        }
    }

    /// Round-robin over the configured caches, failing over on errors and misses.
    fn fetch_envelope(&self, id: &ObfuscatedId) -> Fetched {
        let caches = &self.settings.caches;
        if caches.is_empty() {
            return Fetched::Unreachable;
        }
        let start = self.next_cache.fetch_add(1, Ordering::Relaxed);
        let mut missing = false;
        for k in 0..caches.len() {
            let target = &caches[(start + k) % caches.len()];
            self.stats.cache_gets.fetch_add(1, Ordering::Relaxed);
            let req = HttpRequest::new("GET", format!("{CACHE_PREFIX}{}", id.to_hex()));
            match self.transport.http(&self.identity.address, target, req) {
                Ok(r) if r.status == 200 => return Fetched::Envelope(r.body),
                Ok(r) if r.status == 404 => missing = true,
                Ok(r) => warn!(cache = %target, status = r.status, "cache error"),
                Err(e) => warn!(cache = %target, error = %e, "cache unreachable"),
            }
        }
        if missing {
            Fetched::Missing
        } else {
            Fetched::Unreachable
        }
    }

    fn envelope_for(&self, id: ObfuscatedId) -> Fetched {
        let s = &self.settings.flashcrowd;
        if !s.enabled {
            return self.fetch_envelope(&id);
        }
        let now = self.meter.clock().now_ms();
        let hot = {
            let mut f = self.flash.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(bytes) = f.get(&id, now) {
                f.note(s, id, now);
                self.stats.flash_hits.fetch_add(1, Ordering::Relaxed);
                return Fetched::Envelope(bytes);
            }
            f.note(s, id, now)
        };
        let fetched = self.fetch_envelope(&id);
        if let (true, Fetched::Envelope(bytes)) = (hot, &fetched) {
            let until = self.meter.clock().now_ms() + s.ttl_secs * 1000.0;
            self.flash.lock().unwrap_or_else(|e| e.into_inner()).hot.insert(id, (bytes.clone(), until));
        }
        fetched
    }

    /// Resolves the URL to content, or the status to report.
    fn resolve(&self, url: &CanonicalUrl) -> Result<Vec<u8>, ResponseStatus> {
        let key = self.fetcher.fetch(url).map_err(|e| {
            debug!(url = %url, error = %e, "key fetch failed");
            match e {
                FetchError::Refused(RefusalCode::NotOwner) => ResponseStatus::NotOwner,
                FetchError::Refused(RefusalCode::Unknown) => ResponseStatus::NotFound,
                _ => ResponseStatus::KeyUnavailable,
            }
        })?;
        let index = self.rng.lock().unwrap_or_else(|e| e.into_inner()).gen_range(0..key.encodings);
        let id = self
            .meter
            .time(Op::HmacDerivation, url.as_str().len(), || derive_obfuscated_id(&key.key, url, index))
            .map_err(|_| ResponseStatus::KeyUnavailable)?;
        let bytes = match self.envelope_for(id) {
            Fetched::Envelope(b) => b,
            Fetched::Missing => return Err(ResponseStatus::NotFound),
            Fetched::Unreachable => return Err(ResponseStatus::Upstream),
        };
        let env = ContentEnvelope::from_bytes(&bytes).map_err(|_| ResponseStatus::Integrity)?;
        self.meter.time(Op::SharedKeyDecrypt, bytes.len(), || open_content(&key.key, &env)).map_err(|e| match e {
            CryptoError::Tamper | CryptoError::Malformed(_) => ResponseStatus::Integrity,
            _ => ResponseStatus::KeyUnavailable,
        })
    }

    fn deliver(&self, targets: &[String], delivery: Delivery) {
        let req = delivery.to_http();
        for (t, r) in targets.iter().zip(self.transport.fan_out(&self.identity.address, targets, &req)) {
            if let Err(e) = r {
                debug!(target = %t, error = %e, "delivery failed");
            }
        }
    }

    /// Handles `POST /ocdn/relay` addressed to this exit.
    pub fn relay(&self, peer: &str, req: &HttpRequest) -> HttpResponse {
        let routed = match RoutedRequest::from_http(req) {
            Ok(r) => r,
            Err(e) => return HttpResponse::text(400, &e.to_string()),
        };
        if routed.terminal() != self.identity.address {
            return HttpResponse::text(421, "not the terminal hop");
        }
        self.stats.relays.fetch_add(1, Ordering::Relaxed);
        let targets = routed.delivery_targets().to_vec();
        let skey: SessionKey = match self.meter.time(Op::SessionKeyUnseal, routed.sealed_key.len(), || {
            open_session_key(&self.identity.keypair, &routed.sealed_key)
        }) {
            Ok(k) => k,
            Err(_) => {
                self.stats.failed.fetch_add(1, Ordering::Relaxed);
                self.observe(ExitObservation {
                    request_id: routed.request_id,
                    prev_hop: peer.to_string(),
                    route: routed.route.clone(),
                    url: None,
                });
                self.deliver(&targets, Delivery { request_id: routed.request_id, unsealed_failed: true, body: vec![] });
                return HttpResponse::new(202);
            }
        };
        self.pending.lock().unwrap_or_else(|e| e.into_inner()).insert(routed.request_id, targets.clone());

        let url = self
            .meter
            .time(Op::UrlDecrypt, routed.url_ciphertext.len(), || decrypt_url(&skey, &routed.url_ciphertext))
            .ok();
        self.observe(ExitObservation {
            request_id: routed.request_id,
            prev_hop: peer.to_string(),
            route: routed.route.clone(),
            url: url.clone(),
        });
        let (status, content) = match url {
            Some(u) => match self.resolve(&u) {
                Ok(c) => (ResponseStatus::Ok, c),
                Err(s) => (s, Vec::new()),
            },
            None => (ResponseStatus::BadRequest, Vec::new()),
        };
        if status == ResponseStatus::Ok {
            self.stats.ok.fetch_add(1, Ordering::Relaxed);
        } else {
            self.stats.failed.fetch_add(1, Ordering::Relaxed);
        }
        let sealed = self.meter.time(Op::SessionKeyEncrypt, content.len(), || {
            let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
            seal_response(&mut *rng, &skey, &routed.request_id, status.code(), &content)
        });
        let body = match sealed {
            Ok(b) => b,
            Err(e) => {
                warn!(error = %e, "response sealing failed");
                let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
                seal_response(&mut *rng, &skey, &routed.request_id, ResponseStatus::Upstream.code(), &[])
                    .expect("empty response seals")
            }
        };
        self.deliver(&targets, Delivery { request_id: routed.request_id, unsealed_failed: false, body });
        self.pending.lock().unwrap_or_else(|e| e.into_inner()).remove(&routed.request_id);
        HttpResponse::new(202)
    }
}

impl Service for ExitProxy {
    fn handle_http(&self, peer: &str, req: HttpRequest) -> HttpResponse {
        match (req.method.as_str(), req.path.as_str()) {
            ("POST", RELAY_PATH) => self.relay(peer, &req),
            // Exits are never route members, so nothing is ever delivered to them.
            ("POST", DELIVER_PATH) => HttpResponse::new(200),
            ("GET", "/ocdn/health") => HttpResponse::text(200, "ok"),
            _ => HttpResponse::new(404),
        }
    }
}
