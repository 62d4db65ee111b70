//! Client proxy: builds source-routed requests, forwards peers' requests and
//! opens its own responses.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use ed25519_dalek::SigningKey;
use ocdn_core::{
    encrypt_url, open_response, position_of_url, seal_session_key, CanonicalUrl, PublicKey, Ring, RingError, Roster,
    SessionKey,
};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;
use tracing::debug;

use crate::http::{HttpRequest, HttpResponse};
use crate::membership::{AnnounceKind, Announcement, PeerTable};
use crate::meter::{Meter, Op};
use crate::transport::{Service, Transport, TransportError};
use crate::wire::{request_id_hex, Delivery, ResponseStatus, RoutedRequest, DELIVER_PATH, GOSSIP_PATH, RELAY_PATH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    #[default]
    Direct,
    /// Through this many peers before the exit.
    Routed(usize),
    /// Sent straight to the exit with this many peers listed before us.
    SpoofedDirect(usize),
}

impl Mode {
    /// Peers the mode needs besides ourselves.
    pub fn peers_needed(self) -> usize {
        match self {
            Mode::Direct => 0,
            Mode::Routed(n) | Mode::SpoofedDirect(n) => n,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Direct => f.write_str("direct"),
            Mode::Routed(n) => write!(f, "routed:{n}"),
            Mode::SpoofedDirect(n) => write!(f, "spoofed_direct:{n}"),
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "direct" {
            return Ok(Mode::Direct);
        }
        let (name, n) = s.split_once(':').ok_or_else(|| format!("unknown mode {s:?}"))?;
        let n: usize = n.parse().map_err(|_| format!("bad hop count in {s:?}"))?;
        if n + 2 > crate::wire::MAX_ROUTE_LEN {
            return Err(format!("{s:?} exceeds the route length limit"));
        }
        match name {
            "routed" if n > 0 => Ok(Mode::Routed(n)),
            "spoofed_direct" | "spoofed" if n > 0 => Ok(Mode::SpoofedDirect(n)),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("mode needs {need} peers, only {have} known")]
    NotEnoughPeers { need: usize, have: usize },
    #[error("no exit for url: {0}")]
    NoExit(#[from] RingError),
    #[error("exit {0} missing from roster")]
    UnknownExit(String),
    #[error("send failed: {0}")]
    Transport(#[from] TransportError),
    #[error("first hop answered HTTP {0}")]
    Rejected(u16),
    #[error("exit could not open the session key")]
    Unsealed,
    #[error("request failed: {}", .0.name())]
    Status(ResponseStatus),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("crypto: {0}")]
    Crypto(#[from] ocdn_core::CryptoError),
    #[error("roster refresh failed: {0}")]
    Refresh(String),
}

/// Maps URLs to the exit proxy holding their key.
#[derive(Debug, Clone)]
pub struct ExitDirectory {
    roster: Roster,
    ring: Ring,
}

impl ExitDirectory {
    /// `roster` must already be verified by the caller.
    pub fn new(roster: Roster) -> Result<Self, ocdn_core::RosterError> {
        let ring = roster.to_ring()?;
        Ok(ExitDirectory { roster, ring })
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    /// Address and key of the primary owner of the URL's encoding-0 position.
    pub fn lookup(&self, url: &CanonicalUrl) -> Result<(String, PublicKey), ClientError> {
        let owner = self.ring.primary_owner(&position_of_url(url, 0))?;
        let m = self.roster.member(owner).ok_or_else(|| ClientError::UnknownExit(owner.to_string()))?;
        Ok((m.address.clone(), m.public_key.clone()))
    }
}

/// A request ready to send, plus what we keep to read its answer.
pub struct BuiltRequest {
    pub message: RoutedRequest,
    pub first_hop: String,
    pub session_key: SessionKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fetched {
    pub content: Vec<u8>,
    pub request_id: [u8; 16],
    pub exit: String,
    pub route: Vec<String>,
    pub started_ms: f64,
    pub completed_ms: f64,
    /// Attempts made, 2 after a directory refresh.
    pub attempts: u32,
}

#[derive(Debug, Clone)]
enum Outcome {
    Opened { status: u8, content: Vec<u8>, at_ms: f64 },
    Unsealed,
}

pub type RosterSource = Box<dyn Fn() -> Result<Roster, String> + Send + Sync>;

#[derive(Debug, Default)]
pub struct ClientStats {
    pub originated: AtomicU64,
    pub forwarded: AtomicU64,
    pub accepted: AtomicU64,
    pub discarded: AtomicU64,
}

pub struct ClientNode {
    address: String,
    signing: SigningKey,
    directory: RwLock<ExitDirectory>,
    roster_source: Option<RosterSource>,
    transport: Arc<dyn Transport>,
    meter: Meter,
    rng: Mutex<ChaCha20Rng>,
    pending: Mutex<HashMap<[u8; 16], SessionKey>>,
    results: Mutex<HashMap<[u8; 16], Outcome>>,
    arrived: Condvar,
    peers: PeerTable,
    wait: Duration,
    stats: ClientStats,
}

impl ClientNode {
    pub fn new(
        address: impl Into<String>,
        directory: ExitDirectory,
        transport: Arc<dyn Transport>,
        meter: Meter,
        peer_window_secs: Option<u64>,
        seed: u64,
    ) -> Self {
        let address = address.into();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let signing = SigningKey::generate(&mut rng);
        let peers = PeerTable::new(address.clone(), peer_window_secs);
        ClientNode {
            address,
            signing,
            directory: RwLock::new(directory),
            roster_source: None,
            transport,
            meter,
            rng: Mutex::new(rng),
            pending: Mutex::new(HashMap::new()),
            results: Mutex::new(HashMap::new()),
            arrived: Condvar::new(),
            peers,
            wait: Duration::from_secs(30),
            stats: ClientStats::default(),
        }
    }

    /// Where to reload the roster from after a stale-directory failure.
    pub fn with_roster_source(mut self, source: RosterSource) -> Self {
        self.roster_source = Some(source);
        self
    }

    /// Real-time limit on waiting for a delivery.
    pub fn with_wait(mut self, wait: Duration) -> Self {
        self.wait = wait;
        self
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn peers(&self) -> &PeerTable {
        &self.peers
    }

    pub fn stats(&self) -> &ClientStats {
        &self.stats
    }

    pub fn pending_len(&self) -> usize {
        self.pending.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn set_directory(&self, directory: ExitDirectory) {
        *self.directory.write().unwrap_or_else(|e| e.into_inner()) = directory;
    }

    pub fn directory(&self) -> ExitDirectory {
        self.directory.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn refresh_directory(&self) -> Result<(), ClientError> {
        let source = self.roster_source.as_ref().ok_or_else(|| ClientError::Refresh("no roster source".into()))?;
        let roster = source().map_err(ClientError::Refresh)?;
        let dir = ExitDirectory::new(roster).map_err(|e| ClientError::Refresh(e.to_string()))?;
        self.set_directory(dir);
        Ok(())
    }

    /// Signs a fresh announcement of ourselves and keeps it for gossip.
    pub fn announce(&self, kind: AnnounceKind) -> Announcement {
        let ann = Announcement::sign(&self.signing, &self.address, kind, self.meter.clock().unix_secs());
        self.peers.set_own(ann.clone());
        ann
    }

    /// One push-pull exchange with `peer`.
    pub fn gossip_with(&self, peer: &str) -> Result<usize, ClientError> {
        let body = serde_json::to_vec(&self.peers.snapshot()).expect("announcements serialize");
        let resp = self.transport.http(&self.address, peer, HttpRequest::new("POST", GOSSIP_PATH).body(body))?;
        if !resp.is_success() {
            return Err(ClientError::Rejected(resp.status));
        }
        let anns = Announcement::parse_list(&resp.body).unwrap_or_default();
        Ok(self.peers.merge_all(anns, self.meter.clock().unix_secs()))
    }

    /// Anti-entropy round with one random live peer.
    pub fn gossip_round(&self) -> Option<Result<usize, ClientError>> {
        let peers = self.peers.live_peers(self.meter.clock().unix_secs());
        let peer = peers.choose(&mut *self.rng.lock().unwrap_or_else(|e| e.into_inner()))?.clone();
        Some(self.gossip_with(&peer))
    }

    /// Builds the wire message for `url` without sending it.
    pub fn build_request(&self, url: &CanonicalUrl, mode: Mode) -> Result<BuiltRequest, ClientError> {
        let (exit, exit_pub) = {
            let dir = self.directory.read().unwrap_or_else(|e| e.into_inner());
            self.meter.time(Op::ExitLookup, url.as_str().len(), || dir.lookup(url))?
        };
        let now = self.meter.clock().unix_secs();
        let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
        let candidates: Vec<String> = self.peers.live_peers(now).into_iter().filter(|p| *p != exit).collect();
        let need = mode.peers_needed();
        if candidates.len() < need {
            return Err(ClientError::NotEnoughPeers { need, have: candidates.len() });
        }
        let chosen: Vec<String> = candidates.choose_multiple(&mut *rng, need).cloned().collect();
        let me = self.address.clone();
        let (route, first_hop) = match mode {
            Mode::Direct => (vec![me, exit.clone()], exit.clone()),
            Mode::Routed(_) => {
                let first = chosen[0].clone();
                let mut r = vec![me];
                r.extend(chosen);
                r.push(exit.clone());
                (r, first)
            }
            Mode::SpoofedDirect(_) => {
                let mut r = chosen;
                r.push(me);
                r.push(exit.clone());
                (r, exit.clone())
            }
        };
        let session_key = SessionKey::generate(&mut *rng);
        let sealed_key =
            self.meter.time(Op::SessionKeySeal, 32, || seal_session_key(&mut *rng, &exit_pub, &session_key))?;
        let url_ciphertext =
            self.meter.time(Op::UrlEncrypt, url.as_str().len(), || encrypt_url(&mut *rng, &session_key, url));
        let mut request_id = [0u8; 16];
        rng.fill_bytes(&mut request_id);
        Ok(BuiltRequest {
            message: RoutedRequest { request_id, sealed_key, route, url_ciphertext },
            first_hop,
            session_key,
        })
    }

    fn take_outcome(&self, id: &[u8; 16]) -> Result<Outcome, ClientError> {
        let deadline = Instant::now() + self.wait;
        let mut results = self.results.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(o) = results.remove(id) {
                return Ok(o);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(ClientError::Timeout(self.wait));
            }
            results = self.arrived.wait_timeout(results, left).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    fn attempt(&self, url: &CanonicalUrl, mode: Mode) -> Result<(Fetched, Option<ResponseStatus>), ClientError> {
        let started_ms = self.meter.clock().now_ms();
        let built = self.build_request(url, mode)?;
        let id = built.message.request_id;
        self.pending.lock().unwrap_or_else(|e| e.into_inner()).insert(id, built.session_key);
        self.stats.originated.fetch_add(1, Ordering::Relaxed);
        let sent = self.transport.http(&self.address, &built.first_hop, built.message.to_http());
        let outcome = match sent {
            Ok(r) if r.is_success() => self.take_outcome(&id),
            Ok(r) => Err(ClientError::Rejected(r.status)),
            Err(e) => Err(e.into()),
        };
        if outcome.is_err() {
            self.pending.lock().unwrap_or_else(|e| e.into_inner()).remove(&id);
        }
        let (status, content, at_ms) = match outcome? {
            Outcome::Opened { status, content, at_ms } => (status, content, at_ms),
            Outcome::Unsealed => return Err(ClientError::Unsealed),
        };
        let status = ResponseStatus::from_code(status).unwrap_or(ResponseStatus::BadRequest);
        let exit = built.message.terminal().to_string();
        let fetched = Fetched {
            content,
            request_id: id,
            exit,
            route: built.message.route,
            started_ms,
            completed_ms: at_ms,
            attempts: 1,
        };
        Ok((fetched, (status != ResponseStatus::Ok).then_some(status)))
    }

    /// Fetches `url`, refreshing the directory and retrying once when the
    /// exit turns out not to own it.
    pub fn get(&self, url: &CanonicalUrl, mode: Mode) -> Result<Fetched, ClientError> {
        let (fetched, err) = self.attempt(url, mode)?;
        match err {
            None => Ok(fetched),
            Some(ResponseStatus::NotOwner) if self.roster_source.is_some() => {
                self.refresh_directory()?;
                let (mut again, err) = self.attempt(url, mode)?;
                again.attempts = 2;
                match err {
                    None => Ok(again),
                    Some(s) => Err(ClientError::Status(s)),
                }
            }
            Some(s) => Err(ClientError::Status(s)),
        }
    }

    /// Like [`ClientNode::get`] but returns the failing status together with timing.
    pub fn get_detailed(
        &self,
        url: &CanonicalUrl,
        mode: Mode,
    ) -> Result<(Fetched, Option<ResponseStatus>), ClientError> {
        self.attempt(url, mode)
    }

    /// Passes a relay message, unchanged, to the hop after us.
    pub fn forward(&self, req: HttpRequest) -> HttpResponse {
        let routed = match RoutedRequest::from_http(&req) {
            Ok(r) => r,
            Err(e) => return HttpResponse::text(400, &e.to_string()),
        };
        let Some(pos) = routed.route.iter().position(|h| *h == self.address) else {
            return HttpResponse::text(400, "not on route");
        };
        if pos + 1 == routed.route.len() {
            return HttpResponse::text(421, "client proxies are never terminal");
        }
        let next = &routed.route[pos + 1];
        self.stats.forwarded.fetch_add(1, Ordering::Relaxed);
        match self.transport.http(&self.address, next, req) {
            Ok(r) => HttpResponse::new(r.status),
            Err(e) => {
                debug!(next = %next, error = %e, "forward dropped");
                HttpResponse::new(202)
            }
        }
    }

    /// Opens a delivery if it answers one of our requests; anything else is
    /// dropped without a trace.
    pub fn accept_delivery(&self, req: &HttpRequest) -> HttpResponse {
        let Ok(d) = Delivery::from_http(req) else {
            return HttpResponse::new(200);
        };
        let skey = self.pending.lock().unwrap_or_else(|e| e.into_inner()).get(&d.request_id).cloned();
        let Some(skey) = skey else {
            self.stats.discarded.fetch_add(1, Ordering::Relaxed);
            return HttpResponse::new(200);
        };
        let outcome = if d.unsealed_failed {
            Some(Outcome::Unsealed)
        } else {
            self.meter
                .time(Op::ClientDecrypt, d.body.len(), || open_response(&skey, &d.request_id, &d.body))
                .ok()
                .map(|(status, content)| Outcome::Opened { status, content, at_ms: self.meter.clock().now_ms() })
        };
        match outcome {
            Some(o) if self.pending.lock().unwrap_or_else(|e| e.into_inner()).remove(&d.request_id).is_some() => {
                self.stats.accepted.fetch_add(1, Ordering::Relaxed);
                self.results.lock().unwrap_or_else(|e| e.into_inner()).insert(d.request_id, o);
                self.arrived.notify_all();
            }
            _ => {
                debug!(req = %request_id_hex(&d.request_id), "delivery discarded");
                self.stats.discarded.fetch_add(1, Ordering::Relaxed);
            }
        }
        HttpResponse::new(200)
    }

    fn gossip(&self, req: &HttpRequest) -> HttpResponse {
        match Announcement::parse_list(&req.body) {
            Ok(anns) => {
                self.peers.merge_all(anns, self.meter.clock().unix_secs());
                let body = serde_json::to_vec(&self.peers.snapshot()).expect("announcements serialize");
                HttpResponse::with_body(200, body).header("Content-Type", "application/json")
            }
            Err(e) => HttpResponse::text(400, &e.to_string()),
        }
    }
}

impl Service for ClientNode {
    fn handle_http(&self, _peer: &str, req: HttpRequest) -> HttpResponse {
        match (req.method.as_str(), req.path.as_str()) {
            ("POST", RELAY_PATH) => self.forward(req),
            ("POST", DELIVER_PATH) => self.accept_delivery(&req),
            ("POST", GOSSIP_PATH) => self.gossip(&req),
            _ => HttpResponse::new(404),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_parse_and_print() {
        for (s, m) in
            [("direct", Mode::Direct), ("routed:2", Mode::Routed(2)), ("spoofed_direct:3", Mode::SpoofedDirect(3))]
        {
            assert_eq!(s.parse::<Mode>().unwrap(), m);
            assert_eq!(m.to_string(), s);
        }
        assert_eq!("spoofed:1".parse::<Mode>().unwrap(), Mode::SpoofedDirect(1));
        for bad in ["", "routed", "routed:0", "routed:x", "routed:15", "onion:2"] {
            assert!(bad.parse::<Mode>().is_err(), "{bad}");
        }
    }
}
