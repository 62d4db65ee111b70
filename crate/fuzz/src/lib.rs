//! Fuzz target bodies, shared by the libFuzzer binaries and the corpus
//! replay test. Every function must return normally on any input.

use std::path::Path;
use std::sync::OnceLock;

use ocdn_core::{
    decrypt_url, open_content, open_response, open_session_key, CanonicalUrl, ContentEnvelope, KeyPair, ObfuscatedId,
    Roster, SelfCertifyingId, SessionKey, SharedKey,
};
use ocdn_node::config::NodeConfig;
use ocdn_node::http::{HttpRequest, HttpResponse};
use ocdn_node::keydist::{KeyQuery, KeyResponse};
use ocdn_node::keystore::{deterministic_keypair, parse_keypair, parse_public};
use ocdn_node::membership::Announcement;
use ocdn_node::publisher::PlanFile;
use ocdn_node::wire::{parse_request_id, parse_route, Delivery, RoutedRequest};
use ocdn_sim::Scenario;

/// Fixed keys the seeds were made with.
pub const SHARED_KEY: [u8; 32] = [7; 32];
pub const SESSION_KEY: [u8; 32] = [9; 32];
pub const REQUEST_ID: [u8; 16] = [3; 16];
pub const PROXY_SEED: u64 = 0xf022;

pub fn proxy_keypair() -> &'static KeyPair {
    static KP: OnceLock<KeyPair> = OnceLock::new();
    KP.get_or_init(|| deterministic_keypair(PROXY_SEED))
}

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

pub fn envelope(data: &[u8]) {
    if let Ok(env) = ContentEnvelope::from_bytes(data) {
        assert_eq!(env.to_bytes(), data);
        let _ = open_content(&SharedKey::with_expiry(SHARED_KEY, u64::MAX), &env);
    }
}

pub fn http_request(data: &[u8]) {
    if let Ok(r) = HttpRequest::parse(data) {
        let once = r.encode();
        let again = HttpRequest::parse(&once).expect("encoded request parses");
        assert_eq!(again.encode(), once);
        assert_eq!(again.body, r.body);
    }
}

pub fn http_response(data: &[u8]) {
    if let Ok(r) = HttpResponse::parse(data) {
        let once = r.encode();
        let again = HttpResponse::parse(&once).expect("encoded response parses");
        assert_eq!(again.encode(), once);
        assert_eq!((again.status, again.body), (r.status, r.body));
    }
}

/// Relay messages, plus the header parsers on their own.
pub fn relay(data: &[u8]) {
    if let Ok(req) = HttpRequest::parse(data) {
        if let Ok(m) = RoutedRequest::from_http(&req) {
            assert_eq!(RoutedRequest::from_http(&m.to_http()).expect("round trip"), m);
            assert!(!m.terminal().is_empty());
        }
    }
    if let Some(s) = text(data) {
        if let Ok(hops) = parse_route(s) {
            assert_eq!(parse_route(&hops.join(",")).expect("round trip"), hops);
        }
        let _ = parse_request_id(s);
    }
}

pub fn delivery(data: &[u8]) {
    if let Ok(req) = HttpRequest::parse(data) {
        if let Ok(d) = Delivery::from_http(&req) {
            assert_eq!(Delivery::from_http(&d.to_http()).expect("round trip"), d);
        }
    }
}

pub fn keydist_query(data: &[u8]) {
    if let Some(q) = text(data).and_then(|s| KeyQuery::parse(s).ok()) {
        assert_eq!(KeyQuery::parse(&q.to_line()).expect("round trip"), q);
        let _ = SelfCertifyingId::parse(&q.proxy_id);
    }
}

pub fn keydist_response(data: &[u8]) {
    if let Some(r) = text(data).and_then(|s| KeyResponse::parse(s).ok()) {
        assert_eq!(KeyResponse::parse(&r.to_line()).expect("round trip"), r);
    }
}

pub fn roster(data: &[u8]) {
    if let Some(r) = text(data).and_then(|s| Roster::parse(s).ok()) {
        assert_eq!(Roster::parse(&r.render()).expect("round trip"), r);
        let _ = r.verify(proxy_keypair().public_key());
        let _ = r.to_ring();
    }
}

pub fn announcement(data: &[u8]) {
    if let Ok(list) = Announcement::parse_list(data) {
        for a in &list {
            let _ = a.verify();
        }
        let body = serde_json::to_vec(&list).expect("announcements serialize");
        assert_eq!(Announcement::parse_list(&body).expect("round trip"), list);
    }
}

pub fn url(data: &[u8]) {
    if let Some(u) = text(data).and_then(|s| CanonicalUrl::parse(s).ok()) {
        assert_eq!(CanonicalUrl::parse(u.as_str()).expect("canonical form parses"), u);
        let _ = u.origin_prefix();
    }
}

pub fn self_certifying_id(data: &[u8]) {
    if let Some(id) = text(data).and_then(|s| SelfCertifyingId::parse(s).ok()) {
        assert_eq!(SelfCertifyingId::parse(&id.to_string()).expect("round trip"), id);
    }
}

pub fn obfuscated_id(data: &[u8]) {
    if let Some(id) = text(data).and_then(|s| ObfuscatedId::from_hex(s).ok()) {
        assert_eq!(ObfuscatedId::from_hex(&id.to_hex()).expect("round trip"), id);
    }
}

/// Session-layer ciphertexts: URL, response and the RSA-sealed session key.
pub fn session(data: &[u8]) {
    let skey = SessionKey::from_bytes(SESSION_KEY);
    let _ = decrypt_url(&skey, data);
    let _ = open_response(&skey, &REQUEST_ID, data);
    let _ = open_session_key(proxy_keypair(), data);
}

pub fn node_config(data: &[u8]) {
    if let Some(c) = text(data).and_then(|s| NodeConfig::parse(s).ok()) {
        let t = c.to_toml();
        assert_eq!(NodeConfig::parse(&t).expect("round trip"), c);
    }
}

pub fn plan_file(data: &[u8]) {
    if let Some(p) = text(data).and_then(|s| PlanFile::parse(s).ok()) {
        // Plans naming files would read the local disk.
        if p.objects.iter().all(|o| o.file.is_none()) {
            let _ = p.into_plan(Path::new("/nonexistent"), Vec::new());
        }
    }
}

pub fn scenario(data: &[u8]) {
    if let Some(s) = text(data).and_then(|t| Scenario::parse(t).ok()) {
        assert_eq!(Scenario::parse(&s.to_json()).expect("round trip"), s);
    }
}

pub fn keystore(data: &[u8]) {
    if let Some(s) = text(data) {
        let _ = parse_public(s);
        let _ = parse_keypair(s);
    }
}

/// Every target by name; the corpus directory of each has the same name.
pub const TARGETS: &[(&str, fn(&[u8]))] = &[
    ("envelope", envelope),
    ("http_request", http_request),
    ("http_response", http_response),
    ("relay", relay),
    ("delivery", delivery),
    ("keydist_query", keydist_query),
    ("keydist_response", keydist_response),
    ("roster", roster),
    ("announcement", announcement),
    ("url", url),
    ("self_certifying_id", self_certifying_id),
    ("obfuscated_id", obfuscated_id),
    ("session", session),
    ("node_config", node_config),
    ("plan_file", plan_file),
    ("scenario", scenario),
    ("keystore", keystore),
];
