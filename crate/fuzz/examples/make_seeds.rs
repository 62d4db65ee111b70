//! Regenerates the checked-in corpus seeds: `cargo run --example make_seeds`.

use std::fs;
use std::path::Path;

use ed25519_dalek::SigningKey;
use ocdn_core::{
    derive_obfuscated_id, encrypt_url, seal_content, seal_response, seal_session_key, CanonicalUrl, Roster,
    RosterMember, SelfCertifyingId, SessionKey, SharedKey,
};
use ocdn_fuzz::{proxy_keypair, REQUEST_ID, SESSION_KEY, SHARED_KEY};
use ocdn_node::config::NodeConfig;
use ocdn_node::http::{HttpRequest, HttpResponse};
use ocdn_node::keydist::{KeyQuery, KeyResponse, RefusalCode, SrvRecord};
use ocdn_node::keystore::{deterministic_keypair, render_keypair, render_public};
use ocdn_node::membership::{AnnounceKind, Announcement};
use ocdn_node::wire::{Delivery, RoutedRequest};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn put(target: &str, name: &str, bytes: impl AsRef<[u8]>) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(target);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let url = CanonicalUrl::parse("http://site.example/a/b.html?q=1").unwrap();
    let shared = SharedKey::with_expiry(SHARED_KEY, u64::MAX);
    let skey = SessionKey::from_bytes(SESSION_KEY);
    let proxy = proxy_keypair();
    let exit = "127.0.0.1:8443";
    let id = SelfCertifyingId::new(exit, proxy.public_key());

    put("envelope", "small", seal_content(&mut rng, &shared, b"hello").unwrap().to_bytes());
    put("envelope", "two_blocks", seal_content(&mut rng, &shared, &[5u8; 5000]).unwrap().to_bytes());
    put("envelope", "empty", seal_content(&mut rng, &shared, b"").unwrap().to_bytes());

    let get = HttpRequest::new("GET", "/obj/00ff").header("Host", "cache");
    put("http_request", "get", get.encode());
    put(
        "http_request",
        "post",
        HttpRequest::new("PUT", "/obj/1").header("X-Sig", "abc").body(b"body".to_vec()).encode(),
    );
    put("http_response", "ok", HttpResponse::text(200, "fine").encode());
    put("http_response", "not_found", HttpResponse::new(404).encode());

    let sealed_key = seal_session_key(&mut rng, proxy.public_key(), &skey).unwrap();
    let routed = RoutedRequest {
        request_id: REQUEST_ID,
        sealed_key: sealed_key.clone(),
        route: vec!["10.3.0.1:7000".into(), "10.3.0.2:7000".into(), exit.into()],
        url_ciphertext: encrypt_url(&mut rng, &skey, &url),
    };
    put("relay", "routed", routed.to_http().encode());
    put("relay", "route_header", "10.3.0.1:7000,10.3.0.2:7000,127.0.0.1:8443");
    let delivery = Delivery { request_id: REQUEST_ID, unsealed_failed: false, body: vec![1, 2, 3] };
    put("delivery", "ok", delivery.to_http().encode());
    put("delivery", "unsealed", Delivery { unsealed_failed: true, body: vec![], ..delivery }.to_http().encode());

    let q =
        KeyQuery { qname: url.as_str().into(), proxy_id: id.to_string(), proxy_pub: proxy.public_key().to_base64() };
    put("keydist_query", "query", q.to_line());
    let srv =
        SrvRecord { sealed_key: "AAAA".into(), key_id: "00112233".into(), expires_at: 1_700_000_000, encodings: 2 };
    put("keydist_response", "ok", KeyResponse::Ok { srv }.to_line());
    put("keydist_response", "refused", KeyResponse::Refused { code: RefusalCode::NotOwner }.to_line());

    let authority = deterministic_keypair(PROXY_SEED_AUTHORITY);
    let mut roster = Roster::new(3, vec![RosterMember::new(exit, proxy.public_key().clone())]);
    roster.vnodes = 8;
    put("roster", "unsigned", roster.render());
    roster.sign(&authority);
    put("roster", "signed", roster.render());

    let sk = SigningKey::from_bytes(&[4; 32]);
    let anns = vec![
        Announcement::sign(&sk, "10.3.0.1:7000", AnnounceKind::Join, 1_700_000_000),
        Announcement::sign(&sk, "10.3.0.2:7000", AnnounceKind::Leave, 1_700_000_100),
    ];
    put("announcement", "two", serde_json::to_vec(&anns).unwrap());

    put("url", "simple", url.as_str());
    put("url", "messy", "HTTP://Site.Example:80/./a/../b%7e?x#frag");
    put("self_certifying_id", "id", id.to_string());
    put("obfuscated_id", "id", derive_obfuscated_id(&shared, &url, 1).unwrap().to_hex());

    put("session", "url", encrypt_url(&mut rng, &skey, &url));
    put("session", "response", seal_response(&mut rng, &skey, &REQUEST_ID, 0, b"content").unwrap());
    put("session", "sealed_key", sealed_key);

    let cfg = NodeConfig::parse(concat!(
        "role = \"exit\"\nlisten = \"0.0.0.0:8443\"\nroster = \"ring.roster\"\nkeypair = \"exit.key\"\n",
        "[exit]\ncaches = [\"127.0.0.1:8080\"]\nkeydist = [{ prefix = \"http://a.example/\", address = \"127.0.0.1:5353\" }]\n",
        "[exit.flashcrowd]\nthreshold_per_sec = 20.0\n[client]\nmode = \"routed:2\"\n",
    ))
    .unwrap();
    put("node_config", "exit", cfg.to_toml());
    put("node_config", "cache", "role = \"cache\"\nlisten = \"127.0.0.1:8080\"\n[cache]\ncapacity = 10\n");

    put(
        "plan_file",
        "inline",
        r#"{"targets": ["127.0.0.1:8080"], "objects": [{"url": "http://a.example/x", "content": "hi"},
            {"url": "http://a.example/y", "content_b64": "AAEC", "participation": "both"}],
            "popularity": {"http://a.example/x": 0.75, "http://a.example/y": 0.25}, "encoding_cap": 4}"#,
    );
    put(
        "scenario",
        "list",
        r#"{"nodes": {"clients": 4}, "workload": {"list": [{"size": 10, "mode": "routed:2", "count": 3}]}}"#,
    );
    put(
        "scenario",
        "zipf",
        r#"{"alpha_ms": 10, "workload": {"zipf": {"sizes": "surge", "flatten": true, "modes": ["direct"]}}, "seed": 3}"#,
    );

    put("keystore", "public", render_public(proxy.public_key()));
    put("keystore", "keypair", render_keypair(&deterministic_keypair(PROXY_SEED_AUTHORITY)));
}

const PROXY_SEED_AUTHORITY: u64 = 0xa17;
