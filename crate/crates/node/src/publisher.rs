//! Origin-side publishing: derive ids, seal envelopes, sign and push them to
//! cache nodes; update content in place; rotate keys.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ocdn_core::sign::{sign_bytes, sign_update_bytes};
use ocdn_core::{derive_obfuscated_id, seal_content, CanonicalUrl, KeyPair, ObfuscatedId, SharedKey, MAX_ENCODINGS};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cachenode::{plain_message, plain_path, CACHE_PREFIX};
use crate::http::HttpRequest;
use crate::keydist::KeySource;
use crate::keystore;
use crate::meter::{Meter, Op};
use crate::transport::Transport;
use crate::wire::{HDR_ORIGIN, HDR_SIG};

pub const DEFAULT_KEY_LIFETIME_SECS: u64 = 7 * 24 * 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Participation {
    #[default]
    Encrypted,
    Plaintext,
    Both,
}

impl Participation {
    pub fn encrypted(self) -> bool {
        matches!(self, Participation::Encrypted | Participation::Both)
    }

    pub fn plaintext(self) -> bool {
        matches!(self, Participation::Plaintext | Participation::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanObject {
    pub url: CanonicalUrl,
    pub content: Vec<u8>,
    pub encodings: u8,
    pub participation: Participation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PublishPlan {
    pub objects: Vec<PlanObject>,
    pub targets: Vec<String>,
}

#[derive(Debug, Error)]
pub enum PublishError {
    #[error("plan has no cache targets")]
    NoTargets,
    #[error("encoding count {0} outside 1..={MAX_ENCODINGS}")]
    EncodingCount(u8),
    #[error("{0} was never published")]
    NotPublished(String),
    #[error("no key for prefix {0}")]
    NoKey(String),
    #[error("key for {0} has expired; rotate it first")]
    KeyExpired(String),
    #[error("popularity mapping is empty or does not sum to 1")]
    BadPopularity,
    #[error("some objects reached no cache target")]
    Incomplete(PublishReport),
    #[error("rotation left targets without every object: {unpushed:?}")]
    PartialRotation { report: PublishReport, unpushed: Vec<String>, committed: bool },
    #[error("crypto: {0}")]
    Crypto(#[from] ocdn_core::CryptoError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("plan file: {0}")]
    Plan(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushResult {
    pub url: String,
    /// `None` for the plaintext copy.
    pub encoding: Option<u8>,
    pub id: Option<ObfuscatedId>,
    pub succeeded: Vec<String>,
    pub failed: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PublishReport {
    pub pushes: Vec<PushResult>,
}

impl PublishReport {
    pub fn complete(&self) -> bool {
        self.pushes.iter().all(|p| !p.succeeded.is_empty())
    }

    /// Targets that missed at least one push.
    pub fn unpushed_targets(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.pushes.iter().flat_map(|p| p.failed.iter().map(|(t, _)| t.clone())).collect();
        set.into_iter().collect()
    }

    pub fn ids(&self) -> Vec<ObfuscatedId> {
        self.pushes.iter().filter_map(|p| p.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublishedObject {
    pub encodings: u8,
    pub participation: Participation,
    pub ids: Vec<ObfuscatedId>,
    pub content: Vec<u8>,
}

/// Everything the origin knows: its signing key, shared keys per URL prefix
/// and the published index.
#[derive(Debug, Clone)]
pub struct OriginState {
    pub keypair: KeyPair,
    pub keys: BTreeMap<String, SharedKey>,
    pub published: BTreeMap<String, PublishedObject>,
    pub targets: Vec<String>,
    pub key_lifetime_secs: u64,
}

impl OriginState {
    pub fn new(keypair: KeyPair) -> Self {
        OriginState {
            keypair,
            keys: BTreeMap::new(),
            published: BTreeMap::new(),
            targets: Vec::new(),
            key_lifetime_secs: DEFAULT_KEY_LIFETIME_SECS,
        }
    }

    pub fn key_for(&self, url: &CanonicalUrl) -> Option<&SharedKey> {
        self.keys.get(&url.origin_prefix())
    }

    /// Recomputes every published id from the shared keys.
    pub fn rederive(&self, url: &str) -> Result<Vec<ObfuscatedId>, PublishError> {
        let obj = self.published.get(url).ok_or_else(|| PublishError::NotPublished(url.to_string()))?;
        let curl = CanonicalUrl::parse(url).map_err(|e| PublishError::Plan(e.to_string()))?;
        let key = self.key_for(&curl).ok_or_else(|| PublishError::NoKey(curl.origin_prefix()))?;
        if !obj.participation.encrypted() {
            return Ok(Vec::new());
        }
        (0..obj.encodings).map(|i| Ok(derive_obfuscated_id(key, &curl, i)?)).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    keypair: String,
    key_lifetime_secs: u64,
    targets: Vec<String>,
    keys: Vec<KeyFileEntry>,
    published: Vec<PublishedFileEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyFileEntry {
    prefix: String,
    key: String,
    expires_at: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PublishedFileEntry {
    url: String,
    encodings: u8,
    participation: Participation,
    ids: Vec<ObfuscatedId>,
    object: String,
}

const STATE_FILE: &str = "origin.json";
const OBJECTS_DIR: &str = "objects";

impl OriginState {
    /// Writes the state into `dir`; files holding key material are owner-only.
    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join(OBJECTS_DIR))?;
        let mut published = Vec::new();
        for (url, obj) in &self.published {
            let name = format!("{}.bin", hex::encode(Sha256::digest(url.as_bytes())));
            fs::write(dir.join(OBJECTS_DIR).join(&name), &obj.content)?;
            published.push(PublishedFileEntry {
                url: url.clone(),
                encodings: obj.encodings,
                participation: obj.participation,
                ids: obj.ids.clone(),
                object: name,
            });
        }
        let file = StateFile {
            keypair: B64.encode(self.keypair.to_der()),
            key_lifetime_secs: self.key_lifetime_secs,
            targets: self.targets.clone(),
            keys: self
                .keys
                .iter()
                .map(|(p, k)| KeyFileEntry {
                    prefix: p.clone(),
                    key: hex::encode(k.key_bytes()),
                    expires_at: k.expires_at(),
                })
                .collect(),
            published,
        };
        let json = serde_json::to_vec_pretty(&file).map_err(io::Error::other)?;
        keystore::write_private(&dir.join(STATE_FILE), &json)
    }

    pub fn load(dir: &Path) -> io::Result<Self> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let file: StateFile = serde_json::from_slice(&fs::read(dir.join(STATE_FILE))?)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let der = B64.decode(&file.keypair).map_err(|_| bad("keypair encoding"))?;
        let keypair = KeyPair::from_der(&der).map_err(|e| bad(&e.to_string()))?;
        let mut keys = BTreeMap::new();
        for k in file.keys {
            let mut bytes = [0u8; 32];
            hex::decode_to_slice(&k.key, &mut bytes).map_err(|_| bad("shared key encoding"))?;
            keys.insert(k.prefix, SharedKey::with_expiry(bytes, k.expires_at));
        }
        let mut published = BTreeMap::new();
        for p in file.published {
            if p.object.contains('/') || p.object.contains("..") {
                return Err(bad("object file name"));
            }
            let content = fs::read(dir.join(OBJECTS_DIR).join(&p.object))?;
            published.insert(
                p.url,
                PublishedObject { encodings: p.encodings, participation: p.participation, ids: p.ids, content },
            );
        }
        Ok(OriginState { keypair, keys, published, targets: file.targets, key_lifetime_secs: file.key_lifetime_secs })
    }

    pub fn state_file(dir: &Path) -> PathBuf {
        dir.join(STATE_FILE)
    }
}

/// A [`KeySource`] view of a live origin state.
pub struct OriginKeys(pub Arc<RwLock<OriginState>>);

impl KeySource for OriginKeys {
    fn lookup(&self, url: &CanonicalUrl) -> Option<(SharedKey, u8)> {
        let s = self.0.read().unwrap_or_else(|e| e.into_inner());
        let key = crate::keydist::longest_prefix(s.keys.iter().map(|(p, k)| (p.as_str(), k)), url.as_str())?;
        let n = s.published.get(url.as_str()).map(|o| o.encodings).unwrap_or(1);
        Some((key.clone(), n))
    }
}

/// `n_i = clamp(round(share_i / min positive share), 1, cap)`.
pub fn choose_encoding_counts(
    popularity: &BTreeMap<String, f64>,
    cap: u8,
) -> Result<BTreeMap<String, u8>, PublishError> {
    if popularity.is_empty() || popularity.values().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(PublishError::BadPopularity);
    }
    let total: f64 = popularity.values().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(PublishError::BadPopularity);
    }
    let min = popularity.values().copied().filter(|s| *s > 0.0).fold(f64::INFINITY, f64::min);
    let cap = cap.clamp(1, MAX_ENCODINGS);
    Ok(popularity
        .iter()
        .map(|(u, s)| {
            let n = if *s > 0.0 { (s / min).round().clamp(1.0, cap as f64) as u8 } else { 1 };
            (u.clone(), n)
        })
        .collect())
}

/// The origin server.
pub struct Publisher {
    address: String,
    state: Arc<RwLock<OriginState>>,
    transport: Arc<dyn Transport>,
    meter: Meter,
    rng: Mutex<ChaCha20Rng>,
}

impl Publisher {
    pub fn new(
        address: impl Into<String>,
        state: OriginState,
        transport: Arc<dyn Transport>,
        meter: Meter,
        seed: u64,
    ) -> Self {
        Publisher {
            address: address.into(),
            state: Arc::new(RwLock::new(state)),
            transport,
            meter,
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
        }
    }

    pub fn state(&self) -> Arc<RwLock<OriginState>> {
        self.state.clone()
    }

    pub fn key_source(&self) -> Arc<dyn KeySource> {
        Arc::new(OriginKeys(self.state.clone()))
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, OriginState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, OriginState> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    fn ensure_key(&self, url: &CanonicalUrl) -> Result<SharedKey, PublishError> {
        let now = self.meter.clock().unix_secs();
        let prefix = url.origin_prefix();
        let mut s = self.write();
        if let Some(k) = s.keys.get(&prefix) {
            return if k.is_valid_at(now) { Ok(k.clone()) } else { Err(PublishError::KeyExpired(prefix)) };
        }
        let lifetime = s.key_lifetime_secs;
        let key = SharedKey::generate(&mut *self.rng.lock().unwrap_or_else(|e| e.into_inner()), now, lifetime)?;
        s.keys.insert(prefix, key.clone());
        Ok(key)
    }

    fn push(&self, targets: &[String], req: HttpRequest) -> (Vec<String>, Vec<(String, String)>) {
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for (t, r) in targets.iter().zip(self.transport.fan_out(&self.address, targets, &req)) {
            match r {
                Ok(resp) if resp.is_success() => ok.push(t.clone()),
                Ok(resp) => failed.push((t.clone(), format!("HTTP {}", resp.status))),
                Err(e) => failed.push((t.clone(), e.to_string())),
            }
        }
        (ok, failed)
    }

    /// Seals `content` once per encoding and pushes each envelope, byte-identical, to every target.
    fn push_encrypted(
        &self,
        key: &SharedKey,
        url: &CanonicalUrl,
        content: &[u8],
        encodings: u8,
        targets: &[String],
    ) -> Result<(Vec<ObfuscatedId>, Vec<PushResult>), PublishError> {
        let origin_pub = self.read().keypair.public_key().to_base64();
        let mut ids = Vec::new();
        let mut results = Vec::new();
        for i in 0..encodings {
            let id = derive_obfuscated_id(key, url, i)?;
            let env = self.meter.time(Op::ContentSeal, content.len(), || {
                seal_content(&mut *self.rng.lock().unwrap_or_else(|e| e.into_inner()), key, content)
            })?;
            let bytes = env.to_bytes();
            let sig =
                self.meter.time(Op::UpdateSign, bytes.len(), || sign_update_bytes(&self.read().keypair, &id, &bytes));
            let req = HttpRequest::new("PUT", format!("{CACHE_PREFIX}{}", id.to_hex()))
                .header(HDR_ORIGIN, origin_pub.clone())
                .header(HDR_SIG, B64.encode(sig))
                .body(bytes);
            let (succeeded, failed) = self.push(targets, req);
            ids.push(id);
            results.push(PushResult {
                url: url.as_str().to_string(),
                encoding: Some(i),
                id: Some(id),
                succeeded,
                failed,
            });
        }
        Ok((ids, results))
    }

    fn push_plain(&self, url: &CanonicalUrl, content: &[u8], targets: &[String]) -> PushResult {
        let path = plain_path(url);
        let (origin_pub, sig) = {
            let s = self.read();
            (s.keypair.public_key().to_base64(), sign_bytes(&s.keypair, &plain_message(&path, content)))
        };
        let req = HttpRequest::new("PUT", path)
            .header(HDR_ORIGIN, origin_pub)
            .header(HDR_SIG, B64.encode(sig))
            .body(content.to_vec());
        let (succeeded, failed) = self.push(targets, req);
        PushResult { url: url.as_str().to_string(), encoding: None, id: None, succeeded, failed }
    }

    fn publish_one(&self, obj: &PlanObject, targets: &[String]) -> Result<Vec<PushResult>, PublishError> {
        if obj.encodings == 0 || obj.encodings > MAX_ENCODINGS {
            return Err(PublishError::EncodingCount(obj.encodings));
        }
        let mut results = Vec::new();
        let mut ids = Vec::new();
        if obj.participation.encrypted() {
            let key = self.ensure_key(&obj.url)?;
            let (i, r) = self.push_encrypted(&key, &obj.url, &obj.content, obj.encodings, targets)?;
            ids = i;
            results.extend(r);
        }
        if obj.participation.plaintext() {
            results.push(self.push_plain(&obj.url, &obj.content, targets));
        }
        let mut s = self.write();
        s.published.insert(
            obj.url.as_str().to_string(),
            PublishedObject {
                encodings: obj.encodings,
                participation: obj.participation,
                ids,
                content: obj.content.clone(),
            },
        );
        for t in targets {
            if !s.targets.contains(t) {
                s.targets.push(t.clone());
            }
        }
        Ok(results)
    }

    /// Publishes every object of `plan` to every target. Succeeds when each
    /// `(url, encoding)` landed on at least one target.
    pub fn publish(&self, plan: &PublishPlan) -> Result<PublishReport, PublishError> {
        if plan.targets.is_empty() {
            return Err(PublishError::NoTargets);
        }
        let mut report = PublishReport::default();
        for obj in &plan.objects {
            report.pushes.extend(self.publish_one(obj, &plan.targets)?);
        }
        if report.complete() {
            Ok(report)
        } else {
            Err(PublishError::Incomplete(report))
        }
    }

    /// Replaces a published object's content under the same ids.
    pub fn update_content(&self, url: &CanonicalUrl, content: Vec<u8>) -> Result<PublishReport, PublishError> {
        let (encodings, participation, targets) = {
            let s = self.read();
            let obj = s.published.get(url.as_str()).ok_or_else(|| PublishError::NotPublished(url.to_string()))?;
            (obj.encodings, obj.participation, s.targets.clone())
        };
        let plan =
            PublishPlan { objects: vec![PlanObject { url: url.clone(), content, encodings, participation }], targets };
        self.publish(&plan)
    }

    /// Replaces the key for `prefix`, re-seals every object under it and
    /// pushes the new envelopes. The new key is committed once every
    /// `(url, encoding)` reached at least one target.
    pub fn rotate_key(&self, prefix: &str) -> Result<PublishReport, PublishError> {
        let now = self.meter.clock().unix_secs();
        let (old, lifetime, targets, objects) = {
            let s = self.read();
            let objects: Vec<(String, PublishedObject)> = s
                .published
                .iter()
                .filter(|(u, o)| u.starts_with(prefix) && o.participation.encrypted())
                .map(|(u, o)| (u.clone(), o.clone()))
                .collect();
            (s.keys.get(prefix).cloned(), s.key_lifetime_secs, s.targets.clone(), objects)
        };
        let old = old.ok_or_else(|| PublishError::NoKey(prefix.to_string()))?;
        let new_key = loop {
            let k = SharedKey::generate(&mut *self.rng.lock().unwrap_or_else(|e| e.into_inner()), now, lifetime)?;
            if k.key_id() != old.key_id() {
                break k;
            }
        };
        let mut report = PublishReport::default();
        let mut new_ids = Vec::new();
        for (url, obj) in &objects {
            let curl = CanonicalUrl::parse(url).map_err(|e| PublishError::Plan(e.to_string()))?;
            let (ids, results) = self.push_encrypted(&new_key, &curl, &obj.content, obj.encodings, &targets)?;
            new_ids.push((url.clone(), ids));
            report.pushes.extend(results);
        }
        let committed = report.complete();
        if committed {
            let mut s = self.write();
            s.keys.insert(prefix.to_string(), new_key);
            for (url, ids) in new_ids {
                if let Some(o) = s.published.get_mut(&url) {
                    o.ids = ids;
                }
            }
        }
        let unpushed = report.unpushed_targets();
        if unpushed.is_empty() && committed {
            Ok(report)
        } else {
            Err(PublishError::PartialRotation { report, unpushed, committed })
        }
    }

    /// Rotates every prefix whose key has expired at the current time.
    pub fn rotate_expired(&self) -> Vec<(String, Result<PublishReport, PublishError>)> {
        let now = self.meter.clock().unix_secs();
        let expired: Vec<String> =
            self.read().keys.iter().filter(|(_, k)| !k.is_valid_at(now)).map(|(p, _)| p.clone()).collect();
        expired
            .into_iter()
            .map(|p| {
                let r = self.rotate_key(&p);
                (p, r)
            })
            .collect()
    }
}

/// On-disk plan: `{"targets": [...], "objects": [{"url", "file" | "content" | "content_b64", "encodings", "participation"}], "popularity": {...}, "encoding_cap": 16}`.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    #[serde(default)]
    pub targets: Vec<String>,
    pub objects: Vec<PlanFileObject>,
    /// Expected request share per URL; when present, encoding counts come from it.
    #[serde(default)]
    pub popularity: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub encoding_cap: Option<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PlanFileObject {
    pub url: String,
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub content_b64: Option<String>,
    #[serde(default)]
    pub encodings: Option<u8>,
    #[serde(default)]
    pub participation: Participation,
}

impl PlanFile {
    pub fn parse(text: &str) -> Result<Self, PublishError> {
        serde_json::from_str(text).map_err(|e| PublishError::Plan(e.to_string()))
    }

    /// Resolves contents (relative files against `base`) and encoding counts.
    pub fn into_plan(self, base: &Path, extra_targets: Vec<String>) -> Result<PublishPlan, PublishError> {
        let counts = match &self.popularity {
            Some(p) => {
                let canon: BTreeMap<String, f64> = p
                    .iter()
                    .map(|(u, s)| {
                        Ok((CanonicalUrl::parse(u).map_err(|e| PublishError::Plan(e.to_string()))?.to_string(), *s))
                    })
                    .collect::<Result<_, PublishError>>()?;
                Some(choose_encoding_counts(&canon, self.encoding_cap.unwrap_or(MAX_ENCODINGS))?)
            }
            None => None,
        };
        let mut objects = Vec::new();
        for o in self.objects {
            let url = CanonicalUrl::parse(&o.url).map_err(|e| PublishError::Plan(format!("{}: {e}", o.url)))?;
            let content = match (o.file, o.content, o.content_b64) {
                (Some(f), None, None) => fs::read(if f.is_absolute() { f } else { base.join(f) })?,
                (None, Some(c), None) => c.into_bytes(),
                (None, None, Some(b)) => B64.decode(b).map_err(|_| PublishError::Plan(format!("{url}: bad base64")))?,
                _ => return Err(PublishError::Plan(format!("{url}: exactly one of file, content, content_b64"))),
            };
            let encodings =
                o.encodings.or_else(|| counts.as_ref().and_then(|c| c.get(url.as_str()).copied())).unwrap_or(1);
            objects.push(PlanObject { url, content, encodings, participation: o.participation });
        }
        let mut targets = self.targets;
        targets.extend(extra_targets);
        Ok(PublishPlan { objects, targets })
    }
}
