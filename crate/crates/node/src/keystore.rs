//! Key files and deterministic key generation.
//!
//! Key files are a one-line tag followed by base64 PKCS#1 DER.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::{Mutex, OnceLock};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ocdn_core::{KeyPair, PublicKey};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const PRIVATE_TAG: &str = "ocdn-rsa-private 1";
const PUBLIC_TAG: &str = "ocdn-rsa-public 1";

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Writes `contents` to `path` readable only by the owner (on Unix).
pub fn write_private(path: &Path, contents: &[u8]) -> io::Result<()> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path)?;
    io::Write::write_all(&mut f, contents)
}

pub fn render_keypair(kp: &KeyPair) -> String {
    format!("{PRIVATE_TAG}\n{}\n", B64.encode(kp.to_der()))
}

pub fn render_public(pk: &PublicKey) -> String {
    format!("{PUBLIC_TAG}\n{}\n", pk.to_base64())
}

pub fn parse_keypair(text: &str) -> io::Result<KeyPair> {
    let body = text.trim().strip_prefix(PRIVATE_TAG).ok_or_else(|| invalid("not an ocdn private key file"))?;
    let der = B64.decode(body.trim()).map_err(|_| invalid("bad base64 in key file"))?;
    KeyPair::from_der(&der).map_err(|e| invalid(e.to_string()))
}

/// Accepts a public key file, or a private key file (its public half is returned).
pub fn parse_public(text: &str) -> io::Result<PublicKey> {
    let t = text.trim();
    if let Some(body) = t.strip_prefix(PUBLIC_TAG) {
        return PublicKey::from_base64(body.trim()).map_err(|e| invalid(e.to_string()));
    }
    parse_keypair(t).map(|kp| kp.public_key().clone())
}

pub fn save_keypair(path: &Path, kp: &KeyPair) -> io::Result<()> {
    write_private(path, render_keypair(kp).as_bytes())
}

pub fn load_keypair(path: &Path) -> io::Result<KeyPair> {
    parse_keypair(&fs::read_to_string(path)?)
}

pub fn save_public(path: &Path, pk: &PublicKey) -> io::Result<()> {
    fs::write(path, render_public(pk))
}

pub fn load_public(path: &Path) -> io::Result<PublicKey> {
    parse_public(&fs::read_to_string(path)?)
}

/// RSA key pair derived from `seed`; memoized because 2048-bit generation is slow.
pub fn deterministic_keypair(seed: u64) -> KeyPair {
    static CACHE: OnceLock<Mutex<HashMap<u64, KeyPair>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(kp) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&seed) {
        return kp.clone();
    }
    let kp = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(seed)).expect("2048-bit generation succeeds");
    cache.lock().unwrap_or_else(|e| e.into_inner()).entry(seed).or_insert(kp).clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let kp = deterministic_keypair(1);
        let p = dir.path().join("k");
        save_keypair(&p, &kp).unwrap();
        assert_eq!(load_keypair(&p).unwrap().public_key(), kp.public_key());
        assert_eq!(load_public(&p).unwrap(), *kp.public_key());
        let q = dir.path().join("k.pub");
        save_public(&q, kp.public_key()).unwrap();
        assert_eq!(load_public(&q).unwrap(), *kp.public_key());
        assert!(load_keypair(&q).is_err());
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            assert_eq!(fs::metadata(&p).unwrap().permissions().mode() & 0o777, 0o600);
        }
    }

    #[test]
    fn deterministic_keys_repeat() {
        assert_eq!(deterministic_keypair(2).public_key(), deterministic_keypair(2).public_key());
        assert_ne!(deterministic_keypair(2).public_key(), deterministic_keypair(3).public_key());
    }
}
