//! Key material: origin/exit shared keys, per-request session keys and the
//! RSA-2048 key pairs that identify origins, exit proxies and roster authorities.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::{CryptoRng, RngCore};
use rsa::pkcs1::{DecodeRsaPrivateKey, DecodeRsaPublicKey, EncodeRsaPrivateKey, EncodeRsaPublicKey};
use rsa::traits::PublicKeyParts;
use rsa::{RsaPrivateKey, RsaPublicKey};
use sha2::{Digest, Sha256};

use crate::error::CryptoError;

/// Length of every symmetric key in bytes.
pub const KEY_LEN: usize = 32;

/// Modulus size of every asymmetric key.
pub const RSA_BITS: usize = 2048;

/// Public 8-byte handle of a [`SharedKey`]: the first bytes of SHA-256 over the key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(pub [u8; 8]);

impl KeyId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let mut out = [0u8; 8];
        hex::decode_to_slice(s, &mut out).map_err(|_| CryptoError::Malformed("key id"))?;
        Ok(KeyId(out))
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({})", self.to_hex())
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Symmetric key shared between an origin and the exit proxies that own its URLs.
///
/// The key obfuscates identifiers and encrypts content; cache nodes never see it.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedKey {
    bytes: [u8; KEY_LEN],
    key_id: KeyId,
    expires_at: u64,
}

impl SharedKey {
    /// Generates a fresh key valid for `lifetime_secs` after `now`.
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R, now: u64, lifetime_secs: u64) -> Result<Self, CryptoError> {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self::from_bytes(bytes, now, now.saturating_add(lifetime_secs))
    }

    /// Rebuilds a key from raw bytes, e.g. after unsealing it from a key record.
    pub fn from_bytes(bytes: [u8; KEY_LEN], created_at: u64, expires_at: u64) -> Result<Self, CryptoError> {
        if expires_at <= created_at {
            return Err(CryptoError::InvalidExpiry { created_at, expires_at });
        }
        Ok(SharedKey { key_id: key_id_of(&bytes), bytes, expires_at })
    }

    /// Like [`SharedKey::from_bytes`] without a creation time; used when the
    /// receiving side only learns the expiry.
    pub fn with_expiry(bytes: [u8; KEY_LEN], expires_at: u64) -> Self {
        SharedKey { key_id: key_id_of(&bytes), bytes, expires_at }
    }

    pub fn key_bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    /// Absolute expiry in UNIX seconds.
    pub fn expires_at(&self) -> u64 {
        self.expires_at
    }

    /// A key is usable strictly before its expiry instant.
    pub fn is_valid_at(&self, now: u64) -> bool {
        now < self.expires_at
    }
}

impl fmt::Debug for SharedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SharedKey")
            .field("key_id", &self.key_id)
            .field("expires_at", &self.expires_at)
            .finish_non_exhaustive()
    }
}

fn key_id_of(bytes: &[u8; KEY_LEN]) -> KeyId {
    let digest = Sha256::digest(bytes);
    let mut id = [0u8; 8];
    id.copy_from_slice(&digest[..8]);
    KeyId(id)
}

/// Per-request symmetric key between a client and an exit proxy.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey([u8; KEY_LEN]);

impl SessionKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        SessionKey(bytes)
    }

    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        SessionKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SessionKey(..)")
    }
}

/// RSA-2048 public key in its canonical PKCS#1 DER form.
#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    inner: RsaPublicKey,
    der: Vec<u8>,
}

impl PublicKey {
    /// Parses a PKCS#1 DER public key, rejecting anything but a 2048-bit modulus.
    pub fn from_der(der: &[u8]) -> Result<Self, CryptoError> {
        let inner = RsaPublicKey::from_pkcs1_der(der).map_err(|e| CryptoError::InvalidPublicKey(e.to_string()))?;
        Self::from_rsa(inner)
    }

    pub fn from_base64(s: &str) -> Result<Self, CryptoError> {
        let der = B64.decode(s.trim()).map_err(|e| CryptoError::InvalidPublicKey(e.to_string()))?;
        Self::from_der(&der)
    }

    fn from_rsa(inner: RsaPublicKey) -> Result<Self, CryptoError> {
        if inner.size() * 8 != RSA_BITS {
            return Err(CryptoError::InvalidPublicKey(format!(
                "expected a {RSA_BITS}-bit modulus, got {} bits",
                inner.size() * 8
            )));
        }
        let der = inner.to_pkcs1_der().map_err(|e| CryptoError::InvalidPublicKey(e.to_string()))?.as_bytes().to_vec();
        Ok(PublicKey { inner, der })
    }

    /// Canonical serialization; the input of [`PublicKey::fingerprint`].
    pub fn to_der(&self) -> &[u8] {
        &self.der
    }

    pub fn to_base64(&self) -> String {
        B64.encode(&self.der)
    }

    /// SHA-256 over the canonical DER encoding.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(&self.der).into()
    }

    pub(crate) fn rsa(&self) -> &RsaPublicKey {
        &self.inner
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.fingerprint()[..8]))
    }
}

/// RSA-2048 key pair.
#[derive(Clone)]
pub struct KeyPair {
    private: RsaPrivateKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Result<Self, CryptoError> {
        let private = RsaPrivateKey::new(rng, RSA_BITS)?;
        Self::from_rsa(private)
    }

    fn from_rsa(private: RsaPrivateKey) -> Result<Self, CryptoError> {
        let public = PublicKey::from_rsa(private.to_public_key())?;
        Ok(KeyPair { private, public })
    }

    /// Parses a PKCS#1 DER private key.
    pub fn from_der(der: &[u8]) -> Result<Self, CryptoError> {
        let private = RsaPrivateKey::from_pkcs1_der(der).map_err(|e| CryptoError::InvalidPrivateKey(e.to_string()))?;
        Self::from_rsa(private)
    }

    pub fn to_der(&self) -> Vec<u8> {
        self.private.to_pkcs1_der().map(|d| d.as_bytes().to_vec()).unwrap_or_default()
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub(crate) fn rsa(&self) -> &RsaPrivateKey {
        &self.private
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}
