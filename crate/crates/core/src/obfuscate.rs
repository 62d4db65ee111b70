use std::fmt;
use std::str::FromStr;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;

use crate::error::CryptoError;
use crate::keys::SharedKey;
use crate::url::CanonicalUrl;

/// Upper bound (exclusive) on encoding indices an origin may publish per URL.
pub const MAX_ENCODINGS: u8 = 16;

/// Cache-node lookup key: HMAC-SHA-256 of an encoded URL under the shared key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObfuscatedId(pub [u8; 32]);

impl ObfuscatedId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses exactly 64 hex digits.
    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| CryptoError::Malformed("obfuscated id"))?;
        Ok(ObfuscatedId(out))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for ObfuscatedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObfuscatedId({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for ObfuscatedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for ObfuscatedId {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObfuscatedId::from_hex(s)
    }
}

impl Serialize for ObfuscatedId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ObfuscatedId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ObfuscatedId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// HMAC-SHA-256 of `message` under `key`.
pub fn hmac_sha256(key: &[u8], message: &[u8]) -> [u8; 32] {
    // HMAC accepts keys of any length.
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(message);
    mac.finalize().into_bytes().into()
}

/// Derives the identifier under which encoding `encoding_index` of `url` is stored.
pub fn derive_obfuscated_id(
    key: &SharedKey,
    url: &CanonicalUrl,
    encoding_index: u8,
) -> Result<ObfuscatedId, CryptoError> {
    if encoding_index >= MAX_ENCODINGS {
        return Err(CryptoError::EncodingIndex { index: encoding_index, max: MAX_ENCODINGS });
    }
    Ok(ObfuscatedId(hmac_sha256(key.key_bytes(), &url.encoded(encoding_index))))
}
