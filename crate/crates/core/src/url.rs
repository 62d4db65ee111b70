use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Longest canonical URL accepted, in bytes.
pub const MAX_URL_LEN: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UrlError {
    #[error("unparseable url: {0}")]
    Parse(String),
    #[error("url must be absolute with a host")]
    NotAbsolute,
    #[error("url longer than {MAX_URL_LEN} bytes")]
    TooLong,
}

/// An absolute URL with lowercased scheme and host and no fragment.
///
/// Client and exit proxy must derive identical identifiers from the same
/// object, so every URL crossing the system is canonicalized first.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalUrl(String);

impl CanonicalUrl {
    pub fn parse(input: &str) -> Result<Self, UrlError> {
        if input.len() > MAX_URL_LEN {
            return Err(UrlError::TooLong);
        }
        let mut parsed = url::Url::parse(input.trim()).map_err(|e| UrlError::Parse(e.to_string()))?;
        if parsed.cannot_be_a_base() || parsed.host_str().map_or(true, str::is_empty) {
            return Err(UrlError::NotAbsolute);
        }
        parsed.set_fragment(None);
        let text = String::from(parsed);
        if text.len() > MAX_URL_LEN {
            return Err(UrlError::TooLong);
        }
        Ok(CanonicalUrl(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// `scheme://host[:port]/`, the granularity at which origins hold shared keys.
    pub fn origin_prefix(&self) -> String {
        // Canonical text always has "scheme://authority/..." form.
        let after_scheme = self.0.find("://").map(|i| i + 3).unwrap_or(0);
        let end = self.0[after_scheme..].find('/').map(|i| after_scheme + i + 1).unwrap_or(self.0.len());
        let mut prefix = self.0[..end].to_string();
        if !prefix.ends_with('/') {
            prefix.push('/');
        }
        prefix
    }

    /// The byte string fed to the identifier PRF and the ring hash for encoding `index`.
    ///
    /// Index 0 is the URL text itself; index `i > 0` appends `0x00 || i`.
    pub fn encoded(&self, index: u8) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() + 2);
        out.extend_from_slice(self.0.as_bytes());
        if index > 0 {
            out.push(0x00);
            out.push(index);
        }
        out
    }
}

impl fmt::Debug for CanonicalUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanonicalUrl({:?})", self.0)
    }
}

impl fmt::Display for CanonicalUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for CanonicalUrl {
    type Err = UrlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CanonicalUrl::parse(s)
    }
}

impl Serialize for CanonicalUrl {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CanonicalUrl {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        CanonicalUrl::parse(&s).map_err(serde::de::Error::custom)
    }
}
