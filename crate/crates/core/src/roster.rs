//! Signed ring membership document.
//!
//! Text format, one record per line:
//!
//! ```text
//! ocdn-roster 1
//! version 7
//! vnodes 64
//! replication 1
//! member 10.1.0.1:8443:<host-id hex> 10.1.0.1:8443 <base64 DER public key>
//! signature <base64>
//! ```
//!
//! The signature covers every byte before the `signature` line.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use thiserror::Error;

use crate::error::CryptoError;
use crate::keys::{KeyPair, PublicKey};
use crate::ring::{Ring, RingError, SelfCertifyingId, DEFAULT_REPLICATION, DEFAULT_VNODES};
use crate::sign::{sign_bytes, verify_bytes};

const MAGIC: &str = "ocdn-roster 1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RosterError {
    #[error("roster line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("roster is not signed")]
    Unsigned,
    #[error("roster signature does not verify")]
    BadSignature,
    #[error("member {0} does not match its public key")]
    SelfCertification(String),
    #[error("duplicate member {0}")]
    Duplicate(String),
    #[error(transparent)]
    Ring(#[from] RingError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RosterMember {
    pub id: SelfCertifyingId,
    /// Where to reach the proxy (`host:port`).
    pub address: String,
    pub public_key: PublicKey,
}

impl RosterMember {
    pub fn new(address: impl Into<String>, public_key: PublicKey) -> Self {
        let address = address.into();
        RosterMember { id: SelfCertifyingId::new(address.clone(), &public_key), address, public_key }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    pub version: u64,
    pub vnodes: u32,
    pub replication: usize,
    pub members: Vec<RosterMember>,
    signature: Option<Vec<u8>>,
}

impl Roster {
    pub fn new(version: u64, members: Vec<RosterMember>) -> Self {
        Roster { version, vnodes: DEFAULT_VNODES, replication: DEFAULT_REPLICATION, members, signature: None }
    }

    pub fn signature(&self) -> Option<&[u8]> {
        self.signature.as_deref()
    }

    pub fn member(&self, id: &SelfCertifyingId) -> Option<&RosterMember> {
        self.members.iter().find(|m| &m.id == id)
    }

    fn body(&self) -> String {
        let mut out =
            format!("{MAGIC}\nversion {}\nvnodes {}\nreplication {}\n", self.version, self.vnodes, self.replication);
        for m in &self.members {
            out.push_str(&format!("member {} {} {}\n", m.id, m.address, m.public_key.to_base64()));
        }
        out
    }

    pub fn sign(&mut self, authority: &KeyPair) {
        self.signature = Some(sign_bytes(authority, self.body().as_bytes()));
    }

    pub fn render(&self) -> String {
        let mut out = self.body();
        if let Some(sig) = &self.signature {
            out.push_str(&format!("signature {}\n", B64.encode(sig)));
        }
        out
    }

    /// Parses the text form. Does not check signatures; see [`Roster::verify`].
    pub fn parse(text: &str) -> Result<Self, RosterError> {
        let err = |line: usize, reason: &str| RosterError::Parse { line, reason: reason.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(err(1, "missing header")),
        }
        let mut header = |name: &str| -> Result<(usize, String), RosterError> {
            let (n, line) = lines.next().ok_or_else(|| err(0, "truncated header"))?;
            let value = line
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| err(n, &format!("expected {name}")))?;
            Ok((n, value.to_string()))
        };
        let (n, v) = header("version")?;
        let version = v.parse().map_err(|_| err(n, "bad version"))?;
        let (n, v) = header("vnodes")?;
        let vnodes = v.parse().map_err(|_| err(n, "bad vnodes"))?;
        let (n, v) = header("replication")?;
        let replication = v.parse().map_err(|_| err(n, "bad replication"))?;

        let mut roster = Roster { version, vnodes, replication, members: Vec::new(), signature: None };
        for (n, line) in lines {
            if roster.signature.is_some() {
                if line.is_empty() {
                    continue;
                }
                return Err(err(n, "content after signature"));
            }
            let mut parts = line.split(' ');
            match parts.next() {
                Some("member") => {
                    let (Some(id), Some(addr), Some(key), None) =
                        (parts.next(), parts.next(), parts.next(), parts.next())
                    else {
                        return Err(err(n, "member needs id, address and key"));
                    };
                    let id = SelfCertifyingId::parse(id).map_err(|_| err(n, "bad member id"))?;
                    let public_key = PublicKey::from_base64(key).map_err(|_| err(n, "bad member key"))?;
                    if addr.is_empty() {
                        return Err(err(n, "empty address"));
                    }
                    roster.members.push(RosterMember { id, address: addr.to_string(), public_key });
                }
                Some("signature") => {
                    let (Some(sig), None) = (parts.next(), parts.next()) else {
                        return Err(err(n, "bad signature line"));
                    };
                    roster.signature = Some(B64.decode(sig).map_err(|_| err(n, "bad signature encoding"))?);
                }
                Some("") if line.is_empty() => {}
                _ => return Err(err(n, "unknown record")),
            }
        }
        Ok(roster)
    }

    /// Checks the authority signature and that every member certifies itself.
    pub fn verify(&self, authority: &PublicKey) -> Result<(), RosterError> {
        let sig = self.signature.as_deref().ok_or(RosterError::Unsigned)?;
        verify_bytes(authority, self.body().as_bytes(), sig).map_err(|e| match e {
            CryptoError::BadSignature => RosterError::BadSignature,
            _ => RosterError::BadSignature,
        })?;
        self.check_members()
    }

    /// Self-certification and uniqueness only; for unsigned local rosters.
    pub fn check_members(&self) -> Result<(), RosterError> {
        let mut seen = std::collections::HashSet::new();
        for m in &self.members {
            if !m.id.verify(&m.public_key) {
                return Err(RosterError::SelfCertification(m.id.to_string()));
            }
            if !seen.insert(&m.id) {
                return Err(RosterError::Duplicate(m.id.to_string()));
            }
        }
        Ok(())
    }

    pub fn to_ring(&self) -> Result<Ring, RosterError> {
        Ok(Ring::new(self.members.iter().map(|m| m.id.clone()), self.vnodes, self.replication)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::test_keys;

    fn sample() -> Roster {
        let pool = test_keys::pool();
        let members = (0..3)
            .map(|i| RosterMember::new(format!("10.1.0.{}:8443", i + 1), pool[i + 1].public_key().clone()))
            .collect();
        Roster::new(4, members)
    }

    #[test]
    fn signed_round_trip() {
        let authority = &test_keys::pool()[0];
        let mut r = sample();
        r.sign(authority);
        let text = r.render();
        assert!(text.starts_with("ocdn-roster 1\nversion 4\nvnodes 64\nreplication 1\nmember 10.1.0.1:8443:"));
        let parsed = Roster::parse(&text).unwrap();
        assert_eq!(parsed, r);
        parsed.verify(authority.public_key()).unwrap();
        assert_eq!(parsed.to_ring().unwrap().members().len(), 3);
    }

    #[test]
    fn tampering_breaks_the_signature() {
        let pool = test_keys::pool();
        let mut r = sample();
        r.sign(&pool[0]);
        let text = r.render().replace("version 4", "version 5");
        assert_eq!(Roster::parse(&text).unwrap().verify(pool[0].public_key()), Err(RosterError::BadSignature));
        assert_eq!(r.verify(pool[1].public_key()), Err(RosterError::BadSignature));
        assert_eq!(sample().verify(pool[0].public_key()), Err(RosterError::Unsigned));
    }

    #[test]
    fn member_must_certify_itself() {
        let pool = test_keys::pool();
        let mut r = sample();
        r.members[1].public_key = pool[5].public_key().clone();
        r.sign(&pool[0]);
        assert!(matches!(r.verify(pool[0].public_key()), Err(RosterError::SelfCertification(_))));
    }

    #[test]
    fn duplicates_are_rejected() {
        let mut r = sample();
        r.members.push(r.members[0].clone());
        assert!(matches!(r.check_members(), Err(RosterError::Duplicate(_))));
    }

    #[test]
    fn parse_rejections() {
        assert!(Roster::parse("").is_err());
        assert!(Roster::parse("ocdn-roster 2\n").is_err());
        assert!(Roster::parse("ocdn-roster 1\nversion x\n").is_err());
        assert!(Roster::parse("ocdn-roster 1\nversion 1\nvnodes 64\n").is_err());
        assert!(Roster::parse("ocdn-roster 1\nversion 1\nvnodes 64\nreplication 1\nbogus\n").is_err());
        assert!(Roster::parse("ocdn-roster 1\nversion 1\nvnodes 64\nreplication 1\nmember a b\n").is_err());
        let ok = Roster::parse("ocdn-roster 1\nversion 1\nvnodes 64\nreplication 1\n").unwrap();
        assert!(ok.members.is_empty());
        let text = format!("{}signature AAAA\nmember x y z\n", sample().render());
        assert!(Roster::parse(&text).is_err());
    }
}
