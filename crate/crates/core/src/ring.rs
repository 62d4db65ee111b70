//! Consistent-hash circle assigning URL positions to exit proxies.
//!
//! Exit proxies are named by self-certifying identifiers `IP:hostID`, where
//! `hostID` is SHA-256 of the proxy's public key, so an origin can check the
//! ring position a proxy claims from the identifier and key alone. Each member
//! contributes `vnodes` points on a 256-bit circle; a position is owned by the
//! first `replication` distinct members found walking clockwise from it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::keys::PublicKey;
use crate::url::CanonicalUrl;

pub const DEFAULT_VNODES: u32 = 64;
pub const DEFAULT_REPLICATION: usize = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("ring has {have} members but {need} owners were requested")]
    InsufficientMembers { have: usize, need: usize },
    #[error("invalid ring parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("malformed self-certifying identifier")]
    MalformedId,
}

/// `IP:hostID` identity of an exit proxy.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SelfCertifyingId {
    ip: String,
    host_id: [u8; 32],
}

impl SelfCertifyingId {
    /// Names the holder of `public_key` reachable at `ip`.
    pub fn new(ip: impl Into<String>, public_key: &PublicKey) -> Self {
        SelfCertifyingId { ip: ip.into(), host_id: public_key.fingerprint() }
    }

    pub fn from_parts(ip: impl Into<String>, host_id: [u8; 32]) -> Self {
        SelfCertifyingId { ip: ip.into(), host_id }
    }

    pub fn ip(&self) -> &str {
        &self.ip
    }

    pub fn host_id(&self) -> &[u8; 32] {
        &self.host_id
    }

    /// Parses `IP:hostID-hex`; the IP part may itself contain colons.
    pub fn parse(s: &str) -> Result<Self, RingError> {
        let (ip, hex_part) = s.rsplit_once(':').ok_or(RingError::MalformedId)?;
        if ip.is_empty() || ip.chars().any(|c| c.is_whitespace() || c == ',') {
            return Err(RingError::MalformedId);
        }
        let mut host_id = [0u8; 32];
        hex::decode_to_slice(hex_part, &mut host_id).map_err(|_| RingError::MalformedId)?;
        Ok(SelfCertifyingId { ip: ip.to_string(), host_id })
    }

    /// Accepts iff `public_key` hashes to this identifier's host id.
    pub fn verify(&self, public_key: &PublicKey) -> bool {
        public_key.fingerprint() == self.host_id
    }
}

impl fmt::Display for SelfCertifyingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, hex::encode(self.host_id))
    }
}

impl fmt::Debug for SelfCertifyingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}..", self.ip, hex::encode(&self.host_id[..4]))
    }
}

impl FromStr for SelfCertifyingId {
    type Err = RingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SelfCertifyingId::parse(s)
    }
}

pub fn verify_member(id: &SelfCertifyingId, public_key: &PublicKey) -> bool {
    id.verify(public_key)
}

/// A point on the 2^256 identifier circle; byte order is big-endian so
/// lexicographic comparison is numeric comparison.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RingPosition(pub [u8; 32]);

impl RingPosition {
    pub fn of_bytes(name: &[u8]) -> Self {
        RingPosition(Sha256::digest(name).into())
    }

    /// Which eighth of the circle this point lies in.
    pub fn octant(&self) -> u8 {
        self.0[0] >> 5
    }
}

impl fmt::Debug for RingPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RingPosition({}..)", hex::encode(&self.0[..6]))
    }
}

/// Circle point for encoding `encoding_index` of `url`; hashes the same
/// byte string the identifier PRF consumes.
pub fn position_of_url(url: &CanonicalUrl, encoding_index: u8) -> RingPosition {
    RingPosition::of_bytes(&url.encoded(encoding_index))
}

/// Virtual point `j` of member `id`: SHA-256 of `display(id) || 0x00 || j`.
pub fn virtual_point(id: &SelfCertifyingId, j: u32) -> RingPosition {
    let mut name = id.to_string().into_bytes();
    name.push(0x00);
    name.extend_from_slice(&j.to_be_bytes());
    RingPosition::of_bytes(&name)
}

/// Immutable ring snapshot.
#[derive(Clone, PartialEq, Eq)]
pub struct Ring {
    vnodes: u32,
    replication: usize,
    members: Vec<SelfCertifyingId>,
    points: Vec<(RingPosition, usize)>,
}

impl fmt::Debug for Ring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ring")
            .field("members", &self.members.len())
            .field("vnodes", &self.vnodes)
            .field("replication", &self.replication)
            .finish()
    }
}

impl Ring {
    pub fn new(
        members: impl IntoIterator<Item = SelfCertifyingId>,
        vnodes: u32,
        replication: usize,
    ) -> Result<Self, RingError> {
        if vnodes == 0 {
            return Err(RingError::InvalidParameter("vnodes must be at least 1"));
        }
        if replication == 0 {
            return Err(RingError::InvalidParameter("replication must be at least 1"));
        }
        let members: Vec<SelfCertifyingId> = members.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut points: Vec<(RingPosition, usize)> = members
            .iter()
            .enumerate()
            .flat_map(|(idx, m)| (0..vnodes).map(move |j| (virtual_point(m, j), idx)))
            .collect();
        points.sort_unstable();
        Ok(Ring { vnodes, replication, members, points })
    }

    pub fn vnodes(&self) -> u32 {
        self.vnodes
    }

    pub fn replication(&self) -> usize {
        self.replication
    }

    pub fn members(&self) -> &[SelfCertifyingId] {
        &self.members
    }

    pub fn contains(&self, id: &SelfCertifyingId) -> bool {
        self.members.binary_search(id).is_ok()
    }

    /// All virtual points in circle order.
    pub fn points(&self) -> impl Iterator<Item = (RingPosition, &SelfCertifyingId)> + '_ {
        self.points.iter().map(|(p, idx)| (*p, &self.members[*idx]))
    }

    pub fn with_member(&self, id: SelfCertifyingId) -> Ring {
        let members = self.members.iter().cloned().chain(std::iter::once(id));
        Ring::new(members, self.vnodes, self.replication).expect("parameters already validated")
    }

    pub fn without_member(&self, id: &SelfCertifyingId) -> Ring {
        let members = self.members.iter().filter(|m| *m != id).cloned();
        Ring::new(members, self.vnodes, self.replication).expect("parameters already validated")
    }

    pub fn with_replication(&self, replication: usize) -> Result<Ring, RingError> {
        Ring::new(self.members.iter().cloned(), self.vnodes, replication)
    }

    /// The `replication` distinct members met walking clockwise from `pos`.
    pub fn owners_of(&self, pos: &RingPosition) -> Result<Vec<&SelfCertifyingId>, RingError> {
        if self.members.len() < self.replication {
            return Err(RingError::InsufficientMembers { have: self.members.len(), need: self.replication });
        }
        let start = self.points.partition_point(|(p, _)| p < pos);
        let mut owners: Vec<usize> = Vec::with_capacity(self.replication);
        for step in 0..self.points.len() {
            let (_, idx) = self.points[(start + step) % self.points.len()];
            if !owners.contains(&idx) {
                owners.push(idx);
                if owners.len() == self.replication {
                    break;
                }
            }
        }
        Ok(owners.into_iter().map(|i| &self.members[i]).collect())
    }

    pub fn primary_owner(&self, pos: &RingPosition) -> Result<&SelfCertifyingId, RingError> {
        let need = self.replication.max(1);
        if self.members.is_empty() {
            return Err(RingError::InsufficientMembers { have: 0, need });
        }
        self.owners_of(pos).map(|o| o[0])
    }
}

/// Sample positions whose owner list differs between two snapshots.
pub fn diff_on_change(before: &Ring, after: &Ring, sample: &[RingPosition]) -> BTreeSet<RingPosition> {
    sample
        .iter()
        .filter(|pos| {
            let a = before.owners_of(pos).ok();
            let b = after.owners_of(pos).ok();
            a != b
        })
        .copied()
        .collect()
}
