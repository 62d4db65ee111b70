//! Relay and delivery messages exchanged between clients and exit proxies.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use thiserror::Error;

use crate::http::HttpRequest;

/// Sealed session key.
pub const HDR_SEALED: &str = "X-OCDN";
pub const HDR_ROUTE: &str = "X-OCDN-Route";
pub const HDR_REQ: &str = "X-OCDN-Req";
/// Set on deliveries when the exit could not even unseal the session key.
pub const HDR_ERROR: &str = "X-OCDN-Error";
pub const HDR_ORIGIN: &str = "X-OCDN-Origin";
pub const HDR_SIG: &str = "X-OCDN-Sig";

pub const RELAY_PATH: &str = "/ocdn/relay";
pub const DELIVER_PATH: &str = "/ocdn/deliver";
pub const GOSSIP_PATH: &str = "/ocdn/gossip";

pub const MAX_ROUTE_LEN: usize = 16;
const SEALED_KEY_LEN: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("missing header {0}")]
    MissingHeader(&'static str),
    #[error("bad header {0}")]
    BadHeader(&'static str),
    #[error("bad route: {0}")]
    BadRoute(&'static str),
    #[error("wrong method or path")]
    WrongEndpoint,
}

/// Status byte carried inside the session-key-encrypted response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResponseStatus {
    Ok,
    NotFound,
    /// Key service refused: this exit does not own the URL.
    NotOwner,
    /// Key service refused for another reason, or was unreachable.
    KeyUnavailable,
    /// Envelope failed authentication.
    Integrity,
    BadRequest,
    /// Cache nodes unreachable.
    Upstream,
}

impl ResponseStatus {
    pub fn code(self) -> u8 {
        match self {
            ResponseStatus::Ok => 0,
            ResponseStatus::NotFound => 1,
            ResponseStatus::NotOwner => 2,
            ResponseStatus::KeyUnavailable => 3,
            ResponseStatus::Integrity => 4,
            ResponseStatus::BadRequest => 5,
            ResponseStatus::Upstream => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ResponseStatus::Ok,
            1 => ResponseStatus::NotFound,
            2 => ResponseStatus::NotOwner,
            3 => ResponseStatus::KeyUnavailable,
            4 => ResponseStatus::Integrity,
            5 => ResponseStatus::BadRequest,
            6 => ResponseStatus::Upstream,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ResponseStatus::Ok => "ok",
            ResponseStatus::NotFound => "not_found",
            ResponseStatus::NotOwner => "not_owner",
            ResponseStatus::KeyUnavailable => "key_unavailable",
            ResponseStatus::Integrity => "integrity",
            ResponseStatus::BadRequest => "bad_request",
            ResponseStatus::Upstream => "upstream",
        }
    }
}

pub fn request_id_hex(id: &[u8; 16]) -> String {
    hex::encode(id)
}

pub fn parse_request_id(s: &str) -> Option<[u8; 16]> {
    let mut out = [0u8; 16];
    hex::decode_to_slice(s.trim(), &mut out).ok()?;
    Some(out)
}

/// Client request travelling along a source route. Forwarders pass it on
/// unchanged; only the terminal exit proxy can read it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutedRequest {
    pub request_id: [u8; 16],
    pub sealed_key: Vec<u8>,
    /// Every hop, terminal exit last.
    pub route: Vec<String>,
    pub url_ciphertext: Vec<u8>,
}

impl RoutedRequest {
    pub fn to_http(&self) -> HttpRequest {
        HttpRequest::new("POST", RELAY_PATH)
            .header(HDR_SEALED, B64.encode(&self.sealed_key))
            .header(HDR_ROUTE, self.route.join(","))
            .header(HDR_REQ, request_id_hex(&self.request_id))
            .body(self.url_ciphertext.clone())
    }

    pub fn from_http(req: &HttpRequest) -> Result<Self, WireError> {
        if req.method != "POST" || req.path != RELAY_PATH {
            return Err(WireError::WrongEndpoint);
        }
        let sealed = req.get_header(HDR_SEALED).ok_or(WireError::MissingHeader(HDR_SEALED))?;
        let sealed_key = B64.decode(sealed.trim()).map_err(|_| WireError::BadHeader(HDR_SEALED))?;
        if sealed_key.len() != SEALED_KEY_LEN {
            return Err(WireError::BadHeader(HDR_SEALED));
        }
        let route = parse_route(req.get_header(HDR_ROUTE).ok_or(WireError::MissingHeader(HDR_ROUTE))?)?;
        let request_id = parse_request_id(req.get_header(HDR_REQ).ok_or(WireError::MissingHeader(HDR_REQ))?)
            .ok_or(WireError::BadHeader(HDR_REQ))?;
        Ok(RoutedRequest { request_id, sealed_key, route, url_ciphertext: req.body.clone() })
    }

    pub fn terminal(&self) -> &str {
        self.route.last().map(String::as_str).unwrap_or("")
    }

    /// Route members that receive the response: everyone but the exit.
    pub fn delivery_targets(&self) -> &[String] {
        &self.route[..self.route.len().saturating_sub(1)]
    }
}

/// Parses `addr1,addr2,...`: at least two distinct, non-empty hops.
pub fn parse_route(s: &str) -> Result<Vec<String>, WireError> {
    let hops: Vec<String> = s.split(',').map(|h| h.trim().to_string()).collect();
    if hops.len() < 2 {
        return Err(WireError::BadRoute("needs an originator and an exit"));
    }
    if hops.len() > MAX_ROUTE_LEN {
        return Err(WireError::BadRoute("too many hops"));
    }
    if hops.iter().any(|h| h.is_empty() || h.chars().any(char::is_whitespace)) {
        return Err(WireError::BadRoute("empty hop"));
    }
    let mut seen = std::collections::HashSet::new();
    if !hops.iter().all(|h| seen.insert(h.as_str())) {
        return Err(WireError::BadRoute("repeated hop"));
    }
    Ok(hops)
}

/// Response pushed from the exit to every route member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub request_id: [u8; 16],
    /// True when the session key could not be unsealed, so nothing could be encrypted.
    pub unsealed_failed: bool,
    pub body: Vec<u8>,
}

impl Delivery {
    pub fn to_http(&self) -> HttpRequest {
        let mut req = HttpRequest::new("POST", DELIVER_PATH).header(HDR_REQ, request_id_hex(&self.request_id));
        if self.unsealed_failed {
            req = req.header(HDR_ERROR, "unseal");
        }
        req.body(self.body.clone())
    }

    pub fn from_http(req: &HttpRequest) -> Result<Self, WireError> {
        if req.method != "POST" || req.path != DELIVER_PATH {
            return Err(WireError::WrongEndpoint);
        }
        let request_id = parse_request_id(req.get_header(HDR_REQ).ok_or(WireError::MissingHeader(HDR_REQ))?)
            .ok_or(WireError::BadHeader(HDR_REQ))?;
        Ok(Delivery { request_id, unsealed_failed: req.get_header(HDR_ERROR).is_some(), body: req.body.clone() })
    }
}
