//! Minimal HTTP/1.1 message model and codec.
//!
//! Bodies are always length-delimited with `Content-Length`; chunked transfer
//! is not used by any role.

use thiserror::Error;

const MAX_HEADERS: usize = 64;
/// Largest body accepted by the parser: the largest envelope plus headroom.
pub const MAX_BODY: usize = (256 << 20) + (1 << 20);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HttpError {
    #[error("incomplete message")]
    Incomplete,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("body length mismatch")]
    BodyLength,
    #[error("body too large")]
    TooLarge,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

fn find_header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
}

impl HttpRequest {
    pub fn new(method: &str, path: impl Into<String>) -> Self {
        HttpRequest { method: method.to_string(), path: path.into(), headers: Vec::new(), body: Vec::new() }
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_string(), value.into()));
        self
    }

    pub fn body(mut self, body: Vec<u8>) -> Self {
        self.body = body;
        self
    }

    pub fn get_header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut head = format!("{} {} HTTP/1.1\r\n", self.method, self.path);
        for (k, v) in &self.headers {
            if !k.eq_ignore_ascii_case("content-length") {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
        }
        head.push_str(&format!("Content-Length: {}\r\n\r\n", self.body.len()));
        let mut out = head.into_bytes();
        out.extend_from_slice(&self.body);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, HttpError> {
        let mut headers = [httparse::EMPTY_HEADER; MAX_HEADERS];
        let mut req = httparse::Request::new(&mut headers);
        let head_len = match req.parse(bytes).map_err(|e| HttpError::Malformed(e.to_string()))? {
            httparse::Status::Complete(n) => n,
            httparse::Status::Partial => return Err(HttpError::Incomplete),
        };
        let method = req.method.ok_or_else(|| HttpError::Malformed("method".into()))?.to_string();
        let path = req.path.ok_or_else(|| HttpError::Malformed("path".into()))?.to_string();
        let headers = collect_headers(req.headers)?;
        let body = take_body(&headers, &bytes[head_len..])?;
        Ok(HttpRequest { method, path, headers, body })
    }
}

impl HttpResponse {
    pub fn new(status: u16) -> Self {
        HttpResponse { status, headers: Vec::new(), body: Vec::new() }
    }

    pub fn with_body(status: u16, body: Vec<u8>) -> Self {
        HttpResponse { status, headers: Vec::new(), body }
    }

    pub fn text(status: u16, text: &str) -> Self {
        Self::with_body(status, text.as_bytes().to_vec()).header("Content-Type", "text/plain")
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_string(), value.into()));
        self
    }

    pub fn get_header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut head = format!("HTTP/1.1 {} {}\r\n", self.status, reason(self.status));
        for (k, v) in &self.headers {
            if !k.eq_ignore_ascii_case("content-length") {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
        }
        head.push_str(&format!("Content-Length: {}\r\n\r\n", self.body.len()));
        let mut out = head.into_bytes();
        out.extend_from_slice(&self.body);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, HttpError> {
        let mut headers = [httparse::EMPTY_HEADER; MAX_HEADERS];
        let mut resp = httparse::Response::new(&mut headers);
        let head_len = match resp.parse(bytes).map_err(|e| HttpError::Malformed(e.to_string()))? {
            httparse::Status::Complete(n) => n,
            httparse::Status::Partial => return Err(HttpError::Incomplete),
        };
        let status = resp.code.ok_or_else(|| HttpError::Malformed("status".into()))?;
        let headers = collect_headers(resp.headers)?;
        let body = take_body(&headers, &bytes[head_len..])?;
        Ok(HttpResponse { status, headers, body })
    }
}

fn collect_headers(raw: &[httparse::Header<'_>]) -> Result<Vec<(String, String)>, HttpError> {
    raw.iter()
        .map(|h| {
            let v = std::str::from_utf8(h.value).map_err(|_| HttpError::Malformed("header value".into()))?;
            Ok((h.name.to_string(), v.to_string()))
        })
        .collect()
}

fn take_body(headers: &[(String, String)], rest: &[u8]) -> Result<Vec<u8>, HttpError> {
    let len = match find_header(headers, "content-length") {
        Some(v) => v.trim().parse::<usize>().map_err(|_| HttpError::Malformed("content-length".into()))?,
        None => 0,
    };
    if len > MAX_BODY {
        return Err(HttpError::TooLarge);
    }
    match rest.len().cmp(&len) {
        std::cmp::Ordering::Less => Err(HttpError::Incomplete),
        std::cmp::Ordering::Greater => Err(HttpError::BodyLength),
        std::cmp::Ordering::Equal => Ok(rest.to_vec()),
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        201 => "Created",
        202 => "Accepted",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        405 => "Method Not Allowed",
        413 => "Payload Too Large",
        421 => "Misdirected Request",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn request_round_trip() {
        let req = HttpRequest::new("PUT", "/cache/ab").header("X-OCDN-Sig", "c2ln").body(b"hello".to_vec());
        let bytes = req.encode();
        assert!(bytes.starts_with(b"PUT /cache/ab HTTP/1.1\r\nX-OCDN-Sig: c2ln\r\nContent-Length: 5\r\n\r\nhello"));
        let back = HttpRequest::parse(&bytes).unwrap();
        assert_eq!(back.get_header("x-ocdn-sig"), Some("c2ln"));
        assert_eq!(back.body, b"hello");
        assert_eq!(back.method, "PUT");
    }

    #[test]
    fn response_round_trip() {
        let resp = HttpResponse::with_body(404, b"nope".to_vec());
        let back = HttpResponse::parse(&resp.encode()).unwrap();
        assert_eq!(back.status, 404);
        assert_eq!(back.body, b"nope");
    }

    #[test]
    fn rejects_bad_framing() {
        assert_eq!(HttpRequest::parse(b"GET / HTTP/1.1\r\n"), Err(HttpError::Incomplete));
        assert_eq!(HttpRequest::parse(b"GET / HTTP/1.1\r\nContent-Length: 5\r\n\r\nab"), Err(HttpError::Incomplete));
        assert_eq!(HttpRequest::parse(b"GET / HTTP/1.1\r\nContent-Length: 1\r\n\r\nab"), Err(HttpError::BodyLength));
        assert!(HttpRequest::parse(b"GET / HTTP/1.1\r\nContent-Length: x\r\n\r\n").is_err());
        assert!(HttpRequest::parse(b"\x00\x01garbage\r\n\r\n").is_err());
        assert_eq!(
            HttpRequest::parse(format!("GET / HTTP/1.1\r\nContent-Length: {}\r\n\r\n", MAX_BODY + 1).as_bytes()),
            Err(HttpError::TooLarge)
        );
    }

    proptest! {
        #[test]
        fn arbitrary_bodies_round_trip(body in proptest::collection::vec(any::<u8>(), 0..2048), path in "/[a-z0-9/]{0,40}") {
            let req = HttpRequest::new("POST", path.clone()).body(body.clone());
            let back = HttpRequest::parse(&req.encode()).unwrap();
            prop_assert_eq!(back.body, body);
            prop_assert_eq!(back.path, path);
        }

        #[test]
        fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = HttpRequest::parse(&bytes);
            let _ = HttpResponse::parse(&bytes);
        }
    }
}
