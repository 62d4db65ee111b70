//! How roles reach each other.
//!
//! Every role talks through [`Transport`]. [`InProcNetwork`] delivers to
//! registered [`Service`]s inside one process, serializing every message to
//! bytes and parsing it back so the codec is exercised, and applies a
//! [`LinkModel`] against the shared clock. [`HttpTransport`] plus
//! [`serve_http`]/[`serve_lines`] run the same services over real sockets.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use crate::clock::Clock;
use crate::http::{HttpRequest, HttpResponse, MAX_BODY};
use crate::wire::HDR_REQ;

/// Longest accepted line on the line protocol.
pub const MAX_LINE: usize = 64 * 1024;

pub trait Service: Send + Sync {
    fn handle_http(&self, peer: &str, req: HttpRequest) -> HttpResponse;

    /// Line-protocol request; `None` means the service does not speak it.
    fn handle_line(&self, _peer: &str, _line: &str) -> Option<String> {
        None
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("{0} is unreachable")]
    Unreachable(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub trait Transport: Send + Sync {
    fn http(&self, from: &str, to: &str, req: HttpRequest) -> Result<HttpResponse, TransportError>;

    fn line(&self, from: &str, to: &str, line: &str) -> Result<String, TransportError>;

    /// Sends `req` to every target; the sends are logically concurrent.
    fn fan_out(&self, from: &str, targets: &[String], req: &HttpRequest) -> Vec<Result<HttpResponse, TransportError>> {
        targets.iter().map(|t| self.http(from, t, req.clone())).collect()
    }
}

/// One-way latency per link and a shared bandwidth figure.
type LatencyFn = dyn Fn(&str, &str) -> f64 + Send + Sync;

pub struct LinkModel {
    latency: Box<LatencyFn>,
    bytes_per_ms: f64,
}

impl LinkModel {
    pub fn new(latency: impl Fn(&str, &str) -> f64 + Send + Sync + 'static, bytes_per_ms: f64) -> Self {
        LinkModel { latency: Box::new(latency), bytes_per_ms }
    }

    pub fn zero() -> Self {
        LinkModel::new(|_, _| 0.0, f64::INFINITY)
    }

    pub fn uniform(latency_ms: f64, bytes_per_ms: f64) -> Self {
        LinkModel::new(move |_, _| latency_ms, bytes_per_ms)
    }

    pub fn latency_ms(&self, from: &str, to: &str) -> f64 {
        (self.latency)(from, to)
    }

    pub fn serialization_ms(&self, bytes: usize) -> f64 {
        if self.bytes_per_ms.is_finite() && self.bytes_per_ms > 0.0 {
            bytes as f64 / self.bytes_per_ms
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireKind {
    Http,
    Line,
}

/// One request/response exchange as seen on the wire, with clock times in ms.
#[derive(Debug, Clone)]
pub struct WireRecord {
    pub seq: u64,
    pub kind: WireKind,
    pub from: String,
    pub to: String,
    pub method: String,
    pub path: String,
    /// `X-OCDN-Req` value, if the request carried one.
    pub tag: Option<String>,
    pub status: u16,
    pub request_bytes: usize,
    pub response_bytes: usize,
    pub t_start: f64,
    pub t_request_first_byte: f64,
    pub t_request_done: f64,
    pub t_response_first_byte: f64,
    pub t_end: f64,
    pub request_raw: Option<Vec<u8>>,
    pub response_raw: Option<Vec<u8>>,
}

pub struct InProcNetwork {
    clock: Arc<dyn Clock>,
    link: LinkModel,
    services: RwLock<HashMap<String, Arc<dyn Service>>>,
    down: RwLock<HashSet<String>>,
    records: Mutex<Vec<WireRecord>>,
    seq: Mutex<u64>,
    capture: AtomicBool,
}

impl InProcNetwork {
    pub fn new(clock: Arc<dyn Clock>, link: LinkModel) -> Arc<Self> {
        Arc::new(InProcNetwork {
            clock,
            link,
            services: RwLock::new(HashMap::new()),
            down: RwLock::new(HashSet::new()),
            records: Mutex::new(Vec::new()),
            seq: Mutex::new(0),
            capture: AtomicBool::new(false),
        })
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn register(&self, addr: impl Into<String>, service: Arc<dyn Service>) {
        self.services.write().unwrap_or_else(|e| e.into_inner()).insert(addr.into(), service);
    }

    pub fn unregister(&self, addr: &str) {
        self.services.write().unwrap_or_else(|e| e.into_inner()).remove(addr);
    }

    /// Marks an address as unreachable without unregistering it.
    pub fn set_down(&self, addr: &str, down: bool) {
        let mut set = self.down.write().unwrap_or_else(|e| e.into_inner());
        if down {
            set.insert(addr.to_string());
        } else {
            set.remove(addr);
        }
    }

    /// Drops every service; breaks the reference cycle between services
    /// and the network they hold.
    pub fn shutdown(&self) {
        self.services.write().unwrap_or_else(|e| e.into_inner()).clear();
    }

    /// Keep raw message bytes in the wire records.
    pub fn set_capture(&self, on: bool) {
        self.capture.store(on, Ordering::SeqCst);
    }

    pub fn records(&self) -> Vec<WireRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn take_records(&self) -> Vec<WireRecord> {
        std::mem::take(&mut *self.records.lock().unwrap_or_else(|e| e.into_inner()))
    }

    fn service(&self, to: &str) -> Result<Arc<dyn Service>, TransportError> {
        if self.down.read().unwrap_or_else(|e| e.into_inner()).contains(to) {
            return Err(TransportError::Unreachable(to.to_string()));
        }
        self.services
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(to)
            .cloned()
            .ok_or_else(|| TransportError::Unreachable(to.to_string()))
    }

    fn next_seq(&self) -> u64 {
        let mut s = self.seq.lock().unwrap_or_else(|e| e.into_inner());
        *s += 1;
        *s
    }

    fn push(&self, rec: WireRecord) {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(rec);
    }

    /// Shared exchange logic for both kinds: request transfer, handler, response transfer.
    fn exchange(
        &self,
        from: &str,
        to: &str,
        request: Vec<u8>,
        handle: impl FnOnce(&[u8]) -> Result<Vec<u8>, TransportError>,
    ) -> Result<(Vec<u8>, Timing), TransportError> {
        let t_start = self.clock.now_ms();
        let out_latency = self.link.latency_ms(from, to);
        self.clock.advance(out_latency + self.link.serialization_ms(request.len()));
        let t_request_done = self.clock.now_ms();
        let response = handle(&request)?;
        let t_handled = self.clock.now_ms();
        let back_latency = self.link.latency_ms(to, from);
        self.clock.advance(back_latency + self.link.serialization_ms(response.len()));
        let timing = Timing {
            t_start,
            t_request_first_byte: t_start + out_latency,
            t_request_done,
            t_response_first_byte: t_handled + back_latency,
            t_end: self.clock.now_ms(),
        };
        Ok((response, timing))
    }
}

struct Timing {
    t_start: f64,
    t_request_first_byte: f64,
    t_request_done: f64,
    t_response_first_byte: f64,
    t_end: f64,
}

impl Transport for InProcNetwork {
    fn http(&self, from: &str, to: &str, req: HttpRequest) -> Result<HttpResponse, TransportError> {
        let service = self.service(to)?;
        let raw = req.encode();
        let (resp_raw, t) = self.exchange(from, to, raw.clone(), |bytes| {
            let parsed = HttpRequest::parse(bytes).map_err(|e| TransportError::Protocol(e.to_string()))?;
            Ok(service.handle_http(from, parsed).encode())
        })?;
        let resp = HttpResponse::parse(&resp_raw).map_err(|e| TransportError::Protocol(e.to_string()))?;
        let capture = self.capture.load(Ordering::SeqCst);
        self.push(WireRecord {
            seq: self.next_seq(),
            kind: WireKind::Http,
            from: from.to_string(),
            to: to.to_string(),
            method: req.method.clone(),
            path: req.path.clone(),
            tag: req.get_header(HDR_REQ).map(str::to_string),
            status: resp.status,
            request_bytes: raw.len(),
            response_bytes: resp_raw.len(),
            t_start: t.t_start,
            t_request_first_byte: t.t_request_first_byte,
            t_request_done: t.t_request_done,
            t_response_first_byte: t.t_response_first_byte,
            t_end: t.t_end,
            request_raw: capture.then_some(raw),
            response_raw: capture.then_some(resp_raw),
        });
        Ok(resp)
    }

    fn line(&self, from: &str, to: &str, line: &str) -> Result<String, TransportError> {
        let service = self.service(to)?;
        let mut raw = line.as_bytes().to_vec();
        raw.push(b'\n');
        let (resp_raw, t) = self.exchange(from, to, raw.clone(), |bytes| {
            let text = std::str::from_utf8(&bytes[..bytes.len() - 1])
                .map_err(|_| TransportError::Protocol("line is not utf-8".into()))?;
            let mut out = service
                .handle_line(from, text)
                .ok_or_else(|| TransportError::Protocol(format!("{to} does not speak the line protocol")))?
                .into_bytes();
            out.push(b'\n');
            Ok(out)
        })?;
        let capture = self.capture.load(Ordering::SeqCst);
        let text = String::from_utf8_lossy(&resp_raw[..resp_raw.len() - 1]).into_owned();
        self.push(WireRecord {
            seq: self.next_seq(),
            kind: WireKind::Line,
            from: from.to_string(),
            to: to.to_string(),
            method: "LINE".into(),
            path: String::new(),
            tag: None,
            status: 0,
            request_bytes: raw.len(),
            response_bytes: resp_raw.len(),
            t_start: t.t_start,
            t_request_first_byte: t.t_request_first_byte,
            t_request_done: t.t_request_done,
            t_response_first_byte: t.t_response_first_byte,
            t_end: t.t_end,
            request_raw: capture.then_some(raw),
            response_raw: capture.then_some(resp_raw),
        });
        Ok(text)
    }

    /// Every send starts at the same instant; afterwards the clock sits at the
    /// latest completion.
    fn fan_out(&self, from: &str, targets: &[String], req: &HttpRequest) -> Vec<Result<HttpResponse, TransportError>> {
        let t0 = self.clock.now_ms();
        let mut latest = t0;
        let mut out = Vec::with_capacity(targets.len());
        for t in targets {
            self.clock.set_ms(t0);
            out.push(self.http(from, t, req.clone()));
            latest = latest.max(self.clock.now_ms());
        }
        if self.clock.is_virtual() {
            self.clock.set_ms(latest);
        }
        out
    }
}

/// Blocking HTTP client and line-protocol client over TCP.
pub struct HttpTransport {
    agent: ureq::Agent,
    timeout: Duration,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        HttpTransport { agent: ureq::AgentBuilder::new().timeout(timeout).build(), timeout }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport::new(Duration::from_secs(30))
    }
}

fn io_err(e: impl std::fmt::Display) -> TransportError {
    TransportError::Io(e.to_string())
}

impl Transport for HttpTransport {
    fn http(&self, _from: &str, to: &str, req: HttpRequest) -> Result<HttpResponse, TransportError> {
        let url = format!("http://{to}{}", req.path);
        let mut r = self.agent.request(&req.method, &url);
        for (k, v) in &req.headers {
            if !k.eq_ignore_ascii_case("content-length") && !k.eq_ignore_ascii_case("host") {
                r = r.set(k, v);
            }
        }
        let resp = match r.send_bytes(&req.body) {
            Ok(resp) => resp,
            Err(ureq::Error::Status(_, resp)) => resp,
            Err(ureq::Error::Transport(t)) => {
                return Err(match t.kind() {
                    ureq::ErrorKind::ConnectionFailed | ureq::ErrorKind::Dns => {
                        TransportError::Unreachable(to.to_string())
                    }
                    _ => io_err(t),
                })
            }
        };
        let status = resp.status();
        let headers = resp
            .headers_names()
            .into_iter()
            .filter_map(|n| resp.header(&n).map(|v| (n.clone(), v.to_string())))
            .collect();
        let mut body = Vec::new();
        resp.into_reader().take(MAX_BODY as u64 + 1).read_to_end(&mut body).map_err(io_err)?;
        if body.len() > MAX_BODY {
            return Err(TransportError::Protocol("response body too large".into()));
        }
        Ok(HttpResponse { status, headers, body })
    }

    fn line(&self, _from: &str, to: &str, line: &str) -> Result<String, TransportError> {
        let addr = to
            .to_socket_addrs()
            .map_err(|_| TransportError::Unreachable(to.to_string()))?
            .next()
            .ok_or_else(|| TransportError::Unreachable(to.to_string()))?;
        let mut stream =
            TcpStream::connect_timeout(&addr, self.timeout).map_err(|_| TransportError::Unreachable(to.to_string()))?;
        stream.set_read_timeout(Some(self.timeout)).map_err(io_err)?;
        stream.write_all(line.as_bytes()).map_err(io_err)?;
        stream.write_all(b"\n").map_err(io_err)?;
        let mut reader = BufReader::new(stream.take(MAX_LINE as u64));
        let mut out = String::new();
        reader.read_line(&mut out).map_err(io_err)?;
        if !out.ends_with('\n') {
            return Err(TransportError::Protocol("unterminated response line".into()));
        }
        out.pop();
        Ok(out)
    }

    fn fan_out(&self, from: &str, targets: &[String], req: &HttpRequest) -> Vec<Result<HttpResponse, TransportError>> {
        std::thread::scope(|s| {
            let handles: Vec<_> = targets.iter().map(|t| s.spawn(move || self.http(from, t, req.clone()))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(TransportError::Io("sender panicked".into()))))
                .collect()
        })
    }
}

/// A running socket server.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Box<dyn FnMut() + Send>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        (self.stop)();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

/// Serves `service` over HTTP/1.1 on `listen`, one thread per request.
pub fn serve_http(listen: &str, service: Arc<dyn Service>) -> io::Result<ServerHandle> {
    let server = Arc::new(tiny_http::Server::http(listen).map_err(io::Error::other)?);
    let addr = server.server_addr().to_ip().ok_or_else(|| io::Error::other("not an IP listener"))?;
    let srv = server.clone();
    let thread = std::thread::spawn(move || {
        for request in srv.incoming_requests() {
            let service = service.clone();
            std::thread::spawn(move || answer_http(request, service.as_ref()));
        }
    });
    let stop_server = server.clone();
    Ok(ServerHandle { addr, stop: Box::new(move || stop_server.unblock()), thread: Some(thread) })
}

fn answer_http(mut request: tiny_http::Request, service: &dyn Service) {
    let peer = request.remote_addr().map(|a| a.to_string()).unwrap_or_default();
    let mut body = Vec::new();
    let too_large =
        request.as_reader().take(MAX_BODY as u64 + 1).read_to_end(&mut body).map(|n| n > MAX_BODY).unwrap_or(true);
    let resp = if too_large {
        HttpResponse::text(413, "request body too large")
    } else {
        let req = HttpRequest {
            method: request.method().as_str().to_string(),
            path: request.url().to_string(),
            headers: request.headers().iter().map(|h| (h.field.to_string(), h.value.to_string())).collect(),
            body,
        };
        service.handle_http(&peer, req)
    };
    let mut out = tiny_http::Response::from_data(resp.body).with_status_code(tiny_http::StatusCode(resp.status));
    for (k, v) in &resp.headers {
        if k.eq_ignore_ascii_case("content-length") {
            continue;
        }
        if let Ok(h) = tiny_http::Header::from_bytes(k.as_bytes(), v.as_bytes()) {
            out.add_header(h);
        }
    }
    let _ = request.respond(out);
}

/// Serves the newline-delimited protocol on `listen`: one response line per request line.
pub fn serve_lines(listen: &str, service: Arc<dyn Service>) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let stopping = Arc::new(AtomicBool::new(false));
    let flag = stopping.clone();
    let thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let service = service.clone();
            std::thread::spawn(move || {
                let _ = answer_lines(stream, service.as_ref());
            });
        }
    });
    let stop = move || {
        stopping.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        if let Ok(s) = TcpStream::connect(addr) {
            let _ = s.shutdown(Shutdown::Both);
        }
    };
    Ok(ServerHandle { addr, stop: Box::new(stop), thread: Some(thread) })
}

fn answer_lines(stream: TcpStream, service: &dyn Service) -> io::Result<()> {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    loop {
        let mut line = String::new();
        let n = (&mut reader).take(MAX_LINE as u64).read_line(&mut line)?;
        if n == 0 {
            return Ok(());
        }
        if !line.ends_with('\n') {
            return Ok(());
        }
        let reply = service
            .handle_line(&peer, line.trim_end_matches(['\n', '\r']))
            .unwrap_or_else(|| "{\"status\":\"REFUSED\",\"code\":\"UNSUPPORTED\"}".to_string());
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
    }
}
