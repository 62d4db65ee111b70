//! Workload execution and per-request metrics.

use std::time::Duration;

use ocdn_node::cachenode::plain_path;
use ocdn_node::clientproxy::{ClientError, Mode};
use ocdn_node::http::HttpRequest;
use ocdn_node::meter::OpSample;
use ocdn_node::publisher::{Participation, PublishError};
use ocdn_node::transport::{Transport, WireRecord};
use ocdn_node::wire::{request_id_hex, DELIVER_PATH};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{AdversaryView, CompromisedExitView, GroundTruth, TruthRecord};
use crate::scenario::{ClockKind, Scenario, ScenarioError};
use crate::testbed::{cache_addr, client_addr, Testbed};
use crate::workload::{expand, Expanded, ObjectSpec};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("publishing: {0}")]
    Publish(#[from] PublishError),
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestMetric {
    pub request_id: String,
    pub url: String,
    pub size: usize,
    pub mode: String,
    pub ttfb_ms: Option<f64>,
    pub completion_ms: Option<f64>,
    /// `ok`, or why the request failed.
    pub status: String,
    pub client: String,
}

impl RequestMetric {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub requests: u64,
    pub ok: u64,
    pub failed: u64,
    pub cache_gets: u64,
    pub key_fetches: u64,
    pub flash_hits: u64,
}

pub struct RunOutput {
    pub metrics: Vec<RequestMetric>,
    pub ops: Vec<OpSample>,
    pub counters: Counters,
    pub adversary: AdversaryView,
    pub exit_view: CompromisedExitView,
    pub truth: GroundTruth,
    pub objects: Vec<ObjectSpec>,
}

fn error_status(e: &ClientError) -> String {
    match e {
        ClientError::NotEnoughPeers { .. } => "not_enough_peers".into(),
        ClientError::NoExit(_) | ClientError::UnknownExit(_) => "no_exit".into(),
        ClientError::Transport(_) => "transport".into(),
        ClientError::Rejected(code) => format!("rejected_{code}"),
        ClientError::Unsealed => "unsealed".into(),
        ClientError::Status(s) => s.name().to_string(),
        ClientError::Timeout(_) => "timeout".into(),
        ClientError::Crypto(_) => "crypto".into(),
        ClientError::Refresh(_) => "refresh".into(),
    }
}

/// Waits (or jumps, on a virtual clock) until request `index` may start.
fn pace(bed: &Testbed, s: &Scenario, index: usize) {
    let target = index as f64 * s.interarrival_ms;
    let now = bed.clock.now_ms();
    if target > now {
        match s.clock {
            ClockKind::Virtual => bed.clock.set_ms(target),
            ClockKind::Native => std::thread::sleep(Duration::from_secs_f64((target - now) / 1000.0)),
        }
    }
}

/// Builds the node set and publishes the workload's objects.
pub fn prepare(s: &Scenario, participation: Participation) -> Result<(Testbed, Expanded), RunError> {
    s.validate()?;
    let work = expand(s)?;
    let bed = Testbed::new(s);
    if !work.objects.is_empty() {
        let report = bed.publish(&work.objects, participation)?;
        if !report.complete() {
            return Err(PublishError::Incomplete(report).into());
        }
    }
    bed.net.take_records();
    bed.ops.clear();
    Ok((bed, work))
}

fn delivery_to<'a>(records: &'a [WireRecord], client: &str, id_hex: &str) -> Option<&'a WireRecord> {
    records.iter().find(|r| r.path == DELIVER_PATH && r.to == client && r.tag.as_deref() == Some(id_hex))
}

/// Runs request `index` of `work` through the oblivious path.
pub fn execute_one(bed: &Testbed, s: &Scenario, work: &Expanded, index: usize) -> (RequestMetric, Option<TruthRecord>) {
    let req = work.requests[index];
    let obj = &work.objects[req.object];
    let client = &bed.clients[req.client];
    pace(bed, s, index);
    bed.net.take_records();
    let t0 = bed.clock.now_ms();
    let outcome = client.get_detailed(&obj.url, req.mode);
    let records = bed.net.take_records();
    let mut m = RequestMetric {
        request_id: String::new(),
        url: obj.url.as_str().to_string(),
        size: obj.content.len(),
        mode: req.mode.to_string(),
        ttfb_ms: None,
        completion_ms: None,
        status: String::new(),
        client: client.address().to_string(),
    };
    match outcome {
        Ok((fetched, status)) => {
            let id = request_id_hex(&fetched.request_id);
            m.status = match status {
                Some(st) => st.name().to_string(),
                None if fetched.content != obj.content => "content_mismatch".into(),
                None => "ok".into(),
            };
            m.ttfb_ms = delivery_to(&records, client.address(), &id).map(|r| r.t_request_first_byte - t0);
            m.completion_ms = Some(fetched.completed_ms - t0);
            m.request_id = id.clone();
            let truth = TruthRecord {
                request_id: id,
                originator: client.address().to_string(),
                mode: m.mode.clone(),
                start_ms: t0,
                end_ms: fetched.completed_ms,
            };
            (m, Some(truth))
        }
        Err(e) => {
            m.status = error_status(&e);
            (m, None)
        }
    }
}

fn counters(bed: &Testbed, metrics: &[RequestMetric]) -> Counters {
    let ok = metrics.iter().filter(|m| m.ok()).count() as u64;
    Counters {
        requests: metrics.len() as u64,
        ok,
        failed: metrics.len() as u64 - ok,
        cache_gets: bed.caches.iter().map(|c| c.get_count()).sum(),
        key_fetches: bed.exits.iter().map(|e| e.fetcher().fetch_count()).sum(),
        flash_hits: bed.exits.iter().map(|e| e.stats().flash_hits.load(std::sync::atomic::Ordering::SeqCst)).sum(),
    }
}

/// Collects everything a finished run produced.
pub fn finish(bed: &Testbed, work: Expanded, metrics: Vec<RequestMetric>, truth: Vec<TruthRecord>) -> RunOutput {
    RunOutput {
        counters: counters(bed, &metrics),
        ops: bed.ops.samples(),
        adversary: bed.adversary_view(),
        exit_view: bed.exit_view(),
        truth: GroundTruth { clients: (0..bed.clients.len()).map(client_addr).collect(), requests: truth },
        objects: work.objects,
        metrics,
    }
}

/// Publishes the workload and fetches every request through the oblivious
/// path. Failed requests are recorded, not fatal.
pub fn run(s: &Scenario) -> Result<RunOutput, RunError> {
    let (bed, work) = prepare(s, Participation::Encrypted)?;
    let mut metrics = Vec::with_capacity(work.requests.len());
    let mut truth = Vec::with_capacity(work.requests.len());
    for i in 0..work.requests.len() {
        let (m, t) = execute_one(&bed, s, &work, i);
        metrics.push(m);
        truth.extend(t);
    }
    Ok(finish(&bed, work, metrics, truth))
}

/// The same workload fetched in the clear straight from a cache node.
pub fn baseline_run(s: &Scenario) -> Result<RunOutput, RunError> {
    let (bed, work) = prepare(s, Participation::Plaintext)?;
    let mut metrics = Vec::with_capacity(work.requests.len());
    for (i, req) in work.requests.iter().enumerate() {
        let obj = &work.objects[req.object];
        let from = client_addr(req.client);
        let cache = cache_addr(req.object % bed.caches.len());
        pace(&bed, s, i);
        bed.net.take_records();
        let t0 = bed.clock.now_ms();
        let got = bed.net.http(&from, &cache, HttpRequest::new("GET", plain_path(&obj.url)));
        let rec = bed.net.take_records().pop();
        let mut m = RequestMetric {
            request_id: format!("{i:032x}"),
            url: obj.url.as_str().to_string(),
            size: obj.content.len(),
            mode: "baseline".into(),
            ttfb_ms: None,
            completion_ms: None,
            status: String::new(),
            client: from,
        };
        m.status = match got {
            Ok(r) if r.status == 200 && r.body == obj.content => "ok".into(),
            Ok(r) if r.status == 200 => "content_mismatch".into(),
            Ok(r) => format!("http_{}", r.status),
            Err(_) => "transport".into(),
        };
        if let Some(r) = rec {
            m.ttfb_ms = Some(r.t_response_first_byte - t0);
            m.completion_ms = Some(r.t_end - t0);
        }
        metrics.push(m);
    }
    Ok(finish(&bed, work, metrics, Vec::new()))
}

/// Modes usable with a given number of clients, for sweeps.
pub fn all_modes(peers: usize) -> Vec<Mode> {
    vec![Mode::Direct, Mode::Routed(peers), Mode::SpoofedDirect(peers)]
}
