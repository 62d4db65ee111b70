//! Adversary analyses.
//!
//! [`AdversaryView`] holds only what a curious CDN operator has: the access
//! logs and stored bytes of every cache node. [`CompromisedExitView`] adds
//! what one or more exit proxies observed. Ground truth is used for scoring
//! only.

use std::collections::{BTreeMap, BTreeSet};

use ocdn_node::cachenode::AccessLogRecord;
use ocdn_node::exitproxy::ExitObservation;
use ocdn_node::wire::request_id_hex;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheLogEntry {
    pub cache: String,
    pub record: AccessLogRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoredBlob {
    pub cache: String,
    /// Object id hex, or the path of a plaintext object.
    pub name: String,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct AdversaryView {
    pub logs: Vec<CacheLogEntry>,
    pub stored: Vec<StoredBlob>,
}

impl AdversaryView {
    /// Every log line (as the caches write them) followed by every stored name and blob.
    pub fn concatenated(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.logs {
            out.extend_from_slice(e.cache.as_bytes());
            out.push(b' ');
            out.extend_from_slice(serde_json::to_string(&e.record).expect("log records serialize").as_bytes());
            out.push(b'\n');
        }
        for b in &self.stored {
            out.extend_from_slice(b.cache.as_bytes());
            out.push(b' ');
            out.extend_from_slice(b.name.as_bytes());
            out.push(b'\n');
            out.extend_from_slice(&b.bytes);
            out.push(b'\n');
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct CompromisedExitView {
    /// `(exit address, observation)`.
    pub observations: Vec<(String, ExitObservation)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRecord {
    pub request_id: String,
    pub originator: String,
    pub mode: String,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GroundTruth {
    /// Every participating client address.
    pub clients: Vec<String>,
    pub requests: Vec<TruthRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Popularity {
    /// Successful object GETs seen in the logs.
    pub requests: u64,
    /// Share of `requests` per id hex.
    pub shares: BTreeMap<String, f64>,
    pub max_share: f64,
    pub min_share: f64,
    /// `max_share / min_share`.
    pub flatness_ratio: f64,
    /// Stored ids that were never fetched.
    pub unrequested_ids: usize,
}

fn is_object_id(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

/// Request share per obfuscated id, from successful GETs in the cache logs.
pub fn popularity_analysis(view: &AdversaryView) -> Popularity {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for e in &view.logs {
        let r = &e.record;
        if r.verb == "GET" && r.status == 200 && is_object_id(&r.id) {
            *counts.entry(r.id.clone()).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    let shares: BTreeMap<String, f64> = counts.iter().map(|(k, &c)| (k.clone(), c as f64 / total as f64)).collect();
    let max_share = shares.values().copied().fold(0.0, f64::max);
    let min_share = shares.values().copied().fold(f64::INFINITY, f64::min);
    let stored: BTreeSet<&str> =
        view.stored.iter().filter(|b| is_object_id(&b.name)).map(|b| b.name.as_str()).collect();
    Popularity {
        requests: total,
        max_share,
        min_share: if shares.is_empty() { 0.0 } else { min_share },
        flatness_ratio: if shares.is_empty() { 0.0 } else { max_share / min_share },
        unrequested_ids: stored.iter().filter(|id| !counts.contains_key(**id)).count(),
        shares,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Linkability {
    pub requests: usize,
    /// Requests whose originator is the only candidate.
    pub uniquely_identified: usize,
    pub unique_rate: f64,
    pub mean_candidates: f64,
    /// Success rate of guessing uniformly within the candidate set.
    pub guess_rate: f64,
}

fn score<'a>(sets: impl Iterator<Item = (BTreeSet<String>, &'a str)>) -> Linkability {
    let (mut n, mut unique, mut size_sum, mut guess) = (0usize, 0usize, 0usize, 0.0);
    for (cands, truth) in sets {
        n += 1;
        size_sum += cands.len();
        if cands.contains(truth) {
            guess += 1.0 / cands.len() as f64;
            if cands.len() == 1 {
                unique += 1;
            }
        }
    }
    let d = n.max(1) as f64;
    Linkability {
        requests: n,
        uniquely_identified: unique,
        unique_rate: unique as f64 / d,
        mean_candidates: size_sum as f64 / d,
        guess_rate: guess / d,
    }
}

/// Originator identification from cache logs. The adversary is also told
/// when each request ran and keeps only log records inside that window; the
/// candidates are the client addresses among those records' peers, or every
/// client when there are none.
pub fn linkability_analysis(view: &AdversaryView, truth: &GroundTruth) -> Linkability {
    let clients: BTreeSet<String> = truth.clients.iter().cloned().collect();
    let mut by_time: Vec<(f64, &str)> = view.logs.iter().map(|e| (e.record.t_ms, e.record.peer.as_str())).collect();
    by_time.sort_by(|a, b| a.0.total_cmp(&b.0));
    score(truth.requests.iter().map(|t| {
        let lo = by_time.partition_point(|(ts, _)| *ts < t.start_ms);
        let seen: BTreeSet<String> = by_time[lo..]
            .iter()
            .take_while(|(ts, _)| *ts <= t.end_ms)
            .filter(|(_, p)| clients.contains(*p))
            .map(|(_, p)| p.to_string())
            .collect();
        (if seen.is_empty() { clients.clone() } else { seen }, t.originator.as_str())
    }))
}

/// Route entries an exit cannot rule out as the originator: everything up
/// to and including the hop the request came from.
pub fn exit_candidates(obs: &ExitObservation) -> BTreeSet<String> {
    let senders = &obs.route[..obs.route.len().saturating_sub(1)];
    match senders.iter().position(|h| *h == obs.prev_hop) {
        Some(i) => senders[..=i].iter().cloned().collect(),
        None => senders.iter().cloned().collect(),
    }
}

/// Originator identification by the exits, per mode.
pub fn compromised_exit_analysis(view: &CompromisedExitView, truth: &GroundTruth) -> BTreeMap<String, Linkability> {
    let by_id: BTreeMap<&str, &TruthRecord> = truth.requests.iter().map(|t| (t.request_id.as_str(), t)).collect();
    let mut per_mode: BTreeMap<String, Vec<(BTreeSet<String>, &str)>> = BTreeMap::new();
    for (_, obs) in &view.observations {
        if let Some(t) = by_id.get(request_id_hex(&obs.request_id).as_str()) {
            per_mode.entry(t.mode.clone()).or_default().push((exit_candidates(obs), t.originator.as_str()));
        }
    }
    per_mode.into_iter().map(|(m, sets)| (m, score(sets.into_iter()))).collect()
}
