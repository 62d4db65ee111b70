//! Every role wired together over an in-process network.

use std::sync::{Arc, Mutex};

use ocdn_core::{KeyPair, Roster, RosterMember, SelfCertifyingId};
use ocdn_node::cachenode::{CacheNode, CacheSettings};
use ocdn_node::clientproxy::{ClientNode, ExitDirectory};
use ocdn_node::clock::{Clock, SystemClock, VirtualClock};
use ocdn_node::exitproxy::{ExitObservation, ExitProxy, ExitSettings};
use ocdn_node::keydist::{KeyFetcher, KeydistServer, ProxyIdentity};
use ocdn_node::keystore::deterministic_keypair;
use ocdn_node::membership::AnnounceKind;
use ocdn_node::meter::{Meter, OpLog};
use ocdn_node::publisher::{
    OriginState, Participation, PlanObject, PublishError, PublishPlan, PublishReport, Publisher,
};
use ocdn_node::transport::{InProcNetwork, LinkModel};

use crate::analysis::{AdversaryView, CacheLogEntry, CompromisedExitView, StoredBlob};
use crate::scenario::{ClockKind, Scenario};
use crate::workload::ObjectSpec;

/// Virtual clock epoch (unix seconds).
pub const EPOCH: u64 = 1_700_000_000;
pub const KEYDIST_ADDR: &str = "10.2.0.1:53";
pub const ORIGIN_ADDR: &str = "10.9.0.1:80";

// Node key pairs depend only on the node index so that the expensive RSA
// generation is shared between runs.
const AUTHORITY_KEY_SEED: u64 = 0x5100;
const ORIGIN_KEY_SEED: u64 = 0x5101;
const EXIT_KEY_SEED: u64 = 0x5200;

pub fn cache_addr(i: usize) -> String {
    format!("10.0.0.{}:8080", i + 1)
}

pub fn exit_addr(i: usize) -> String {
    format!("10.1.0.{}:8443", i + 1)
}

pub fn client_addr(i: usize) -> String {
    format!("10.3.{}.{}:7000", i / 250, i % 250 + 1)
}

pub fn is_client_addr(a: &str) -> bool {
    a.starts_with("10.3.")
}

pub struct Testbed {
    pub clock: Arc<dyn Clock>,
    pub net: Arc<InProcNetwork>,
    pub ops: Arc<OpLog>,
    pub caches: Vec<Arc<CacheNode>>,
    pub exits: Vec<Arc<ExitProxy>>,
    pub exit_keys: Vec<KeyPair>,
    pub clients: Vec<Arc<ClientNode>>,
    pub keydist: Arc<KeydistServer>,
    pub publisher: Publisher,
    pub roster: Roster,
    pub authority: KeyPair,
    observations: Arc<Mutex<Vec<(String, ExitObservation)>>>,
}

impl Drop for Testbed {
    fn drop(&mut self) {
        self.net.shutdown();
    }
}

fn link_model(s: &Scenario) -> LinkModel {
    let (alpha, base) = (s.alpha_ms, s.base_latency_ms);
    let bytes_per_ms = if s.bandwidth_mbps > 0.0 { s.bandwidth_mbps * 1e6 / 8.0 / 1000.0 } else { f64::INFINITY };
    LinkModel::new(
        move |from, to| if is_client_addr(from) || is_client_addr(to) { base + alpha } else { base },
        bytes_per_ms,
    )
}

impl Testbed {
    /// Builds the node set of `s`. Nothing is published yet.
    pub fn new(s: &Scenario) -> Testbed {
        let clock: Arc<dyn Clock> = match s.clock {
            ClockKind::Virtual => Arc::new(VirtualClock::new(EPOCH)),
            ClockKind::Native => Arc::new(SystemClock::new()),
        };
        let net = InProcNetwork::new(clock.clone(), link_model(s));
        let ops = OpLog::new();
        let meter = |name: &str| Meter::new(name, clock.clone(), s.cost.clone(), Some(ops.clone()));
        let n = s.nodes;

        let caches: Vec<Arc<CacheNode>> = (0..n.caches)
            .map(|i| {
                let c = Arc::new(CacheNode::new(meter(&cache_addr(i)), CacheSettings::default()));
                net.register(cache_addr(i), c.clone());
                c
            })
            .collect();

        let authority = deterministic_keypair(AUTHORITY_KEY_SEED);
        let exit_keys: Vec<KeyPair> = (0..n.exits).map(|i| deterministic_keypair(EXIT_KEY_SEED + i as u64)).collect();
        let mut roster = Roster::new(
            1,
            (0..n.exits).map(|i| RosterMember::new(exit_addr(i), exit_keys[i].public_key().clone())).collect(),
        );
        roster.vnodes = s.vnodes;
        roster.sign(&authority);
        let ring = roster.to_ring().expect("generated roster is valid");

        let mut origin = OriginState::new(deterministic_keypair(ORIGIN_KEY_SEED));
        origin.key_lifetime_secs = s.key_lifetime_secs;
        let publisher = Publisher::new(ORIGIN_ADDR, origin, net.clone(), meter(ORIGIN_ADDR), s.seed ^ 1);
        let keydist = Arc::new(KeydistServer::new(publisher.key_source(), ring, meter(KEYDIST_ADDR), s.seed ^ 2));
        net.register(KEYDIST_ADDR, keydist.clone());

        let observations = Arc::new(Mutex::new(Vec::new()));
        let exits: Vec<Arc<ExitProxy>> = (0..n.exits)
            .map(|i| {
                let addr = exit_addr(i);
                let identity = Arc::new(ProxyIdentity {
                    address: addr.clone(),
                    id: SelfCertifyingId::new(addr.clone(), exit_keys[i].public_key()),
                    keypair: exit_keys[i].clone(),
                });
                // One key service answers for every origin prefix.
                let fetcher = KeyFetcher::new(
                    identity.clone(),
                    vec![(String::new(), KEYDIST_ADDR.to_string())],
                    net.clone(),
                    meter(&addr),
                    s.key_cache_ttl_secs,
                );
                let settings =
                    ExitSettings { caches: (0..n.caches).map(cache_addr).collect(), flashcrowd: s.flashcrowd.clone() };
                let e = Arc::new(ExitProxy::new(
                    identity,
                    fetcher,
                    net.clone(),
                    meter(&addr),
                    settings,
                    s.seed ^ (0x100 + i as u64),
                ));
                if s.observe_exits {
                    let sink = observations.clone();
                    let me = addr.clone();
                    e.set_observer(Some(Arc::new(move |o: &ExitObservation| {
                        sink.lock().unwrap_or_else(|e| e.into_inner()).push((me.clone(), o.clone()));
                    })));
                }
                net.register(addr, e.clone());
                e
            })
            .collect();

        let clients: Vec<Arc<ClientNode>> = (0..n.clients)
            .map(|i| {
                let dir = ExitDirectory::new(roster.clone()).expect("generated roster is valid");
                let addr = client_addr(i);
                let c = Arc::new(ClientNode::new(
                    addr.clone(),
                    dir,
                    net.clone(),
                    meter(&addr),
                    None,
                    s.seed ^ (0x10_000 + i as u64),
                ));
                net.register(addr, c.clone());
                c
            })
            .collect();
        // Membership converged before the run starts.
        let now = clock.unix_secs();
        let anns: Vec<_> = clients.iter().map(|c| c.announce(AnnounceKind::Join)).collect();
        for c in &clients {
            c.peers().merge_all(anns.clone(), now);
        }

        Testbed {
            clock,
            net,
            ops,
            caches,
            exits,
            exit_keys,
            clients,
            keydist,
            publisher,
            roster,
            authority,
            observations,
        }
    }

    pub fn cache_targets(&self) -> Vec<String> {
        (0..self.caches.len()).map(cache_addr).collect()
    }

    pub fn publish(&self, objects: &[ObjectSpec], participation: Participation) -> Result<PublishReport, PublishError> {
        let plan = PublishPlan {
            objects: objects
                .iter()
                .map(|o| PlanObject {
                    url: o.url.clone(),
                    content: o.content.clone(),
                    encodings: o.encodings,
                    participation,
                })
                .collect(),
            targets: self.cache_targets(),
        };
        self.publisher.publish(&plan)
    }

    /// What a curious CDN operator holds: its logs and its disks.
    pub fn adversary_view(&self) -> AdversaryView {
        let mut view = AdversaryView::default();
        for (i, c) in self.caches.iter().enumerate() {
            let cache = cache_addr(i);
            view.logs.extend(c.dump_log().into_iter().map(|record| CacheLogEntry { cache: cache.clone(), record }));
            view.stored.extend(c.stored().into_iter().map(|e| StoredBlob {
                cache: cache.clone(),
                name: e.id.to_hex(),
                bytes: e.envelope,
            }));
            view.stored.extend(c.stored_plain().into_iter().map(|(name, bytes)| StoredBlob {
                cache: cache.clone(),
                name,
                bytes,
            }));
        }
        view
    }

    /// What the exits saw, if the scenario asked for it.
    pub fn exit_view(&self) -> CompromisedExitView {
        CompromisedExitView { observations: self.observations.lock().unwrap_or_else(|e| e.into_inner()).clone() }
    }
}
