#![allow(dead_code)]

use std::sync::Arc;

use ocdn_core::{CanonicalUrl, KeyPair, Roster, RosterMember, SelfCertifyingId};
use ocdn_node::cachenode::{CacheNode, CacheSettings};
use ocdn_node::clientproxy::{ClientNode, ExitDirectory};
use ocdn_node::clock::{Clock, VirtualClock};
use ocdn_node::exitproxy::{ExitProxy, ExitSettings, FlashcrowdSettings};
use ocdn_node::keydist::{KeyFetcher, KeydistServer, ProxyIdentity};
use ocdn_node::keystore::deterministic_keypair;
use ocdn_node::membership::AnnounceKind;
use ocdn_node::meter::{CostModel, Meter, OpLog};
use ocdn_node::publisher::{OriginState, Participation, PlanObject, PublishPlan, Publisher};
use ocdn_node::transport::{InProcNetwork, LinkModel};

pub const T0: u64 = 1_700_000_000;
pub const KEYDIST: &str = "10.2.0.1:53";
pub const ORIGIN: &str = "10.9.0.1:80";
pub const PREFIX: &str = "http://news.example/";

pub fn cache_addr(i: usize) -> String {
    format!("10.0.0.{}:8080", i + 1)
}

pub fn exit_addr(i: usize) -> String {
    format!("10.1.0.{}:8443", i + 1)
}

pub fn client_addr(i: usize) -> String {
    format!("10.3.0.{}:7000", i + 1)
}

pub fn url(path: &str) -> CanonicalUrl {
    CanonicalUrl::parse(&format!("{PREFIX}{path}")).unwrap()
}

pub struct StackOptions {
    pub caches: usize,
    pub exits: usize,
    pub clients: usize,
    pub link: LinkModel,
    pub cost: CostModel,
    pub flashcrowd: FlashcrowdSettings,
    pub key_ttl_secs: u64,
    pub key_lifetime_secs: u64,
}

impl Default for StackOptions {
    fn default() -> Self {
        StackOptions {
            caches: 2,
            exits: 3,
            clients: 5,
            link: LinkModel::zero(),
            cost: CostModel::free(),
            flashcrowd: FlashcrowdSettings { enabled: false, ..FlashcrowdSettings::default() },
            key_ttl_secs: 300,
            key_lifetime_secs: 7 * 24 * 3600,
        }
    }
}

pub struct Stack {
    pub clock: Arc<VirtualClock>,
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
}

impl Drop for Stack {
    fn drop(&mut self) {
        self.net.shutdown();
    }
}

impl Stack {
    pub fn new(opts: StackOptions) -> Stack {
        let clock = Arc::new(VirtualClock::new(T0));
        let dyn_clock: Arc<dyn Clock> = clock.clone();
        let net = InProcNetwork::new(dyn_clock.clone(), opts.link);
        let ops = OpLog::new();
        let meter = |name: &str| Meter::new(name, dyn_clock.clone(), opts.cost.clone(), Some(ops.clone()));

        let caches: Vec<Arc<CacheNode>> = (0..opts.caches)
            .map(|i| {
                let c = Arc::new(CacheNode::new(meter(&cache_addr(i)), CacheSettings::default()));
                net.register(cache_addr(i), c.clone());
                c
            })
            .collect();

        let authority = deterministic_keypair(100);
        let exit_keys: Vec<KeyPair> = (0..opts.exits).map(|i| deterministic_keypair(10 + i as u64)).collect();
        let mut roster = Roster::new(
            1,
            (0..opts.exits).map(|i| RosterMember::new(exit_addr(i), exit_keys[i].public_key().clone())).collect(),
        );
        roster.sign(&authority);

        let mut origin = OriginState::new(deterministic_keypair(101));
        origin.key_lifetime_secs = opts.key_lifetime_secs;
        let publisher = Publisher::new(ORIGIN, origin, net.clone(), meter(ORIGIN), 1);
        let keydist =
            Arc::new(KeydistServer::new(publisher.key_source(), roster.to_ring().unwrap(), meter(KEYDIST), 2));
        net.register(KEYDIST, keydist.clone());

        let exits: Vec<Arc<ExitProxy>> = (0..opts.exits)
            .map(|i| {
                let identity = Arc::new(ProxyIdentity {
                    address: exit_addr(i),
                    id: SelfCertifyingId::new(exit_addr(i), exit_keys[i].public_key()),
                    keypair: exit_keys[i].clone(),
                });
                let fetcher = KeyFetcher::new(
                    identity.clone(),
                    vec![(PREFIX.to_string(), KEYDIST.to_string())],
                    net.clone(),
                    meter(&exit_addr(i)),
                    opts.key_ttl_secs,
                );
                let settings = ExitSettings {
                    caches: (0..opts.caches).map(cache_addr).collect(),
                    flashcrowd: opts.flashcrowd.clone(),
                };
                let e = Arc::new(ExitProxy::new(
                    identity,
                    fetcher,
                    net.clone(),
                    meter(&exit_addr(i)),
                    settings,
                    50 + i as u64,
                ));
                net.register(exit_addr(i), e.clone());
                e
            })
            .collect();

        let clients: Vec<Arc<ClientNode>> = (0..opts.clients)
            .map(|i| {
                let dir = ExitDirectory::new(roster.clone()).unwrap();
                let c = Arc::new(ClientNode::new(
                    client_addr(i),
                    dir,
                    net.clone(),
                    meter(&client_addr(i)),
                    None,
                    200 + i as u64,
                ));
                net.register(client_addr(i), c.clone());
                c
            })
            .collect();
        let anns: Vec<_> = clients.iter().map(|c| c.announce(AnnounceKind::Join)).collect();
        for c in &clients {
            c.peers().merge_all(anns.clone(), T0);
        }

        Stack { clock, net, ops, caches, exits, exit_keys, clients, keydist, publisher, roster, authority }
    }

    pub fn publish(&self, objects: &[(CanonicalUrl, Vec<u8>, u8)]) {
        let plan = PublishPlan {
            objects: objects
                .iter()
                .map(|(u, c, n)| PlanObject {
                    url: u.clone(),
                    content: c.clone(),
                    encodings: *n,
                    participation: Participation::Encrypted,
                })
                .collect(),
            targets: (0..self.caches.len()).map(cache_addr).collect(),
        };
        self.publisher.publish(&plan).unwrap();
    }

    pub fn exit_for(&self, u: &CanonicalUrl) -> usize {
        let (addr, _) = self.clients[0].directory().lookup(u).unwrap();
        (0..self.exits.len()).find(|i| exit_addr(*i) == addr).unwrap()
    }
}

/// Pseudo-random bytes without pulling in an RNG.
pub fn content(seed: u64, len: usize) -> Vec<u8> {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..len)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            x as u8
        })
        .collect()
}
