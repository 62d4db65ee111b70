//! Long-running node roles and the one-shot client.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, SystemTime};

use anyhow::{anyhow, Context};
use clap::{Args, Subcommand};
use ocdn_core::{CanonicalUrl, Roster, SelfCertifyingId};
use ocdn_node::cachenode::{CacheNode, CacheSettings};
use ocdn_node::clientproxy::{ClientNode, ExitDirectory, Mode};
use ocdn_node::clock::{Clock, SystemClock};
use ocdn_node::config::{NodeConfig, Role};
use ocdn_node::exitproxy::{ExitProxy, ExitSettings};
use ocdn_node::keydist::{KeyFetcher, KeydistServer, ProxyIdentity};
use ocdn_node::keystore::{load_keypair, load_public};
use ocdn_node::membership::AnnounceKind;
use ocdn_node::meter::{CostModel, Meter};
use ocdn_node::publisher::{OriginKeys, OriginState};
use ocdn_node::transport::{serve_http, serve_lines, HttpTransport, ServerHandle, Transport};
use tracing::{info, warn};

use crate::{Classify, Failure, Globals};

const GOSSIP_INTERVAL: Duration = Duration::from_secs(10);
const RELOAD_INTERVAL: Duration = Duration::from_secs(1);
const TRANSPORT_TIMEOUT: Duration = Duration::from_secs(30);

struct Node {
    cfg: NodeConfig,
    listen: String,
    address: String,
    seed: u64,
    meter: Meter,
    transport: Arc<dyn Transport>,
}

/// Loads and checks the config for `role`. Nothing is bound here.
fn load(g: &Globals, role: Role) -> Result<Node, Failure> {
    let path = g.config.as_deref().ok_or_else(|| Failure::Config(anyhow!("--config or OCDN_CONFIG is required")))?;
    let cfg = NodeConfig::load(path).with_context(|| format!("loading {}", path.display())).config()?;
    if let Some(r) = cfg.role {
        if r != role {
            return Err(Failure::Config(anyhow!("{} is a {r:?} config, not {role:?}", path.display())));
        }
    }
    node(g, cfg)
}

fn node(g: &Globals, cfg: NodeConfig) -> Result<Node, Failure> {
    let listen = cfg.listen.clone().ok_or_else(|| Failure::Config(anyhow!("`listen` is required")))?;
    let address = cfg.public_address().unwrap_or(&listen).to_string();
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    Ok(Node {
        seed: g.seed.or(cfg.seed).unwrap_or_else(rand::random),
        meter: Meter::new(address.clone(), clock, CostModel::default(), None),
        transport: Arc::new(HttpTransport::new(TRANSPORT_TIMEOUT)),
        cfg,
        listen,
        address,
    })
}

fn required<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, Failure> {
    p.as_deref().ok_or_else(|| Failure::Config(anyhow!("`{name}` is required")))
}

/// Reads a roster, checking its signature when an authority key is configured.
fn read_roster(roster: &Path, authority: Option<&Path>) -> anyhow::Result<Roster> {
    let text = std::fs::read_to_string(roster).with_context(|| format!("reading {}", roster.display()))?;
    let r = Roster::parse(&text)?;
    if let Some(a) = authority {
        r.verify(&load_public(a).with_context(|| format!("reading {}", a.display()))?)?;
    }
    Ok(r)
}

fn roster_paths(cfg: &NodeConfig) -> Result<(PathBuf, Option<PathBuf>), Failure> {
    let roster = required(&cfg.roster, "roster")?.to_path_buf();
    if cfg.authority_pub.is_none() {
        warn!("no authority_pub configured; the roster signature is not checked");
    }
    Ok((roster, cfg.authority_pub.clone()))
}

fn listening(role: &str, h: &ServerHandle) {
    info!(addr = %h.addr(), "{role} listening");
}

pub fn serve_cache(g: &Globals) -> Result<(), Failure> {
    let n = load(g, Role::Cache)?;
    let c = n.cfg.cache.clone().unwrap_or_default();
    let trusted = c
        .trusted_origins
        .iter()
        .map(|p| load_public(p).map(|k| k.fingerprint()).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()
        .config()?;
    let mut node = CacheNode::new(
        n.meter,
        CacheSettings { capacity: c.capacity, strict_allowlist: c.strict_allowlist, trusted_origins: trusted },
    );
    if let Some(p) = &c.log_file {
        node = node.with_log_file(p).with_context(|| format!("opening {}", p.display())).runtime()?;
    }
    let h = serve_http(&n.listen, Arc::new(node)).with_context(|| format!("binding {}", n.listen)).runtime()?;
    listening("cache", &h);
    h.join();
    Ok(())
}

pub fn serve_exit(g: &Globals) -> Result<(), Failure> {
    let n = load(g, Role::Exit)?;
    let (roster_path, authority) = roster_paths(&n.cfg)?;
    let roster = read_roster(&roster_path, authority.as_deref()).config()?;
    let kp_path = required(&n.cfg.keypair, "keypair")?;
    let keypair = load_keypair(kp_path).with_context(|| format!("reading {}", kp_path.display())).config()?;
    let e = n.cfg.exit.clone().unwrap_or_default();
    if e.caches.is_empty() {
        return Err(Failure::Config(anyhow!("exit.caches is empty")));
    }
    let id = SelfCertifyingId::new(n.address.clone(), keypair.public_key());
    if roster.member(&id).is_none() {
        warn!(%id, "this exit is not in the roster; key servers will refuse it");
    }
    let identity = Arc::new(ProxyIdentity { address: n.address.clone(), id, keypair });
    let directory = e.keydist.iter().map(|k| (k.prefix.clone(), k.address.clone())).collect();
    let fetcher =
        KeyFetcher::new(identity.clone(), directory, n.transport.clone(), n.meter.clone(), e.key_cache_ttl_secs);
    let settings = ExitSettings { caches: e.caches, flashcrowd: e.flashcrowd };
    let exit = ExitProxy::new(identity, fetcher, n.transport, n.meter, settings, n.seed);
    let h = serve_http(&n.listen, Arc::new(exit)).with_context(|| format!("binding {}", n.listen)).runtime()?;
    listening("exit", &h);
    h.join();
    Ok(())
}

fn modified(p: &Path) -> Option<SystemTime> {
    std::fs::metadata(p).and_then(|m| m.modified()).ok()
}

pub fn serve_keydist(g: &Globals) -> Result<(), Failure> {
    let n = load(g, Role::Keydist)?;
    let (roster_path, authority) = roster_paths(&n.cfg)?;
    let roster = read_roster(&roster_path, authority.as_deref()).config()?;
    let ring = roster.to_ring().config()?;
    let origin_dir = n
        .cfg
        .keydist
        .as_ref()
        .and_then(|k| k.origin_dir.clone())
        .ok_or_else(|| Failure::Config(anyhow!("keydist.origin_dir is required")))?;
    let state = OriginState::load(&origin_dir).with_context(|| format!("loading {}", origin_dir.display())).config()?;
    let shared = Arc::new(RwLock::new(state));
    let server = Arc::new(KeydistServer::new(Arc::new(OriginKeys(shared.clone())), ring, n.meter, n.seed));
    let h = serve_lines(&n.listen, server.clone()).with_context(|| format!("binding {}", n.listen)).runtime()?;
    listening("keydist", &h);

    // Pick up key rotations and roster edits made while running.
    let state_file = OriginState::state_file(&origin_dir);
    thread::spawn(move || {
        let (mut state_seen, mut roster_seen) = (modified(&state_file), modified(&roster_path));
        loop {
            thread::sleep(RELOAD_INTERVAL);
            let s = modified(&state_file);
            if s != state_seen {
                state_seen = s;
                match OriginState::load(&origin_dir) {
                    Ok(st) => {
                        *shared.write().unwrap_or_else(|e| e.into_inner()) = st;
                        info!("origin state reloaded");
                    }
                    Err(e) => warn!("origin state reload failed: {e}"),
                }
            }
            let r = modified(&roster_path);
            if r != roster_seen {
                roster_seen = r;
                match read_roster(&roster_path, authority.as_deref()).and_then(|r| Ok(r.to_ring()?)) {
                    Ok(ring) => {
                        server.set_ring(ring);
                        info!("roster reloaded");
                    }
                    Err(e) => warn!("roster reload failed: {e:#}"),
                }
            }
        }
    });
    h.join();
    Ok(())
}

#[derive(Args)]
pub struct ClientArgs {
    /// Roster file; overrides `roster` from the config.
    #[arg(long)]
    roster: Option<PathBuf>,
    /// Roster authority public key; overrides `authority_pub`.
    #[arg(long)]
    authority_pub: Option<PathBuf>,
    /// File of seed peer addresses, one per line; added to client.peers.
    #[arg(long)]
    peers: Option<PathBuf>,
    /// `direct`, `routed:<k>` or `spoofed_direct:<k>`; overrides client.mode.
    #[arg(long)]
    mode: Option<String>,
    /// Address to receive deliveries on; overrides `listen`.
    #[arg(long)]
    listen: Option<String>,
    #[command(subcommand)]
    command: ClientCommand,
}

#[derive(Subcommand)]
enum ClientCommand {
    /// Fetch one URL through the CDN and write its content to stdout.
    Get {
        url: String,
        /// Write the content here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Stay up: relay for peers and gossip membership.
    Serve,
}

fn read_peers(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Config file when given, then command-line overrides.
fn client_config(g: &Globals, args: &ClientArgs) -> Result<NodeConfig, Failure> {
    let mut cfg = match &g.config {
        Some(_) => load(g, Role::Client)?.cfg,
        None => NodeConfig::default(),
    };
    let mut c = cfg.client.clone().unwrap_or_default();
    if let Some(m) = &args.mode {
        c.mode = m.clone();
    }
    if let Some(p) = &args.peers {
        c.peers.extend(read_peers(p).config()?);
    }
    cfg.client = Some(c);
    if args.roster.is_some() {
        cfg.roster = args.roster.clone();
    }
    if args.authority_pub.is_some() {
        cfg.authority_pub = args.authority_pub.clone();
    }
    if args.listen.is_some() {
        cfg.listen = args.listen.clone();
        cfg.address = None;
    }
    if cfg.listen.is_none() {
        // Deliveries need a concrete address to put in the route.
        let port = std::net::TcpListener::bind("127.0.0.1:0").and_then(|l| l.local_addr()).runtime()?.port();
        cfg.listen = Some(format!("127.0.0.1:{port}"));
    }
    cfg.validate().config()?;
    Ok(cfg)
}

fn start_client(n: &Node) -> Result<(Arc<ClientNode>, ServerHandle), Failure> {
    let (roster_path, authority) = roster_paths(&n.cfg)?;
    let roster = read_roster(&roster_path, authority.as_deref()).config()?;
    let directory = ExitDirectory::new(roster).config()?;
    let c = n.cfg.client.clone().unwrap_or_default();
    let node = ClientNode::new(
        n.address.clone(),
        directory,
        n.transport.clone(),
        n.meter.clone(),
        Some(c.peer_window_secs),
        n.seed,
    )
    .with_wait(Duration::from_secs(c.wait_secs))
    .with_roster_source(Box::new(move || {
        read_roster(&roster_path, authority.as_deref()).map_err(|e| format!("{e:#}"))
    }));
    let node = Arc::new(node);
    node.announce(AnnounceKind::Join);
    let h = serve_http(&n.listen, node.clone()).with_context(|| format!("binding {}", n.listen)).runtime()?;
    for p in &c.peers {
        if let Err(e) = node.gossip_with(p) {
            warn!(peer = %p, "gossip failed: {e}");
        }
    }
    Ok((node, h))
}

pub fn client(g: &Globals, args: ClientArgs) -> Result<(), Failure> {
    let n = node(g, client_config(g, &args)?)?;
    match args.command {
        ClientCommand::Get { url, output } => {
            let url = CanonicalUrl::parse(&url).with_context(|| format!("bad url {url:?}")).config()?;
            let mode: Mode = n
                .cfg
                .client
                .clone()
                .unwrap_or_default()
                .mode
                .parse()
                .map_err(|e: String| Failure::Config(anyhow!(e)))?;
            let (node, h) = start_client(&n)?;
            let got = node.get(&url, mode).with_context(|| format!("fetching {url}")).runtime();
            node.announce(AnnounceKind::Leave);
            h.shutdown();
            let got = got?;
            info!(exit = %got.exit, bytes = got.content.len(), "fetched");
            match output {
                Some(p) => {
                    std::fs::write(&p, &got.content).with_context(|| format!("writing {}", p.display())).runtime()
                }
                None => {
                    let mut out = std::io::stdout().lock();
                    out.write_all(&got.content).and_then(|_| out.flush()).runtime()
                }
            }
        }
        ClientCommand::Serve => {
            let (node, h) = start_client(&n)?;
            listening("client", &h);
            loop {
                thread::sleep(GOSSIP_INTERVAL);
                node.announce(AnnounceKind::Join);
                if let Some(Err(e)) = node.gossip_round() {
                    warn!("gossip failed: {e}");
                }
            }
        }
    }
}
