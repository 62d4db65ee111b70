//! Publishing, roster and key management.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Subcommand};
use ocdn_core::{KeyPair, Roster, RosterMember};
use ocdn_node::clock::{Clock, SystemClock};
use ocdn_node::config::NodeConfig;
use ocdn_node::keystore::{deterministic_keypair, load_keypair, load_public, save_keypair, save_public};
use ocdn_node::meter::{CostModel, Meter};
use ocdn_node::publisher::{OriginState, PlanFile, PublishError, PublishReport, Publisher};
use ocdn_node::transport::HttpTransport;
use rand::SeedableRng;

use crate::{Classify, Failure, Globals};

#[derive(Args)]
pub struct PublishArgs {
    /// Origin state directory; created on first publish.
    #[arg(long)]
    state: PathBuf,
    /// Plan file (JSON).
    #[arg(long)]
    plan: PathBuf,
    /// Extra cache node to push to; repeatable.
    #[arg(long = "target")]
    targets: Vec<String>,
    /// Origin signing key for a new state directory; generated when absent.
    #[arg(long)]
    keypair: Option<PathBuf>,
}

fn new_keypair(seed: Option<u64>) -> anyhow::Result<KeyPair> {
    Ok(match seed {
        Some(s) => deterministic_keypair(s),
        None => KeyPair::generate(&mut rand::rngs::StdRng::from_entropy())?,
    })
}

fn read_keypair(p: &Path) -> Result<KeyPair, Failure> {
    load_keypair(p).with_context(|| format!("reading {}", p.display())).config()
}

fn publisher(state: OriginState, seed: u64) -> Publisher {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let meter = Meter::new("origin", clock, CostModel::default(), None);
    Publisher::new("origin", state, Arc::new(HttpTransport::new(Duration::from_secs(30))), meter, seed)
}

fn save(p: &Publisher, dir: &Path) -> Result<(), Failure> {
    let state = p.state();
    let s = state.read().unwrap_or_else(|e| e.into_inner());
    s.save(dir).with_context(|| format!("saving {}", dir.display())).runtime()
}

fn report_failures(r: &PublishReport) {
    for p in &r.pushes {
        for (target, why) in &p.failed {
            eprintln!("ocdn: push of {} to {target} failed: {why}", p.url);
        }
    }
}

pub fn publish(g: &Globals, a: PublishArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.plan).with_context(|| format!("reading {}", a.plan.display())).config()?;
    let base = a.plan.parent().unwrap_or(Path::new("."));
    let mut plan = PlanFile::parse(&text).and_then(|p| p.into_plan(base, a.targets)).config()?;
    let state = if OriginState::state_file(&a.state).exists() {
        OriginState::load(&a.state).with_context(|| format!("loading {}", a.state.display())).config()?
    } else {
        let kp = match &a.keypair {
            Some(p) => read_keypair(p)?,
            None => new_keypair(g.seed).runtime()?,
        };
        OriginState::new(kp)
    };
    if plan.targets.is_empty() {
        plan.targets = state.targets.clone();
    }
    if plan.targets.is_empty() {
        return Err(Failure::Config(anyhow!("no cache targets in the plan, --target or the state")));
    }
    let p = publisher(state, g.seed_or_random());
    let result = p.publish(&plan);
    save(&p, &a.state)?;
    match result {
        Ok(r) => {
            println!(
                "published {} objects as {} ids to {} targets",
                plan.objects.len(),
                r.ids().len(),
                plan.targets.len()
            );
            Ok(())
        }
        Err(PublishError::Incomplete(r)) => {
            report_failures(&r);
            Err(Failure::Runtime(anyhow!("some objects reached no cache")))
        }
        Err(e @ (PublishError::EncodingCount(_) | PublishError::KeyExpired(_) | PublishError::Plan(_))) => {
            Err(Failure::Config(e.into()))
        }
        Err(e) => Err(Failure::Runtime(e.into())),
    }
}

#[derive(Args)]
pub struct RosterArgs {
    #[command(subcommand)]
    command: RosterCommand,
}

#[derive(Subcommand)]
enum RosterCommand {
    /// Create and sign a roster.
    New {
        /// Authority key pair that signs the roster.
        #[arg(long)]
        authority: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `ADDRESS=PUBLIC_KEY_FILE`; repeatable.
        #[arg(long = "member", value_parser = parse_member)]
        members: Vec<(String, PathBuf)>,
        #[arg(long, default_value_t = 1)]
        version: u64,
        #[arg(long)]
        vnodes: Option<u32>,
        #[arg(long)]
        replication: Option<usize>,
    },
    /// Add members, bump the version and re-sign.
    Add {
        #[arg(long)]
        roster: PathBuf,
        #[arg(long)]
        authority: PathBuf,
        #[arg(long = "member", value_parser = parse_member, required = true)]
        members: Vec<(String, PathBuf)>,
    },
    /// Remove members by address, bump the version and re-sign.
    Remove {
        #[arg(long)]
        roster: PathBuf,
        #[arg(long)]
        authority: PathBuf,
        #[arg(long = "address", required = true)]
        addresses: Vec<String>,
    },
    /// Print a roster and check its signature.
    Show {
        #[arg(long)]
        roster: PathBuf,
        /// Authority public key; defaults to authority_pub from the config.
        #[arg(long)]
        authority_pub: Option<PathBuf>,
    },
}

fn parse_member(s: &str) -> Result<(String, PathBuf), String> {
    let (addr, key) = s.split_once('=').ok_or("expected ADDRESS=PUBLIC_KEY_FILE")?;
    if !addr.contains(':') {
        return Err(format!("{addr:?} needs host:port"));
    }
    Ok((addr.to_string(), PathBuf::from(key)))
}

fn members(list: &[(String, PathBuf)]) -> Result<Vec<RosterMember>, Failure> {
    list.iter()
        .map(|(addr, p)| {
            let pk = load_public(p).with_context(|| format!("reading {}", p.display())).config()?;
            Ok(RosterMember::new(addr.clone(), pk))
        })
        .collect()
}

fn read_roster(p: &Path) -> Result<Roster, Failure> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).config()?;
    Roster::parse(&text).with_context(|| format!("parsing {}", p.display())).config()
}

fn write_roster(mut r: Roster, authority: &KeyPair, out: &Path) -> Result<(), Failure> {
    r.check_members().config()?;
    r.to_ring().config()?;
    r.sign(authority);
    std::fs::write(out, r.render()).with_context(|| format!("writing {}", out.display())).runtime()?;
    println!("roster version {} with {} members -> {}", r.version, r.members.len(), out.display());
    Ok(())
}

pub fn roster(g: &Globals, a: RosterArgs) -> Result<(), Failure> {
    match a.command {
        RosterCommand::New { authority, out, members: list, version, vnodes, replication } => {
            let auth = read_keypair(&authority)?;
            let mut r = Roster::new(version, members(&list)?);
            if let Some(v) = vnodes {
                r.vnodes = v;
            }
            if let Some(k) = replication {
                r.replication = k;
            }
            write_roster(r, &auth, &out)
        }
        RosterCommand::Add { roster, authority, members: list } => {
            let auth = read_keypair(&authority)?;
            let old = read_roster(&roster)?;
            old.verify(auth.public_key()).context("existing roster").config()?;
            let mut r = Roster::new(old.version + 1, old.members);
            r.vnodes = old.vnodes;
            r.replication = old.replication;
            for m in members(&list)? {
                if r.members.iter().any(|x| x.address == m.address) {
                    return Err(Failure::Config(anyhow!("{} is already a member", m.address)));
                }
                r.members.push(m);
            }
            write_roster(r, &auth, &roster)
        }
        RosterCommand::Remove { roster, authority, addresses } => {
            let auth = read_keypair(&authority)?;
            let old = read_roster(&roster)?;
            old.verify(auth.public_key()).context("existing roster").config()?;
            for a in &addresses {
                if !old.members.iter().any(|m| &m.address == a) {
                    return Err(Failure::Config(anyhow!("{a} is not a member")));
                }
            }
            let kept = old.members.into_iter().filter(|m| !addresses.contains(&m.address)).collect();
            let mut r = Roster::new(old.version + 1, kept);
            r.vnodes = old.vnodes;
            r.replication = old.replication;
            write_roster(r, &auth, &roster)
        }
        RosterCommand::Show { roster, authority_pub } => {
            let r = read_roster(&roster)?;
            println!("version {}\nvnodes {}\nreplication {}", r.version, r.vnodes, r.replication);
            for m in &r.members {
                println!("member {} {}", m.address, m.id);
            }
            let from_config = || -> Result<Option<PathBuf>, Failure> {
                match &g.config {
                    Some(c) => Ok(NodeConfig::load(c)
                        .with_context(|| format!("loading {}", c.display()))
                        .config()?
                        .authority_pub),
                    None => Ok(None),
                }
            };
            let Some(p) = authority_pub.map_or_else(from_config, |p| Ok(Some(p)))? else {
                println!("signature unchecked");
                return Ok(());
            };
            let pk = load_public(&p).with_context(|| format!("reading {}", p.display())).config()?;
            r.verify(&pk).context("signature").config()?;
            println!("signature valid");
            Ok(())
        }
    }
}

#[derive(Args)]
pub struct KeysArgs {
    #[command(subcommand)]
    command: KeysCommand,
}

#[derive(Subcommand)]
enum KeysCommand {
    /// Generate an RSA key pair; `--seed` makes it reproducible.
    Gen {
        /// Private key file (written owner-only).
        #[arg(long)]
        out: PathBuf,
        /// Also write the public key here.
        #[arg(long)]
        public: Option<PathBuf>,
    },
    /// Replace the shared key for a URL prefix and re-push its objects.
    Rotate {
        #[arg(long)]
        state: PathBuf,
        /// URL prefix, e.g. `http://site.example/`.
        #[arg(long, required_unless_present = "expired", conflicts_with = "expired")]
        prefix: Option<String>,
        /// Rotate every prefix whose key has expired.
        #[arg(long)]
        expired: bool,
        /// Extra cache node to push to; repeatable.
        #[arg(long = "target")]
        targets: Vec<String>,
    },
}

pub fn keys(g: &Globals, a: KeysArgs) -> Result<(), Failure> {
    match a.command {
        KeysCommand::Gen { out, public } => {
            let kp = new_keypair(g.seed).runtime()?;
            save_keypair(&out, &kp).with_context(|| format!("writing {}", out.display())).runtime()?;
            if let Some(p) = public {
                save_public(&p, kp.public_key()).with_context(|| format!("writing {}", p.display())).runtime()?;
            }
            println!("{}", hex_fingerprint(&kp));
            Ok(())
        }
        KeysCommand::Rotate { state, prefix, expired, targets } => {
            let mut st = OriginState::load(&state).with_context(|| format!("loading {}", state.display())).config()?;
            if let Some(p) = &prefix {
                if !st.keys.contains_key(p) {
                    let known: Vec<&String> = st.keys.keys().collect();
                    return Err(Failure::Config(anyhow!("no key for prefix {p:?}; known: {known:?}")));
                }
            }
            for t in targets {
                if !st.targets.contains(&t) {
                    st.targets.push(t);
                }
            }
            let p = publisher(st, g.seed_or_random());
            let results = match prefix {
                Some(pre) => vec![(pre.clone(), p.rotate_key(&pre))],
                None if expired => p.rotate_expired(),
                None => Vec::new(),
            };
            save(&p, &state)?;
            let mut failed = 0;
            for (prefix, r) in results {
                match r {
                    Ok(r) => println!("rotated {prefix}: {} ids pushed", r.ids().len()),
                    Err(e) => {
                        failed += 1;
                        if let PublishError::PartialRotation { report, .. } = &e {
                            report_failures(report);
                        }
                        eprintln!("ocdn: rotating {prefix}: {e}");
                    }
                }
            }
            if failed > 0 {
                return Err(Failure::Runtime(anyhow!("{failed} rotations failed")));
            }
            Ok(())
        }
    }
}

fn hex_fingerprint(kp: &KeyPair) -> String {
    kp.public_key().fingerprint().iter().map(|b| format!("{b:02x}")).collect()
}
