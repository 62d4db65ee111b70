//! Expands a scenario's workload into objects to publish and a request sequence.

use std::collections::BTreeMap;

use ocdn_core::CanonicalUrl;
use ocdn_node::clientproxy::Mode;
use ocdn_node::publisher::choose_encoding_counts;
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{LogNormal, Pareto};

use crate::scenario::{Scenario, ScenarioError, SizeSpec, Workload};

pub const ORIGIN_PREFIX: &str = "http://origin.example/";
pub const SENTINEL_LEN: usize = 32;

/// Body of the size mixture: lognormal, median 8 KiB, clipped to 64 KiB.
pub const SURGE_BODY_MEDIAN: f64 = 8192.0;
pub const SURGE_BODY_SIGMA: f64 = 1.0;
pub const SURGE_BODY_MAX: usize = 64 << 10;
/// Tail: Pareto from 64 KiB with shape 1.2, clipped to 4 MiB.
pub const SURGE_TAIL_FRACTION: f64 = 0.2;
pub const SURGE_TAIL_SHAPE: f64 = 1.2;
pub const SURGE_TAIL_MAX: usize = 4 << 20;

#[derive(Debug, Clone)]
pub struct ObjectSpec {
    pub url: CanonicalUrl,
    pub content: Vec<u8>,
    pub encodings: u8,
    /// Random bytes planted in the content, when it is long enough.
    pub sentinel: Option<[u8; SENTINEL_LEN]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestSpec {
    pub object: usize,
    pub client: usize,
    pub mode: Mode,
}

#[derive(Debug, Clone, Default)]
pub struct Expanded {
    pub objects: Vec<ObjectSpec>,
    pub requests: Vec<RequestSpec>,
}

/// Draws one object size from the Surge-like mixture.
pub fn surge_size<R: Rng + ?Sized>(rng: &mut R) -> usize {
    if rng.gen_bool(SURGE_TAIL_FRACTION) {
        let tail = Pareto::new(SURGE_BODY_MAX as f64, SURGE_TAIL_SHAPE).expect("valid pareto");
        (tail.sample(rng) as usize).min(SURGE_TAIL_MAX)
    } else {
        let body = LogNormal::new(SURGE_BODY_MEDIAN.ln(), SURGE_BODY_SIGMA).expect("valid lognormal");
        (body.sample(rng) as usize).clamp(1, SURGE_BODY_MAX)
    }
}

/// Random content of `size` bytes with a sentinel planted at a random offset.
pub fn object_content<R: Rng + ?Sized>(rng: &mut R, size: usize) -> (Vec<u8>, Option<[u8; SENTINEL_LEN]>) {
    let mut content = vec![0u8; size];
    rng.fill_bytes(&mut content);
    if size < SENTINEL_LEN {
        return (content, None);
    }
    let mut sentinel = [0u8; SENTINEL_LEN];
    rng.fill_bytes(&mut sentinel);
    let at = rng.gen_range(0..=size - SENTINEL_LEN);
    content[at..at + SENTINEL_LEN].copy_from_slice(&sentinel);
    (content, Some(sentinel))
}

pub fn generated_url(index: usize) -> CanonicalUrl {
    CanonicalUrl::parse(&format!("{ORIGIN_PREFIX}obj/{index:05}.bin")).expect("generated urls are canonical")
}

fn parse_mode(m: &str) -> Result<Mode, ScenarioError> {
    m.parse().map_err(ScenarioError::Invalid)
}

pub fn expand(scenario: &Scenario) -> Result<Expanded, ScenarioError> {
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed ^ 0x776f_726b_6c6f_6164);
    let clients = scenario.nodes.clients;
    let mut out = Expanded::default();
    match &scenario.workload {
        Workload::List(items) => {
            for (i, it) in items.iter().enumerate() {
                let url = match &it.url {
                    Some(u) => CanonicalUrl::parse(u).map_err(|e| ScenarioError::Invalid(e.to_string()))?,
                    None => generated_url(i),
                };
                if out.objects.iter().any(|o| o.url == url) {
                    return Err(ScenarioError::Invalid(format!("{url} listed twice")));
                }
                let (content, sentinel) = object_content(&mut rng, it.size);
                out.objects.push(ObjectSpec { url, content, encodings: it.encodings, sentinel });
                let mode = parse_mode(&it.mode)?;
                for _ in 0..it.count {
                    out.requests.push(RequestSpec { object: i, client: rng.gen_range(0..clients), mode });
                }
            }
        }
        Workload::Zipf(z) => {
            let weights: Vec<f64> = (0..z.urls).map(|k| 1.0 / ((k + 1) as f64).powf(z.exponent)).collect();
            let counts = if z.flatten {
                let total: f64 = weights.iter().sum();
                let popularity: BTreeMap<String, f64> =
                    (0..z.urls).map(|k| (generated_url(k).as_str().to_string(), weights[k] / total)).collect();
                choose_encoding_counts(&popularity, z.encoding_cap)
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?
            } else {
                BTreeMap::new()
            };
            for k in 0..z.urls {
                let url = generated_url(k);
                let size = match z.sizes {
                    SizeSpec::Fixed(n) => n,
                    SizeSpec::Surge => surge_size(&mut rng),
                };
                let (content, sentinel) = object_content(&mut rng, size);
                let encodings = counts.get(url.as_str()).copied().unwrap_or(1);
                out.objects.push(ObjectSpec { url, content, encodings, sentinel });
            }
            let modes = z.modes.iter().map(|m| parse_mode(m)).collect::<Result<Vec<_>, _>>()?;
            let pick = WeightedIndex::new(&weights).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            for _ in 0..z.requests {
                let object = pick.sample(&mut rng);
                let mode = *modes.choose(&mut rng).expect("modes is not empty");
                out.requests.push(RequestSpec { object, client: rng.gen_range(0..clients), mode });
            }
        }
    }
    Ok(out)
}
