//! Result files and figure data.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ocdn_node::meter::{Op, OpSample};
use serde::Serialize;

use crate::analysis::{compromised_exit_analysis, linkability_analysis, popularity_analysis, Linkability, Popularity};
use crate::run::{baseline_run, run, Counters, RequestMetric, RunError, RunOutput};
use crate::scenario::{ListItem, NodeCounts, Scenario, Workload};

/// The per-operation breakdown shown in the overhead figure.
pub const FIGURE_OPS: [Op; 5] =
    [Op::ExitLookup, Op::HmacDerivation, Op::SharedKeyDecrypt, Op::SessionKeyEncrypt, Op::ClientDecrypt];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeRow {
    pub size: usize,
    pub requests: usize,
    pub ok: usize,
    pub mean_ttfb_ms: f64,
    pub mean_completion_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpRow {
    pub op: String,
    pub count: usize,
    pub mean_bytes: f64,
    pub mean_modeled_ms: f64,
}

/// `summary.json`. Native timings are left out so the file is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub counters: Counters,
    pub by_size: Vec<SizeRow>,
    pub ops: Vec<OpRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversaryReport {
    pub popularity: Popularity,
    pub cache_log_linkability: Linkability,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub compromised_exit: BTreeMap<String, Linkability>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn by_size(metrics: &[RequestMetric]) -> Vec<SizeRow> {
    let mut groups: BTreeMap<usize, Vec<&RequestMetric>> = BTreeMap::new();
    for m in metrics {
        groups.entry(m.size).or_default().push(m);
    }
    groups
        .into_iter()
        .map(|(size, ms)| {
            let ok: Vec<&&RequestMetric> = ms.iter().filter(|m| m.ok()).collect();
            SizeRow {
                size,
                requests: ms.len(),
                ok: ok.len(),
                mean_ttfb_ms: mean(ok.iter().filter_map(|m| m.ttfb_ms)),
                mean_completion_ms: mean(ok.iter().filter_map(|m| m.completion_ms)),
            }
        })
        .collect()
}

pub fn op_rows(ops: &[OpSample]) -> Vec<OpRow> {
    Op::ALL
        .iter()
        .filter_map(|op| {
            let s: Vec<&OpSample> = ops.iter().filter(|x| x.op == *op).collect();
            (!s.is_empty()).then(|| OpRow {
                op: op.name().to_string(),
                count: s.len(),
                mean_bytes: mean(s.iter().map(|x| x.bytes as f64)),
                mean_modeled_ms: mean(s.iter().map(|x| x.modeled_ms)),
            })
        })
        .collect()
}

pub fn summarize(out: &RunOutput, seed: u64) -> Summary {
    Summary { seed, counters: out.counters.clone(), by_size: by_size(&out.metrics), ops: op_rows(&out.ops) }
}

pub fn adversary_report(out: &RunOutput) -> AdversaryReport {
    AdversaryReport {
        popularity: popularity_analysis(&out.adversary),
        cache_log_linkability: linkability_analysis(&out.adversary, &out.truth),
        compromised_exit: compromised_exit_analysis(&out.exit_view, &out.truth),
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_metrics_csv(path: &Path, metrics: &[RequestMetric]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for m in metrics {
        w.serialize(m).map_err(csv_err)?;
    }
    w.flush()
}

#[derive(Serialize)]
struct OpCsvRow<'a> {
    node: &'a str,
    op: &'static str,
    bytes: usize,
    modeled_ms: f64,
    native_us: f64,
}

pub fn write_ops_csv(path: &Path, ops: &[OpSample]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in ops {
        w.serialize(OpCsvRow {
            node: &s.node,
            op: s.op.name(),
            bytes: s.bytes,
            modeled_ms: s.modeled_ms,
            native_us: s.native_us,
        })
        .map_err(csv_err)?;
    }
    w.flush()
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(io::Error::from)?;
    text.push('\n');
    fs::write(path, text)
}

/// Writes `metrics.csv`, `ops.csv`, `summary.json` and `adversary.json`.
pub fn write_run(dir: &Path, out: &RunOutput, seed: u64) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_metrics_csv(&dir.join("metrics.csv"), &out.metrics)?;
    write_ops_csv(&dir.join("ops.csv"), &out.ops)?;
    write_json(&dir.join("summary.json"), &summarize(out, seed))?;
    write_json(&dir.join("adversary.json"), &adversary_report(out))
}

pub const PLOT_SIZES: [usize; 4] = [1 << 10, 10 << 10, 100 << 10, 1 << 20];
pub const PLOT_ALPHAS: [f64; 4] = [0.0, 10.0, 50.0, 100.0];
pub const PLOT_CLIENTS: [usize; 5] = [2, 4, 8, 16, 32];
const PLOT_REPEATS: u32 = 5;

/// One object per size, fetched `repeats` times in direct mode.
pub fn size_sweep(sizes: &[usize], repeats: u32, alpha_ms: f64, seed: u64) -> Scenario {
    Scenario {
        alpha_ms,
        workload: Workload::List(
            sizes
                .iter()
                .map(|&size| ListItem { url: None, size, mode: "direct".into(), count: repeats, encodings: 1 })
                .collect(),
        ),
        seed,
        ..Scenario::default()
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()
}

#[derive(Serialize)]
struct TtfbRow {
    size_bytes: usize,
    ocdn_ttfb_ms: f64,
    baseline_ttfb_ms: f64,
}

#[derive(Serialize)]
struct CompletionRow {
    size_bytes: usize,
    ocdn_completion_ms: f64,
    baseline_completion_ms: f64,
}

#[derive(Serialize)]
struct LatencyRow {
    alpha_ms: f64,
    size_bytes: usize,
    ocdn_ttfb_ms: f64,
    baseline_ttfb_ms: f64,
}

#[derive(Serialize)]
struct OverheadRow {
    size_bytes: usize,
    op: &'static str,
    count: usize,
    mean_modeled_ms: f64,
    median_native_us: f64,
}

#[derive(Serialize)]
struct ScalabilityRow {
    clients: usize,
    requests: usize,
    exit_modeled_ms_per_request: f64,
    exit_native_us_per_request: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes one CSV per figure into `dir` and returns their paths.
pub fn plotdata(dir: &Path, seed: u64) -> Result<Vec<PathBuf>, PlotError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut latency = Vec::new();
    let mut ttfb = Vec::new();
    let mut completion = Vec::new();
    let mut overhead = Vec::new();
    for alpha in PLOT_ALPHAS {
        let s = size_sweep(&PLOT_SIZES, PLOT_REPEATS, alpha, seed);
        let o = run(&s)?;
        let b = baseline_run(&s)?;
        let (os, bs) = (by_size(&o.metrics), by_size(&b.metrics));
        for (x, y) in os.iter().zip(&bs) {
            latency.push(LatencyRow {
                alpha_ms: alpha,
                size_bytes: x.size,
                ocdn_ttfb_ms: x.mean_ttfb_ms,
                baseline_ttfb_ms: y.mean_ttfb_ms,
            });
            if alpha == 0.0 {
                ttfb.push(TtfbRow {
                    size_bytes: x.size,
                    ocdn_ttfb_ms: x.mean_ttfb_ms,
                    baseline_ttfb_ms: y.mean_ttfb_ms,
                });
                completion.push(CompletionRow {
                    size_bytes: x.size,
                    ocdn_completion_ms: x.mean_completion_ms,
                    baseline_completion_ms: y.mean_completion_ms,
                });
            }
        }
        if alpha == 0.0 {
            overhead = overhead_rows(&o);
        }
    }
    let p = dir.join("fig_ttfb.csv");
    write_rows(&p, &ttfb)?;
    written.push(p);
    let p = dir.join("fig_completion.csv");
    write_rows(&p, &completion)?;
    written.push(p);
    let p = dir.join("fig_latency.csv");
    write_rows(&p, &latency)?;
    written.push(p);
    let p = dir.join("fig_overhead.csv");
    write_rows(&p, &overhead)?;
    written.push(p);

    let mut scal = Vec::new();
    for clients in PLOT_CLIENTS {
        let mut s = size_sweep(&[1 << 10], 10 * clients as u32, 0.0, seed);
        s.nodes = NodeCounts { clients, ..NodeCounts::default() };
        let o = run(&s)?;
        let exit_ops: Vec<&OpSample> = o.ops.iter().filter(|x| x.node.starts_with("10.1.")).collect();
        let n = o.metrics.len().max(1) as f64;
        scal.push(ScalabilityRow {
            clients,
            requests: o.metrics.len(),
            exit_modeled_ms_per_request: exit_ops.iter().map(|x| x.modeled_ms).sum::<f64>() / n,
            exit_native_us_per_request: exit_ops.iter().map(|x| x.native_us).sum::<f64>() / n,
        });
    }
    let p = dir.join("fig_scalability.csv");
    write_rows(&p, &scal)?;
    written.push(p);
    Ok(written)
}

fn overhead_rows(out: &RunOutput) -> Vec<OverheadRow> {
    let sizes: std::collections::BTreeSet<usize> = out.objects.iter().map(|o| o.content.len()).collect();
    let mut rows = Vec::new();
    // Samples arrive grouped by request, in request order.
    let per_request = split_by_request(&out.ops);
    for size in sizes {
        for op in FIGURE_OPS {
            let picked: Vec<&OpSample> = per_request
                .iter()
                .zip(&out.metrics)
                .filter(|(_, m)| m.size == size)
                .flat_map(|(ops, _)| ops.iter().filter(|x| x.op == op))
                .collect();
            rows.push(OverheadRow {
                size_bytes: size,
                op: op.name(),
                count: picked.len(),
                mean_modeled_ms: mean(picked.iter().map(|x| x.modeled_ms)),
                median_native_us: median(picked.iter().map(|x| x.native_us).collect()),
            });
        }
    }
    rows
}

/// Splits a run's samples at each exit lookup, which opens every request.
pub fn split_by_request(ops: &[OpSample]) -> Vec<&[OpSample]> {
    let starts: Vec<usize> = ops.iter().enumerate().filter(|(_, s)| s.op == Op::ExitLookup).map(|(i, _)| i).collect();
    starts.iter().enumerate().map(|(k, &a)| &ops[a..starts.get(k + 1).copied().unwrap_or(ops.len())]).collect()
}
