use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, Subcommand};
use ocdn_sim::{baseline_run, plotdata, run, write_run, RunError, Scenario};

use crate::{Classify, Failure, Globals};

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct SimArgs {
    #[command(subcommand)]
    command: Option<SimCommand>,
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory for metrics.csv, ops.csv, summary.json, adversary.json.
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
    /// Also fetch the workload in the clear into OUT/baseline.
    #[arg(long)]
    baseline: bool,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Write the data series behind the latency, overhead and scalability plots.
    Plotdata {
        #[arg(long, default_value = "plotdata")]
        out: PathBuf,
    },
}

fn run_failure(e: RunError) -> Failure {
    match e {
        RunError::Scenario(e) => Failure::Config(e.into()),
        e => Failure::Runtime(e.into()),
    }
}

pub fn sim(g: &Globals, args: SimArgs) -> Result<(), Failure> {
    if let Some(SimCommand::Plotdata { out }) = args.command {
        let files = plotdata(&out, g.seed.unwrap_or(0)).runtime()?;
        for f in files {
            println!("{}", f.display());
        }
        return Ok(());
    }
    let path = args.scenario.ok_or_else(|| Failure::Config(anyhow!("--scenario is required")))?;
    let mut scenario = Scenario::load(&path).with_context(|| format!("loading {}", path.display())).config()?;
    if let Some(seed) = g.seed {
        scenario.seed = seed;
    }
    let out = run(&scenario).map_err(run_failure)?;
    write_run(&args.out, &out, scenario.seed).with_context(|| format!("writing {}", args.out.display())).runtime()?;
    let c = &out.counters;
    println!("requests {} ok {} failed {} -> {}", c.requests, c.ok, c.failed, args.out.display());
    if args.baseline {
        let dir = args.out.join("baseline");
        let base = baseline_run(&scenario).map_err(run_failure)?;
        write_run(&dir, &base, scenario.seed).with_context(|| format!("writing {}", dir.display())).runtime()?;
        println!("baseline ok {} -> {}", base.counters.ok, dir.display());
    }
    if c.failed > 0 {
        return Err(Failure::Runtime(anyhow!("{} of {} requests failed", c.failed, c.requests)));
    }
    Ok(())
}
