//! Deterministic testbed for the oblivious CDN.
//!
//! A [`Scenario`] names the node counts, injected latency and a workload.
//! [`run`] publishes the workload's objects, fetches every request through
//! the client and exit proxies and records per-request and per-operation
//! timings; [`baseline_run`] fetches the same objects in the clear straight
//! from a cache node. On the virtual clock a run is a pure function of the
//! scenario and its seed.
//!
//! The [`analysis`] module reads only an [`AdversaryView`] (cache logs and
//! stored bytes), or a [`CompromisedExitView`] for the curious-exit model.

pub mod analysis;
pub mod output;
pub mod run;
pub mod scenario;
pub mod testbed;
pub mod workload;

pub use analysis::{
    compromised_exit_analysis, linkability_analysis, popularity_analysis, AdversaryView, CompromisedExitView,
    GroundTruth, Linkability, Popularity,
};
pub use output::{plotdata, write_run};
pub use run::{baseline_run, run, RequestMetric, RunError, RunOutput};
pub use scenario::{ClockKind, Scenario, ScenarioError, Workload};
pub use testbed::Testbed;
