//! Scenario harness: configuration, actors, the discrete-event world, and
//! parameter sweeps.

pub mod client;
pub mod metrics;
pub mod relay;
pub mod scenario;
pub mod sweep;
pub mod types;
pub mod world;

pub use client::{ClientActor, ClientOp};
pub use metrics::{Metric, MetricSample, Metrics, Summary};
pub use relay::RelayNode;
pub use scenario::{Scenario, ScenarioError};
pub use sweep::{run_sweep, Axis, SweepResult};
pub use types::{
    ActorKey, AttestCtx, AuditRecord, ClientReply, Effect, RelayMsg, WorldEvent, WorldView,
    CHANNEL, CHANNEL_CONTRACT, COMPUTE_CONTRACT, PROXY_CONTRACT,
};
pub use world::{run_scenario, RunReport, World};
