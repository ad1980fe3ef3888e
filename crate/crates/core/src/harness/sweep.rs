//! Parameter sweeps: run a template scenario over a cartesian grid of axis
//! values and collect per-point service-time summaries.

use crate::crypto::BilinearEngine;
use crate::harness::metrics::Metric;
use crate::harness::scenario::{Scenario, ScenarioError};
use crate::harness::world::World;

/// Sweepable scenario dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Committee size; values must be of the form 3f+1.
    Nodes,
    Clients,
    /// Off-chain payments per client.
    Transactions,
    /// Request payload padding in bytes.
    PayloadSize,
}

impl Axis {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "nodes" => Axis::Nodes,
            "clients" => Axis::Clients,
            "transactions" => Axis::Transactions,
            "payload" | "payload_size" => Axis::PayloadSize,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Nodes => "nodes",
            Axis::Clients => "clients",
            Axis::Transactions => "transactions",
            Axis::PayloadSize => "payload_size",
        }
    }

    fn apply(self, scenario: &mut Scenario, value: u64) -> Result<(), ScenarioError> {
        match self {
            Axis::Nodes => {
                if value < 4 || (value - 1) % 3 != 0 {
                    return Err(ScenarioError::Invalid(format!(
                        "nodes axis value {value} is not of the form 3f+1"
                    )));
                }
                scenario.committee.f = ((value - 1) / 3) as usize;
            }
            Axis::Clients => scenario.clients.count = value as usize,
            Axis::Transactions => scenario.workload.offchain_pays = value as usize,
            Axis::PayloadSize => scenario.workload.payload_pad = value as usize,
        }
        Ok(())
    }
}

/// One grid point's outcome.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub settings: Vec<(Axis, u64)>,
    pub ok: bool,
    /// Mean service times per label, pulled from the run's metrics.
    pub total_service_means: Vec<(String, f64)>,
}

pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for point in &self.points {
            let mut line = String::from("sweep");
            for (axis, value) in &point.settings {
                line.push_str(&format!(" {}={}", axis.name(), value));
            }
            line.push_str(&format!(" ok={}", point.ok));
            for (label, mean) in &point.total_service_means {
                line.push_str(&format!(" {label}_mean_ms={mean:.3}"));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Mean of a label across the grid, in point order.
    pub fn means_for(&self, label: &str) -> Vec<Option<f64>> {
        self.points
            .iter()
            .map(|p| {
                p.total_service_means
                    .iter()
                    .find(|(l, _)| l == label)
                    .map(|(_, m)| *m)
            })
            .collect()
    }
}

/// Cartesian product over the axes, template applied fresh per point.
pub fn run_sweep<E: BilinearEngine>(
    template: &Scenario,
    axes: &[(Axis, Vec<u64>)],
    parallel: bool,
) -> Result<SweepResult, ScenarioError> {
    let mut points = Vec::new();
    let mut cursor = vec![0usize; axes.len()];
    loop {
        let settings: Vec<(Axis, u64)> = axes
            .iter()
            .zip(&cursor)
            .map(|((axis, values), &i)| (*axis, values[i]))
            .collect();
        let mut scenario = template.clone();
        for (axis, value) in &settings {
            axis.apply(&mut scenario, *value)?;
        }
        let mut world = World::<E>::new(scenario, parallel)?;
        let report = world.run();
        let total_service_means: Vec<(String, f64)> = report
            .metrics
            .summaries()
            .into_iter()
            .filter(|((metric, _), _)| *metric == Metric::TotalService)
            .map(|((_, label), summary)| (label, summary.mean_ms))
            .collect();
        points.push(SweepPoint { settings, ok: report.ok, total_service_means });

        // Odometer increment.
        let mut i = axes.len();
        loop {
            if i == 0 {
                return Ok(SweepResult { points });
            }
            i -= 1;
            cursor[i] += 1;
            if cursor[i] < axes[i].1.len() {
                break;
            }
            cursor[i] = 0;
        }
    }
}
