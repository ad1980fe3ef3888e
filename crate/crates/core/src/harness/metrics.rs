//! Virtual-clock metric collection and the deterministic run report.

use std::collections::BTreeMap;

/// Metric families mirroring the paper's measurement sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    /// SMS receipt at a relay to committee commit.
    OffChainService,
    /// Client send to client ack/result.
    TotalService,
    /// Consensus round start to decision.
    ConsensusTime,
    /// Packet validation work at a relay.
    ValidationTime,
    /// CPBS task execution work.
    ProcessTime,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::OffChainService => "off_chain_service_ms",
            Metric::TotalService => "total_service_ms",
            Metric::ConsensusTime => "consensus_ms",
            Metric::ValidationTime => "validation_ms",
            Metric::ProcessTime => "process_ms",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricSample {
    pub metric: Metric,
    /// Operation label, e.g. "OpenChannel" or "CrossChain".
    pub label: String,
    pub value_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    samples: Vec<MetricSample>,
    counters: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub count: u64,
    pub mean_ms: f64,
    pub min_ms: u64,
    pub max_ms: u64,
}

impl Metrics {
    pub fn record(&mut self, sample: MetricSample) {
        self.samples.push(sample);
    }

    pub fn bump(&mut self, counter: &str) {
        *self.counters.entry(counter.to_string()).or_insert(0) += 1;
    }

    pub fn counter(&self, counter: &str) -> u64 {
        self.counters.get(counter).copied().unwrap_or(0)
    }

    pub fn samples(&self) -> &[MetricSample] {
        &self.samples
    }

    /// Per (metric, label) aggregation in deterministic key order.
    pub fn summaries(&self) -> BTreeMap<(Metric, String), Summary> {
        let mut out: BTreeMap<(Metric, String), Vec<u64>> = BTreeMap::new();
        for s in &self.samples {
            out.entry((s.metric, s.label.clone())).or_default().push(s.value_ms);
        }
        out.into_iter()
            .map(|(key, values)| {
                let count = values.len() as u64;
                let sum: u64 = values.iter().sum();
                let summary = Summary {
                    count,
                    mean_ms: sum as f64 / count as f64,
                    min_ms: *values.iter().min().unwrap(),
                    max_ms: *values.iter().max().unwrap(),
                };
                (key, summary)
            })
            .collect()
    }

    pub fn mean(&self, metric: Metric, label: &str) -> Option<f64> {
        self.summaries()
            .get(&(metric, label.to_string()))
            .map(|s| s.mean_ms)
    }

    pub fn render(&self, out: &mut String) {
        for ((metric, label), s) in self.summaries() {
            out.push_str(&format!(
                "metric {} label={} count={} mean={:.3} min={} max={}\n",
                metric.name(),
                label,
                s.count,
                s.mean_ms,
                s.min_ms,
                s.max_ms
            ));
        }
        for (counter, value) in &self.counters {
            out.push_str(&format!("counter {counter}={value}\n"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries_aggregate_per_label() {
        let mut m = Metrics::default();
        for v in [10, 20, 30] {
            m.record(MetricSample {
                metric: Metric::OffChainService,
                label: "OffChainPay".into(),
                value_ms: v,
            });
        }
        m.record(MetricSample {
            metric: Metric::OffChainService,
            label: "OpenChannel".into(),
            value_ms: 100,
        });
        let s = &m.summaries()[&(Metric::OffChainService, "OffChainPay".to_string())];
        assert_eq!((s.count, s.min_ms, s.max_ms), (3, 10, 30));
        assert!((s.mean_ms - 20.0).abs() < 1e-9);
    }

    #[test]
    fn render_is_stable_across_insertion_orders() {
        let build = |order: &[u64]| {
            let mut m = Metrics::default();
            for &v in order {
                m.record(MetricSample {
                    metric: Metric::TotalService,
                    label: format!("op{}", v % 2),
                    value_ms: v,
                });
            }
            m.bump("completed");
            let mut out = String::new();
            m.render(&mut out);
            out
        };
        // Same multiset per label in the same per-label order.
        assert_eq!(build(&[1, 2, 3, 4]), build(&[1, 2, 3, 4]));
    }
}
