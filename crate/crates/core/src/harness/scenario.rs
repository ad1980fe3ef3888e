//! Scenario configuration: committees, chains, clients, network profile,
//! workload mix, and fault scripts, loadable from TOML.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sms::NetworkProfile;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub committee: CommitteeConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    pub chains: Vec<ChainConfig>,
    pub clients: ClientsConfig,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub faults: FaultsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommitteeConfig {
    pub f: usize,
    /// Flush fires only when queue length strictly exceeds this.
    pub buffer: usize,
    /// Flush fires only when time since last flush strictly exceeds this.
    pub timeout_ms: u64,
    /// Channel-contract update count per UpdateChannel aggregation.
    #[serde(default = "default_threshold")]
    pub threshold: u32,
    #[serde(default = "default_tick_ms")]
    pub tick_ms: u64,
    #[serde(default = "default_epoch_ms")]
    pub ccbs_epoch_ms: u64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: u64,
    /// Per-message processing cost at a relay.
    #[serde(default = "default_proc_ms")]
    pub proc_ms: u64,
    /// Relay-to-relay link latency.
    #[serde(default = "default_link_ms")]
    pub link_ms: u64,
    /// Consensus round timer before a view change vote.
    #[serde(default = "default_bft_timeout_ms")]
    pub bft_timeout_ms: u64,
}

fn default_threshold() -> u32 {
    1
}
fn default_tick_ms() -> u64 {
    100
}
fn default_epoch_ms() -> u64 {
    5_000
}
fn default_max_epochs() -> u64 {
    10
}
fn default_proc_ms() -> u64 {
    1
}
fn default_link_ms() -> u64 {
    1
}
fn default_bft_timeout_ms() -> u64 {
    300
}

impl CommitteeConfig {
    pub fn n(&self) -> usize {
        3 * self.f + 1
    }

    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Named profile (DEFAULT, WIFI, EDGE, GPRS) or "custom".
    #[serde(default = "default_profile_name")]
    pub profile: String,
    pub latency_ms: Option<u64>,
    pub bandwidth_kbit: Option<u64>,
    pub loss_percent: Option<f64>,
}

fn default_profile_name() -> String {
    "DEFAULT".to_string()
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            profile: default_profile_name(),
            latency_ms: None,
            bandwidth_kbit: None,
            loss_percent: None,
        }
    }
}

impl NetworkConfig {
    pub fn resolve(&self) -> Result<NetworkProfile, ScenarioError> {
        if let (Some(tau), Some(beta), Some(iota)) =
            (self.latency_ms, self.bandwidth_kbit, self.loss_percent)
        {
            if beta == 0 {
                return Err(ScenarioError::Invalid("bandwidth_kbit must be positive".into()));
            }
            if !(0.0..=100.0).contains(&iota) {
                return Err(ScenarioError::Invalid("loss_percent out of range".into()));
            }
            return Ok(NetworkProfile::new("custom", tau, beta, iota));
        }
        NetworkProfile::by_name(&self.profile)
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown profile {}", self.profile)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub id: String,
    #[serde(default = "default_block_interval")]
    pub block_interval_ms: u64,
    /// Extra scripted accounts seeded at genesis.
    #[serde(default)]
    pub balances: std::collections::BTreeMap<String, u64>,
}

fn default_block_interval() -> u64 {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientsConfig {
    pub count: usize,
    #[serde(default = "default_client_balance")]
    pub initial_balance: u64,
    /// Chain holding the channel contract and client native accounts.
    pub home_chain: String,
}

fn default_client_balance() -> u64 {
    1_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadConfig {
    #[serde(default = "default_true")]
    pub open_channel: bool,
    /// Off-chain payments per client.
    #[serde(default)]
    pub offchain_pays: usize,
    #[serde(default = "default_pay_max")]
    pub pay_amount_max: u64,
    #[serde(default)]
    pub close_channel: bool,
    /// Cross-chain requests per client (destinations cycle over non-home chains).
    #[serde(default)]
    pub cross_requests: usize,
    #[serde(default)]
    pub cross_amount: u64,
    /// Compute tasks per client.
    #[serde(default)]
    pub compute_tasks: usize,
    /// Gap between consecutive client actions.
    #[serde(default = "default_think_ms")]
    pub think_ms: u64,
    /// Extra bytes padded into request payloads; sweep axis for SMS
    /// segmentation pressure.
    #[serde(default)]
    pub payload_pad: usize,
}

fn default_true() -> bool {
    true
}

// Keep in sync with the serde field defaults above: an absent [workload]
// table must read the same as an empty one.
impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            open_channel: true,
            offchain_pays: 0,
            pay_amount_max: default_pay_max(),
            close_channel: false,
            cross_requests: 0,
            cross_amount: 0,
            compute_tasks: 0,
            think_ms: default_think_ms(),
            payload_pad: 0,
        }
    }
}
fn default_pay_max() -> u64 {
    5
}
fn default_think_ms() -> u64 {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct FaultsConfig {
    #[serde(default)]
    pub crashes: Vec<CrashFault>,
    /// Relays that return corrupted CPBS payloads.
    #[serde(default)]
    pub byzantine_compute: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrashFault {
    pub relay: usize,
    pub at_ms: u64,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.chains.is_empty() {
            return Err(ScenarioError::Invalid("no chains configured".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for chain in &self.chains {
            if !ids.insert(&chain.id) {
                return Err(ScenarioError::Invalid(format!("duplicate chain id {}", chain.id)));
            }
            if chain.block_interval_ms == 0 {
                return Err(ScenarioError::Invalid("block_interval_ms must be positive".into()));
            }
        }
        if !ids.contains(&self.clients.home_chain) {
            return Err(ScenarioError::Invalid(format!(
                "home_chain {} not configured",
                self.clients.home_chain
            )));
        }
        if self.clients.count == 0 {
            return Err(ScenarioError::Invalid("clients.count must be positive".into()));
        }
        let n = self.committee.n();
        for crash in &self.faults.crashes {
            if crash.relay >= n {
                return Err(ScenarioError::Invalid(format!(
                    "crash fault targets relay {} of committee size {n}",
                    crash.relay
                )));
            }
        }
        for &b in &self.faults.byzantine_compute {
            if b >= n {
                return Err(ScenarioError::Invalid(format!(
                    "byzantine relay {b} of committee size {n}"
                )));
            }
        }
        if (self.workload.cross_requests > 0 || self.workload.compute_tasks > 0)
            && self.chains.len() < 2
            && self.workload.cross_requests > 0
        {
            return Err(ScenarioError::Invalid(
                "cross_requests needs at least two chains".into(),
            ));
        }
        self.network.resolve()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[committee]
f = 1
buffer = 5
timeout_ms = 500
[[chains]]
id = "alpha"
[clients]
count = 4
home_chain = "alpha"
"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.committee.n(), 4);
        assert_eq!(s.committee.quorum(), 3);
        assert_eq!(s.committee.threshold, 1);
        assert_eq!(s.network.resolve().unwrap().name, "DEFAULT");
        assert!(s.workload.open_channel);
    }

    #[test]
    fn unknown_home_chain_rejected() {
        let text = MINIMAL.replace("home_chain = \"alpha\"", "home_chain = \"ghost\"");
        assert!(Scenario::from_toml(&text).is_err());
    }

    #[test]
    fn custom_network_triple() {
        let text = format!(
            "{MINIMAL}\n[network]\nprofile = \"custom\"\nlatency_ms = 10\nbandwidth_kbit = 100\nloss_percent = 1.5\n"
        );
        let s = Scenario::from_toml(&text).unwrap();
        let p = s.network.resolve().unwrap();
        assert_eq!((p.latency_ms, p.bandwidth_kbit), (10, 100));
    }

    #[test]
    fn crash_fault_bounds_checked() {
        let text = format!("{MINIMAL}\n[[faults.crashes]]\nrelay = 9\nat_ms = 100\n");
        assert!(Scenario::from_toml(&text).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let text = toml::to_string(&s).unwrap();
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.clients.count, 4);
    }
}
