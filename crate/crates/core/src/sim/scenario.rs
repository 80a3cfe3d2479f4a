use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::ChainConfig;
use crate::node::{Deviation, NodeConfig, NodeRef};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Message latency: uniform over `base ± jitter`, clamped to `(0, delta]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub base_latency_ms: u64,
    pub jitter_ms: u64,
    pub delta_ms: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_latency_ms: 100,
            jitter_ms: 20,
            delta_ms: 120,
        }
    }
}

/// Simulated processing cost charged to a node per handled input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Processing {
    /// Per input handled and per message sent.
    pub per_message_us: u64,
    /// Per signature created or verified.
    pub per_signature_us: u64,
}

impl Default for Processing {
    fn default() -> Self {
        Processing {
            per_message_us: 20,
            per_signature_us: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    /// Added to every delay-derived timeout to absorb processing.
    pub allowance_ms: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing { allowance_ms: 100 }
    }
}

/// A node action at a fixed simulated time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scheduled {
    pub at_ms: u64,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Hub-wide transfer arrival rate; each trading node draws Poisson
    /// arrivals at `rate_tps / nodes`.
    pub rate_tps: f64,
    pub max_amount: u64,
    pub joins: Vec<Scheduled>,
    pub withdrawals: Vec<Scheduled>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            rate_tps: 100.0,
            max_amount: 1_000,
            joins: Vec::new(),
            withdrawals: Vec::new(),
        }
    }
}

/// One scripted deviation of one corrupted node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub node: NodeRef,
    pub deviation: Deviation,
    #[serde(default)]
    pub from_epoch: u64,
    #[serde(default)]
    pub times: Option<u32>,
}

/// A complete simulation run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Genesis participants.
    pub nodes: usize,
    /// Extra nodes that start outside the hub and may join.
    pub spare_nodes: usize,
    pub deposit: u64,
    pub epoch_duration_ms: u64,
    /// Workload stops here; the run then drains until every honest node
    /// is settled, up to `drain_ms` more.
    pub until_ms: u64,
    pub drain_ms: u64,
    pub net: NetConfig,
    pub chain: ChainConfig,
    pub timing: Timing,
    pub processing: Processing,
    pub workload: WorkloadConfig,
    pub adversary: Vec<Corruption>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "scenario".into(),
            seed: 1,
            nodes: 10,
            spare_nodes: 0,
            deposit: 1_000_000,
            epoch_duration_ms: 10_000,
            until_ms: 30_000,
            drain_ms: 60_000,
            net: NetConfig::default(),
            chain: ChainConfig::default(),
            timing: Timing::default(),
            processing: Processing::default(),
            workload: WorkloadConfig::default(),
            adversary: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes + self.spare_nodes
    }

    pub fn node_config(&self) -> NodeConfig {
        NodeConfig::derive(
            self.epoch_duration_ms * 1_000,
            self.net.delta_ms * 1_000,
            self.timing.allowance_ms * 1_000,
            self.chain.block_time(),
            self.workload.max_amount,
        )
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.nodes < 2 {
            return bad("a hub needs at least 2 genesis nodes".into());
        }
        if self.deposit == 0 {
            return bad("deposit must be positive".into());
        }
        if self.net.base_latency_ms <= self.net.jitter_ms {
            return bad("latency base must exceed jitter so delays stay positive".into());
        }
        if self.net.base_latency_ms + self.net.jitter_ms > self.net.delta_ms {
            return bad("latency base + jitter must not exceed delta".into());
        }
        let cfg = self.node_config();
        if cfg.epoch_duration <= cfg.grace + 2 * self.net.delta_ms * 1_000 {
            return bad(format!(
                "epoch duration {} ms leaves no trading window (grace is {} ms)",
                self.epoch_duration_ms,
                cfg.grace / 1_000
            ));
        }
        if self.until_ms == 0 {
            return bad("until_ms must be positive".into());
        }
        if !(self.workload.rate_tps.is_finite() && self.workload.rate_tps >= 0.0) {
            return bad("rate_tps must be a non-negative number".into());
        }
        if self.workload.max_amount == 0 {
            return bad("max_amount must be positive".into());
        }
        self.chain.validate().map_err(ScenarioError::Invalid)?;
        let total = self.total_nodes();
        for s in self.workload.joins.iter().chain(&self.workload.withdrawals) {
            if s.slot >= total {
                return bad(format!("slot {} out of range ({} nodes)", s.slot, total));
            }
        }
        for c in &self.adversary {
            if let NodeRef::Slot(s) = c.node {
                if s >= total {
                    return bad(format!("corrupted slot {s} out of range"));
                }
            }
            if let Deviation::TamperBalance {
                target: NodeRef::Slot(t),
                ..
            } = c.deviation
            {
                if t >= total {
                    return bad(format!("tamper target {t} out of range"));
                }
            }
            if let Deviation::ArbitraryMessage { bytes } = &c.deviation {
                if hex::decode(bytes).is_err() {
                    return bad("arbitrary_message bytes must be hex".into());
                }
            }
        }
        Ok(())
    }
}
