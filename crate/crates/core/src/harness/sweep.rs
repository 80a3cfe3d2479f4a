use serde::Serialize;

use crate::sim::{self, Scenario, ScenarioError};

use super::metrics::MetricsReport;

pub const DEFAULT_NODES: [usize; 5] = [10, 50, 100, 200, 300];
pub const DEFAULT_EPOCH_DURATIONS_S: [u64; 4] = [2, 5, 10, 60];

/// A nodes × epoch duration grid over a base scenario.
#[derive(Clone, Debug)]
pub struct SweepGrid {
    pub base: Scenario,
    pub nodes: Vec<usize>,
    pub epoch_durations_s: Vec<u64>,
    /// Each cell runs for at least this many epochs and at least
    /// `min_until_ms` of workload.
    pub epochs: u64,
    pub min_until_ms: u64,
}

impl SweepGrid {
    pub fn new(base: Scenario) -> Self {
        SweepGrid {
            base,
            nodes: DEFAULT_NODES.to_vec(),
            epoch_durations_s: DEFAULT_EPOCH_DURATIONS_S.to_vec(),
            epochs: 3,
            min_until_ms: 20_000,
        }
    }

    pub fn cell_scenario(&self, nodes: usize, epoch_s: u64) -> Scenario {
        let mut s = self.base.clone();
        s.name = format!("sweep-n{nodes}-d{epoch_s}");
        s.nodes = nodes;
        s.epoch_duration_ms = epoch_s * 1_000;
        s.until_ms = (self.epochs * s.epoch_duration_ms).max(self.min_until_ms);
        s
    }

    /// Runs one cell. Hubs larger than the gas model can settle are not
    /// simulated.
    pub fn run_cell(&self, nodes: usize, epoch_s: u64) -> Result<SweepCell, ScenarioError> {
        if nodes > self.base.chain.gas.participant_cap() {
            return Ok(SweepCell::over_cap(nodes, epoch_s));
        }
        let (sim, _) = sim::run(&self.cell_scenario(nodes, epoch_s))?;
        Ok(SweepCell::from_metrics(
            nodes,
            epoch_s,
            &MetricsReport::from_trace(sim.trace()),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub nodes: usize,
    pub epoch_duration_s: u64,
    /// "ok", "over cap" when the gas limit cannot settle a hub this size,
    /// or "stalled".
    pub status: String,
    pub throughput: Option<f64>,
    pub latency_mean_ms: Option<f64>,
    pub latency_std_ms: Option<f64>,
    pub consensus_delay_mean_ms: Option<f64>,
    pub consensus_delay_std_ms: Option<f64>,
    pub msgs_per_transfer: Option<f64>,
    pub msgs_per_consensus: Option<f64>,
    pub epochs_confirmed: Option<usize>,
}

impl SweepCell {
    fn over_cap(nodes: usize, epoch_duration_s: u64) -> Self {
        SweepCell {
            nodes,
            epoch_duration_s,
            status: "over cap".into(),
            throughput: None,
            latency_mean_ms: None,
            latency_std_ms: None,
            consensus_delay_mean_ms: None,
            consensus_delay_std_ms: None,
            msgs_per_transfer: None,
            msgs_per_consensus: None,
            epochs_confirmed: None,
        }
    }

    fn from_metrics(nodes: usize, epoch_duration_s: u64, m: &MetricsReport) -> Self {
        SweepCell {
            nodes,
            epoch_duration_s,
            status: if m.stalled { "stalled" } else { "ok" }.into(),
            throughput: Some(m.throughput),
            latency_mean_ms: Some(m.latency.mean_ms),
            latency_std_ms: Some(m.latency.std_ms),
            consensus_delay_mean_ms: Some(m.consensus_delay.mean_ms),
            consensus_delay_std_ms: Some(m.consensus_delay.std_ms),
            msgs_per_transfer: Some(m.msgs_per_transfer),
            msgs_per_consensus: Some(m.msgs_per_consensus),
            epochs_confirmed: Some(m.epochs_confirmed),
        }
    }
}

/// Runs every cell in row-major order (nodes outer). `progress` sees each
/// finished cell.
pub fn sweep(
    grid: &SweepGrid,
    mut progress: impl FnMut(&SweepCell),
) -> Result<Vec<SweepCell>, ScenarioError> {
    let mut cells = Vec::new();
    for &n in &grid.nodes {
        for &d in &grid.epoch_durations_s {
            let cell = grid.run_cell(n, d)?;
            progress(&cell);
            cells.push(cell);
        }
    }
    Ok(cells)
}
