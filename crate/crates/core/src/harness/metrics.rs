use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::chain::{Resolution, Time};
use crate::node::{NodeEvent, Via};
use crate::protocol::{Digest, Epoch, TxId};
use crate::sim::{ChainRecord, FlowRef, Trace, TraceRecord};

/// Mean and population standard deviation, in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
}

impl Spread {
    fn of(us: &[Time]) -> Spread {
        if us.is_empty() {
            return Spread::default();
        }
        let n = us.len() as f64;
        let mean = us.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = us.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        Spread {
            mean_ms: mean / 1_000.0,
            std_ms: var.sqrt() / 1_000.0,
            samples: us.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasLine {
    pub calls: u64,
    pub gas: u64,
    pub reverts: u64,
}

/// One finalized consensus round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub epoch: Epoch,
    pub signers: usize,
    pub messages: usize,
    /// Leader broadcast to the last participant adopting the state.
    pub delay_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub nodes: usize,
    pub epoch_duration_ms: u64,
    /// Transfers recorded by a leader per simulated second of workload.
    pub throughput: f64,
    pub transfers: usize,
    /// Request to leader recording.
    pub latency: Spread,
    /// Request to the confirmation of the epoch containing the transfer.
    pub confirmation: Spread,
    pub consensus_delay: Spread,
    pub msgs_per_transfer: f64,
    pub msgs_per_transfer_min: usize,
    pub msgs_per_transfer_max: usize,
    pub msgs_per_consensus: f64,
    pub rounds: Vec<Round>,
    pub epochs_confirmed: usize,
    pub rollbacks: usize,
    pub evictions: usize,
    pub gas: BTreeMap<String, GasLine>,
    pub stalled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CsvRow {
    pub scenario: String,
    pub seed: u64,
    pub nodes: usize,
    pub epoch_duration_ms: u64,
    pub throughput: f64,
    pub latency_mean_ms: f64,
    pub latency_std_ms: f64,
    pub confirmation_mean_ms: f64,
    pub consensus_delay_mean_ms: f64,
    pub consensus_delay_std_ms: f64,
    pub msgs_per_transfer: f64,
    pub msgs_per_consensus: f64,
    pub epochs_confirmed: usize,
    pub rollbacks: usize,
    pub evictions: usize,
    pub gas_total: u64,
    pub stalled: bool,
}

impl MetricsReport {
    /// Computes every metric from the trace records alone.
    pub fn from_trace(trace: &Trace) -> MetricsReport {
        let (scenario, seed, nodes, epoch_duration_ms, until_ms) = match trace.meta() {
            Some(TraceRecord::Meta {
                scenario,
                seed,
                nodes,
                epoch_duration_ms,
                until_ms,
                ..
            }) => (
                scenario.clone(),
                *seed,
                *nodes,
                *epoch_duration_ms,
                *until_ms,
            ),
            _ => (String::new(), 0, 0, 0, 0),
        };
        let until = until_ms * 1_000;

        let mut requested: HashMap<(u64, u64), Time> = HashMap::new();
        let mut issued: HashMap<(Epoch, TxId), (u64, u64)> = HashMap::new();
        let mut flow_msgs: HashMap<(u64, u64), usize> = HashMap::new();
        let mut round_msgs: HashMap<Digest, usize> = HashMap::new();
        let mut started: HashMap<Digest, (Time, Epoch, usize)> = HashMap::new();
        let mut adopted: HashMap<Digest, Time> = HashMap::new();
        let mut finalized: Vec<Digest> = Vec::new();
        let mut awaiting: BTreeMap<Epoch, Vec<Time>> = BTreeMap::new();
        let mut recorded: Vec<(u64, u64)> = Vec::new();
        let mut latencies = Vec::new();
        let mut confirmations = Vec::new();
        let mut in_window = 0usize;
        let mut rollbacks = 0;
        let mut evictions = 0;
        let mut gas: BTreeMap<String, GasLine> = BTreeMap::new();

        for r in &trace.records {
            match r {
                TraceRecord::Send {
                    flow: Some(flow), ..
                } => match flow {
                    FlowRef::Request { sender, nonce } => {
                        *flow_msgs.entry((*sender, *nonce)).or_default() += 1
                    }
                    FlowRef::Transfer { epoch, tx_id } => {
                        if let Some(key) = issued.get(&(*epoch, *tx_id)) {
                            *flow_msgs.entry(*key).or_default() += 1;
                        }
                    }
                    FlowRef::Round { digest } => *round_msgs.entry(*digest).or_default() += 1,
                },
                TraceRecord::Node { t, ev, .. } => match ev {
                    NodeEvent::TransferRequested { sender, nonce, .. } => {
                        requested.entry((*sender, *nonce)).or_insert(*t);
                    }
                    NodeEvent::TxIdIssued {
                        epoch,
                        tx_id,
                        sender,
                        nonce,
                        ..
                    } => {
                        issued.insert((*epoch, *tx_id), (*sender, *nonce));
                    }
                    NodeEvent::TransferRecorded {
                        epoch,
                        sender,
                        nonce,
                        ..
                    } => {
                        if *t <= until {
                            in_window += 1;
                        }
                        if let Some(&at) = requested.get(&(*sender, *nonce)) {
                            latencies.push(t - at);
                            awaiting.entry(*epoch).or_default().push(at);
                        }
                        recorded.push((*sender, *nonce));
                    }
                    NodeEvent::ConsensusStarted {
                        epoch,
                        digest,
                        signers,
                        ..
                    } => {
                        started.insert(*digest, (*t, *epoch, *signers));
                    }
                    NodeEvent::StateFinalized { epoch, digest } => {
                        finalized.push(*digest);
                        if epoch.0 > 0 {
                            if let Some(ts) = awaiting.remove(&Epoch(epoch.0 - 1)) {
                                confirmations.extend(ts.into_iter().map(|at| t - at));
                            }
                        }
                    }
                    NodeEvent::EpochStarted {
                        digest,
                        via: Via::Confirmation,
                        ..
                    } => {
                        let e = adopted.entry(*digest).or_insert(*t);
                        *e = (*e).max(*t);
                    }
                    _ => {}
                },
                TraceRecord::Call {
                    call,
                    gas: g,
                    result,
                    ..
                } => {
                    let line = gas.entry(call.clone()).or_default();
                    line.calls += 1;
                    line.gas += g;
                    if result != "ok" && result != "merged" {
                        line.reverts += 1;
                    }
                }
                TraceRecord::Chain { ev, .. } => match ev {
                    ChainRecord::ChallengeResolved {
                        outcome: Resolution::RolledBack,
                        ..
                    } => rollbacks += 1,
                    ChainRecord::IncompleteResolved { evicted, .. } => evictions += evicted.len(),
                    _ => {}
                },
                _ => {}
            }
        }

        let per_transfer: Vec<usize> = recorded
            .iter()
            .map(|k| flow_msgs.get(k).copied().unwrap_or(0))
            .collect();
        let mut rounds = Vec::new();
        let mut delays = Vec::new();
        for d in &finalized {
            let Some(&(t0, epoch, signers)) = started.get(d) else {
                continue;
            };
            let delay = adopted.get(d).map(|&t| t.saturating_sub(t0)).unwrap_or(0);
            delays.push(delay);
            rounds.push(Round {
                epoch,
                signers,
                messages: round_msgs.get(d).copied().unwrap_or(0),
                delay_ms: delay as f64 / 1_000.0,
            });
        }
        let mean = |v: &mut dyn Iterator<Item = usize>| {
            let (s, n) = v.fold((0usize, 0usize), |(s, n), x| (s + x, n + 1));
            if n == 0 {
                0.0
            } else {
                s as f64 / n as f64
            }
        };
        let stalled = matches!(trace.end(), Some(TraceRecord::End { stalled: true, .. }));
        MetricsReport {
            scenario,
            seed,
            nodes,
            epoch_duration_ms,
            throughput: if until == 0 {
                0.0
            } else {
                in_window as f64 / (until as f64 / 1e6)
            },
            transfers: recorded.len(),
            latency: Spread::of(&latencies),
            confirmation: Spread::of(&confirmations),
            consensus_delay: Spread::of(&delays),
            msgs_per_transfer: mean(&mut per_transfer.iter().copied()),
            msgs_per_transfer_min: per_transfer.iter().copied().min().unwrap_or(0),
            msgs_per_transfer_max: per_transfer.iter().copied().max().unwrap_or(0),
            msgs_per_consensus: mean(&mut rounds.iter().map(|r| r.messages)),
            epochs_confirmed: rounds.len(),
            rounds,
            rollbacks,
            evictions,
            gas,
            stalled,
        }
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            scenario: self.scenario.clone(),
            seed: self.seed,
            nodes: self.nodes,
            epoch_duration_ms: self.epoch_duration_ms,
            throughput: self.throughput,
            latency_mean_ms: self.latency.mean_ms,
            latency_std_ms: self.latency.std_ms,
            confirmation_mean_ms: self.confirmation.mean_ms,
            consensus_delay_mean_ms: self.consensus_delay.mean_ms,
            consensus_delay_std_ms: self.consensus_delay.std_ms,
            msgs_per_transfer: self.msgs_per_transfer,
            msgs_per_consensus: self.msgs_per_consensus,
            epochs_confirmed: self.epochs_confirmed,
            rollbacks: self.rollbacks,
            evictions: self.evictions,
            gas_total: self.gas.values().map(|g| g.gas).sum(),
            stalled: self.stalled,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        to_csv(std::iter::once(self.csv_row()))
    }

    /// Whether every completed transfer used exactly `per_transfer`
    /// messages and every round `per_signer` messages per signer.
    pub fn counts_exact(&self, per_transfer: usize, per_signer: usize) -> Result<(), String> {
        if self.transfers > 0
            && (self.msgs_per_transfer_min != per_transfer
                || self.msgs_per_transfer_max != per_transfer)
        {
            return Err(format!(
                "transfer messages ranged {}..={}, expected {per_transfer}",
                self.msgs_per_transfer_min, self.msgs_per_transfer_max
            ));
        }
        for r in &self.rounds {
            if r.messages != per_signer * r.signers {
                return Err(format!(
                    "round for epoch {} used {} messages with {} signers",
                    r.epoch.0, r.messages, r.signers
                ));
            }
        }
        Ok(())
    }
}

pub fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("csv rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}
