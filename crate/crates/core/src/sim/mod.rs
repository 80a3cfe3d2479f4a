//! Deterministic discrete-event simulation of a hub: nodes, message
//! latency, processing cost, block ticks, workload and the adversary.

mod scenario;
mod trace;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::chain::{Chain, Checkpoint, ContractState, Time};
use crate::node::{
    Action, Behavior, Deviation, Effects, HubNode, Input, NamedNode, NetFault, NodeRef, Trigger,
    Wire, Workload,
};
use crate::protocol::{
    Account, Balances, Coins, Digest, EpochState, KeyPair, Keyring, ParticipantId,
};

pub use scenario::{
    Corruption, NetConfig, Processing, Scenario, ScenarioError, Scheduled, Timing, WorkloadConfig,
};
pub use trace::{
    flow_of, kind_label, result_label, ChainRecord, FlowRef, NodeSummary, Trace, TraceParseError,
    TraceRecord,
};

enum SimEvent {
    Deliver {
        from: ParticipantId,
        to: usize,
        wire: Wire,
    },
    Node {
        node: usize,
        input: Input,
    },
    Workload {
        node: usize,
        work: Workload,
    },
    Arrival {
        node: usize,
    },
    BlockTick,
}

struct Pending {
    at: Time,
    seq: u64,
    ev: SimEvent,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(o.at, o.seq))
    }
}

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSummary {
    pub end: Time,
    /// The drain budget ran out with honest nodes still unsettled.
    pub stalled: bool,
    pub contract_ok: bool,
}

/// The simulator. Owns every node and the chain.
pub struct Simnet {
    scenario: Scenario,
    now: Time,
    seq: u64,
    queue: BinaryHeap<Reverse<Pending>>,
    nodes: Vec<HubNode>,
    honest: Vec<bool>,
    slot_of: BTreeMap<Account, usize>,
    busy_until: Vec<Time>,
    chain: Chain,
    net_rng: ChaCha12Rng,
    work_rng: ChaCha12Rng,
    digests: Vec<(Arc<EpochState>, Digest)>,
    trace: Trace,
    contract_ok: bool,
    genesis_leader: usize,
    finished: bool,
    stalled: bool,
}

impl Simnet {
    pub fn new(scenario: &Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let s = scenario.clone();
        let total = s.total_nodes();
        let keys: Vec<KeyPair> = (0..total as u64)
            .map(|i| KeyPair::derive(s.seed, i))
            .collect();
        let ring = Arc::new(Keyring::new(&keys));
        let deposits: Balances = keys
            .iter()
            .take(s.nodes)
            .enumerate()
            .map(|(i, k)| (ParticipantId::new(i as u64, k.account()), Coins(s.deposit)))
            .collect();
        let mut genesis = EpochState::genesis(&deposits);
        let digest = genesis.signing_digest();
        for (p, k) in deposits.keys().zip(&keys) {
            genesis.signatures.insert(*p, k.sign(&digest));
        }
        let genesis = Arc::new(genesis);
        let genesis_cp = Checkpoint::new(genesis.clone());
        let leader = genesis_cp
            .leader()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let genesis_leader = leader.index as usize;
        let resolve = |r: NodeRef| match r {
            NodeRef::Slot(i) => i,
            NodeRef::Named(NamedNode::GenesisLeader) => genesis_leader,
            NodeRef::Named(NamedNode::AfterGenesisLeader) => (genesis_leader + 1) % s.nodes,
        };
        let mut behaviors: Vec<Behavior> = (0..total).map(|_| Behavior::honest()).collect();
        for c in &s.adversary {
            let slot = resolve(c.node);
            let target = match &c.deviation {
                Deviation::TamperBalance { target, .. } => Some(keys[resolve(*target)].account()),
                _ => None,
            };
            behaviors[slot].arm(
                c.deviation.clone(),
                Trigger {
                    from_epoch: c.from_epoch,
                    times: c.times,
                },
                target,
            );
        }
        let corrupted: std::collections::BTreeSet<Account> = (0..total)
            .filter(|i| !behaviors[*i].is_honest())
            .map(|i| keys[i].account())
            .collect();
        let honest: Vec<bool> = behaviors.iter().map(|b| b.is_honest()).collect();
        let cfg = s.node_config();
        let nodes: Vec<HubNode> = keys
            .iter()
            .zip(behaviors)
            .map(|(k, mut b)| {
                if !b.is_honest() {
                    b.accomplices = corrupted.clone();
                }
                HubNode::new(k.clone(), ring.clone(), cfg, b)
            })
            .collect();
        let slot_of = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.account(), i))
            .collect();
        let contract = ContractState::genesis(s.chain, ring, genesis);
        let mut sim = Simnet {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes,
            honest,
            slot_of,
            busy_until: vec![0; total],
            chain: Chain::new(contract),
            net_rng: ChaCha12Rng::seed_from_u64(s.seed),
            work_rng: ChaCha12Rng::seed_from_u64(s.seed ^ 0x5eed_0fa1_10ad),
            digests: Vec::new(),
            trace: Trace::default(),
            contract_ok: true,
            genesis_leader,
            finished: false,
            stalled: false,
            scenario: s,
        };
        sim.trace.records.push(TraceRecord::Meta {
            scenario: sim.scenario.name.clone(),
            seed: sim.scenario.seed,
            nodes: sim.scenario.nodes,
            total_nodes: total,
            epoch_duration_ms: sim.scenario.epoch_duration_ms,
            until_ms: sim.scenario.until_ms,
            delta_ms: sim.scenario.net.delta_ms,
            honest: sim.honest.clone(),
            genesis_leader,
        });
        for i in 0..total {
            let fx = sim.nodes[i].start(0, genesis_cp.clone(), &sim.chain.contract);
            sim.apply(i, 0, fx);
            if i < sim.scenario.nodes {
                sim.schedule_arrival(i, 0);
            }
        }
        for j in sim.scenario.workload.joins.clone() {
            let deposit = Coins(sim.scenario.deposit);
            sim.push(
                j.at_ms * 1_000,
                SimEvent::Workload {
                    node: j.slot,
                    work: Workload::Join { deposit },
                },
            );
        }
        for w in sim.scenario.workload.withdrawals.clone() {
            sim.push(
                w.at_ms * 1_000,
                SimEvent::Workload {
                    node: w.slot,
                    work: Workload::Withdraw,
                },
            );
        }
        let t = sim.scenario.chain.block_time();
        sim.push(t, SimEvent::BlockTick);
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn nodes(&self) -> &[HubNode] {
        &self.nodes
    }

    pub fn is_honest(&self, slot: usize) -> bool {
        self.honest[slot]
    }

    pub fn contract(&self) -> &ContractState {
        &self.chain.contract
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn genesis_leader(&self) -> usize {
        self.genesis_leader
    }

    fn push(&mut self, at: Time, ev: SimEvent) {
        self.seq += 1;
        self.queue.push(Reverse(Pending {
            at,
            seq: self.seq,
            ev,
        }));
    }

    fn latency(&mut self) -> Time {
        let n = &self.scenario.net;
        let lo = (n.base_latency_ms - n.jitter_ms) * 1_000;
        let hi = (n.base_latency_ms + n.jitter_ms) * 1_000;
        self.net_rng.gen_range(lo..=hi).clamp(1, n.delta_ms * 1_000)
    }

    fn schedule_arrival(&mut self, node: usize, from: Time) {
        let rate = self.scenario.workload.rate_tps / self.scenario.nodes as f64;
        if rate <= 0.0 {
            return;
        }
        let u: f64 = self.work_rng.gen_range(f64::EPSILON..1.0);
        let gap = (-u.ln() / rate * 1e6) as Time;
        let at = from + gap.max(1);
        if at < self.scenario.until_ms * 1_000 {
            self.push(at, SimEvent::Arrival { node });
        }
    }

    fn digest_of(&mut self, s: &Arc<EpochState>) -> Digest {
        if let Some((_, d)) = self.digests.iter().find(|(a, _)| Arc::ptr_eq(a, s)) {
            return *d;
        }
        let d = s.signing_digest();
        if self.digests.len() >= 8 {
            self.digests.remove(0);
        }
        self.digests.push((s.clone(), d));
        d
    }

    /// Applies a node's effects; outputs leave once processing is done.
    fn apply(&mut self, slot: usize, at: Time, fx: Effects) {
        let sends = fx
            .actions
            .iter()
            .filter(|a| matches!(a, Action::Send { .. }))
            .count() as u64;
        let p = self.scenario.processing;
        let cost = p.per_message_us * (1 + sends) + p.per_signature_us * fx.ops as u64;
        let depart = at + cost;
        self.busy_until[slot] = depart;
        for action in fx.actions {
            match action {
                Action::Send { to, wire } => self.send(slot, depart, to, wire),
                Action::SetTimer { tag, at } => self.push(
                    at.max(depart),
                    SimEvent::Node {
                        node: slot,
                        input: Input::Timer(tag),
                    },
                ),
                Action::Chain(call) => {
                    let account = self.nodes[slot].account();
                    self.chain.submit(depart, account, call);
                }
                Action::Event(ev) => self.trace.records.push(TraceRecord::Node {
                    t: depart,
                    node: slot,
                    ev,
                }),
            }
        }
    }

    fn send(&mut self, slot: usize, depart: Time, to: ParticipantId, wire: Wire) {
        let Some(&to_slot) = self.slot_of.get(&to.account) else {
            return;
        };
        let Some(from) = self.nodes[slot].id() else {
            return;
        };
        let kind = wire.kind();
        let fault = match (self.honest[slot], kind) {
            (false, Some(k)) => {
                let n = &mut self.nodes[slot];
                let (epoch, era) = (n.epoch(), n.era());
                n.behavior_mut().net_fault(k, epoch, era)
            }
            _ => None,
        };
        let base = if to_slot == slot { 0 } else { self.latency() };
        let deliver_at = match fault {
            Some(NetFault::Drop) => None,
            Some(NetFault::Delay(extra)) => Some(depart + base + extra),
            None => Some(depart + base),
        };
        let flow = flow_of(&wire, &to, |s| self.digest_of(s));
        self.trace.records.push(TraceRecord::Send {
            t: depart,
            from: slot,
            to: to_slot,
            kind: kind_label(kind),
            epoch: match &wire {
                Wire::Msg(m) => Some(m.epoch()),
                Wire::Raw(_) => None,
            },
            flow,
            deliver_at,
        });
        if let Some(at) = deliver_at {
            self.push(
                at,
                SimEvent::Deliver {
                    from,
                    to: to_slot,
                    wire,
                },
            );
        }
    }

    fn deliver_input(&mut self, slot: usize, input: Input) {
        if self.busy_until[slot] > self.now {
            let at = self.busy_until[slot];
            self.push(at, SimEvent::Node { node: slot, input });
            return;
        }
        let fx = self.nodes[slot].handle(self.now, input, &self.chain.contract);
        self.apply(slot, self.now, fx);
    }

    fn tick(&mut self) {
        let out = self.chain.tick(self.now);
        for c in &out.calls {
            let caller = self.slot_of.get(&c.caller).copied().unwrap_or(usize::MAX);
            self.trace.records.push(TraceRecord::Call {
                t: self.now,
                block: out.block,
                caller,
                call: c.call.into(),
                gas: c.gas,
                result: result_label(&c.result),
            });
            if caller != usize::MAX {
                let at = self.now + self.latency();
                self.push(
                    at,
                    SimEvent::Node {
                        node: caller,
                        input: Input::Receipt {
                            call: c.call,
                            result: c.result,
                        },
                    },
                );
            }
        }
        for ev in &out.events {
            self.trace.records.push(TraceRecord::Chain {
                t: self.now,
                block: out.block,
                ev: ChainRecord::from(ev),
            });
        }
        if !out.invariants_hold {
            self.contract_ok = false;
            self.trace.records.push(TraceRecord::Violation {
                t: self.now,
                block: out.block,
            });
        }
        for ev in out.events {
            for slot in 0..self.nodes.len() {
                let at = self.now + self.latency();
                self.push(
                    at,
                    SimEvent::Node {
                        node: slot,
                        input: Input::Chain(ev.clone()),
                    },
                );
            }
        }
        let t = self.scenario.chain.block_time();
        self.push(self.now + t, SimEvent::BlockTick);
    }

    /// Whether every honest node has settled on one agreed state and the
    /// chain has nothing outstanding.
    pub fn settled(&self) -> bool {
        let c = &self.chain.contract;
        if self.chain.pending_calls() > 0
            || c.open_challenge.is_some()
            || c.pending_incomplete.is_some()
            || !c.pending_withdrawals.is_empty()
        {
            return false;
        }
        let mut digest: Option<Digest> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            if !self.honest[i] {
                continue;
            }
            if !n.is_settled() {
                return false;
            }
            if matches!(
                n.phase(),
                crate::node::Phase::Trading | crate::node::Phase::Consensus
            ) {
                let d = n.checkpoint().map(|c| c.digest());
                if digest.is_some() && digest != d {
                    return false;
                }
                digest = d;
            }
        }
        true
    }

    /// Processes the next event. Returns false once the run is over:
    /// workload done and everything settled, the drain budget spent, or
    /// nothing left to do.
    pub fn step(&mut self) -> bool {
        if self.finished {
            return false;
        }
        let until = self.scenario.until_ms * 1_000;
        let cap = until + self.scenario.drain_ms * 1_000;
        let Some(Reverse(p)) = self.queue.pop() else {
            self.finished = true;
            return false;
        };
        if p.at > cap {
            self.stalled = !self.settled();
            self.now = cap;
            self.finished = true;
            return false;
        }
        self.now = p.at;
        match p.ev {
            SimEvent::Deliver { from, to, wire } => {
                self.deliver_input(to, Input::Message { from, wire })
            }
            SimEvent::Node { node, input } => self.deliver_input(node, input),
            SimEvent::Workload { node, work } => self.deliver_input(node, Input::Workload(work)),
            SimEvent::Arrival { node } => {
                let draw = self.work_rng.gen();
                self.deliver_input(node, Input::Workload(Workload::Transfer { draw }));
                self.schedule_arrival(node, self.now);
            }
            SimEvent::BlockTick => {
                self.tick();
                if self.now >= until && self.settled() {
                    self.finished = true;
                    return false;
                }
            }
        }
        true
    }

    /// Runs to `until`, then drains. Returns how the run ended and appends
    /// the final record to the trace.
    pub fn run(&mut self) -> RunSummary {
        while self.step() {}
        self.finish()
    }

    /// Appends the end record. Call once, after the last step.
    pub fn finish(&mut self) -> RunSummary {
        let stalled = self.stalled;
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(slot, n)| NodeSummary {
                slot,
                honest: self.honest[slot],
                index: n.id().map(|p| p.index),
                phase: n.phase(),
                epoch: n.epoch(),
                entitlement: n.entitlement(),
                withdrawable: n.withdrawable(&self.chain.contract),
                paid: n.paid(),
                settled: n.is_settled(),
            })
            .collect();
        let c = &self.chain.contract;
        self.trace.records.push(TraceRecord::End {
            t: self.now,
            stalled,
            total_deposit: c.total_deposit,
            total_paid: c.total_paid,
            enforced_epoch: c.enforced.epoch(),
            nodes,
        });
        RunSummary {
            end: self.now,
            stalled,
            contract_ok: self.contract_ok,
        }
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<(Simnet, RunSummary), ScenarioError> {
    let mut sim = Simnet::new(scenario)?;
    let summary = sim.run();
    Ok((sim, summary))
}
