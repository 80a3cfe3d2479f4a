//! The canonical adversarial scenarios and their expected outcomes.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::chain::Resolution;
use crate::node::{
    Deviation, NamedNode, NodeEvent, NodeRef, RecordError, RefuseReason, RejectReason, Via,
};
use crate::protocol::{Coins, Digest, Epoch, TxId};
use crate::sim::{ChainRecord, Corruption, Scenario, Simnet, Trace, TraceRecord};

use super::checks;
use super::metrics::MetricsReport;

pub const SUITE_NODES: usize = 8;
pub const SUITE_EPOCH_MS: u64 = 2_000;

pub struct AttackCase {
    pub name: &'static str,
    pub expectation: &'static str,
    build: fn(&mut Scenario),
    check: fn(&Outcome) -> Result<(), String>,
}

/// A finished run, with slot roles resolved.
pub struct Outcome<'a> {
    pub sim: &'a Simnet,
    pub trace: &'a Trace,
    pub leader: usize,
    pub next: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackResult {
    pub attack: &'static str,
    pub seed: u64,
    pub passed: bool,
    pub detail: String,
    pub rollbacks: usize,
    pub evictions: usize,
    pub epochs_confirmed: usize,
}

impl AttackCase {
    pub fn scenario(&self, seed: u64) -> Scenario {
        let mut s = Scenario {
            name: self.name.into(),
            seed,
            nodes: SUITE_NODES,
            epoch_duration_ms: SUITE_EPOCH_MS,
            until_ms: 16_000,
            ..Scenario::default()
        };
        s.workload.rate_tps = 40.0;
        (self.build)(&mut s);
        s
    }

    pub fn run(&self, seed: u64) -> AttackResult {
        match crate::sim::run(&self.scenario(seed)) {
            Ok((sim, _)) => self.evaluate(&sim),
            Err(e) => AttackResult {
                attack: self.name,
                seed,
                passed: false,
                detail: e.to_string(),
                rollbacks: 0,
                evictions: 0,
                epochs_confirmed: 0,
            },
        }
    }

    /// Judges a finished run of this case's scenario.
    pub fn evaluate(&self, sim: &Simnet) -> AttackResult {
        let trace = sim.trace();
        let m = MetricsReport::from_trace(trace);
        let leader = sim.genesis_leader();
        let out = Outcome {
            sim,
            trace,
            leader,
            next: (leader + 1) % sim.scenario().nodes,
        };
        let verdict = checks::safety(trace).and_then(|_| (self.check)(&out));
        AttackResult {
            attack: self.name,
            seed: sim.scenario().seed,
            passed: verdict.is_ok(),
            detail: verdict.err().unwrap_or_else(|| "ok".into()),
            rollbacks: m.rollbacks,
            evictions: m.evictions,
            epochs_confirmed: m.epochs_confirmed,
        }
    }
}

fn corrupt(
    s: &mut Scenario,
    node: NamedNode,
    deviation: Deviation,
    from_epoch: u64,
    times: Option<u32>,
) {
    s.adversary.push(Corruption {
        node: NodeRef::Named(node),
        deviation,
        from_epoch,
        times,
    });
}

fn honest(o: &Outcome, slot: usize) -> bool {
    o.sim.is_honest(slot)
}

fn events<'a>(o: &'a Outcome) -> impl Iterator<Item = (u64, usize, &'a NodeEvent)> + 'a {
    o.trace.node_events()
}

fn resolutions(o: &Outcome) -> Vec<(Resolution, Digest)> {
    o.trace
        .chain_events()
        .filter_map(|(_, e)| match e {
            ChainRecord::ChallengeResolved {
                outcome, digest, ..
            } => Some((*outcome, *digest)),
            _ => None,
        })
        .collect()
}

fn rolled_back(o: &Outcome) -> Result<Digest, String> {
    let opened = o
        .trace
        .chain_events()
        .any(|(_, e)| matches!(e, ChainRecord::ChallengeOpened { .. }));
    if !opened {
        return Err("no challenge opened".into());
    }
    resolutions(o)
        .into_iter()
        .find(|(r, _)| *r == Resolution::RolledBack)
        .map(|(_, d)| d)
        .ok_or_else(|| "challenge did not end in rollback".into())
}

/// Every honest node adopted the rollback state with the balance it held
/// when it first adopted that state.
fn rollback_restores_balances(o: &Outcome, digest: Digest) -> Result<(), String> {
    let mut first: BTreeMap<usize, Option<Coins>> = BTreeMap::new();
    let mut restored = BTreeSet::new();
    for (_, node, ev) in events(o) {
        if let NodeEvent::EpochStarted {
            digest: d,
            via,
            balance,
            ..
        } = ev
        {
            if *d != digest {
                continue;
            }
            if *via == Via::Rollback {
                if first.get(&node).is_some_and(|b| b != balance) {
                    return Err(format!(
                        "slot {node} rolled back to {balance:?}, not {:?}",
                        first[&node]
                    ));
                }
                restored.insert(node);
            } else {
                first.entry(node).or_insert(*balance);
            }
        }
    }
    for slot in 0..o.sim.scenario().nodes {
        if honest(o, slot) && !restored.contains(&slot) {
            return Err(format!(
                "honest slot {slot} never adopted the rollback state"
            ));
        }
    }
    Ok(())
}

fn refused_by(o: &Outcome, reason: RefuseReason) -> BTreeSet<usize> {
    events(o)
        .filter_map(|(_, n, e)| match e {
            NodeEvent::StateRefused { reason: r, .. } if *r == reason => Some(n),
            _ => None,
        })
        .collect()
}

fn finalized_after(o: &Outcome, t0: u64) -> usize {
    events(o)
        .filter(|(t, _, e)| *t > t0 && matches!(e, NodeEvent::StateFinalized { .. }))
        .count()
}

fn check_double_spend(o: &Outcome) -> Result<(), String> {
    let sender = o.next;
    let mut forced = BTreeSet::new();
    for (_, n, e) in events(o) {
        if let NodeEvent::TransferRequested {
            sender: s,
            nonce,
            forced: true,
            ..
        } = e
        {
            if n == sender {
                forced.insert((*s, *nonce));
            }
        }
    }
    if forced.is_empty() {
        return Err("no overspend attempted".into());
    }
    let mut rejected = BTreeSet::new();
    for (_, _, e) in events(o) {
        match e {
            NodeEvent::TxIdIssued { sender, nonce, .. } if forced.contains(&(*sender, *nonce)) => {
                return Err(format!("overspend nonce {nonce} was issued an id"))
            }
            NodeEvent::TxIdRejected {
                sender,
                nonce,
                reason: RejectReason::Overspend,
                ..
            } => {
                rejected.insert((*sender, *nonce));
            }
            _ => {}
        }
    }
    if let Some(k) = forced.difference(&rejected).next() {
        return Err(format!("overspend {k:?} not rejected for overspending"));
    }
    if !resolutions(o).is_empty() {
        return Err("honest leader run went to a challenge".into());
    }
    Ok(())
}

fn check_colluding(o: &Outcome) -> Result<(), String> {
    let refusers = refused_by(o, RefuseReason::DepositMismatch);
    for slot in 0..o.sim.scenario().nodes {
        if honest(o, slot) && !refusers.contains(&slot) {
            return Err(format!(
                "honest slot {slot} did not refuse the overspent state"
            ));
        }
    }
    let d = rolled_back(o)?;
    rollback_restores_balances(o, d)
}

fn check_withholding(o: &Outcome) -> Result<(), String> {
    let withheld = events(o).any(|(_, n, e)| {
        n == o.leader && matches!(e, NodeEvent::ConsensusStarted { withheld: true, .. })
    });
    if !withheld {
        return Err("leader never withheld".into());
    }
    if resolutions(o)
        .first()
        .is_some_and(|(r, _)| *r != Resolution::RolledBack)
    {
        return Err("challenge was answered".into());
    }
    let d = rolled_back(o)?;
    rollback_restores_balances(o, d)
}

fn check_silent_signer(o: &Outcome) -> Result<(), String> {
    let idx = o.sim.nodes()[o.next].id().map(|p| p.index);
    let evicted_at = o.trace.records.iter().find_map(|r| match r {
        TraceRecord::Chain {
            t,
            ev: ChainRecord::IncompleteResolved { evicted, .. },
            ..
        } if idx.is_some_and(|i| evicted.contains(&i)) => Some(*t),
        _ => None,
    });
    let Some(t) = evicted_at else {
        return Err("silent signer was not evicted".into());
    };
    let after = finalized_after(o, t);
    if after < 5 {
        return Err(format!("only {after} epochs confirmed after eviction"));
    }
    Ok(())
}

fn check_refused_tx_id(o: &Outcome) -> Result<(), String> {
    let mut abandoned = BTreeSet::new();
    for (_, n, e) in events(o) {
        if let NodeEvent::TransferAbandoned {
            epoch: Epoch(0), ..
        } = e
        {
            if honest(o, n) {
                abandoned.insert(n);
            }
        }
    }
    if abandoned.is_empty() {
        return Err("no transfer was abandoned".into());
    }
    let recovered: BTreeSet<usize> = events(o)
        .filter_map(|(_, _, e)| match e {
            NodeEvent::TransferRecorded { epoch, sender, .. } if epoch.0 >= 1 => {
                Some(*sender as usize)
            }
            _ => None,
        })
        .collect();
    if let Some(n) = abandoned.iter().find(|n| !recovered.contains(n)) {
        return Err(format!(
            "slot {n} never completed a transfer after being refused"
        ));
    }
    if !resolutions(o).is_empty() {
        return Err("refused ids led to a challenge".into());
    }
    Ok(())
}

fn check_omitted(o: &Outcome) -> Result<(), String> {
    if refused_by(o, RefuseReason::MerkleMismatch)
        .iter()
        .all(|n| !honest(o, *n))
    {
        return Err("no honest node refused for a merkle mismatch".into());
    }
    let d = rolled_back(o)?;
    rollback_restores_balances(o, d)
}

fn check_tampered(o: &Outcome) -> Result<(), String> {
    if !refused_by(o, RefuseReason::BalanceMismatch).contains(&o.next) {
        return Err("tampered node did not refuse".into());
    }
    let d = rolled_back(o)?;
    rollback_restores_balances(o, d)
}

fn check_replay(o: &Outcome) -> Result<(), String> {
    let replays = events(o)
        .filter(|(_, _, e)| matches!(e, NodeEvent::ReplaySent { .. }))
        .count();
    if replays == 0 {
        return Err("no replay sent".into());
    }
    let mut recorded: BTreeSet<(Epoch, TxId)> = BTreeSet::new();
    let mut blocked = 0;
    for (_, _, e) in events(o) {
        match e {
            NodeEvent::TransferRecorded { epoch, tx_id, .. } => {
                if !recorded.insert((*epoch, *tx_id)) {
                    return Err(format!("transfer {epoch:?}/{tx_id:?} recorded twice"));
                }
            }
            NodeEvent::RecordRejected {
                reason: RecordError::Replay | RecordError::StaleEpoch | RecordError::Closed,
                ..
            } => blocked += 1,
            _ => {}
        }
    }
    if blocked == 0 {
        return Err("leader never rejected a replay".into());
    }
    if !resolutions(o).is_empty() {
        return Err("replays led to a challenge".into());
    }
    Ok(())
}

fn check_garbage(o: &Outcome) -> Result<(), String> {
    let ignored = events(o)
        .filter(|(_, n, e)| honest(o, *n) && matches!(e, NodeEvent::MalformedIgnored { .. }))
        .count();
    if ignored == 0 {
        return Err("no honest node saw the garbage".into());
    }
    if finalized_after(o, 0) < 5 {
        return Err("hub stopped confirming epochs".into());
    }
    if !resolutions(o).is_empty() {
        return Err("garbage led to a challenge".into());
    }
    Ok(())
}

pub fn suite() -> Vec<AttackCase> {
    use NamedNode::{AfterGenesisLeader as Next, GenesisLeader as Leader};
    vec![
        AttackCase {
            name: "double_spend_honest_leader",
            expectation: "every overspending id request is rejected by the leader",
            build: |s| corrupt(s, Next, Deviation::Overspend { extra: 5_000_000 }, 0, None),
            check: check_double_spend,
        },
        AttackCase {
            name: "colluding_leader_overspend",
            expectation: "every honest member refuses on the deposit sum; challenge; rollback",
            build: |s| {
                corrupt(s, Leader, Deviation::ColludeIssueId, 0, Some(1));
                corrupt(
                    s,
                    Next,
                    Deviation::Overspend { extra: 5_000_000 },
                    0,
                    Some(1),
                );
            },
            check: check_colluding,
        },
        AttackCase {
            name: "withholding_leader",
            expectation: "unanswered challenge; rollback to the last fully signed state",
            build: |s| corrupt(s, Leader, Deviation::WithholdEpochState, 0, Some(1)),
            check: check_withholding,
        },
        AttackCase {
            name: "silent_signer",
            expectation: "signer evicted; the hub confirms at least 5 more epochs",
            build: |s| {
                s.until_ms = 26_000;
                corrupt(s, Next, Deviation::RefuseSign, 1, None);
            },
            check: check_silent_signer,
        },
        AttackCase {
            name: "refused_tx_id",
            expectation: "requests time out and are retried in the next epoch",
            build: |s| corrupt(s, Leader, Deviation::RefuseTxId, 0, Some(1)),
            check: check_refused_tx_id,
        },
        AttackCase {
            name: "omitted_transaction",
            expectation: "an affected member refuses on the merkle root; challenge; rollback",
            build: |s| corrupt(s, Leader, Deviation::OmitTx, 0, Some(1)),
            check: check_omitted,
        },
        AttackCase {
            name: "tampered_balance",
            expectation: "the victim refuses on its balance; challenge; rollback",
            build: |s| {
                corrupt(
                    s,
                    Leader,
                    Deviation::TamperBalance {
                        target: NodeRef::Named(Next),
                        delta: 500,
                    },
                    0,
                    Some(1),
                )
            },
            check: check_tampered,
        },
        AttackCase {
            name: "replay",
            expectation: "replayed completions are never recorded twice",
            build: |s| corrupt(s, Next, Deviation::Replay, 0, None),
            check: check_replay,
        },
        AttackCase {
            name: "arbitrary_messages",
            expectation: "honest nodes drop malformed bytes and keep confirming epochs",
            build: |s| {
                corrupt(
                    s,
                    Next,
                    Deviation::ArbitraryMessage {
                        bytes: String::new(),
                    },
                    0,
                    None,
                )
            },
            check: check_garbage,
        },
    ]
}

pub fn run_suite(seeds: impl IntoIterator<Item = u64> + Clone) -> Vec<AttackResult> {
    let mut out = Vec::new();
    for case in suite() {
        for seed in seeds.clone() {
            out.push(case.run(seed));
        }
    }
    out
}
