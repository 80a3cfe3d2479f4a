//! Trace-level safety checks shared by tests, the attack suite and the CLI.

use std::collections::HashMap;

use crate::node::{MessageKind, NodeEvent, Phase};
use crate::protocol::Digest;
use crate::sim::{kind_label, Trace, TraceRecord};

fn meta(trace: &Trace) -> (Vec<bool>, u64) {
    match trace.meta() {
        Some(TraceRecord::Meta {
            honest, delta_ms, ..
        }) => (honest.clone(), delta_ms * 1_000),
        _ => (Vec::new(), 0),
    }
}

/// Every message between honest nodes arrives, within the delay bound.
pub fn honest_channels(trace: &Trace) -> Result<(), String> {
    let (honest, delta) = meta(trace);
    let is_honest = |i: usize| honest.get(i).copied().unwrap_or(false);
    for r in &trace.records {
        if let TraceRecord::Send {
            t,
            from,
            to,
            kind,
            deliver_at,
            ..
        } = r
        {
            if !(is_honest(*from) && is_honest(*to)) {
                continue;
            }
            match deliver_at {
                None => return Err(format!("{kind} from {from} to {to} at {t} dropped")),
                Some(at) if at - t > delta => {
                    return Err(format!(
                        "{kind} from {from} to {to} at {t} took {} us",
                        at - t
                    ))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Every adopted direct successor state conserves coins.
pub fn conservation(trace: &Trace) -> Result<(), String> {
    if let Some((t, node, ev)) = trace.node_events().find(|(_, _, e)| {
        matches!(
            e,
            NodeEvent::EpochStarted {
                conserved: Some(false),
                ..
            }
        )
    }) {
        return Err(format!(
            "node {node} at {t} adopted a non-conserving state: {ev:?}"
        ));
    }
    Ok(())
}

/// All honest nodes adopting the same state name the same leader.
pub fn leader_agreement(trace: &Trace) -> Result<(), String> {
    let (honest, _) = meta(trace);
    let mut seen: HashMap<Digest, Option<u64>> = HashMap::new();
    for (t, node, ev) in trace.node_events() {
        if !honest.get(node).copied().unwrap_or(false) {
            continue;
        }
        if let NodeEvent::EpochStarted { digest, leader, .. } = ev {
            match seen.get(digest) {
                Some(l) if l != leader => {
                    return Err(format!(
                        "node {node} at {t} elected {leader:?} for {digest}, others {l:?}"
                    ))
                }
                _ => {
                    seen.insert(*digest, *leader);
                }
            }
        }
    }
    Ok(())
}

/// Only protocol messages (or raw adversarial bytes) are ever sent: in
/// particular none for leader election.
pub fn message_kinds(trace: &Trace) -> Result<(), String> {
    let known: Vec<String> = MessageKind::ALL
        .iter()
        .map(|k| kind_label(Some(*k)))
        .collect();
    for r in &trace.records {
        if let TraceRecord::Send { kind, .. } = r {
            if kind != "raw" && !known.contains(kind) {
                return Err(format!("unexpected message kind {kind}"));
            }
        }
    }
    Ok(())
}

pub fn contract_invariants(trace: &Trace) -> Result<(), String> {
    match trace
        .records
        .iter()
        .find(|r| matches!(r, TraceRecord::Violation { .. }))
    {
        Some(TraceRecord::Violation { block, .. }) => {
            Err(format!("contract conservation failed after block {block}"))
        }
        _ => Ok(()),
    }
}

/// Every honest node can still obtain at least its balance in the last
/// state it signed, net of payouts it already received.
pub fn no_honest_loss(trace: &Trace) -> Result<(), String> {
    let Some(TraceRecord::End { nodes, .. }) = trace.end() else {
        return Err("trace has no end record".into());
    };
    for n in nodes.iter().filter(|n| n.honest) {
        if n.withdrawable < n.entitlement {
            return Err(format!(
                "honest slot {} can withdraw {} but is owed {}",
                n.slot, n.withdrawable.0, n.entitlement.0
            ));
        }
    }
    Ok(())
}

/// The run drained, with no honest node stuck mid-dispute.
pub fn drained(trace: &Trace) -> Result<(), String> {
    let Some(TraceRecord::End { stalled, nodes, .. }) = trace.end() else {
        return Err("trace has no end record".into());
    };
    if *stalled {
        let stuck: Vec<_> = nodes
            .iter()
            .filter(|n| n.honest && !n.settled)
            .map(|n| (n.slot, n.phase))
            .collect();
        return Err(format!("run stalled; unsettled honest nodes {stuck:?}"));
    }
    if let Some(n) = nodes
        .iter()
        .find(|n| n.honest && n.phase == Phase::Challenged)
    {
        return Err(format!("honest slot {} still challenging", n.slot));
    }
    Ok(())
}

/// The checks every run must pass regardless of adversary.
pub fn safety(trace: &Trace) -> Result<(), String> {
    honest_channels(trace)?;
    conservation(trace)?;
    leader_agreement(trace)?;
    message_kinds(trace)?;
    contract_invariants(trace)?;
    no_honest_loss(trace)?;
    drained(trace)
}
