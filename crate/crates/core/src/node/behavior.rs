use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::protocol::{Account, Epoch};

use super::message::MessageKind;

/// Named node references resolved when a scenario is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedNode {
    /// The leader elected over the genesis deposits.
    GenesisLeader,
    /// The genesis participant right after the genesis leader in join order.
    AfterGenesisLeader,
}

/// A node slot, by number or by role at genesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeRef {
    Slot(usize),
    Named(NamedNode),
}

/// A scripted deviation from the honest protocol.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Deviation {
    /// As leader, build the next state but never broadcast it.
    WithholdEpochState,
    /// As member, never answer proposals.
    RefuseSign,
    /// As leader, never answer transaction id requests.
    RefuseTxId,
    /// Request `balance + extra` coins, skipping the local overspend check.
    Overspend { extra: u64 },
    /// As leader, approve ids for fellow corrupted nodes without the
    /// overspend gate and clamp the resulting negative balances at zero.
    ColludeIssueId,
    /// As leader, move `delta` coins from `target` to itself in the state.
    TamperBalance { target: NodeRef, delta: u64 },
    /// As leader, omit one recorded transfer from the merkle roots.
    OmitTx,
    /// Re-send an already recorded transfer completion to the leader.
    Replay,
    /// Send the given hex bytes (or random bytes when empty) to everyone.
    ArbitraryMessage {
        #[serde(default)]
        bytes: String,
    },
    /// Drop outgoing messages of this kind.
    Drop { message: MessageKind },
    /// Delay outgoing messages of this kind by `extra_ms`.
    Delay { message: MessageKind, extra_ms: u64 },
}

/// When a deviation is active: from `from_epoch` on, in at most `times`
/// eras (an era is one run of one epoch; a rolled back epoch re-runs in a
/// fresh era).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Trigger {
    pub from_epoch: u64,
    pub times: Option<u32>,
}


#[derive(Clone, Debug)]
struct Armed {
    deviation: Deviation,
    trigger: Trigger,
    target: Option<Account>,
    eras_used: u32,
    last_era: Option<u64>,
}

/// A node's deviation script. Empty for honest nodes.
#[derive(Clone, Debug, Default)]
pub struct Behavior {
    armed: Vec<Armed>,
    /// Accounts of all corrupted nodes, known to each of them.
    pub accomplices: BTreeSet<Account>,
}

/// Deviation variants, for lookups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeviationKind {
    WithholdEpochState,
    RefuseSign,
    RefuseTxId,
    Overspend,
    ColludeIssueId,
    TamperBalance,
    OmitTx,
    Replay,
    ArbitraryMessage,
    Net,
}

impl Deviation {
    pub fn kind(&self) -> DeviationKind {
        match self {
            Deviation::WithholdEpochState => DeviationKind::WithholdEpochState,
            Deviation::RefuseSign => DeviationKind::RefuseSign,
            Deviation::RefuseTxId => DeviationKind::RefuseTxId,
            Deviation::Overspend { .. } => DeviationKind::Overspend,
            Deviation::ColludeIssueId => DeviationKind::ColludeIssueId,
            Deviation::TamperBalance { .. } => DeviationKind::TamperBalance,
            Deviation::OmitTx => DeviationKind::OmitTx,
            Deviation::Replay => DeviationKind::Replay,
            Deviation::ArbitraryMessage { .. } => DeviationKind::ArbitraryMessage,
            Deviation::Drop { .. } | Deviation::Delay { .. } => DeviationKind::Net,
        }
    }
}

/// Network-level effect on one outgoing message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetFault {
    Drop,
    Delay(u64),
}

impl Behavior {
    pub fn honest() -> Self {
        Behavior::default()
    }

    pub fn is_honest(&self) -> bool {
        self.armed.is_empty()
    }

    /// Adds a deviation. `target` is the resolved account of a tamper target.
    pub fn arm(&mut self, deviation: Deviation, trigger: Trigger, target: Option<Account>) {
        self.armed.push(Armed {
            deviation,
            trigger,
            target,
            eras_used: 0,
            last_era: None,
        });
    }

    /// The first deviation of `kind` active in this epoch and era, counting
    /// the era as used.
    pub fn fire(
        &mut self,
        kind: DeviationKind,
        epoch: Epoch,
        era: u64,
    ) -> Option<(Deviation, Option<Account>)> {
        self.fire_where(epoch, era, |d| d.kind() == kind)
    }

    fn fire_where(
        &mut self,
        epoch: Epoch,
        era: u64,
        pred: impl Fn(&Deviation) -> bool,
    ) -> Option<(Deviation, Option<Account>)> {
        for a in &mut self.armed {
            if !pred(&a.deviation) || epoch.0 < a.trigger.from_epoch {
                continue;
            }
            if a.last_era == Some(era) {
                return Some((a.deviation.clone(), a.target));
            }
            if a.trigger.times.is_some_and(|t| a.eras_used >= t) {
                continue;
            }
            a.eras_used += 1;
            a.last_era = Some(era);
            return Some((a.deviation.clone(), a.target));
        }
        None
    }

    /// Applies drop/delay deviations to an outgoing message.
    pub fn net_fault(&mut self, message: MessageKind, epoch: Epoch, era: u64) -> Option<NetFault> {
        let hit = self.fire_where(epoch, era, |d| match d {
            Deviation::Drop { message: m } | Deviation::Delay { message: m, .. } => *m == message,
            _ => false,
        })?;
        Some(match hit.0 {
            Deviation::Delay { extra_ms, .. } => NetFault::Delay(extra_ms * 1_000),
            _ => NetFault::Drop,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigger_counts_eras_not_uses() {
        let mut b = Behavior::default();
        b.arm(
            Deviation::RefuseSign,
            Trigger {
                from_epoch: 2,
                times: Some(1),
            },
            None,
        );
        assert!(b.fire(DeviationKind::RefuseSign, Epoch(1), 1).is_none());
        assert!(b.fire(DeviationKind::RefuseSign, Epoch(2), 2).is_some());
        assert!(b.fire(DeviationKind::RefuseSign, Epoch(2), 2).is_some());
        assert!(b.fire(DeviationKind::RefuseSign, Epoch(2), 3).is_none());
        assert!(b.fire(DeviationKind::Replay, Epoch(5), 3).is_none());
    }

    #[test]
    fn deviations_parse_from_toml() {
        #[derive(Deserialize)]
        struct W {
            d: Vec<Deviation>,
        }
        let w: W = toml::from_str(
            r#"
            d = [
              { kind = "withhold_epoch_state" },
              { kind = "overspend", extra = 5 },
              { kind = "tamper_balance", target = 3, delta = 10 },
              { kind = "tamper_balance", target = "genesis_leader", delta = 1 },
              { kind = "drop", message = "epoch_state_conf" },
            ]
            "#,
        )
        .unwrap();
        assert_eq!(w.d.len(), 5);
        assert_eq!(
            w.d[3],
            Deviation::TamperBalance {
                target: NodeRef::Named(NamedNode::GenesisLeader),
                delta: 1
            }
        );
    }
}
