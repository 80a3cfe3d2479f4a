use serde::{Deserialize, Serialize};

use crate::chain::{Accepted, ChainEvent, Resolution, Revert, Time};
use crate::node::{MessageKind, NodeEvent, ProtocolMessage, StateReply, TxIdReply, TxReply, Wire};
use crate::protocol::{Coins, Digest, Epoch, ParticipantId, TxId};

/// Which protocol flow a message belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flow", rename_all = "snake_case")]
pub enum FlowRef {
    /// Id request/reply, keyed by the sender's request nonce.
    Request { sender: u64, nonce: u64 },
    /// Later transfer steps, keyed by transaction id.
    Transfer { epoch: Epoch, tx_id: TxId },
    /// Consensus round, keyed by state digest.
    Round { digest: Digest },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainRecord {
    Joined {
        participant: u64,
        deposit: Coins,
    },
    ChallengeOpened {
        challenger: u64,
        challenged: Epoch,
        deadline: u64,
    },
    StateEnforced {
        epoch: Epoch,
        digest: Digest,
    },
    ChallengeResolved {
        outcome: Resolution,
        epoch: Epoch,
        digest: Digest,
    },
    IncompleteSubmitted {
        epoch: Epoch,
        missing: Vec<u64>,
        deadline: u64,
    },
    SignatureSubmitted {
        signer: u64,
    },
    IncompleteResolved {
        epoch: Epoch,
        digest: Digest,
        evicted: Vec<u64>,
    },
    WithdrawInitiated {
        participant: u64,
        amount: Coins,
        unlock_block: u64,
    },
    WithdrawPaid {
        participant: u64,
        amount: Coins,
    },
}

impl From<&ChainEvent> for ChainRecord {
    fn from(ev: &ChainEvent) -> Self {
        let ix = |ps: &mut dyn Iterator<Item = &ParticipantId>| ps.map(|p| p.index).collect();
        match ev {
            ChainEvent::Joined {
                participant,
                deposit,
            } => ChainRecord::Joined {
                participant: participant.index,
                deposit: *deposit,
            },
            ChainEvent::ChallengeOpened {
                challenger,
                challenged,
                deadline,
            } => ChainRecord::ChallengeOpened {
                challenger: challenger.index,
                challenged: *challenged,
                deadline: *deadline,
            },
            ChainEvent::StateEnforced { epoch, digest } => ChainRecord::StateEnforced {
                epoch: *epoch,
                digest: *digest,
            },
            ChainEvent::ChallengeResolved {
                outcome,
                checkpoint,
            } => ChainRecord::ChallengeResolved {
                outcome: *outcome,
                epoch: checkpoint.epoch(),
                digest: checkpoint.digest(),
            },
            ChainEvent::IncompleteSubmitted {
                epoch,
                missing,
                deadline,
            } => ChainRecord::IncompleteSubmitted {
                epoch: *epoch,
                missing: ix(&mut missing.iter()),
                deadline: *deadline,
            },
            ChainEvent::SignatureSubmitted { signer } => ChainRecord::SignatureSubmitted {
                signer: signer.index,
            },
            ChainEvent::IncompleteResolved { checkpoint } => ChainRecord::IncompleteResolved {
                epoch: checkpoint.epoch(),
                digest: checkpoint.digest(),
                evicted: ix(&mut checkpoint.evicted.keys()),
            },
            ChainEvent::WithdrawInitiated {
                participant,
                amount,
                unlock_block,
            } => ChainRecord::WithdrawInitiated {
                participant: participant.index,
                amount: *amount,
                unlock_block: *unlock_block,
            },
            ChainEvent::WithdrawPaid {
                participant,
                amount,
            } => ChainRecord::WithdrawPaid {
                participant: participant.index,
                amount: *amount,
            },
        }
    }
}

/// Final per-node figures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub slot: usize,
    pub honest: bool,
    pub index: Option<u64>,
    pub phase: crate::node::Phase,
    pub epoch: Epoch,
    pub entitlement: Coins,
    pub withdrawable: Coins,
    pub paid: Coins,
    pub settled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "snake_case")]
pub enum TraceRecord {
    Meta {
        scenario: String,
        seed: u64,
        nodes: usize,
        total_nodes: usize,
        epoch_duration_ms: u64,
        until_ms: u64,
        delta_ms: u64,
        honest: Vec<bool>,
        genesis_leader: usize,
    },
    Send {
        t: Time,
        from: usize,
        to: usize,
        /// Message variant, or "raw" for undecoded bytes.
        kind: String,
        epoch: Option<Epoch>,
        flow: Option<FlowRef>,
        /// Arrival time; absent when dropped.
        deliver_at: Option<Time>,
    },
    Node {
        t: Time,
        node: usize,
        ev: NodeEvent,
    },
    Call {
        t: Time,
        block: u64,
        caller: usize,
        call: String,
        gas: u64,
        result: String,
    },
    Chain {
        t: Time,
        block: u64,
        ev: ChainRecord,
    },
    /// A block after which contract conservation failed.
    Violation {
        t: Time,
        block: u64,
    },
    End {
        t: Time,
        stalled: bool,
        total_deposit: Coins,
        total_paid: Coins,
        enforced_epoch: Epoch,
        nodes: Vec<NodeSummary>,
    },
}

pub fn result_label(r: &Result<Accepted, Revert>) -> String {
    match r {
        Ok(Accepted::Done) => "ok".into(),
        Ok(Accepted::Merged) => "merged".into(),
        Err(e) => e.to_string(),
    }
}

pub fn kind_label(kind: Option<MessageKind>) -> String {
    match kind {
        Some(k) => serde_json::to_value(k)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
        None => "raw".into(),
    }
}

/// Flow of an outgoing message. `digest_of` resolves state digests.
pub fn flow_of(
    wire: &Wire,
    to: &ParticipantId,
    digest_of: impl FnOnce(&std::sync::Arc<crate::protocol::EpochState>) -> Digest,
) -> Option<FlowRef> {
    let Wire::Msg(m) = wire else {
        return None;
    };
    Some(match m {
        ProtocolMessage::TxIdReq(r) => FlowRef::Request {
            sender: r.sender.index,
            nonce: r.nonce,
        },
        ProtocolMessage::TxIdReply(TxIdReply::Approved { nonce, .. })
        | ProtocolMessage::TxIdReply(TxIdReply::Rejected { nonce, .. }) => FlowRef::Request {
            sender: to.index,
            nonce: *nonce,
        },
        ProtocolMessage::TxReq(tx)
        | ProtocolMessage::TxComplete(tx)
        | ProtocolMessage::TxReply(TxReply::Countersigned(tx)) => FlowRef::Transfer {
            epoch: tx.epoch,
            tx_id: tx.tx_id,
        },
        ProtocolMessage::TxReply(TxReply::Rejected { epoch, tx_id, .. }) => FlowRef::Transfer {
            epoch: *epoch,
            tx_id: *tx_id,
        },
        ProtocolMessage::EpochState(s) | ProtocolMessage::EpochStateConf(s) => FlowRef::Round {
            digest: digest_of(s),
        },
        ProtocolMessage::EpochStateReply(
            r @ (StateReply::Signed { .. } | StateReply::Refused { .. }),
        ) => FlowRef::Round { digest: r.digest() },
        ProtocolMessage::WithdrawReq(_) => return None,
    })
}

/// An ordered run log.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, thiserror::Error)]
#[error("trace line {line}: {source}")]
pub struct TraceParseError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceParseError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(line).map_err(|source| TraceParseError {
                    line: i + 1,
                    source,
                })?,
            );
        }
        Ok(Trace { records })
    }

    pub fn meta(&self) -> Option<&TraceRecord> {
        self.records
            .iter()
            .find(|r| matches!(r, TraceRecord::Meta { .. }))
    }

    pub fn end(&self) -> Option<&TraceRecord> {
        self.records
            .iter()
            .rev()
            .find(|r| matches!(r, TraceRecord::End { .. }))
    }

    pub fn node_events(&self) -> impl Iterator<Item = (Time, usize, &NodeEvent)> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Node { t, node, ev } => Some((*t, *node, ev)),
            _ => None,
        })
    }

    pub fn chain_events(&self) -> impl Iterator<Item = (Time, &ChainRecord)> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Chain { t, ev, .. } => Some((*t, ev)),
            _ => None,
        })
    }
}
