//! A hub participant: leader duties, member verification, transfer flows
//! and on-chain reactions, as a single-threaded state machine driven by
//! inputs from the simulator.

mod behavior;
mod book;
mod hub;
mod message;

use serde::{Deserialize, Serialize};

use crate::chain::{Accepted, ChainCall, ChainEvent, Revert, Time};
use crate::protocol::{Coins, Digest, Epoch, ParticipantId, TxId};

pub use behavior::{Behavior, Deviation, DeviationKind, NamedNode, NetFault, NodeRef, Trigger};
pub use book::{own_root, BuildFaults, LeaderBook, RecordError};
pub use hub::{HubNode, Phase, TransferError};
pub use message::{
    rejection_payload, MessageKind, ProtocolMessage, RefuseReason, RejectReason, StateReply,
    TxIdReply, TxIdRequest, TxReply, Wire, WithdrawRequest,
};

/// Protocol timings, in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeConfig {
    pub epoch_duration: Time,
    /// The leader stops issuing ids this long before the epoch ends, so
    /// every issued flow completes before the books close.
    pub grace: Time,
    /// Members stop requesting ids this much earlier still: their epoch
    /// may start up to one delay after the leader's, and the request takes
    /// another to arrive.
    pub request_margin: Time,
    /// Members challenge if no confirmation arrives this long after the
    /// epoch's nominal end.
    pub consensus_timeout: Time,
    /// The leader waits this long for signatures before going on chain.
    pub collect_timeout: Time,
    /// A sender gives up on an unanswered id request after this long.
    pub flow_timeout: Time,
    pub block_time: Time,
    /// Retry interval for challenges that did not settle.
    pub chain_retry: Time,
    pub max_amount: u64,
}

impl NodeConfig {
    /// Timeouts derived from the delay bound `delta` plus a processing
    /// allowance.
    pub fn derive(
        epoch_duration: Time,
        delta: Time,
        allowance: Time,
        block_time: Time,
        max_amount: u64,
    ) -> Self {
        NodeConfig {
            epoch_duration,
            grace: 4 * delta + allowance,
            request_margin: 2 * delta,
            consensus_timeout: 5 * delta + allowance,
            collect_timeout: 2 * delta + allowance,
            flow_timeout: 4 * delta + allowance,
            block_time,
            chain_retry: 3 * block_time,
            max_amount,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerKind {
    CloseIssuing,
    BuildState,
    CollectTimeout,
    ConsensusTimeout,
    ChainRetry,
    Flow(u64),
    WithdrawConfirm,
}

/// A timer, tagged with the era that set it. Timers from past eras are
/// ignored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerTag {
    pub kind: TimerKind,
    pub era: u64,
}

/// Workload injected by the simulator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Workload {
    /// Start a transfer; `draw` picks receiver and amount.
    Transfer {
        draw: u64,
    },
    Join {
        deposit: Coins,
    },
    Withdraw,
}

#[derive(Clone, Debug)]
pub enum Input {
    Message {
        from: ParticipantId,
        wire: Wire,
    },
    Timer(TimerTag),
    Chain(ChainEvent),
    Receipt {
        call: &'static str,
        result: Result<Accepted, Revert>,
    },
    Workload(Workload),
}

#[derive(Clone, Debug)]
pub enum Action {
    Send { to: ParticipantId, wire: Wire },
    SetTimer { tag: TimerTag, at: Time },
    Chain(ChainCall),
    Event(NodeEvent),
}

/// Result of handling one input. `ops` counts signature operations, which
/// the simulator charges as processing time.
#[derive(Clone, Debug, Default)]
pub struct Effects {
    pub actions: Vec<Action>,
    pub ops: u32,
}

/// How a node arrived at its current epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Via {
    Genesis,
    Confirmation,
    Challenge,
    Rollback,
    Incomplete,
}

/// Observable node events, for traces and metrics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NodeEvent {
    EpochStarted {
        epoch: Epoch,
        era: u64,
        digest: Digest,
        leader: Option<u64>,
        participants: usize,
        via: Via,
        /// Own trading balance, if a participant.
        balance: Option<Coins>,
        /// Whether the adopted state conserves coins relative to the
        /// previous one; absent when not a direct successor.
        conserved: Option<bool>,
    },
    Enrolled {
        index: u64,
    },
    TransferRequested {
        epoch: Epoch,
        sender: u64,
        nonce: u64,
        receiver: u64,
        amount: Coins,
        forced: bool,
    },
    TxIdIssued {
        epoch: Epoch,
        tx_id: TxId,
        sender: u64,
        nonce: u64,
        amount: Coins,
    },
    TxIdRejected {
        epoch: Epoch,
        sender: u64,
        nonce: u64,
        reason: RejectReason,
    },
    TxIdWithheld {
        epoch: Epoch,
        sender: u64,
        nonce: u64,
    },
    TransferRejected {
        epoch: Epoch,
        nonce: u64,
        reason: RejectReason,
    },
    TransferAbandoned {
        epoch: Epoch,
        nonce: u64,
    },
    Countersigned {
        epoch: Epoch,
        tx_id: TxId,
        sender: u64,
    },
    TxCompleteSent {
        epoch: Epoch,
        tx_id: TxId,
        nonce: u64,
    },
    TransferRecorded {
        epoch: Epoch,
        tx_id: TxId,
        sender: u64,
        receiver: u64,
        nonce: u64,
        amount: Coins,
    },
    RecordRejected {
        epoch: Epoch,
        tx_id: TxId,
        reason: RecordError,
    },
    ReplaySent {
        epoch: Epoch,
        tx_id: TxId,
    },
    GarbageSent {
        bytes: usize,
    },
    MalformedIgnored {
        from: u64,
    },
    IssuingClosed {
        epoch: Epoch,
    },
    ConsensusStarted {
        epoch: Epoch,
        digest: Digest,
        signers: usize,
        withheld: bool,
    },
    BuildFailed {
        epoch: Epoch,
    },
    StateSigned {
        epoch: Epoch,
        digest: Digest,
        balance: Coins,
    },
    SignatureWithheld {
        epoch: Epoch,
        digest: Digest,
    },
    StateRefused {
        epoch: Epoch,
        digest: Digest,
        reason: RefuseReason,
    },
    RefusalReceived {
        epoch: Epoch,
        from: u64,
        reason: RefuseReason,
    },
    StateFinalized {
        epoch: Epoch,
        digest: Digest,
    },
    IncompleteSubmitted {
        epoch: Epoch,
        missing: usize,
    },
    ChallengeSubmitted {
        claimed: Epoch,
    },
    AnswerSubmitted {
        epoch: Epoch,
    },
    WithdrawRequested {
        epoch: Epoch,
    },
    WithdrawSubmitted {
        amount: Coins,
    },
    WithdrawPaid {
        amount: Coins,
    },
    Evicted {
        held: Coins,
    },
}

impl NodeEvent {
    pub fn name(&self) -> &'static str {
        match self {
            NodeEvent::EpochStarted { .. } => "epoch_started",
            NodeEvent::Enrolled { .. } => "enrolled",
            NodeEvent::TransferRequested { .. } => "transfer_requested",
            NodeEvent::TxIdIssued { .. } => "tx_id_issued",
            NodeEvent::TxIdRejected { .. } => "tx_id_rejected",
            NodeEvent::TxIdWithheld { .. } => "tx_id_withheld",
            NodeEvent::TransferRejected { .. } => "transfer_rejected",
            NodeEvent::TransferAbandoned { .. } => "transfer_abandoned",
            NodeEvent::Countersigned { .. } => "countersigned",
            NodeEvent::TxCompleteSent { .. } => "tx_complete_sent",
            NodeEvent::TransferRecorded { .. } => "transfer_recorded",
            NodeEvent::RecordRejected { .. } => "record_rejected",
            NodeEvent::ReplaySent { .. } => "replay_sent",
            NodeEvent::GarbageSent { .. } => "garbage_sent",
            NodeEvent::MalformedIgnored { .. } => "malformed_ignored",
            NodeEvent::IssuingClosed { .. } => "issuing_closed",
            NodeEvent::ConsensusStarted { .. } => "consensus_started",
            NodeEvent::BuildFailed { .. } => "build_failed",
            NodeEvent::StateSigned { .. } => "state_signed",
            NodeEvent::SignatureWithheld { .. } => "signature_withheld",
            NodeEvent::StateRefused { .. } => "state_refused",
            NodeEvent::RefusalReceived { .. } => "refusal_received",
            NodeEvent::StateFinalized { .. } => "state_finalized",
            NodeEvent::IncompleteSubmitted { .. } => "incomplete_submitted",
            NodeEvent::ChallengeSubmitted { .. } => "challenge_submitted",
            NodeEvent::AnswerSubmitted { .. } => "answer_submitted",
            NodeEvent::WithdrawRequested { .. } => "withdraw_requested",
            NodeEvent::WithdrawSubmitted { .. } => "withdraw_submitted",
            NodeEvent::WithdrawPaid { .. } => "withdraw_paid",
            NodeEvent::Evicted { .. } => "evicted",
        }
    }
}
