//! Simulated blockchain hosting the hub's verifier contract.
//!
//! Calls are queued and executed at the next block tick in submission order;
//! challenges and enforcement windows are resolved after the block's calls.

mod contract;
mod gas;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::protocol::{Account, Coins, Epoch, EpochState, Signature};

pub use contract::{
    Accepted, ChainEvent, Challenge, Checkpoint, ContractState, IncompleteWindow, JoinRecord,
    PendingWithdrawal, Resolution, Revert,
};
pub use gas::{GasModel, CALL_BASE_GAS, JOIN_GAS, PER_SIGNATURE_GAS, WITHDRAW_GAS};

/// Simulated time in microseconds.
pub type Time = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub block_time_ms: u64,
    /// Blocks between withdrawal initialisation and confirmation.
    pub withdrawal_wait: u64,
    /// Blocks a challenge or enforcement window stays open.
    pub challenge_timeout: u64,
    pub gas: GasModel,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            block_time_ms: 1_000,
            withdrawal_wait: 2,
            challenge_timeout: 1,
            gas: GasModel::default(),
        }
    }
}

impl ChainConfig {
    pub fn block_time(&self) -> Time {
        self.block_time_ms * 1_000
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.block_time_ms == 0 || self.withdrawal_wait == 0 || self.challenge_timeout == 0 {
            return Err(
                "chain block time, withdrawal wait and challenge timeout must be positive".into(),
            );
        }
        if self.gas.per_signature == 0 || self.gas.gas_limit == 0 {
            return Err("gas constants must be positive".into());
        }
        Ok(())
    }
}

/// A contract call.
#[derive(Clone, Debug, PartialEq)]
pub enum ChainCall {
    Join {
        deposit: Coins,
    },
    /// Challenge the hub to publish the state after `claimed`, the newest
    /// agreed epoch the caller knows. `attached` may carry that state.
    OpenChallenge {
        claimed: Epoch,
        attached: Option<Arc<EpochState>>,
    },
    AnswerChallenge {
        state: Arc<EpochState>,
    },
    /// Leader commits a state some signers did not sign, on top of `anchor`.
    SubmitIncomplete {
        state: Arc<EpochState>,
        anchor: Arc<EpochState>,
    },
    SubmitSignature {
        signature: Signature,
    },
    WithdrawInit {
        amount: Coins,
        proof: Option<Arc<EpochState>>,
    },
    WithdrawConfirm,
}

impl ChainCall {
    pub fn kind(&self) -> &'static str {
        match self {
            ChainCall::Join { .. } => "join",
            ChainCall::OpenChallenge { .. } => "open_challenge",
            ChainCall::AnswerChallenge { .. } => "answer_challenge",
            ChainCall::SubmitIncomplete { .. } => "submit_incomplete",
            ChainCall::SubmitSignature { .. } => "submit_signature",
            ChainCall::WithdrawInit { .. } => "withdraw_init",
            ChainCall::WithdrawConfirm => "withdraw_confirm",
        }
    }
}

/// Result of one executed call, as logged.
#[derive(Clone, Debug, PartialEq)]
pub struct CallRecord {
    pub block: u64,
    pub submitted_at: Time,
    pub caller: Account,
    pub call: &'static str,
    pub gas: u64,
    pub result: Result<Accepted, Revert>,
}

/// Everything a block tick produced.
#[derive(Debug, Default)]
pub struct BlockOutput {
    pub block: u64,
    pub calls: Vec<CallRecord>,
    pub events: Vec<ChainEvent>,
    pub invariants_hold: bool,
}

struct Queued {
    submitted_at: Time,
    caller: Account,
    call: ChainCall,
}

/// The chain: a FIFO of submitted calls plus the contract.
pub struct Chain {
    pub contract: ContractState,
    queue: Vec<Queued>,
}

impl Chain {
    pub fn new(contract: ContractState) -> Self {
        Chain {
            contract,
            queue: Vec::new(),
        }
    }

    /// Queues a call; calls are ordered by submission time, ties in
    /// submission order.
    pub fn submit(&mut self, now: Time, caller: Account, call: ChainCall) {
        let at = self.queue.partition_point(|q| q.submitted_at <= now);
        self.queue.insert(
            at,
            Queued {
                submitted_at: now,
                caller,
                call,
            },
        );
    }

    pub fn pending_calls(&self) -> usize {
        self.queue.len()
    }

    /// Mines one block at time `now`: executes calls submitted up to `now`
    /// in submission order, then resolves due deadlines.
    pub fn tick(&mut self, now: Time) -> BlockOutput {
        self.contract.block += 1;
        let block = self.contract.block;
        let split = self.queue.partition_point(|q| q.submitted_at <= now);
        let due: Vec<Queued> = self.queue.drain(..split).collect();
        let mut out = BlockOutput {
            block,
            ..Default::default()
        };
        for q in due {
            let gas = self.contract.config.gas.cost(&q.call);
            let result = self.contract.execute(q.caller, &q.call, &mut out.events);
            out.calls.push(CallRecord {
                block,
                submitted_at: q.submitted_at,
                caller: q.caller,
                call: q.call.kind(),
                gas,
                result,
            });
        }
        self.contract.resolve_deadlines(&mut out.events);
        out.invariants_hold = self.contract.invariants_hold();
        out
    }
}
