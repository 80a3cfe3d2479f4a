use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    elect_leader, Account, Balances, Coins, Digest, Epoch, EpochState, Keyring, ParticipantId,
    ProtocolError, Signature,
};

use super::{ChainCall, ChainConfig};

/// An enforced hub state: an epoch state plus the participants the contract
/// evicted from it, whose balances it now holds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub state: Arc<EpochState>,
    pub evicted: Balances,
}

impl Checkpoint {
    pub fn new(state: Arc<EpochState>) -> Self {
        Checkpoint {
            state,
            evicted: Balances::new(),
        }
    }

    pub fn epoch(&self) -> Epoch {
        self.state.epoch
    }

    pub fn digest(&self) -> Digest {
        self.state.signing_digest()
    }

    /// Participants trading in this epoch with their initial balances.
    pub fn participants(&self) -> Balances {
        self.state
            .balances
            .iter()
            .filter(|(p, _)| !self.evicted.contains_key(p))
            .map(|(p, c)| (*p, *c))
            .collect()
    }

    /// Leader of the epoch that starts from this checkpoint.
    pub fn leader(&self) -> Result<ParticipantId, ProtocolError> {
        let parts = self.participants();
        let balances: Vec<Coins> = parts.values().copied().collect();
        let i = elect_leader(&balances)?;
        Ok(*parts.keys().nth(i).expect("index within participant set"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinRecord {
    pub participant: ParticipantId,
    pub deposit: Coins,
    pub block: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Challenge {
    pub challenger: ParticipantId,
    pub challenged: Epoch,
    pub opened_at: u64,
    pub deadline: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncompleteWindow {
    pub state: Arc<EpochState>,
    pub missing: BTreeSet<ParticipantId>,
    pub deadline: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingWithdrawal {
    pub participant: ParticipantId,
    pub epoch: Epoch,
    pub amount: Coins,
    pub init_block: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Fulfilled,
    RolledBack,
}

/// Observable contract events, broadcast to every node.
#[derive(Clone, Debug, PartialEq)]
pub enum ChainEvent {
    Joined {
        participant: ParticipantId,
        deposit: Coins,
    },
    ChallengeOpened {
        challenger: ParticipantId,
        challenged: Epoch,
        deadline: u64,
    },
    StateEnforced {
        epoch: Epoch,
        digest: Digest,
    },
    ChallengeResolved {
        outcome: Resolution,
        checkpoint: Checkpoint,
    },
    IncompleteSubmitted {
        epoch: Epoch,
        missing: BTreeSet<ParticipantId>,
        deadline: u64,
    },
    SignatureSubmitted {
        signer: ParticipantId,
    },
    IncompleteResolved {
        checkpoint: Checkpoint,
    },
    WithdrawInitiated {
        participant: ParticipantId,
        amount: Coins,
        unlock_block: u64,
    },
    WithdrawPaid {
        participant: ParticipantId,
        amount: Coins,
    },
}

impl ChainEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            ChainEvent::Joined { .. } => "joined",
            ChainEvent::ChallengeOpened { .. } => "challenge_opened",
            ChainEvent::StateEnforced { .. } => "state_enforced",
            ChainEvent::ChallengeResolved { .. } => "challenge_resolved",
            ChainEvent::IncompleteSubmitted { .. } => "incomplete_submitted",
            ChainEvent::SignatureSubmitted { .. } => "signature_submitted",
            ChainEvent::IncompleteResolved { .. } => "incomplete_resolved",
            ChainEvent::WithdrawInitiated { .. } => "withdraw_initiated",
            ChainEvent::WithdrawPaid { .. } => "withdraw_paid",
        }
    }
}

/// Why a call reverted.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Revert {
    #[error("out of gas")]
    OutOfGas,
    #[error("zero deposit")]
    ZeroDeposit,
    #[error("already enrolled")]
    AlreadyEnrolled,
    #[error("evicted")]
    Evicted,
    #[error("not enrolled")]
    NotEnrolled,
    #[error("no challenge")]
    NoChallenge,
    #[error("challenge open")]
    ChallengeOpen,
    #[error("window open")]
    WindowOpen,
    #[error("no window")]
    NoWindow,
    #[error("incomplete")]
    Incomplete,
    #[error("not latest")]
    NotLatest,
    #[error("inconsistent")]
    Inconsistent,
    #[error("bad anchor")]
    BadAnchor,
    #[error("stale epoch")]
    StaleEpoch,
    #[error("not leader")]
    NotLeader,
    #[error("bad signature")]
    BadSignature,
    #[error("no withdrawal entry")]
    NoWithdrawalEntry,
    #[error("amount mismatch")]
    AmountMismatch,
    #[error("withdrawal pending")]
    WithdrawalPending,
    #[error("no pending withdrawal")]
    NoPendingWithdrawal,
    #[error("too early")]
    TooEarly,
    #[error("insufficient funds")]
    InsufficientFunds,
}

/// Successful call outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accepted {
    Done,
    /// A challenge call absorbed into an existing challenge or window.
    Merged,
}

/// The verifier contract.
///
/// `deposits` records lifetime deposits per account and `total_deposit` is
/// the balance the contract currently holds, so
/// `total_deposit + total_paid == Σ deposits` at all times.
#[derive(Debug)]
pub struct ContractState {
    pub config: ChainConfig,
    pub block: u64,
    pub deposits: BTreeMap<Account, Coins>,
    pub total_deposit: Coins,
    pub total_paid: Coins,
    /// Every join in index order; `joins[i].participant.index == i`.
    pub joins: Vec<JoinRecord>,
    /// Accounts currently joined and not yet paid out or evicted.
    pub active: BTreeMap<Account, ParticipantId>,
    pub enforced: Checkpoint,
    pub open_challenge: Option<Challenge>,
    pub pending_incomplete: Option<IncompleteWindow>,
    pub pending_withdrawals: BTreeMap<Account, PendingWithdrawal>,
    pub evicted: BTreeMap<Account, (ParticipantId, Coins)>,
    pub settled: BTreeMap<ParticipantId, Coins>,
    ring: Arc<Keyring>,
}

impl ContractState {
    /// Contract deployed with the genesis deposits and the all-signed
    /// genesis state.
    pub fn genesis(config: ChainConfig, ring: Arc<Keyring>, genesis: Arc<EpochState>) -> Self {
        let joins = genesis
            .balances
            .iter()
            .map(|(p, c)| JoinRecord {
                participant: *p,
                deposit: *c,
                block: 0,
            })
            .collect::<Vec<_>>();
        let deposits = joins
            .iter()
            .map(|j| (j.participant.account, j.deposit))
            .collect();
        let total_deposit =
            Coins::sum(joins.iter().map(|j| j.deposit)).expect("genesis deposits overflow");
        let active = joins
            .iter()
            .map(|j| (j.participant.account, j.participant))
            .collect();
        ContractState {
            config,
            block: 0,
            deposits,
            total_deposit,
            total_paid: Coins::ZERO,
            joins,
            active,
            enforced: Checkpoint::new(genesis),
            open_challenge: None,
            pending_incomplete: None,
            pending_withdrawals: BTreeMap::new(),
            evicted: BTreeMap::new(),
            settled: BTreeMap::new(),
            ring,
        }
    }

    pub fn ring(&self) -> &Keyring {
        &self.ring
    }

    /// Sum of deposits of joins with index at or above `watermark`.
    pub fn join_deposits_from(&self, watermark: u64) -> Coins {
        Coins::sum(
            self.joins
                .iter()
                .skip(watermark as usize)
                .map(|j| j.deposit),
        )
        .expect("deposits bounded by supply")
    }

    /// Sum of deposits of joins with index below `watermark`.
    pub fn join_deposits_below(&self, watermark: u64) -> Coins {
        Coins::sum(
            self.joins
                .iter()
                .take(watermark as usize)
                .map(|j| j.deposit),
        )
        .expect("deposits bounded by supply")
    }

    /// Conservation at the contract.
    pub fn invariants_hold(&self) -> bool {
        let Ok(lifetime) = Coins::sum(self.deposits.values().copied()) else {
            return false;
        };
        self.total_deposit.checked_add(self.total_paid) == Ok(lifetime)
            && self.total_paid <= lifetime
    }

    /// Applies one call. State is untouched when the call reverts.
    pub fn execute(
        &mut self,
        caller: Account,
        call: &ChainCall,
        events: &mut Vec<ChainEvent>,
    ) -> Result<Accepted, Revert> {
        if self.config.gas.cost(call) > self.config.gas.gas_limit {
            return Err(Revert::OutOfGas);
        }
        match call {
            ChainCall::Join { deposit } => self.join(caller, *deposit, events),
            ChainCall::OpenChallenge { claimed, attached } => {
                self.open_challenge(caller, *claimed, attached.as_ref(), events)
            }
            ChainCall::AnswerChallenge { state } => self.answer_challenge(state, events),
            ChainCall::SubmitIncomplete { state, anchor } => {
                self.submit_incomplete(caller, state, anchor, events)
            }
            ChainCall::SubmitSignature { signature } => {
                self.submit_signature(caller, signature, events)
            }
            ChainCall::WithdrawInit { amount, proof } => {
                self.withdraw_init(caller, *amount, proof.as_ref(), events)
            }
            ChainCall::WithdrawConfirm => self.withdraw_confirm(caller, events),
        }
    }

    fn join(
        &mut self,
        caller: Account,
        deposit: Coins,
        events: &mut Vec<ChainEvent>,
    ) -> Result<Accepted, Revert> {
        if deposit.is_zero() {
            return Err(Revert::ZeroDeposit);
        }
        if self.evicted.contains_key(&caller) {
            return Err(Revert::Evicted);
        }
        if self.active.contains_key(&caller) || self.pending_withdrawals.contains_key(&caller) {
            return Err(Revert::AlreadyEnrolled);
        }
        let total = self
            .total_deposit
            .checked_add(deposit)
            .map_err(|_| Revert::InsufficientFunds)?;
        let lifetime = self
            .deposits
            .get(&caller)
            .copied()
            .unwrap_or_default()
            .checked_add(deposit)
            .map_err(|_| Revert::InsufficientFunds)?;
        let participant = ParticipantId::new(self.joins.len() as u64, caller);
        self.joins.push(JoinRecord {
            participant,
            deposit,
            block: self.block,
        });
        self.deposits.insert(caller, lifetime);
        self.total_deposit = total;
        self.active.insert(caller, participant);
        events.push(ChainEvent::Joined {
            participant,
            deposit,
        });
        Ok(Accepted::Done)
    }

    /// A fully signed state the contract can adopt: agreed, and balances
    /// plus withdrawals within the held deposit.
    fn acceptable(&self, state: &EpochState) -> Result<(), Revert> {
        if !state.is_agreed(&self.ring) {
            return Err(Revert::Incomplete);
        }
        self.within_deposit(state)
    }

    fn within_deposit(&self, state: &EpochState) -> Result<(), Revert> {
        let total = state
            .total_balance()
            .and_then(|b| b.checked_add(state.total_withdrawals()?))
            .map_err(|_| Revert::Inconsistent)?;
        if total > self.total_deposit {
            return Err(Revert::Inconsistent);
        }
        Ok(())
    }

    fn enforce(&mut self, checkpoint: Checkpoint, events: &mut Vec<ChainEvent>) {
        events.push(ChainEvent::StateEnforced {
            epoch: checkpoint.epoch(),
            digest: checkpoint.digest(),
        });
        self.enforced = checkpoint;
    }

    /// Adopts `state` if it is agreed and newer than the enforced one.
    fn try_enforce_newer(&mut self, state: &Arc<EpochState>, events: &mut Vec<ChainEvent>) -> bool {
        if state.epoch > self.enforced.epoch() && self.acceptable(state).is_ok() {
            self.enforce(Checkpoint::new(state.clone()), events);
            true
        } else {
            false
        }
    }

    fn open_challenge(
        &mut self,
        caller: Account,
        claimed: Epoch,
        attached: Option<&Arc<EpochState>>,
        events: &mut Vec<ChainEvent>,
    ) -> Result<Accepted, Revert> {
        let challenger = *self.active.get(&caller).ok_or(Revert::NotEnrolled)?;
        if let Some(state) = attached {
            self.try_enforce_newer(state, events);
        }
        if self.open_challenge.is_some() {
            return Ok(Accepted::Merged);
        }
        if let Some(window) = &self.pending_incomplete {
            let digest = window.state.signing_digest();
            let signed = window
                .state
                .signatures
                .get(&challenger)
                .is_some_and(|sig| self.ring.verify(&caller, &digest, sig));
            if signed {
                return Ok(Accepted::Merged);
            }
            self.pending_incomplete = None;
        }
        let challenged = claimed.max(self.enforced.epoch()).next();
        let deadline = self.block + self.config.challenge_timeout;
        self.open_challenge = Some(Challenge {
            challenger,
            challenged,
            opened_at: self.block,
            deadline,
        });
        events.push(ChainEvent::ChallengeOpened {
            challenger,
            challenged,
            deadline,
        });
        Ok(Accepted::Done)
    }

    fn answer_challenge(
        &mut self,
        state: &Arc<EpochState>,
        events: &mut Vec<ChainEvent>,
    ) -> Result<Accepted, Revert> {
        if self.open_challenge.is_none() {
            return Err(Revert::NoChallenge);
        }
        if state.epoch <= self.enforced.epoch() {
            return Err(Revert::NotLatest);
        }
        self.acceptable(state)?;
        self.enforce(Checkpoint::new(state.clone()), events);
        Ok(Accepted::Done)
    }

    fn submit_incomplete(
        &mut self,
        caller: Account,
        state: &Arc<EpochState>,
        anchor: &Arc<EpochState>,
        events: &mut Vec<ChainEvent>,
    ) -> Result<Accepted, Revert> {
        if self.open_challenge.is_some() {
            return Err(Revert::ChallengeOpen);
        }
        if self.pending_incomplete.is_some() {
            return Err(Revert::WindowOpen);
        }
        let caller_id = *self.active.get(&caller).ok_or(Revert::NotEnrolled)?;
        let base = if anchor.signing_digest() == self.enforced.digest() {
            self.enforced.clone()
        } else if anchor.epoch > self.enforced.epoch() && self.acceptable(anchor).is_ok() {
            Checkpoint::new(anchor.clone())
        } else {
            return Err(Revert::BadAnchor);
        };
        if state.epoch != base.epoch().next() {
            return Err(Revert::StaleEpoch);
        }
        if base.leader().map_err(|_| Revert::Inconsistent)? != caller_id {
            return Err(Revert::NotLeader);
        }
        let roots: BTreeSet<_> = state.tx_roots.keys().copied().collect();
        let members: BTreeSet<_> = base.participants().keys().copied().collect();
        if roots != members {
            return Err(Revert::Inconsistent);
        }
        self.within_deposit(state)?;
        let digest = state.signing_digest();
        let required = state.required_signers();
        for (p, sig) in &state.signatures {
            if !required.contains(p) || !self.ring.verify(&p.account, &digest, sig) {
                return Err(Revert::BadSignature);
            }
        }
        if !state.signatures.contains_key(&caller_id) {
            return Err(Revert::BadSignature);
        }
        if base.digest() != self.enforced.digest() {
            self.enforce(base, events);
        }
        let missing: BTreeSet<_> = required
            .into_iter()
            .filter(|p| !state.signatures.contains_key(p))
            .collect();
        if missing.is_empty() {
            self.enforce(Checkpoint::new(state.clone()), events);
            return Ok(Accepted::Done);
        }
        let deadline = self.block + self.config.challenge_timeout;
        events.push(ChainEvent::IncompleteSubmitted {
            epoch: state.epoch,
            missing: missing.clone(),
            deadline,
        });
        self.pending_incomplete = Some(IncompleteWindow {
            state: state.clone(),
            missing,
            deadline,
        });
        Ok(Accepted::Done)
    }

    fn submit_signature(
        &mut self,
        caller: Account,
        signature: &Signature,
        events: &mut Vec<ChainEvent>,
    ) -> Result<Accepted, Revert> {
        let window = self.pending_incomplete.as_mut().ok_or(Revert::NoWindow)?;
        let signer = *window
            .missing
            .iter()
            .find(|p| p.account == caller)
            .ok_or(Revert::NotEnrolled)?;
        if !self
            .ring
            .verify(&caller, &window.state.signing_digest(), signature)
        {
            return Err(Revert::BadSignature);
        }
        window.missing.remove(&signer);
        let mut state = (*window.state).clone();
        state.signatures.insert(signer, *signature);
        window.state = Arc::new(state);
        events.push(ChainEvent::SignatureSubmitted { signer });
        Ok(Accepted::Done)
    }

    fn entitlement(
        &self,
        caller: Account,
        proof: Option<&Arc<EpochState>>,
    ) -> Result<(ParticipantId, Epoch, Coins), Revert> {
        let lookup = |state: &EpochState| {
            state
                .withdrawals
                .iter()
                .find(|(p, _)| p.account == caller && !self.settled.contains_key(p))
                .map(|(p, c)| (*p, state.epoch, *c))
        };
        if let Some(state) = proof {
            if state.signing_digest() != self.enforced.digest() {
                self.acceptable(state)?;
            }
            if let Some(found) = lookup(state) {
                return Ok(found);
            }
        }
        if let Some(found) = lookup(&self.enforced.state) {
            return Ok(found);
        }
        match self.evicted.get(&caller) {
            Some((p, held)) if !self.settled.contains_key(p) => {
                Ok((*p, self.enforced.epoch(), *held))
            }
            _ => Err(Revert::NoWithdrawalEntry),
        }
    }

    fn withdraw_init(
        &mut self,
        caller: Account,
        amount: Coins,
        proof: Option<&Arc<EpochState>>,
        events: &mut Vec<ChainEvent>,
    ) -> Result<Accepted, Revert> {
        if self.pending_withdrawals.contains_key(&caller) {
            return Err(Revert::WithdrawalPending);
        }
        let (participant, epoch, recorded) = self.entitlement(caller, proof)?;
        if recorded != amount {
            return Err(Revert::AmountMismatch);
        }
        if let Some(state) = proof {
            self.try_enforce_newer(state, events);
        }
        let unlock_block = self.block + self.config.withdrawal_wait;
        self.pending_withdrawals.insert(
            caller,
            PendingWithdrawal {
                participant,
                epoch,
                amount,
                init_block: self.block,
            },
        );
        events.push(ChainEvent::WithdrawInitiated {
            participant,
            amount,
            unlock_block,
        });
        Ok(Accepted::Done)
    }

    fn withdraw_confirm(
        &mut self,
        caller: Account,
        events: &mut Vec<ChainEvent>,
    ) -> Result<Accepted, Revert> {
        let pending = self
            .pending_withdrawals
            .get(&caller)
            .ok_or(Revert::NoPendingWithdrawal)?;
        if self.block < pending.init_block + self.config.withdrawal_wait {
            return Err(Revert::TooEarly);
        }
        let remaining = self
            .total_deposit
            .checked_sub(pending.amount)
            .map_err(|_| Revert::InsufficientFunds)?;
        let pending = self
            .pending_withdrawals
            .remove(&caller)
            .expect("checked above");
        self.total_deposit = remaining;
        self.total_paid = self
            .total_paid
            .checked_add(pending.amount)
            .expect("payout bounded by deposits");
        self.settled.insert(pending.participant, pending.amount);
        if self.active.get(&caller) == Some(&pending.participant) {
            self.active.remove(&caller);
        }
        events.push(ChainEvent::WithdrawPaid {
            participant: pending.participant,
            amount: pending.amount,
        });
        Ok(Accepted::Done)
    }

    /// Resolves challenges and enforcement windows whose deadline is the
    /// current block. Runs after the block's calls.
    pub fn resolve_deadlines(&mut self, events: &mut Vec<ChainEvent>) {
        if let Some(ch) = &self.open_challenge {
            if self.block >= ch.deadline {
                let outcome = if self.enforced.epoch() >= ch.challenged {
                    Resolution::Fulfilled
                } else {
                    Resolution::RolledBack
                };
                self.open_challenge = None;
                events.push(ChainEvent::ChallengeResolved {
                    outcome,
                    checkpoint: self.enforced.clone(),
                });
            }
        }
        if let Some(window) = &self.pending_incomplete {
            if self.block >= window.deadline {
                let window = self.pending_incomplete.take().expect("checked above");
                let mut evicted = Balances::new();
                for p in &window.missing {
                    let held = window
                        .state
                        .balances
                        .get(p)
                        .or_else(|| window.state.withdrawals.get(p))
                        .copied()
                        .unwrap_or_default();
                    evicted.insert(*p, held);
                    self.evicted.insert(p.account, (*p, held));
                    if self.active.get(&p.account) == Some(p) {
                        self.active.remove(&p.account);
                    }
                }
                let checkpoint = Checkpoint {
                    state: window.state,
                    evicted,
                };
                self.enforce(checkpoint.clone(), events);
                events.push(ChainEvent::IncompleteResolved { checkpoint });
            }
        }
    }
}
