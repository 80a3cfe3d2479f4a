use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainCall, ChainEvent, Checkpoint, ContractState, Resolution, Revert, Time};
use crate::protocol::{
    decode_from, leader_payload, tuple_payload, Account, Balances, Coins, Digest, Epoch,
    EpochState, KeyPair, Keyring, ParticipantId, Signature, Transaction, TxId,
};

use super::behavior::{Behavior, Deviation, DeviationKind};
use super::book::{own_root, BuildFaults, LeaderBook, RecordError};
use super::message::{
    rejection_payload, MessageKind, ProtocolMessage, RefuseReason, RejectReason, StateReply,
    TxIdReply, TxIdRequest, TxReply, Wire, WithdrawRequest,
};
use super::{Action, Effects, Input, NodeConfig, NodeEvent, TimerKind, TimerTag, Via, Workload};

/// Where a node stands in the hub.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Not a participant: joining, or never joined.
    Idle,
    Trading,
    /// Books closed or state signed; waiting for confirmation.
    Consensus,
    /// Waiting for the contract to settle a dispute.
    Challenged,
    Withdrawing,
    Evicted,
    Exited,
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum TransferError {
    #[error("not in the trading phase")]
    NotTrading,
    #[error("unknown receiver")]
    UnknownReceiver,
    #[error("zero amount")]
    ZeroAmount,
    #[error("amount exceeds spendable balance")]
    Overspend,
    #[error("withdrawal in progress")]
    Withdrawing,
}

enum FlowStage {
    AwaitingId,
    AwaitingCountersign(Transaction),
}

struct Flow {
    receiver: ParticipantId,
    amount: Coins,
    stage: FlowStage,
}

struct Collecting {
    state: EpochState,
    digest: Digest,
    required: BTreeSet<ParticipantId>,
    done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum WithdrawStage {
    None,
    Wanted,
    Initiated,
}

const BUFFER_CAP: usize = 4_096;
const RETRY_CAP: usize = 64;

struct Cx<'a> {
    now: Time,
    chain: &'a ContractState,
    fx: Effects,
}

impl Cx<'_> {
    fn send(&mut self, to: ParticipantId, msg: ProtocolMessage) {
        self.fx.actions.push(Action::Send {
            to,
            wire: Wire::Msg(msg),
        });
    }

    fn event(&mut self, e: NodeEvent) {
        self.fx.actions.push(Action::Event(e));
    }

    fn call(&mut self, c: ChainCall) {
        self.fx.actions.push(Action::Chain(c));
    }
}

/// One hub participant.
pub struct HubNode {
    keys: KeyPair,
    account: Account,
    ring: Arc<Keyring>,
    cfg: NodeConfig,
    behavior: Behavior,
    rng: ChaCha8Rng,
    me: Option<ParticipantId>,
    phase: Phase,
    checkpoint: Option<Checkpoint>,
    best_agreed: Option<Arc<EpochState>>,
    participants: Balances,
    epoch: Epoch,
    era: u64,
    leader: Option<ParticipantId>,
    epoch_start: Time,
    watermark: u64,
    watermarks: BTreeMap<Digest, u64>,
    exited: Coins,
    book: Option<LeaderBook>,
    collecting: Option<Collecting>,
    tried: Coins,
    flows: BTreeMap<u64, Flow>,
    next_nonce: u64,
    retry: Vec<(ParticipantId, Coins)>,
    my_txs: BTreeMap<TxId, Transaction>,
    prev_txs: Vec<Transaction>,
    responded: Option<Digest>,
    last_signed: Option<Digest>,
    entitlement: Coins,
    buffered: Vec<(ParticipantId, ProtocolMessage)>,
    withdraw: WithdrawStage,
    join_deposit: Option<Coins>,
    held: Coins,
    paid: Coins,
}

impl HubNode {
    pub fn new(keys: KeyPair, ring: Arc<Keyring>, cfg: NodeConfig, behavior: Behavior) -> Self {
        let account = keys.account();
        let mut seed = [0u8; 32];
        seed[..20].copy_from_slice(&account.0);
        HubNode {
            keys,
            account,
            ring,
            cfg,
            behavior,
            rng: ChaCha8Rng::from_seed(seed),
            me: None,
            phase: Phase::Idle,
            checkpoint: None,
            best_agreed: None,
            participants: Balances::new(),
            epoch: Epoch(0),
            era: 0,
            leader: None,
            epoch_start: 0,
            watermark: 0,
            watermarks: BTreeMap::new(),
            exited: Coins::ZERO,
            book: None,
            collecting: None,
            tried: Coins::ZERO,
            flows: BTreeMap::new(),
            next_nonce: 1,
            retry: Vec::new(),
            my_txs: BTreeMap::new(),
            prev_txs: Vec::new(),
            responded: None,
            last_signed: None,
            entitlement: Coins::ZERO,
            buffered: Vec::new(),
            withdraw: WithdrawStage::None,
            join_deposit: None,
            held: Coins::ZERO,
            paid: Coins::ZERO,
        }
    }

    pub fn account(&self) -> Account {
        self.account
    }

    pub fn id(&self) -> Option<ParticipantId> {
        self.me
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn epoch(&self) -> Epoch {
        self.epoch
    }

    pub fn era(&self) -> u64 {
        self.era
    }

    pub fn leader(&self) -> Option<ParticipantId> {
        self.leader
    }

    pub fn epoch_start(&self) -> Time {
        self.epoch_start
    }

    pub fn checkpoint(&self) -> Option<&Checkpoint> {
        self.checkpoint.as_ref()
    }

    pub fn is_honest(&self) -> bool {
        self.behavior.is_honest()
    }

    pub fn behavior_mut(&mut self) -> &mut Behavior {
        &mut self.behavior
    }

    pub fn is_leader(&self) -> bool {
        self.me.is_some() && self.me == self.leader
    }

    /// Digest of the last state this node signed.
    pub fn last_signed(&self) -> Option<Digest> {
        self.last_signed
    }

    /// Own balance (or withdrawal) in the last state this node signed, less
    /// what was paid out since.
    pub fn entitlement(&self) -> Coins {
        self.entitlement
    }

    pub fn paid(&self) -> Coins {
        self.paid
    }

    /// Own trading balance in the current epoch.
    pub fn balance(&self) -> Option<Coins> {
        self.me.and_then(|p| self.participants.get(&p).copied())
    }

    pub fn spendable(&self) -> Coins {
        self.balance()
            .unwrap_or_default()
            .saturating_sub(self.tried)
    }

    /// Coins this node can still obtain: its enforceable balance, a pending
    /// or recorded withdrawal, or an eviction hold. Excludes payouts.
    pub fn withdrawable(&self, chain: &ContractState) -> Coins {
        if let Some(p) = chain.pending_withdrawals.get(&self.account) {
            return p.amount;
        }
        let Some(me) = self.me else {
            return Coins::ZERO;
        };
        if chain.settled.contains_key(&me) {
            return Coins::ZERO;
        }
        match self.phase {
            Phase::Evicted => self.held,
            Phase::Exited | Phase::Idle => Coins::ZERO,
            _ => {
                let Some(cp) = &self.checkpoint else {
                    return Coins::ZERO;
                };
                cp.participants()
                    .get(&me)
                    .or_else(|| cp.state.withdrawals.get(&me))
                    .copied()
                    .unwrap_or_default()
            }
        }
    }

    /// Whether the node has nothing left in flight for the current epoch.
    pub fn is_settled(&self) -> bool {
        match self.phase {
            Phase::Trading | Phase::Consensus => {
                self.checkpoint.as_ref().map(|c| c.digest()) == self.last_signed
                    || self.last_signed.is_none()
            }
            Phase::Idle => self.join_deposit.is_none(),
            Phase::Exited => true,
            _ => false,
        }
    }

    fn verify(&self, cx: &mut Cx, account: &Account, payload: &Digest, sig: &Signature) -> bool {
        cx.fx.ops += 1;
        self.ring.verify(account, payload, sig)
    }

    fn sign(&self, cx: &mut Cx, payload: &Digest) -> Signature {
        cx.fx.ops += 1;
        self.keys.sign(payload)
    }

    fn timer(&self, cx: &mut Cx, kind: TimerKind, at: Time) {
        cx.fx.actions.push(Action::SetTimer {
            tag: TimerTag {
                kind,
                era: self.era,
            },
            at,
        });
    }

    fn checked<R>(now: Time, chain: &ContractState, f: impl FnOnce(&mut Cx) -> R) -> (R, Effects) {
        let mut cx = Cx {
            now,
            chain,
            fx: Effects::default(),
        };
        let r = f(&mut cx);
        (r, cx.fx)
    }

    /// Starts from the genesis checkpoint. Nodes outside it stay idle until
    /// they join.
    pub fn start(&mut self, now: Time, genesis: Checkpoint, chain: &ContractState) -> Effects {
        Self::checked(now, chain, |cx| {
            let wm = genesis.state.balances.len() as u64;
            self.watermark = wm;
            self.watermarks.insert(genesis.digest(), wm);
            self.me = genesis
                .state
                .balances
                .keys()
                .find(|p| p.account == self.account)
                .copied();
            if let Some(me) = self.me {
                self.last_signed = Some(genesis.digest());
                self.entitlement = genesis.state.balances[&me];
            }
            self.best_agreed = Some(genesis.state.clone());
            self.begin_epoch(cx, genesis, Via::Genesis);
        })
        .1
    }

    pub fn handle(&mut self, now: Time, input: Input, chain: &ContractState) -> Effects {
        Self::checked(now, chain, |cx| match input {
            Input::Message { from, wire } => self.on_wire(cx, from, wire),
            Input::Timer(tag) => self.on_timer(cx, tag),
            Input::Chain(ev) => self.on_chain(cx, ev),
            Input::Receipt { call, result } => self.on_receipt(cx, call, result),
            Input::Workload(w) => self.on_workload(cx, w),
        })
        .1
    }

    /// Starts a transfer of `amount` to `receiver`.
    pub fn request_transfer(
        &mut self,
        now: Time,
        receiver: ParticipantId,
        amount: Coins,
        chain: &ContractState,
    ) -> Result<Effects, TransferError> {
        let (r, fx) = Self::checked(now, chain, |cx| self.transfer(cx, receiver, amount, false));
        r.map(|_| fx)
    }

    // ---- epochs ---------------------------------------------------------

    fn begin_epoch(&mut self, cx: &mut Cx, cp: Checkpoint, via: Via) {
        let digest = cp.digest();
        let wm = match self.watermarks.get(&digest) {
            Some(w) => *w,
            None => cp
                .state
                .enrollments
                .keys()
                .map(|p| p.index + 1)
                .max()
                .unwrap_or(self.watermark),
        };
        let direct = self
            .checkpoint
            .as_ref()
            .is_some_and(|prev| cp.epoch() == prev.epoch().next());
        let joined = cx.chain.join_deposits_below(wm);
        let conserved = direct.then(|| {
            let total = cp
                .state
                .total_balance()
                .and_then(|b| b.checked_add(cp.state.total_withdrawals()?))
                .and_then(|t| t.checked_add(self.exited));
            total == Ok(joined)
        });
        let participants = cp.participants();
        self.exited =
            joined.saturating_sub(Coins::sum(participants.values().copied()).unwrap_or_default());

        for (nonce, _) in std::mem::take(&mut self.flows) {
            cx.event(NodeEvent::TransferAbandoned {
                epoch: self.epoch,
                nonce,
            });
        }
        self.prev_txs = std::mem::take(&mut self.my_txs).into_values().collect();
        self.book = None;
        self.collecting = None;
        self.responded = None;
        self.tried = Coins::ZERO;
        self.era += 1;
        self.epoch = cp.epoch();
        self.leader = cp.leader().ok();
        self.epoch_start = cx.now;
        self.watermark = wm;
        self.watermarks.insert(digest, wm);
        self.participants = participants;
        if (via == Via::Confirmation || via == Via::Genesis)
            && self
                .best_agreed
                .as_ref()
                .is_none_or(|b| b.epoch < cp.epoch())
            {
                self.best_agreed = Some(cp.state.clone());
            }
        let in_state = |p: &ParticipantId| {
            cp.state.balances.contains_key(p) || cp.state.withdrawals.contains_key(p)
        };
        if !self.me.is_some_and(|p| in_state(&p)) {
            if let Some(p) = cp
                .state
                .balances
                .keys()
                .chain(cp.state.withdrawals.keys())
                .find(|p| p.account == self.account && !cx.chain.settled.contains_key(p))
            {
                self.me = Some(*p);
            }
        }
        self.checkpoint = Some(cp);
        let cp = self.checkpoint.as_ref().expect("just set");

        let me = self.me;
        let balance = me.and_then(|p| self.participants.get(&p).copied());
        if let (Some(me), Some(_)) = (me, balance) {
            self.phase = Phase::Trading;
            if self.leader == Some(me) {
                self.book = Some(LeaderBook::new(self.epoch, self.participants.clone()));
                let d = self.cfg.epoch_duration;
                self.timer(
                    cx,
                    TimerKind::CloseIssuing,
                    cx.now + d.saturating_sub(self.cfg.grace),
                );
                self.timer(cx, TimerKind::BuildState, cx.now + d);
            }
            self.timer(
                cx,
                TimerKind::ConsensusTimeout,
                cx.now + self.cfg.epoch_duration + self.cfg.consensus_timeout,
            );
        } else if let Some(amount) = me.and_then(|p| cp.state.withdrawals.get(&p).copied()) {
            self.phase = Phase::Withdrawing;
            if self.withdraw != WithdrawStage::Initiated
                && !cx.chain.settled.contains_key(&me.unwrap())
            {
                self.withdraw = WithdrawStage::Initiated;
                cx.call(ChainCall::WithdrawInit {
                    amount,
                    proof: Some(cp.state.clone()),
                });
                cx.event(NodeEvent::WithdrawSubmitted { amount });
            }
        } else if let Some(held) = me.and_then(|p| cp.evicted.get(&p).copied()) {
            self.phase = Phase::Evicted;
            self.held = held;
            cx.event(NodeEvent::Evicted { held });
            cx.call(ChainCall::WithdrawInit {
                amount: held,
                proof: None,
            });
            cx.event(NodeEvent::WithdrawSubmitted { amount: held });
        } else if self.phase != Phase::Exited {
            self.phase = Phase::Idle;
        }

        cx.event(NodeEvent::EpochStarted {
            epoch: self.epoch,
            era: self.era,
            digest,
            leader: self.leader.map(|p| p.index),
            participants: self.participants.len(),
            via,
            balance,
            conserved,
        });

        if self.phase == Phase::Trading {
            if self.withdraw == WithdrawStage::Wanted {
                self.send_withdraw_request(cx);
            }
            for (r, x) in std::mem::take(&mut self.retry) {
                let _ = self.transfer(cx, r, x, false);
            }
            if let Some((Deviation::Overspend { extra }, _)) =
                self.behavior
                    .fire(DeviationKind::Overspend, self.epoch, self.era)
            {
                self.overspend(cx, extra, 0);
            }
        }

        for (from, msg) in std::mem::take(&mut self.buffered) {
            self.on_message(cx, from, msg);
        }
    }

    // ---- messages -------------------------------------------------------

    fn on_wire(&mut self, cx: &mut Cx, from: ParticipantId, wire: Wire) {
        let msg = match wire {
            Wire::Msg(m) => m,
            Wire::Raw(bytes) => match decode_from::<ProtocolMessage>(&bytes) {
                Ok(m) => m,
                Err(_) => {
                    cx.event(NodeEvent::MalformedIgnored { from: from.index });
                    return;
                }
            },
        };
        self.on_message(cx, from, msg);
    }

    fn buffer(&mut self, from: ParticipantId, msg: ProtocolMessage) {
        if self.buffered.len() < BUFFER_CAP && msg.epoch().0 <= self.epoch.0 + 2 {
            self.buffered.push((from, msg));
        }
    }

    fn on_message(&mut self, cx: &mut Cx, from: ParticipantId, msg: ProtocolMessage) {
        if matches!(
            self.phase,
            Phase::Exited | Phase::Evicted | Phase::Withdrawing
        ) {
            return;
        }
        let kind = msg.kind();
        if kind.is_consensus() {
            if self.phase == Phase::Idle {
                return self.on_newcomer(cx, from, msg);
            }
            let expected = self.epoch.next();
            if msg.epoch() > expected {
                return self.buffer(from, msg);
            }
            if msg.epoch() < expected {
                return;
            }
        } else {
            if self.phase == Phase::Idle {
                return;
            }
            if msg.epoch() > self.epoch {
                return self.buffer(from, msg);
            }
            if msg.epoch() < self.epoch {
                if let (MessageKind::TxComplete, true) = (kind, self.is_leader()) {
                    if let ProtocolMessage::TxComplete(tx) = &msg {
                        cx.event(NodeEvent::RecordRejected {
                            epoch: tx.epoch,
                            tx_id: tx.tx_id,
                            reason: RecordError::StaleEpoch,
                        });
                    }
                }
                return;
            }
        }
        match msg {
            ProtocolMessage::TxIdReq(r) => self.on_tx_id_req(cx, from, r),
            ProtocolMessage::TxIdReply(r) => self.on_tx_id_reply(cx, from, r),
            ProtocolMessage::TxReq(tx) => self.on_tx_req(cx, from, tx),
            ProtocolMessage::TxReply(r) => self.on_tx_reply(cx, from, r),
            ProtocolMessage::TxComplete(tx) => self.on_tx_complete(cx, tx),
            ProtocolMessage::EpochState(s) => self.on_proposal(cx, from, s),
            ProtocolMessage::EpochStateReply(r) => self.on_state_reply(cx, from, r),
            ProtocolMessage::EpochStateConf(s) => self.on_conf(cx, s),
            ProtocolMessage::WithdrawReq(w) => self.on_withdraw_req(cx, from, w),
        }
    }

    fn on_tx_id_req(&mut self, cx: &mut Cx, from: ParticipantId, r: TxIdRequest) {
        if !self.is_leader() || self.book.is_none() || from != r.sender {
            return;
        }
        let payload = TxIdRequest::payload(r.epoch, &r.sender, r.amount, r.nonce);
        if !self.verify(cx, &r.sender.account, &payload, &r.sig) {
            return;
        }
        if self
            .behavior
            .fire(DeviationKind::RefuseTxId, self.epoch, self.era)
            .is_some()
        {
            cx.event(NodeEvent::TxIdWithheld {
                epoch: self.epoch,
                sender: r.sender.index,
                nonce: r.nonce,
            });
            return;
        }
        let unchecked = self.behavior.accomplices.contains(&r.sender.account)
            && self
                .behavior
                .fire(DeviationKind::ColludeIssueId, self.epoch, self.era)
                .is_some();
        let book = self.book.as_mut().expect("leader book");
        match book.issue(&r.sender, r.amount, r.nonce, unchecked) {
            Ok(tx_id) => {
                let leader_sig = self.sign(cx, &leader_payload(self.epoch, tx_id, &r.sender));
                cx.send(
                    r.sender,
                    ProtocolMessage::TxIdReply(TxIdReply::Approved {
                        epoch: self.epoch,
                        nonce: r.nonce,
                        tx_id,
                        leader_sig,
                    }),
                );
                cx.event(NodeEvent::TxIdIssued {
                    epoch: self.epoch,
                    tx_id,
                    sender: r.sender.index,
                    nonce: r.nonce,
                    amount: r.amount,
                });
            }
            Err(reason) => {
                let sig = self.sign(cx, &rejection_payload(self.epoch, r.nonce, reason));
                cx.send(
                    r.sender,
                    ProtocolMessage::TxIdReply(TxIdReply::Rejected {
                        epoch: self.epoch,
                        nonce: r.nonce,
                        reason,
                        sig,
                    }),
                );
                cx.event(NodeEvent::TxIdRejected {
                    epoch: self.epoch,
                    sender: r.sender.index,
                    nonce: r.nonce,
                    reason,
                });
            }
        }
    }

    fn on_tx_id_reply(&mut self, cx: &mut Cx, from: ParticipantId, r: TxIdReply) {
        let (Some(me), Some(leader)) = (self.me, self.leader) else {
            return;
        };
        if from != leader {
            return;
        }
        match r {
            TxIdReply::Approved {
                nonce,
                tx_id,
                leader_sig,
                ..
            } => {
                let Some(flow) = self.flows.get(&nonce) else {
                    return;
                };
                if !matches!(flow.stage, FlowStage::AwaitingId) {
                    return;
                }
                let (receiver, amount) = (flow.receiver, flow.amount);
                if !self.verify(
                    cx,
                    &leader.account,
                    &leader_payload(self.epoch, tx_id, &me),
                    &leader_sig,
                ) {
                    return;
                }
                let tuple = tuple_payload(self.epoch, tx_id, &me, &receiver, amount);
                let sender_sig = self.sign(cx, &tuple);
                let tx = Transaction {
                    epoch: self.epoch,
                    tx_id,
                    sender: me,
                    receiver,
                    amount,
                    leader_sig,
                    sender_sig,
                    receiver_sig: None,
                };
                self.flows.get_mut(&nonce).expect("present").stage =
                    FlowStage::AwaitingCountersign(tx.clone());
                cx.send(receiver, ProtocolMessage::TxReq(tx));
            }
            TxIdReply::Rejected {
                nonce, reason, sig, ..
            } => {
                if !self.flows.contains_key(&nonce)
                    || !self.verify(
                        cx,
                        &leader.account,
                        &rejection_payload(self.epoch, nonce, reason),
                        &sig,
                    )
                {
                    return;
                }
                let flow = self.flows.remove(&nonce).expect("present");
                self.tried = self.tried.saturating_sub(flow.amount);
                cx.event(NodeEvent::TransferRejected {
                    epoch: self.epoch,
                    nonce,
                    reason,
                });
            }
        }
    }

    fn reject_tx(&mut self, cx: &mut Cx, to: ParticipantId, tx_id: TxId, reason: RejectReason) {
        let sig = self.sign(cx, &rejection_payload(self.epoch, tx_id.0, reason));
        cx.send(
            to,
            ProtocolMessage::TxReply(TxReply::Rejected {
                epoch: self.epoch,
                tx_id,
                reason,
                sig,
            }),
        );
    }

    fn on_tx_req(&mut self, cx: &mut Cx, from: ParticipantId, tx: Transaction) {
        let (Some(me), Some(leader)) = (self.me, self.leader) else {
            return;
        };
        if tx.receiver != me || from != tx.sender {
            return;
        }
        if let Some(known) = self.my_txs.get(&tx.tx_id) {
            if known.sender == tx.sender && known.tuple_payload() == tx.tuple_payload() {
                let known = known.clone();
                cx.send(
                    from,
                    ProtocolMessage::TxReply(TxReply::Countersigned(known)),
                );
            }
            return;
        }
        let reason = if self.phase != Phase::Trading {
            Some(RejectReason::IssuingClosed)
        } else if !tx.is_well_formed() || !self.participants.contains_key(&tx.sender) {
            Some(RejectReason::Malformed)
        } else if !self.verify(cx, &leader.account, &tx.leader_payload(), &tx.leader_sig) {
            Some(RejectReason::ForgedTxId)
        } else if !self.verify(cx, &tx.sender.account, &tx.tuple_payload(), &tx.sender_sig) {
            Some(RejectReason::BadSignature)
        } else {
            None
        };
        if let Some(reason) = reason {
            return self.reject_tx(cx, from, tx.tx_id, reason);
        }
        let mut tx = tx;
        tx.receiver_sig = Some(self.sign(cx, &tx.tuple_payload()));
        self.my_txs.insert(tx.tx_id, tx.clone());
        cx.event(NodeEvent::Countersigned {
            epoch: self.epoch,
            tx_id: tx.tx_id,
            sender: tx.sender.index,
        });
        cx.send(from, ProtocolMessage::TxReply(TxReply::Countersigned(tx)));
    }

    fn on_tx_reply(&mut self, cx: &mut Cx, from: ParticipantId, r: TxReply) {
        let Some(leader) = self.leader else {
            return;
        };
        let tx_id = match &r {
            TxReply::Countersigned(tx) => tx.tx_id,
            TxReply::Rejected { tx_id, .. } => *tx_id,
        };
        let Some((&nonce, pending)) = self.flows.iter().find_map(|(n, f)| match &f.stage {
            FlowStage::AwaitingCountersign(t) if t.tx_id == tx_id => Some((n, t)),
            _ => None,
        }) else {
            return;
        };
        if from != pending.receiver {
            return;
        }
        let pending = pending.clone();
        match r {
            TxReply::Countersigned(tx) => {
                let Some(rsig) = &tx.receiver_sig else {
                    return;
                };
                let same = Transaction {
                    receiver_sig: None,
                    ..tx.clone()
                } == pending;
                if !same
                    || !self.verify(
                        cx,
                        &pending.receiver.account,
                        &pending.tuple_payload(),
                        rsig,
                    )
                {
                    return;
                }
                self.flows.remove(&nonce);
                self.my_txs.insert(tx.tx_id, tx.clone());
                cx.event(NodeEvent::TxCompleteSent {
                    epoch: self.epoch,
                    tx_id,
                    nonce,
                });
                cx.send(leader, ProtocolMessage::TxComplete(tx));
            }
            TxReply::Rejected { reason, sig, .. } => {
                if !self.verify(
                    cx,
                    &from.account,
                    &rejection_payload(self.epoch, tx_id.0, reason),
                    &sig,
                ) {
                    return;
                }
                self.flows.remove(&nonce);
                cx.event(NodeEvent::TransferRejected {
                    epoch: self.epoch,
                    nonce,
                    reason,
                });
            }
        }
    }

    fn on_tx_complete(&mut self, cx: &mut Cx, tx: Transaction) {
        if !self.is_leader() {
            return;
        }
        let (Some(me), Some(book)) = (self.me, self.book.as_mut()) else {
            return;
        };
        cx.fx.ops += 3;
        match book.record(&tx, &self.ring, &me) {
            Ok(nonce) => cx.event(NodeEvent::TransferRecorded {
                epoch: tx.epoch,
                tx_id: tx.tx_id,
                sender: tx.sender.index,
                receiver: tx.receiver.index,
                nonce,
                amount: tx.amount,
            }),
            Err(reason) => cx.event(NodeEvent::RecordRejected {
                epoch: tx.epoch,
                tx_id: tx.tx_id,
                reason,
            }),
        }
    }

    fn on_withdraw_req(&mut self, cx: &mut Cx, from: ParticipantId, w: WithdrawRequest) {
        if !self.is_leader() || from != w.participant {
            return;
        }
        if !self.verify(
            cx,
            &from.account,
            &WithdrawRequest::payload(w.epoch, &from),
            &w.sig,
        ) {
            return;
        }
        if let Some(book) = self.book.as_mut() {
            book.request_withdrawal(&from);
        }
    }

    // ---- consensus ------------------------------------------------------

    fn build_state(&mut self, cx: &mut Cx) {
        let Some(me) = self.me else {
            return;
        };
        if !self.is_leader() || self.phase != Phase::Trading {
            return;
        }
        let Some(book) = self.book.as_mut() else {
            return;
        };
        book.close();
        let mut faults = BuildFaults::default();
        let (epoch, era) = (self.epoch, self.era);
        if self
            .behavior
            .fire(DeviationKind::ColludeIssueId, epoch, era)
            .is_some()
        {
            faults.clamp_overspend = true;
        }
        if let Some((Deviation::TamperBalance { delta, .. }, Some(target))) =
            self.behavior.fire(DeviationKind::TamperBalance, epoch, era)
        {
            if let Some(t) = self.participants.keys().find(|p| p.account == target) {
                faults.tamper = Some((*t, Coins(delta), me));
            }
        }
        if self
            .behavior
            .fire(DeviationKind::OmitTx, epoch, era)
            .is_some()
        {
            faults.omit_tx_not_involving = Some(me);
        }
        let enrollments: Balances = cx
            .chain
            .joins
            .iter()
            .skip(self.watermark as usize)
            .map(|j| (j.participant, j.deposit))
            .collect();
        self.phase = Phase::Consensus;
        let book = self.book.as_ref().expect("leader book");
        let mut state = match book.build(enrollments, &faults) {
            Ok(s) => s,
            Err(_) => {
                cx.event(NodeEvent::BuildFailed {
                    epoch: epoch.next(),
                });
                return;
            }
        };
        let digest = state.signing_digest();
        let sig = self.sign(cx, &digest);
        state.signatures.insert(me, sig);
        let required = state.required_signers();
        let withheld = self
            .behavior
            .fire(DeviationKind::WithholdEpochState, epoch, era)
            .is_some();
        cx.event(NodeEvent::ConsensusStarted {
            epoch: state.epoch,
            digest,
            signers: required.len(),
            withheld,
        });
        if withheld {
            return;
        }
        let proposal = Arc::new(state.clone());
        for p in &required {
            cx.send(*p, ProtocolMessage::EpochState(proposal.clone()));
        }
        self.collecting = Some(Collecting {
            state,
            digest,
            required,
            done: false,
        });
        self.timer(
            cx,
            TimerKind::CollectTimeout,
            cx.now + self.cfg.collect_timeout,
        );
    }

    /// Member-side checks on a proposed `State(e+1)`. Returns the join
    /// watermark after the state's enrollments.
    fn check_proposal(&self, cx: &Cx, state: &EpochState) -> Result<u64, RefuseReason> {
        let me = self.me.ok_or(RefuseReason::MembershipMismatch)?;
        if state.epoch != self.epoch.next() {
            return Err(RefuseReason::EpochMismatch);
        }
        if !state.tx_roots.keys().eq(self.participants.keys()) {
            return Err(RefuseReason::MembershipMismatch);
        }
        let mut wm = self.watermark;
        for (p, c) in &state.enrollments {
            let join = cx
                .chain
                .joins
                .get(wm as usize)
                .ok_or(RefuseReason::MembershipMismatch)?;
            if join.participant != *p || self.participants.contains_key(p) {
                return Err(RefuseReason::MembershipMismatch);
            }
            if join.deposit != *c || state.balances.get(p) != Some(c) {
                return Err(RefuseReason::DepositMismatch);
            }
            wm += 1;
        }
        if !state
            .withdrawals
            .keys()
            .all(|p| self.participants.contains_key(p))
        {
            return Err(RefuseReason::MembershipMismatch);
        }
        let expected: BTreeSet<&ParticipantId> = self
            .participants
            .keys()
            .filter(|p| !state.withdrawals.contains_key(p))
            .chain(state.enrollments.keys())
            .collect();
        if !state.balances.keys().eq(expected) {
            return Err(RefuseReason::MembershipMismatch);
        }
        let after = state
            .total_balance()
            .and_then(|b| b.checked_add(state.total_withdrawals()?));
        let before = Coins::sum(self.participants.values().copied())
            .and_then(|b| b.checked_add(Coins::sum(state.enrollments.values().copied())?));
        if after.is_err() || after != before {
            return Err(RefuseReason::DepositMismatch);
        }
        let mut mine = self.participants[&me].0 as i128;
        for tx in self.my_txs.values() {
            if tx.sender == me {
                mine -= tx.amount.0 as i128;
            }
            if tx.receiver == me {
                mine += tx.amount.0 as i128;
            }
        }
        let claimed = match state.withdrawals.get(&me) {
            Some(w) if self.withdraw == WithdrawStage::Wanted => *w,
            Some(_) => return Err(RefuseReason::MembershipMismatch),
            None => *state
                .balances
                .get(&me)
                .ok_or(RefuseReason::MembershipMismatch)?,
        };
        if claimed.0 as i128 != mine {
            return Err(RefuseReason::BalanceMismatch);
        }
        let root = own_root(&self.my_txs).map_err(|_| RefuseReason::MerkleMismatch)?;
        if state.tx_roots.get(&me) != Some(&root) {
            return Err(RefuseReason::MerkleMismatch);
        }
        Ok(wm)
    }

    fn on_proposal(&mut self, cx: &mut Cx, from: ParticipantId, state: Arc<EpochState>) {
        let (Some(me), Some(leader)) = (self.me, self.leader) else {
            return;
        };
        if from != leader || !matches!(self.phase, Phase::Trading | Phase::Consensus) {
            return;
        }
        let digest = state.signing_digest();
        if self.responded.is_some() {
            return;
        }
        let Some(lsig) = state.signatures.get(&leader) else {
            return;
        };
        if !self.verify(cx, &leader.account, &digest, lsig) {
            return;
        }
        self.responded = Some(digest);
        self.phase = Phase::Consensus;
        if from != me
            && self
                .behavior
                .fire(DeviationKind::RefuseSign, self.epoch, self.era)
                .is_some()
        {
            cx.event(NodeEvent::SignatureWithheld {
                epoch: state.epoch,
                digest,
            });
            return;
        }
        let verdict = if from == me {
            Ok(self.watermark + state.enrollments.len() as u64)
        } else {
            self.check_proposal(cx, &state)
        };
        match verdict {
            Ok(wm) => {
                self.watermarks.insert(digest, wm);
                let sig = self.sign(cx, &digest);
                let own = state
                    .balances
                    .get(&me)
                    .or_else(|| state.withdrawals.get(&me))
                    .copied()
                    .unwrap_or_default();
                self.last_signed = Some(digest);
                self.entitlement = own;
                cx.event(NodeEvent::StateSigned {
                    epoch: state.epoch,
                    digest,
                    balance: own,
                });
                cx.send(
                    from,
                    ProtocolMessage::EpochStateReply(StateReply::Signed {
                        epoch: state.epoch,
                        digest,
                        sig,
                    }),
                );
            }
            Err(reason) => {
                let sig = self.sign(cx, &StateReply::refusal_payload(&digest, reason));
                cx.event(NodeEvent::StateRefused {
                    epoch: state.epoch,
                    digest,
                    reason,
                });
                cx.send(
                    from,
                    ProtocolMessage::EpochStateReply(StateReply::Refused {
                        epoch: state.epoch,
                        digest,
                        reason,
                        sig,
                    }),
                );
                self.challenge(cx);
            }
        }
    }

    /// Proposal or confirmation reaching a node that is not yet a
    /// participant: accepted only if it enrolls this node with its deposit.
    fn on_newcomer(&mut self, cx: &mut Cx, from: ParticipantId, msg: ProtocolMessage) {
        let state = match &msg {
            ProtocolMessage::EpochState(s) | ProtocolMessage::EpochStateConf(s) => s.clone(),
            _ => return,
        };
        let Some((&pid, &deposit)) = state
            .enrollments
            .iter()
            .find(|(p, _)| p.account == self.account)
        else {
            return;
        };
        let join = cx.chain.joins.get(pid.index as usize);
        if join.map(|j| (j.participant, j.deposit)) != Some((pid, deposit))
            || self.join_deposit != Some(deposit)
            || state.balances.get(&pid) != Some(&deposit)
            || state.tx_roots.contains_key(&pid)
        {
            return;
        }
        let digest = state.signing_digest();
        match msg {
            ProtocolMessage::EpochState(_) => {
                if self.responded == Some(digest) {
                    return;
                }
                let Some(lsig) = state.signatures.get(&from) else {
                    return;
                };
                if !self.verify(cx, &from.account, &digest, lsig) {
                    return;
                }
                self.responded = Some(digest);
                self.me = Some(pid);
                let top = state
                    .enrollments
                    .keys()
                    .map(|p| p.index + 1)
                    .max()
                    .unwrap_or(0);
                self.watermarks.insert(digest, top);
                let sig = self.sign(cx, &digest);
                self.last_signed = Some(digest);
                self.entitlement = deposit;
                cx.event(NodeEvent::StateSigned {
                    epoch: state.epoch,
                    digest,
                    balance: deposit,
                });
                cx.send(
                    from,
                    ProtocolMessage::EpochStateReply(StateReply::Signed {
                        epoch: state.epoch,
                        digest,
                        sig,
                    }),
                );
            }
            _ => {
                cx.fx.ops += state.required_signers().len() as u32;
                if state.is_agreed(&self.ring) {
                    self.me = Some(pid);
                    self.join_deposit = None;
                    self.begin_epoch(cx, Checkpoint::new(state), Via::Confirmation);
                }
            }
        }
    }

    fn on_state_reply(&mut self, cx: &mut Cx, from: ParticipantId, reply: StateReply) {
        let Some(coll) = self.collecting.as_ref() else {
            return;
        };
        if coll.done || reply.digest() != coll.digest || !coll.required.contains(&from) {
            return;
        }
        let digest = coll.digest;
        match reply {
            StateReply::Signed { sig, .. } => {
                if coll.state.signatures.contains_key(&from) {
                    return;
                }
                if !self.verify(cx, &from.account, &digest, &sig) {
                    return;
                }
                let coll = self.collecting.as_mut().expect("present");
                coll.state.signatures.insert(from, sig);
                if coll.state.signatures.len() == coll.required.len() {
                    coll.done = true;
                    let conf = Arc::new(coll.state.clone());
                    let required: Vec<ParticipantId> = coll.required.iter().copied().collect();
                    cx.event(NodeEvent::StateFinalized {
                        epoch: conf.epoch,
                        digest,
                    });
                    if self
                        .best_agreed
                        .as_ref()
                        .is_none_or(|b| b.epoch < conf.epoch)
                    {
                        self.best_agreed = Some(conf.clone());
                    }
                    for p in required {
                        cx.send(p, ProtocolMessage::EpochStateConf(conf.clone()));
                    }
                }
            }
            StateReply::Refused {
                reason, sig, epoch, ..
            } => {
                if self.verify(
                    cx,
                    &from.account,
                    &StateReply::refusal_payload(&digest, reason),
                    &sig,
                ) {
                    cx.event(NodeEvent::RefusalReceived {
                        epoch,
                        from: from.index,
                        reason,
                    });
                }
            }
        }
    }

    fn on_conf(&mut self, cx: &mut Cx, state: Arc<EpochState>) {
        let Some(me) = self.me else {
            return;
        };
        if !matches!(
            self.phase,
            Phase::Trading | Phase::Consensus | Phase::Challenged
        ) {
            return;
        }
        let required = state.required_signers();
        if !required.contains(&me) {
            return;
        }
        cx.fx.ops += required.len() as u32;
        if !state.is_agreed(&self.ring) {
            return;
        }
        if !self.watermarks.contains_key(&state.signing_digest()) {
            let wm = self.watermark + state.enrollments.len() as u64;
            self.watermarks.insert(state.signing_digest(), wm);
        }
        self.begin_epoch(cx, Checkpoint::new(state), Via::Confirmation);
    }

    // ---- chain ----------------------------------------------------------

    fn challenge(&mut self, cx: &mut Cx) {
        let Some(cp) = &self.checkpoint else {
            return;
        };
        if cx.chain.active.get(&self.account) != self.me.as_ref() {
            return;
        }
        let claimed = cp.epoch();
        let attached = (claimed > cx.chain.enforced.epoch() && cp.evicted.is_empty())
            .then(|| cp.state.clone());
        cx.call(ChainCall::OpenChallenge { claimed, attached });
        cx.event(NodeEvent::ChallengeSubmitted { claimed });
        self.phase = Phase::Challenged;
        self.timer(cx, TimerKind::ChainRetry, cx.now + self.cfg.chain_retry);
    }

    fn on_chain(&mut self, cx: &mut Cx, ev: ChainEvent) {
        match ev {
            ChainEvent::Joined { participant, .. } => {
                if participant.account == self.account
                    && matches!(self.phase, Phase::Idle | Phase::Exited)
                {
                    self.me = Some(participant);
                    self.phase = Phase::Idle;
                    self.withdraw = WithdrawStage::None;
                    cx.event(NodeEvent::Enrolled {
                        index: participant.index,
                    });
                }
            }
            ChainEvent::ChallengeOpened { challenged, .. } => {
                if let Some(best) = &self.best_agreed {
                    if best.epoch >= challenged && best.epoch > cx.chain.enforced.epoch() {
                        let state = best.clone();
                        cx.event(NodeEvent::AnswerSubmitted { epoch: state.epoch });
                        cx.call(ChainCall::AnswerChallenge { state });
                    }
                }
            }
            ChainEvent::ChallengeResolved {
                outcome,
                checkpoint,
            } => {
                if !self.follows(&checkpoint) {
                    return;
                }
                if checkpoint.epoch() > self.epoch {
                    self.begin_epoch(cx, checkpoint, Via::Challenge);
                } else if outcome == Resolution::RolledBack || self.phase == Phase::Challenged {
                    self.begin_epoch(cx, checkpoint, Via::Rollback);
                }
            }
            ChainEvent::IncompleteSubmitted { missing, .. } => {
                let (Some(me), Some(window)) = (self.me, &cx.chain.pending_incomplete) else {
                    return;
                };
                let digest = window.state.signing_digest();
                if missing.contains(&me) && self.last_signed == Some(digest) {
                    let signature = self.sign(cx, &digest);
                    cx.call(ChainCall::SubmitSignature { signature });
                }
            }
            ChainEvent::IncompleteResolved { checkpoint } => {
                if self.follows(&checkpoint)
                    && (checkpoint.epoch() > self.epoch || self.phase == Phase::Challenged)
                {
                    self.begin_epoch(cx, checkpoint, Via::Incomplete);
                }
            }
            ChainEvent::WithdrawInitiated {
                participant,
                unlock_block,
                ..
            } => {
                if participant.account == self.account {
                    let t = self.cfg.block_time;
                    let at = (unlock_block.saturating_sub(1) * t + t / 2).max(cx.now);
                    self.timer(cx, TimerKind::WithdrawConfirm, at);
                }
            }
            ChainEvent::WithdrawPaid {
                participant,
                amount,
            } => {
                if participant.account == self.account {
                    self.paid = self.paid.checked_add(amount).unwrap_or(self.paid);
                    self.entitlement = self.entitlement.saturating_sub(amount);
                    self.held = Coins::ZERO;
                    self.phase = Phase::Exited;
                    self.withdraw = WithdrawStage::None;
                    cx.event(NodeEvent::WithdrawPaid { amount });
                }
            }
            ChainEvent::StateEnforced { .. } | ChainEvent::SignatureSubmitted { .. } => {}
        }
    }

    /// Whether an enforced checkpoint concerns this node's hub membership.
    fn follows(&self, cp: &Checkpoint) -> bool {
        match self.phase {
            Phase::Trading | Phase::Consensus | Phase::Challenged => true,
            Phase::Idle => cp
                .state
                .balances
                .keys()
                .any(|p| p.account == self.account && Some(*p) == self.me),
            _ => false,
        }
    }

    fn on_receipt(
        &mut self,
        cx: &mut Cx,
        call: &'static str,
        result: Result<crate::chain::Accepted, Revert>,
    ) {
        if call == "withdraw_confirm" && result == Err(Revert::TooEarly) {
            self.timer(cx, TimerKind::WithdrawConfirm, cx.now + self.cfg.block_time);
        }
    }

    // ---- timers ---------------------------------------------------------

    fn on_timer(&mut self, cx: &mut Cx, tag: TimerTag) {
        if tag.kind == TimerKind::WithdrawConfirm {
            cx.call(ChainCall::WithdrawConfirm);
            return;
        }
        if tag.era != self.era {
            return;
        }
        match tag.kind {
            TimerKind::CloseIssuing => {
                if let Some(book) = self.book.as_mut() {
                    book.close_issuing();
                    cx.event(NodeEvent::IssuingClosed { epoch: self.epoch });
                }
            }
            TimerKind::BuildState => self.build_state(cx),
            TimerKind::CollectTimeout => self.collect_timeout(cx),
            TimerKind::ConsensusTimeout => {
                // A silent signer stays silent on chain as well.
                let silent = self
                    .behavior
                    .fire(DeviationKind::RefuseSign, self.epoch, self.era)
                    .is_some();
                if matches!(self.phase, Phase::Trading | Phase::Consensus) && !silent {
                    self.challenge(cx);
                }
            }
            TimerKind::ChainRetry => {
                if self.phase == Phase::Challenged {
                    self.challenge(cx);
                }
            }
            TimerKind::Flow(nonce) => {
                if let Some(Flow {
                    stage: FlowStage::AwaitingId,
                    receiver,
                    amount,
                }) = self.flows.get(&nonce)
                {
                    let (receiver, amount) = (*receiver, *amount);
                    self.flows.remove(&nonce);
                    self.tried = self.tried.saturating_sub(amount);
                    if self.retry.len() < RETRY_CAP {
                        self.retry.push((receiver, amount));
                    }
                    cx.event(NodeEvent::TransferAbandoned {
                        epoch: self.epoch,
                        nonce,
                    });
                }
            }
            TimerKind::WithdrawConfirm => unreachable!("handled above"),
        }
    }

    fn collect_timeout(&mut self, cx: &mut Cx) {
        let Some(coll) = &self.collecting else {
            return;
        };
        if coll.done {
            return;
        }
        let Some(cp) = &self.checkpoint else {
            return;
        };
        let missing = coll.required.len() - coll.state.signatures.len();
        cx.event(NodeEvent::IncompleteSubmitted {
            epoch: coll.state.epoch,
            missing,
        });
        cx.call(ChainCall::SubmitIncomplete {
            state: Arc::new(coll.state.clone()),
            anchor: cp.state.clone(),
        });
        self.phase = Phase::Challenged;
        self.timer(cx, TimerKind::ChainRetry, cx.now + self.cfg.chain_retry);
    }

    // ---- workload -------------------------------------------------------

    fn on_workload(&mut self, cx: &mut Cx, w: Workload) {
        match w {
            Workload::Transfer { draw } => self.random_transfer(cx, draw),
            Workload::Join { deposit } => {
                if matches!(self.phase, Phase::Idle | Phase::Exited)
                    && !cx.chain.active.contains_key(&self.account)
                    && !cx.chain.evicted.contains_key(&self.account)
                    && self.join_deposit.is_none()
                {
                    self.join_deposit = Some(deposit);
                    cx.call(ChainCall::Join { deposit });
                }
            }
            Workload::Withdraw => {
                if self.phase == Phase::Trading && self.withdraw == WithdrawStage::None {
                    self.withdraw = WithdrawStage::Wanted;
                    self.send_withdraw_request(cx);
                }
            }
        }
    }

    fn send_withdraw_request(&mut self, cx: &mut Cx) {
        let (Some(me), Some(leader)) = (self.me, self.leader) else {
            return;
        };
        let sig = self.sign(cx, &WithdrawRequest::payload(self.epoch, &me));
        cx.send(
            leader,
            ProtocolMessage::WithdrawReq(WithdrawRequest {
                epoch: self.epoch,
                participant: me,
                sig,
            }),
        );
        cx.event(NodeEvent::WithdrawRequested { epoch: self.epoch });
    }

    fn issuing_window_open(&self, now: Time) -> bool {
        let margin = if self.is_leader() {
            0
        } else {
            self.cfg.request_margin
        };
        now + margin < self.epoch_start + self.cfg.epoch_duration.saturating_sub(self.cfg.grace)
    }

    fn pick_receiver(&self, draw: u64) -> Option<ParticipantId> {
        let me = self.me?;
        let others: Vec<&ParticipantId> = self.participants.keys().filter(|p| **p != me).collect();
        if others.is_empty() {
            return None;
        }
        Some(*others[(draw % others.len() as u64) as usize])
    }

    fn random_transfer(&mut self, cx: &mut Cx, draw: u64) {
        if self.phase != Phase::Trading {
            return;
        }
        let (epoch, era) = (self.epoch, self.era);
        let open = self.issuing_window_open(cx.now);
        if open {
            if let Some((Deviation::Overspend { extra }, _)) =
                self.behavior.fire(DeviationKind::Overspend, epoch, era)
            {
                return self.overspend(cx, extra, draw);
            }
        }
        if let Some((Deviation::ArbitraryMessage { bytes }, _)) =
            self.behavior
                .fire(DeviationKind::ArbitraryMessage, epoch, era)
        {
            self.garbage(cx, &bytes);
        }
        if self
            .behavior
            .fire(DeviationKind::Replay, epoch, era)
            .is_some()
        {
            if let Some(tx) = self
                .my_txs
                .values()
                .rev()
                .chain(self.prev_txs.iter().rev())
                .find(|t| t.receiver_sig.is_some())
                .cloned()
            {
                if let Some(leader) = self.leader {
                    cx.event(NodeEvent::ReplaySent {
                        epoch: tx.epoch,
                        tx_id: tx.tx_id,
                    });
                    cx.send(leader, ProtocolMessage::TxComplete(tx));
                    return;
                }
            }
        }
        if !open || self.withdraw != WithdrawStage::None {
            return;
        }
        let spendable = self.spendable().0.min(self.cfg.max_amount);
        let Some(receiver) = self.pick_receiver(draw) else {
            return;
        };
        if spendable == 0 {
            return;
        }
        let amount = Coins(1 + (draw >> 32) % spendable);
        let _ = self.transfer(cx, receiver, amount, false);
    }

    fn overspend(&mut self, cx: &mut Cx, extra: u64, draw: u64) {
        let Some(receiver) = self.pick_receiver(draw) else {
            return;
        };
        let amount = Coins(self.balance().unwrap_or_default().0.saturating_add(extra));
        let _ = self.transfer(cx, receiver, amount, true);
    }

    fn garbage(&mut self, cx: &mut Cx, hex_bytes: &str) {
        let bytes = match hex::decode(hex_bytes) {
            Ok(b) if !b.is_empty() => b,
            _ => {
                let len = self.rng.gen_range(1..96);
                (0..len).map(|_| self.rng.gen()).collect()
            }
        };
        let Some(me) = self.me else {
            return;
        };
        for p in self.participants.keys().filter(|p| **p != me) {
            cx.fx.actions.push(Action::Send {
                to: *p,
                wire: Wire::Raw(bytes.clone()),
            });
        }
        cx.event(NodeEvent::GarbageSent { bytes: bytes.len() });
    }

    fn transfer(
        &mut self,
        cx: &mut Cx,
        receiver: ParticipantId,
        amount: Coins,
        forced: bool,
    ) -> Result<(), TransferError> {
        let (Some(me), Some(leader)) = (self.me, self.leader) else {
            return Err(TransferError::NotTrading);
        };
        if self.phase != Phase::Trading {
            return Err(TransferError::NotTrading);
        }
        if receiver == me || !self.participants.contains_key(&receiver) {
            return Err(TransferError::UnknownReceiver);
        }
        if amount.is_zero() {
            return Err(TransferError::ZeroAmount);
        }
        if self.withdraw != WithdrawStage::None {
            return Err(TransferError::Withdrawing);
        }
        if !forced && amount > self.spendable() {
            return Err(TransferError::Overspend);
        }
        let nonce = self.next_nonce;
        self.next_nonce += 1;
        self.tried = Coins(self.tried.0.saturating_add(amount.0));
        self.flows.insert(
            nonce,
            Flow {
                receiver,
                amount,
                stage: FlowStage::AwaitingId,
            },
        );
        let sig = self.sign(cx, &TxIdRequest::payload(self.epoch, &me, amount, nonce));
        cx.event(NodeEvent::TransferRequested {
            epoch: self.epoch,
            sender: me.index,
            nonce,
            receiver: receiver.index,
            amount,
            forced,
        });
        cx.send(
            leader,
            ProtocolMessage::TxIdReq(TxIdRequest {
                epoch: self.epoch,
                sender: me,
                amount,
                nonce,
                sig,
            }),
        );
        self.timer(cx, TimerKind::Flow(nonce), cx.now + self.cfg.flow_timeout);
        Ok(())
    }
}
