use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    next_balances, tmt_root_or_empty, Balances, Coins, Digest, Epoch, EpochState, Keyring,
    ParticipantId, ProtocolError, Transaction, TxId,
};

use super::message::RejectReason;

/// Why the leader refused to record a completed transfer.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordError {
    #[error("replay")]
    Replay,
    #[error("unissued id")]
    UnissuedId,
    #[error("invalid")]
    Invalid,
    #[error("stale epoch")]
    StaleEpoch,
    #[error("book closed")]
    Closed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Issued {
    sender: ParticipantId,
    amount: Coins,
    nonce: u64,
}

/// Deviations a corrupted leader applies when building the next state.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildFaults {
    /// Roll up overspent balances by clamping at zero instead of failing.
    pub clamp_overspend: bool,
    /// Move up to `delta` coins from `target` to `beneficiary`.
    pub tamper: Option<(ParticipantId, Coins, ParticipantId)>,
    /// Omit the first recorded transfer not involving this participant from
    /// the merkle roots, leaving balances untouched.
    pub omit_tx_not_involving: Option<ParticipantId>,
}

/// The leader's books for one epoch: initial balances `B`, sent `S`, tried
/// `τ`, received `R`, withdrawal requests, and recorded transfers.
#[derive(Clone, Debug)]
pub struct LeaderBook {
    pub epoch: Epoch,
    pub initial: Balances,
    pub sent: Balances,
    pub tried: Balances,
    pub received: Balances,
    pub withdrawals: BTreeSet<ParticipantId>,
    next_tx_id: u64,
    issued: BTreeMap<TxId, Issued>,
    completed: BTreeMap<TxId, Transaction>,
    issuing_open: bool,
    recording_open: bool,
}

impl LeaderBook {
    pub fn new(epoch: Epoch, initial: Balances) -> Self {
        LeaderBook {
            epoch,
            initial,
            sent: Balances::new(),
            tried: Balances::new(),
            received: Balances::new(),
            withdrawals: BTreeSet::new(),
            next_tx_id: 1,
            issued: BTreeMap::new(),
            completed: BTreeMap::new(),
            issuing_open: true,
            recording_open: true,
        }
    }

    fn get(map: &Balances, p: &ParticipantId) -> Coins {
        map.get(p).copied().unwrap_or_default()
    }

    pub fn spendable(&self, p: &ParticipantId) -> Coins {
        Self::get(&self.initial, p).saturating_sub(Self::get(&self.tried, p))
    }

    pub fn is_open(&self) -> bool {
        self.issuing_open
    }

    pub fn close_issuing(&mut self) {
        self.issuing_open = false;
    }

    /// Freezes the book once the next state is built.
    pub fn close(&mut self) {
        self.issuing_open = false;
        self.recording_open = false;
    }

    /// Overspend gate: approve iff `x <= B_i - τ_i`. Receipts never count.
    /// `unchecked` skips the gate, as a colluding leader does.
    pub fn issue(
        &mut self,
        sender: &ParticipantId,
        amount: Coins,
        nonce: u64,
        unchecked: bool,
    ) -> Result<TxId, RejectReason> {
        if !self.issuing_open {
            return Err(RejectReason::IssuingClosed);
        }
        if !self.initial.contains_key(sender) {
            return Err(RejectReason::UnknownParticipant);
        }
        if self.withdrawals.contains(sender) {
            return Err(RejectReason::Withdrawing);
        }
        if amount.is_zero() {
            return Err(RejectReason::Malformed);
        }
        if !unchecked && amount > self.spendable(sender) {
            return Err(RejectReason::Overspend);
        }
        let tried = Self::get(&self.tried, sender)
            .checked_add(amount)
            .map_err(|_| RejectReason::Overspend)?;
        self.tried.insert(*sender, tried);
        let id = TxId(self.next_tx_id);
        self.next_tx_id += 1;
        self.issued.insert(
            id,
            Issued {
                sender: *sender,
                amount,
                nonce,
            },
        );
        Ok(id)
    }

    /// Records a complete transfer: `S_i += x`, `R_j += x`. Returns the
    /// sender's request nonce.
    pub fn record(
        &mut self,
        tx: &Transaction,
        ring: &Keyring,
        leader: &ParticipantId,
    ) -> Result<u64, RecordError> {
        if tx.epoch != self.epoch {
            return Err(RecordError::StaleEpoch);
        }
        if !self.recording_open {
            return Err(RecordError::Closed);
        }
        if self.completed.contains_key(&tx.tx_id) {
            return Err(RecordError::Replay);
        }
        let issued = self.issued.get(&tx.tx_id).ok_or(RecordError::UnissuedId)?;
        let nonce = issued.nonce;
        if issued.sender != tx.sender
            || issued.amount != tx.amount
            || !self.initial.contains_key(&tx.receiver)
            || !tx.is_complete(ring, leader)
        {
            return Err(RecordError::Invalid);
        }
        let s = Self::get(&self.sent, &tx.sender)
            .checked_add(tx.amount)
            .map_err(|_| RecordError::Invalid)?;
        let r = Self::get(&self.received, &tx.receiver)
            .checked_add(tx.amount)
            .map_err(|_| RecordError::Invalid)?;
        self.sent.insert(tx.sender, s);
        self.received.insert(tx.receiver, r);
        self.completed.insert(tx.tx_id, tx.clone());
        Ok(nonce)
    }

    pub fn request_withdrawal(&mut self, p: &ParticipantId) -> bool {
        if self.recording_open && self.initial.contains_key(p) {
            self.withdrawals.insert(*p);
            true
        } else {
            false
        }
    }

    pub fn completed(&self) -> impl Iterator<Item = &Transaction> {
        self.completed.values()
    }

    pub fn completed_count(&self) -> usize {
        self.completed.len()
    }

    /// Transfers of `p` ordered by id, spending and receiving merged.
    pub fn transactions_of(&self, p: &ParticipantId) -> Vec<Transaction> {
        self.completed
            .values()
            .filter(|tx| tx.involves(p))
            .cloned()
            .collect()
    }

    /// Table invariants: `S_i <= τ_i <= B_i` and `Σ S == Σ R`.
    pub fn invariants_hold(&self) -> bool {
        let per_participant = self.initial.keys().all(|p| {
            let s = Self::get(&self.sent, p);
            let t = Self::get(&self.tried, p);
            s <= t && t <= Self::get(&self.initial, p)
        });
        let total_s = Coins::sum(self.sent.values().copied());
        let total_r = Coins::sum(self.received.values().copied());
        per_participant && total_s.is_ok() && total_s == total_r
    }

    /// Builds the unsigned `State(e+1)` from the book plus the newcomers in
    /// `enrollments`.
    pub fn build(
        &self,
        enrollments: Balances,
        faults: &BuildFaults,
    ) -> Result<EpochState, ProtocolError> {
        let mut balances = if faults.clamp_overspend {
            self.initial
                .iter()
                .map(|(p, b)| {
                    let v = b.0 as i128 - Self::get(&self.sent, p).0 as i128
                        + Self::get(&self.received, p).0 as i128;
                    (*p, Coins(v.clamp(0, u64::MAX as i128) as u64))
                })
                .collect()
        } else {
            next_balances(&self.initial, &self.sent, &self.received)?
        };
        if let Some((target, delta, to)) = &faults.tamper {
            if let (Some(t), true) = (balances.get(target).copied(), balances.contains_key(to)) {
                let moved = Coins(delta.0.min(t.0));
                balances.insert(*target, t.checked_sub(moved)?);
                let b = balances[to].checked_add(moved)?;
                balances.insert(*to, b);
            }
        }
        let omitted = faults.omit_tx_not_involving.and_then(|l| {
            self.completed
                .values()
                .find(|tx| !tx.involves(&l))
                .map(|tx| tx.tx_id)
        });
        let mut tx_roots = BTreeMap::new();
        for p in self.initial.keys() {
            let txs: Vec<Transaction> = self
                .completed
                .values()
                .filter(|tx| tx.involves(p) && Some(tx.tx_id) != omitted)
                .cloned()
                .collect();
            tx_roots.insert(*p, tmt_root_or_empty(&txs)?);
        }
        let mut withdrawals = Balances::new();
        for p in &self.withdrawals {
            if let Some(c) = balances.remove(p) {
                withdrawals.insert(*p, c);
            }
        }
        for (p, c) in &enrollments {
            balances.insert(*p, *c);
        }
        Ok(EpochState {
            epoch: self.epoch.next(),
            balances,
            tx_roots,
            enrollments,
            withdrawals,
            signatures: BTreeMap::new(),
        })
    }
}

/// Root over a node's own transfers of the epoch.
pub fn own_root(txs: &BTreeMap<TxId, Transaction>) -> Result<Digest, ProtocolError> {
    let list: Vec<Transaction> = txs.values().cloned().collect();
    tmt_root_or_empty(&list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{leader_payload, tuple_payload};
    use crate::protocol::{Account, KeyPair};

    struct Fixture {
        keys: Vec<KeyPair>,
        ids: Vec<ParticipantId>,
        ring: Keyring,
    }

    fn fixture(n: usize) -> Fixture {
        let keys: Vec<KeyPair> = (0..n as u64).map(|i| KeyPair::derive(11, i)).collect();
        let ids = keys
            .iter()
            .enumerate()
            .map(|(i, k)| ParticipantId::new(i as u64, k.account()))
            .collect();
        let ring = Keyring::new(&keys);
        Fixture { keys, ids, ring }
    }

    impl Fixture {
        fn book(&self, balances: &[u64]) -> LeaderBook {
            LeaderBook::new(
                Epoch(1),
                self.ids
                    .iter()
                    .zip(balances)
                    .map(|(p, b)| (*p, Coins(*b)))
                    .collect(),
            )
        }

        fn complete(&self, book: &LeaderBook, id: TxId, s: usize, r: usize, x: u64) -> Transaction {
            let (sender, receiver) = (self.ids[s], self.ids[r]);
            let tuple = tuple_payload(book.epoch, id, &sender, &receiver, Coins(x));
            Transaction {
                epoch: book.epoch,
                tx_id: id,
                sender,
                receiver,
                amount: Coins(x),
                leader_sig: self.keys[0].sign(&leader_payload(book.epoch, id, &sender)),
                sender_sig: self.keys[s].sign(&tuple),
                receiver_sig: Some(self.keys[r].sign(&tuple)),
            }
        }
    }

    #[test]
    fn gate_allows_equality_and_ignores_receipts() {
        let f = fixture(3);
        let mut book = f.book(&[100, 100, 100]);
        let leader = f.ids[0];
        let a = book.issue(&f.ids[1], Coins(70), 0, false).unwrap();
        assert_eq!(book.issue(&f.ids[1], Coins(30), 0, false), Ok(TxId(2)));
        assert_eq!(book.tried[&f.ids[1]], Coins(100));
        assert_eq!(a, TxId(1));
        // Receipts of 500 do not make 31 more coins spendable.
        let mut book = f.book(&[100, 600, 100]);
        book.issue(&f.ids[0], Coins(70), 0, false).unwrap();
        let id = book.issue(&f.ids[1], Coins(500), 0, false).unwrap();
        book.record(&f.complete(&book, id, 1, 0, 500), &f.ring, &leader)
            .unwrap();
        assert_eq!(book.received[&f.ids[0]], Coins(500));
        assert_eq!(
            book.issue(&f.ids[0], Coins(31), 0, false),
            Err(RejectReason::Overspend)
        );
        assert_eq!(book.issue(&f.ids[0], Coins(30), 0, false), Ok(TxId(3)));
    }

    #[test]
    fn concurrent_reservations_sum_to_balance() {
        let f = fixture(2);
        let mut book = f.book(&[100, 0]);
        assert!(book.issue(&f.ids[0], Coins(40), 0, false).is_ok());
        assert!(book.issue(&f.ids[0], Coins(60), 0, false).is_ok());
        assert_eq!(
            book.issue(&f.ids[0], Coins(1), 0, false),
            Err(RejectReason::Overspend)
        );
    }

    #[test]
    fn record_updates_columns_and_rejects_replay_and_unissued() {
        let f = fixture(3);
        let leader = f.ids[0];
        let mut book = f.book(&[100, 100, 100]);
        let id = book.issue(&f.ids[1], Coins(30), 0, false).unwrap();
        let tx = f.complete(&book, id, 1, 2, 30);
        book.record(&tx, &f.ring, &leader).unwrap();
        assert_eq!(book.sent[&f.ids[1]], Coins(30));
        assert_eq!(book.received[&f.ids[2]], Coins(30));
        assert_eq!(book.record(&tx, &f.ring, &leader), Err(RecordError::Replay));
        let bogus = f.complete(&book, TxId(99), 1, 2, 5);
        assert_eq!(
            book.record(&bogus, &f.ring, &leader),
            Err(RecordError::UnissuedId)
        );
        // Completing with a larger amount than was reserved is invalid.
        let id = book.issue(&f.ids[2], Coins(1), 0, false).unwrap();
        let inflated = f.complete(&book, id, 2, 1, 90);
        assert_eq!(
            book.record(&inflated, &f.ring, &leader),
            Err(RecordError::Invalid)
        );
        assert!(book.invariants_hold());
    }

    #[test]
    fn build_rolls_up_roots_and_membership() {
        let f = fixture(4);
        let leader = f.ids[0];
        let mut book = f.book(&[100, 100, 100, 100]);
        let id = book.issue(&f.ids[1], Coins(10), 0, false).unwrap();
        book.record(&f.complete(&book, id, 1, 2, 10), &f.ring, &leader)
            .unwrap();
        assert!(book.request_withdrawal(&f.ids[3]));
        let newcomer = ParticipantId::new(4, Account([9; 20]));
        let s = book
            .build(
                [(newcomer, Coins(100))].into_iter().collect(),
                &BuildFaults::default(),
            )
            .unwrap();
        assert_eq!(s.epoch, Epoch(2));
        assert_eq!(s.balances[&f.ids[1]], Coins(90));
        assert_eq!(s.balances[&f.ids[2]], Coins(110));
        assert_eq!(s.withdrawals[&f.ids[3]], Coins(100));
        assert!(!s.balances.contains_key(&f.ids[3]));
        assert_eq!(s.balances[&newcomer], Coins(100));
        assert_eq!(s.tx_roots[&f.ids[0]], Digest::ZERO);
        assert_eq!(s.tx_roots[&f.ids[1]], s.tx_roots[&f.ids[2]]);
        assert_ne!(s.tx_roots[&f.ids[1]], Digest::ZERO);
        assert_eq!(s.required_signers().len(), 5);
    }

    #[test]
    fn replay_oracle_matches_book_for_random_completions() {
        use rand::{Rng, SeedableRng};
        let f = fixture(10);
        let leader = f.ids[0];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let start: Vec<u64> = (0..10).map(|_| rng.gen_range(500..2_000)).collect();
        let mut book = f.book(&start);
        let mut oracle: Vec<i128> = start.iter().map(|b| *b as i128).collect();
        let mut done = 0;
        for _ in 0..100_000 {
            if done == 500 {
                break;
            }
            let (s, r) = (rng.gen_range(0..10), rng.gen_range(0..10));
            let x = rng.gen_range(1..20);
            if s == r {
                continue;
            }
            let Ok(id) = book.issue(&f.ids[s], Coins(x), 0, false) else {
                continue;
            };
            book.record(&f.complete(&book, id, s, r, x), &f.ring, &leader)
                .unwrap();
            oracle[s] -= x as i128;
            oracle[r] += x as i128;
            done += 1;
        }
        assert_eq!(done, 500);
        assert!(book.invariants_hold());
        let s = book
            .build(Balances::new(), &BuildFaults::default())
            .unwrap();
        for (i, p) in f.ids.iter().enumerate() {
            assert_eq!(s.balances[p].0 as i128, oracle[i]);
        }
    }

    #[test]
    fn faults_change_the_built_state() {
        let f = fixture(3);
        let leader = f.ids[0];
        let mut book = f.book(&[100, 10, 100]);
        let id = book.issue(&f.ids[1], Coins(50), 0, true).unwrap();
        book.record(&f.complete(&book, id, 1, 2, 50), &f.ring, &leader)
            .unwrap();
        assert!(book
            .build(Balances::new(), &BuildFaults::default())
            .is_err());
        let clamped = book
            .build(
                Balances::new(),
                &BuildFaults {
                    clamp_overspend: true,
                    ..Default::default()
                },
            )
            .unwrap();
        assert_eq!(clamped.total_balance().unwrap(), Coins(250));
        let omit = book
            .build(
                Balances::new(),
                &BuildFaults {
                    clamp_overspend: true,
                    omit_tx_not_involving: Some(leader),
                    ..Default::default()
                },
            )
            .unwrap();
        assert_eq!(omit.tx_roots[&f.ids[2]], Digest::ZERO);
    }
}
