use std::collections::{BTreeMap, BTreeSet};

use super::crypto::{tagged_digest, Digest, KeyPair, Keyring, Signature};
use super::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use super::types::{Coins, Epoch, ParticipantId};
use super::ProtocolError;

pub type Balances = BTreeMap<ParticipantId, Coins>;

/// The per-epoch checkpoint `State(e) = (e, B(e), M(e-1), E(e), W(e))` plus
/// the participants' signatures over it.
///
/// `tx_roots` is keyed by the participants of the previous epoch, and
/// `enrollments` by the newcomers, so the state describes its own signer
/// set: every key of either map must sign.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct EpochState {
    pub epoch: Epoch,
    pub balances: Balances,
    pub tx_roots: BTreeMap<ParticipantId, Digest>,
    pub enrollments: Balances,
    pub withdrawals: Balances,
    pub signatures: BTreeMap<ParticipantId, Signature>,
}

impl EpochState {
    /// Genesis state from the initial contract deposits. Every depositor is
    /// both a participant and an enrollee, with the empty-set tx root.
    pub fn genesis(deposits: &Balances) -> Self {
        EpochState {
            epoch: Epoch(0),
            balances: deposits.clone(),
            tx_roots: deposits.keys().map(|p| (*p, Digest::ZERO)).collect(),
            enrollments: deposits.clone(),
            withdrawals: Balances::new(),
            signatures: BTreeMap::new(),
        }
    }

    /// Digest signed by participants: everything except the signatures.
    pub fn signing_digest(&self) -> Digest {
        let mut enc = Encoder::new();
        self.encode_unsigned(&mut enc);
        tagged_digest(b"garou/state", &RawBytes(enc.finish()))
    }

    fn encode_unsigned(&self, enc: &mut Encoder) {
        self.epoch.encode(enc);
        self.balances.encode(enc);
        self.tx_roots.encode(enc);
        self.enrollments.encode(enc);
        self.withdrawals.encode(enc);
    }

    pub fn sign(&self, keys: &KeyPair) -> Signature {
        keys.sign(&self.signing_digest())
    }

    /// Participants whose signatures make this state agreed.
    pub fn required_signers(&self) -> BTreeSet<ParticipantId> {
        self.tx_roots
            .keys()
            .chain(self.enrollments.keys())
            .copied()
            .collect()
    }

    /// Required signers without a valid signature.
    pub fn missing_signers(&self, ring: &Keyring) -> BTreeSet<ParticipantId> {
        let digest = self.signing_digest();
        self.required_signers()
            .into_iter()
            .filter(|p| {
                !self
                    .signatures
                    .get(p)
                    .is_some_and(|sig| ring.verify(&p.account, &digest, sig))
            })
            .collect()
    }

    /// Agreed iff every required signer has a valid signature.
    pub fn is_agreed(&self, ring: &Keyring) -> bool {
        !self.required_signers().is_empty() && self.missing_signers(ring).is_empty()
    }

    /// Drops signatures, leaving the proposal the leader broadcasts.
    pub fn unsigned(&self) -> EpochState {
        EpochState {
            signatures: BTreeMap::new(),
            ..self.clone()
        }
    }

    pub fn total_balance(&self) -> Result<Coins, ProtocolError> {
        Coins::sum(self.balances.values().copied())
    }

    pub fn total_withdrawals(&self) -> Result<Coins, ProtocolError> {
        Coins::sum(self.withdrawals.values().copied())
    }

    /// Initial balances in participant (join) order.
    pub fn ordered_balances(&self) -> Vec<Coins> {
        self.balances.values().copied().collect()
    }
}

struct RawBytes(Vec<u8>);

impl Encode for RawBytes {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_bytes(&self.0);
    }
}

impl Encode for EpochState {
    fn encode(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        self.signatures.encode(enc);
    }
}

impl Decode for EpochState {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(EpochState {
            epoch: dec.get()?,
            balances: dec.get()?,
            tx_roots: dec.get()?,
            enrollments: dec.get()?,
            withdrawals: dec.get()?,
            signatures: dec.get()?,
        })
    }
}

/// Balance rollup `B_i(e) = B_i(e-1) - S_i(e-1) + R_i(e-1)`.
///
/// Participants missing from `sent`/`received` count as zero. Entries for
/// unknown participants are an error.
pub fn next_balances(
    prev: &Balances,
    sent: &Balances,
    received: &Balances,
) -> Result<Balances, ProtocolError> {
    for p in sent.keys().chain(received.keys()) {
        if !prev.contains_key(p) {
            return Err(ProtocolError::UnknownParticipant(p.index));
        }
    }
    prev.iter()
        .map(|(p, b)| {
            let s = sent.get(p).copied().unwrap_or_default();
            let r = received.get(p).copied().unwrap_or_default();
            let after_send = b
                .checked_sub(s)
                .map_err(|_| ProtocolError::OverspendInRollup(p.index))?;
            Ok((*p, after_send.checked_add(r)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{canonical_encode, decode_from, Account};

    fn pid(i: u64) -> ParticipantId {
        ParticipantId::new(i, Account([i as u8; 20]))
    }

    fn balances(vals: &[(u64, u64)]) -> Balances {
        vals.iter().map(|(i, c)| (pid(*i), Coins(*c))).collect()
    }

    #[test]
    fn rollup_direct_substitution() {
        let prev = balances(&[(0, 50)]);
        let out = next_balances(&prev, &balances(&[(0, 20)]), &balances(&[(0, 30)])).unwrap();
        assert_eq!(out[&pid(0)], Coins(60));
    }

    #[test]
    fn rollup_identity() {
        let prev = balances(&[(0, 5), (1, 7), (2, 0)]);
        assert_eq!(
            next_balances(&prev, &Balances::new(), &Balances::new()).unwrap(),
            prev
        );
    }

    #[test]
    fn rollup_overspend_is_error() {
        let prev = balances(&[(0, 5), (1, 7)]);
        assert_eq!(
            next_balances(&prev, &balances(&[(0, 6)]), &balances(&[(1, 6)])),
            Err(ProtocolError::OverspendInRollup(0))
        );
        assert_eq!(
            next_balances(&prev, &balances(&[(9, 1)]), &Balances::new()),
            Err(ProtocolError::UnknownParticipant(9))
        );
    }

    #[test]
    fn signer_set_and_agreement() {
        let keys: Vec<_> = (0..3).map(|i| KeyPair::derive(5, i)).collect();
        let ring = Keyring::new(keys.iter());
        let ids: Vec<_> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| ParticipantId::new(i as u64, k.account()))
            .collect();
        let deposits: Balances = ids.iter().map(|p| (*p, Coins(10))).collect();
        let mut st = EpochState::genesis(&deposits);
        assert_eq!(st.required_signers().len(), 3);
        assert!(!st.is_agreed(&ring));
        for (p, k) in ids.iter().zip(&keys) {
            let sig = st.sign(k);
            st.signatures.insert(*p, sig);
        }
        assert!(st.is_agreed(&ring));
        // Signatures do not feed the signing digest.
        assert_eq!(st.signing_digest(), st.unsigned().signing_digest());
        assert_eq!(
            decode_from::<EpochState>(&canonical_encode(&st)).unwrap(),
            st
        );

        st.balances.insert(ids[0], Coins(11));
        assert_eq!(st.missing_signers(&ring).len(), 3);
    }
}
