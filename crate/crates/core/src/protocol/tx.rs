use super::crypto::{tagged_digest, Digest, Keyring, Signature};
use super::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use super::types::{Coins, Epoch, ParticipantId, TxId};

/// An off-chain coin transfer `(e, tx_id, sender, receiver, x)` and its
/// signatures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub epoch: Epoch,
    pub tx_id: TxId,
    pub sender: ParticipantId,
    pub receiver: ParticipantId,
    pub amount: Coins,
    /// Leader signature over `(epoch, tx_id, sender)`.
    pub leader_sig: Signature,
    /// Sender signature over the full tuple.
    pub sender_sig: Signature,
    /// Receiver signature over the full tuple; absent until countersigned.
    pub receiver_sig: Option<Signature>,
}

/// Digest the leader signs when issuing a transaction id.
pub fn leader_payload(epoch: Epoch, tx_id: TxId, sender: &ParticipantId) -> Digest {
    tagged_digest(b"garou/txid", &(epoch, tx_id, *sender))
}

/// Digest sender and receiver sign: the full transfer tuple.
pub fn tuple_payload(
    epoch: Epoch,
    tx_id: TxId,
    sender: &ParticipantId,
    receiver: &ParticipantId,
    amount: Coins,
) -> Digest {
    tagged_digest(b"garou/tx", &(epoch, tx_id, *sender, *receiver, amount))
}

impl Transaction {
    pub fn leader_payload(&self) -> Digest {
        leader_payload(self.epoch, self.tx_id, &self.sender)
    }

    pub fn tuple_payload(&self) -> Digest {
        tuple_payload(
            self.epoch,
            self.tx_id,
            &self.sender,
            &self.receiver,
            self.amount,
        )
    }

    /// Structural validity: distinct endpoints and a positive amount.
    pub fn is_well_formed(&self) -> bool {
        self.sender != self.receiver && !self.amount.is_zero()
    }

    pub fn leader_sig_valid(&self, ring: &Keyring, leader: &ParticipantId) -> bool {
        ring.verify(&leader.account, &self.leader_payload(), &self.leader_sig)
    }

    pub fn sender_sig_valid(&self, ring: &Keyring) -> bool {
        ring.verify(
            &self.sender.account,
            &self.tuple_payload(),
            &self.sender_sig,
        )
    }

    pub fn receiver_sig_valid(&self, ring: &Keyring) -> bool {
        self.receiver_sig
            .as_ref()
            .is_some_and(|sig| ring.verify(&self.receiver.account, &self.tuple_payload(), sig))
    }

    /// Complete iff well formed and all three signatures verify.
    pub fn is_complete(&self, ring: &Keyring, leader: &ParticipantId) -> bool {
        self.is_well_formed()
            && self.leader_sig_valid(ring, leader)
            && self.sender_sig_valid(ring)
            && self.receiver_sig_valid(ring)
    }

    /// Whether `p` is the sender or the receiver.
    pub fn involves(&self, p: &ParticipantId) -> bool {
        self.sender == *p || self.receiver == *p
    }
}

impl Encode for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        self.epoch.encode(enc);
        self.tx_id.encode(enc);
        self.sender.encode(enc);
        self.receiver.encode(enc);
        self.amount.encode(enc);
        self.leader_sig.encode(enc);
        self.sender_sig.encode(enc);
        self.receiver_sig.encode(enc);
    }
}

impl Decode for Transaction {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            epoch: dec.get()?,
            tx_id: dec.get()?,
            sender: dec.get()?,
            receiver: dec.get()?,
            amount: dec.get()?,
            leader_sig: dec.get()?,
            sender_sig: dec.get()?,
            receiver_sig: dec.get()?,
        })
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::protocol::KeyPair;

    /// Builds a fully signed transaction between slot keys.
    pub fn signed_tx(
        leader: &KeyPair,
        sender: (&KeyPair, u64),
        receiver: (&KeyPair, u64),
        epoch: u64,
        tx_id: u64,
        amount: u64,
    ) -> Transaction {
        let s = ParticipantId::new(sender.1, sender.0.account());
        let r = ParticipantId::new(receiver.1, receiver.0.account());
        let (e, id, x) = (Epoch(epoch), TxId(tx_id), Coins(amount));
        let tuple = tuple_payload(e, id, &s, &r, x);
        Transaction {
            epoch: e,
            tx_id: id,
            sender: s,
            receiver: r,
            amount: x,
            leader_sig: leader.sign(&leader_payload(e, id, &s)),
            sender_sig: sender.0.sign(&tuple),
            receiver_sig: Some(receiver.0.sign(&tuple)),
        }
    }
}
