use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::protocol::{
    tagged_digest, Coins, Decode, DecodeError, Decoder, Digest, Encode, Encoder, Epoch, EpochState,
    ParticipantId, Signature, Transaction, TxId,
};

/// Off-chain message variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    TxIdReq,
    TxIdReply,
    TxReq,
    TxReply,
    TxComplete,
    EpochState,
    EpochStateReply,
    EpochStateConf,
    WithdrawReq,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::TxIdReq,
        MessageKind::TxIdReply,
        MessageKind::TxReq,
        MessageKind::TxReply,
        MessageKind::TxComplete,
        MessageKind::EpochState,
        MessageKind::EpochStateReply,
        MessageKind::EpochStateConf,
        MessageKind::WithdrawReq,
    ];

    pub fn is_transfer(self) -> bool {
        matches!(
            self,
            MessageKind::TxIdReq
                | MessageKind::TxIdReply
                | MessageKind::TxReq
                | MessageKind::TxReply
                | MessageKind::TxComplete
        )
    }

    pub fn is_consensus(self) -> bool {
        matches!(
            self,
            MessageKind::EpochState | MessageKind::EpochStateReply | MessageKind::EpochStateConf
        )
    }
}

/// Why a transfer step was rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Overspend,
    StaleEpoch,
    IssuingClosed,
    UnknownParticipant,
    Withdrawing,
    Malformed,
    ForgedTxId,
    BadSignature,
}

impl RejectReason {
    const ALL: [RejectReason; 8] = [
        RejectReason::Overspend,
        RejectReason::StaleEpoch,
        RejectReason::IssuingClosed,
        RejectReason::UnknownParticipant,
        RejectReason::Withdrawing,
        RejectReason::Malformed,
        RejectReason::ForgedTxId,
        RejectReason::BadSignature,
    ];
}

/// Why a member refused to sign a proposed epoch state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefuseReason {
    EpochMismatch,
    MembershipMismatch,
    BalanceMismatch,
    MerkleMismatch,
    DepositMismatch,
}

impl RefuseReason {
    const ALL: [RefuseReason; 5] = [
        RefuseReason::EpochMismatch,
        RefuseReason::MembershipMismatch,
        RefuseReason::BalanceMismatch,
        RefuseReason::MerkleMismatch,
        RefuseReason::DepositMismatch,
    ];
}

macro_rules! code_enum {
    ($t:ty, $what:literal) => {
        impl $t {
            pub fn code(self) -> u8 {
                <$t>::ALL.iter().position(|v| *v == self).expect("listed") as u8
            }
        }

        impl Encode for $t {
            fn encode(&self, enc: &mut Encoder) {
                enc.put_u8(self.code());
            }
        }

        impl Decode for $t {
            fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                let tag = dec.get_u8()?;
                <$t>::ALL
                    .get(tag as usize)
                    .copied()
                    .ok_or(DecodeError::UnknownTag { what: $what, tag })
            }
        }
    };
}

code_enum!(RejectReason, "reject reason");
code_enum!(RefuseReason, "refuse reason");

/// Step (1): the sender asks the leader for a transaction id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxIdRequest {
    pub epoch: Epoch,
    pub sender: ParticipantId,
    pub amount: Coins,
    /// Sender-local handle, unique per sender.
    pub nonce: u64,
    pub sig: Signature,
}

impl TxIdRequest {
    pub fn payload(epoch: Epoch, sender: &ParticipantId, amount: Coins, nonce: u64) -> Digest {
        tagged_digest(b"garou/txidreq", &(epoch, *sender, amount, nonce))
    }
}

/// Step (2): leader's answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxIdReply {
    Approved {
        epoch: Epoch,
        nonce: u64,
        tx_id: TxId,
        leader_sig: Signature,
    },
    Rejected {
        epoch: Epoch,
        nonce: u64,
        reason: RejectReason,
        sig: Signature,
    },
}

/// Payload of any signed rejection.
pub fn rejection_payload(epoch: Epoch, handle: u64, reason: RejectReason) -> Digest {
    tagged_digest(b"garou/reject", &(epoch, handle, reason.code() as u64))
}

/// Step (4): receiver's answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxReply {
    Countersigned(Transaction),
    Rejected {
        epoch: Epoch,
        tx_id: TxId,
        reason: RejectReason,
        sig: Signature,
    },
}

/// Consensus step (2): a member's answer to a proposal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StateReply {
    Signed {
        epoch: Epoch,
        digest: Digest,
        sig: Signature,
    },
    Refused {
        epoch: Epoch,
        digest: Digest,
        reason: RefuseReason,
        sig: Signature,
    },
}

impl StateReply {
    pub fn digest(&self) -> Digest {
        match self {
            StateReply::Signed { digest, .. } | StateReply::Refused { digest, .. } => *digest,
        }
    }

    pub fn refusal_payload(digest: &Digest, reason: RefuseReason) -> Digest {
        tagged_digest(b"garou/refuse", &(*digest, reason.code() as u64))
    }
}

/// Off-chain withdrawal request to the leader.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WithdrawRequest {
    pub epoch: Epoch,
    pub participant: ParticipantId,
    pub sig: Signature,
}

impl WithdrawRequest {
    pub fn payload(epoch: Epoch, participant: &ParticipantId) -> Digest {
        tagged_digest(b"garou/withdraw", &(epoch, *participant))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtocolMessage {
    TxIdReq(TxIdRequest),
    TxIdReply(TxIdReply),
    TxReq(Transaction),
    TxReply(TxReply),
    TxComplete(Transaction),
    /// Proposed next state carrying the leader's signature.
    EpochState(Arc<EpochState>),
    EpochStateReply(StateReply),
    /// The fully signed state.
    EpochStateConf(Arc<EpochState>),
    WithdrawReq(WithdrawRequest),
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            ProtocolMessage::TxIdReq(_) => MessageKind::TxIdReq,
            ProtocolMessage::TxIdReply(_) => MessageKind::TxIdReply,
            ProtocolMessage::TxReq(_) => MessageKind::TxReq,
            ProtocolMessage::TxReply(_) => MessageKind::TxReply,
            ProtocolMessage::TxComplete(_) => MessageKind::TxComplete,
            ProtocolMessage::EpochState(_) => MessageKind::EpochState,
            ProtocolMessage::EpochStateReply(_) => MessageKind::EpochStateReply,
            ProtocolMessage::EpochStateConf(_) => MessageKind::EpochStateConf,
            ProtocolMessage::WithdrawReq(_) => MessageKind::WithdrawReq,
        }
    }

    /// Epoch the message belongs to. Consensus messages carry the epoch of
    /// the state being agreed, one past the current trading epoch.
    pub fn epoch(&self) -> Epoch {
        match self {
            ProtocolMessage::TxIdReq(r) => r.epoch,
            ProtocolMessage::TxIdReply(TxIdReply::Approved { epoch, .. })
            | ProtocolMessage::TxIdReply(TxIdReply::Rejected { epoch, .. }) => *epoch,
            ProtocolMessage::TxReq(tx) | ProtocolMessage::TxComplete(tx) => tx.epoch,
            ProtocolMessage::TxReply(TxReply::Countersigned(tx)) => tx.epoch,
            ProtocolMessage::TxReply(TxReply::Rejected { epoch, .. }) => *epoch,
            ProtocolMessage::EpochState(s) | ProtocolMessage::EpochStateConf(s) => s.epoch,
            ProtocolMessage::EpochStateReply(StateReply::Signed { epoch, .. })
            | ProtocolMessage::EpochStateReply(StateReply::Refused { epoch, .. }) => *epoch,
            ProtocolMessage::WithdrawReq(w) => w.epoch,
        }
    }
}

/// What travels on a channel: a protocol message or raw bytes, as a
/// corrupted node may send anything.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Wire {
    Msg(ProtocolMessage),
    Raw(Vec<u8>),
}

impl Wire {
    pub fn kind(&self) -> Option<MessageKind> {
        match self {
            Wire::Msg(m) => Some(m.kind()),
            Wire::Raw(_) => None,
        }
    }
}

impl Encode for TxIdRequest {
    fn encode(&self, enc: &mut Encoder) {
        self.epoch.encode(enc);
        self.sender.encode(enc);
        self.amount.encode(enc);
        enc.put_u64(self.nonce);
        self.sig.encode(enc);
    }
}

impl Decode for TxIdRequest {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(TxIdRequest {
            epoch: dec.get()?,
            sender: dec.get()?,
            amount: dec.get()?,
            nonce: dec.get_u64()?,
            sig: dec.get()?,
        })
    }
}

impl Encode for WithdrawRequest {
    fn encode(&self, enc: &mut Encoder) {
        self.epoch.encode(enc);
        self.participant.encode(enc);
        self.sig.encode(enc);
    }
}

impl Decode for WithdrawRequest {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(WithdrawRequest {
            epoch: dec.get()?,
            participant: dec.get()?,
            sig: dec.get()?,
        })
    }
}

impl Encode for ProtocolMessage {
    fn encode(&self, enc: &mut Encoder) {
        let tag = MessageKind::ALL
            .iter()
            .position(|k| *k == self.kind())
            .expect("listed") as u8;
        enc.put_u8(tag);
        match self {
            ProtocolMessage::TxIdReq(r) => r.encode(enc),
            ProtocolMessage::TxIdReply(TxIdReply::Approved {
                epoch,
                nonce,
                tx_id,
                leader_sig,
            }) => {
                enc.put_u8(0);
                epoch.encode(enc);
                enc.put_u64(*nonce);
                tx_id.encode(enc);
                leader_sig.encode(enc);
            }
            ProtocolMessage::TxIdReply(TxIdReply::Rejected {
                epoch,
                nonce,
                reason,
                sig,
            }) => {
                enc.put_u8(1);
                epoch.encode(enc);
                enc.put_u64(*nonce);
                reason.encode(enc);
                sig.encode(enc);
            }
            ProtocolMessage::TxReq(tx) | ProtocolMessage::TxComplete(tx) => tx.encode(enc),
            ProtocolMessage::TxReply(TxReply::Countersigned(tx)) => {
                enc.put_u8(0);
                tx.encode(enc);
            }
            ProtocolMessage::TxReply(TxReply::Rejected {
                epoch,
                tx_id,
                reason,
                sig,
            }) => {
                enc.put_u8(1);
                epoch.encode(enc);
                tx_id.encode(enc);
                reason.encode(enc);
                sig.encode(enc);
            }
            ProtocolMessage::EpochState(s) | ProtocolMessage::EpochStateConf(s) => s.encode(enc),
            ProtocolMessage::EpochStateReply(StateReply::Signed { epoch, digest, sig }) => {
                enc.put_u8(0);
                epoch.encode(enc);
                digest.encode(enc);
                sig.encode(enc);
            }
            ProtocolMessage::EpochStateReply(StateReply::Refused {
                epoch,
                digest,
                reason,
                sig,
            }) => {
                enc.put_u8(1);
                epoch.encode(enc);
                digest.encode(enc);
                reason.encode(enc);
                sig.encode(enc);
            }
            ProtocolMessage::WithdrawReq(w) => w.encode(enc),
        }
    }
}

impl Decode for ProtocolMessage {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tag = dec.get_u8()?;
        let kind = *MessageKind::ALL
            .get(tag as usize)
            .ok_or(DecodeError::UnknownTag {
                what: "message",
                tag,
            })?;
        let sub = |dec: &mut Decoder<'_>, what| -> Result<bool, DecodeError> {
            match dec.get_u8()? {
                0 => Ok(false),
                1 => Ok(true),
                tag => Err(DecodeError::UnknownTag { what, tag }),
            }
        };
        Ok(match kind {
            MessageKind::TxIdReq => ProtocolMessage::TxIdReq(dec.get()?),
            MessageKind::TxIdReply => {
                if sub(dec, "tx id reply")? {
                    ProtocolMessage::TxIdReply(TxIdReply::Rejected {
                        epoch: dec.get()?,
                        nonce: dec.get_u64()?,
                        reason: dec.get()?,
                        sig: dec.get()?,
                    })
                } else {
                    ProtocolMessage::TxIdReply(TxIdReply::Approved {
                        epoch: dec.get()?,
                        nonce: dec.get_u64()?,
                        tx_id: dec.get()?,
                        leader_sig: dec.get()?,
                    })
                }
            }
            MessageKind::TxReq => ProtocolMessage::TxReq(dec.get()?),
            MessageKind::TxReply => {
                if sub(dec, "tx reply")? {
                    ProtocolMessage::TxReply(TxReply::Rejected {
                        epoch: dec.get()?,
                        tx_id: dec.get()?,
                        reason: dec.get()?,
                        sig: dec.get()?,
                    })
                } else {
                    ProtocolMessage::TxReply(TxReply::Countersigned(dec.get()?))
                }
            }
            MessageKind::TxComplete => ProtocolMessage::TxComplete(dec.get()?),
            MessageKind::EpochState => ProtocolMessage::EpochState(Arc::new(dec.get()?)),
            MessageKind::EpochStateReply => {
                if sub(dec, "state reply")? {
                    ProtocolMessage::EpochStateReply(StateReply::Refused {
                        epoch: dec.get()?,
                        digest: dec.get()?,
                        reason: dec.get()?,
                        sig: dec.get()?,
                    })
                } else {
                    ProtocolMessage::EpochStateReply(StateReply::Signed {
                        epoch: dec.get()?,
                        digest: dec.get()?,
                        sig: dec.get()?,
                    })
                }
            }
            MessageKind::EpochStateConf => ProtocolMessage::EpochStateConf(Arc::new(dec.get()?)),
            MessageKind::WithdrawReq => ProtocolMessage::WithdrawReq(dec.get()?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{canonical_encode, decode_from, KeyPair};

    fn sample_messages() -> Vec<ProtocolMessage> {
        let k = KeyPair::derive(3, 0);
        let p = ParticipantId::new(4, k.account());
        let sig = k.sign(&Digest::ZERO);
        let tx = Transaction {
            epoch: Epoch(2),
            tx_id: TxId(9),
            sender: p,
            receiver: ParticipantId::new(5, KeyPair::derive(3, 1).account()),
            amount: Coins(17),
            leader_sig: sig,
            sender_sig: sig,
            receiver_sig: None,
        };
        let state = Arc::new(EpochState {
            epoch: Epoch(3),
            balances: [(p, Coins(5))].into_iter().collect(),
            ..Default::default()
        });
        vec![
            ProtocolMessage::TxIdReq(TxIdRequest {
                epoch: Epoch(2),
                sender: p,
                amount: Coins(17),
                nonce: 42,
                sig,
            }),
            ProtocolMessage::TxIdReply(TxIdReply::Approved {
                epoch: Epoch(2),
                nonce: 42,
                tx_id: TxId(9),
                leader_sig: sig,
            }),
            ProtocolMessage::TxIdReply(TxIdReply::Rejected {
                epoch: Epoch(2),
                nonce: 42,
                reason: RejectReason::Overspend,
                sig,
            }),
            ProtocolMessage::TxReq(tx.clone()),
            ProtocolMessage::TxReply(TxReply::Countersigned(tx.clone())),
            ProtocolMessage::TxReply(TxReply::Rejected {
                epoch: Epoch(2),
                tx_id: TxId(9),
                reason: RejectReason::ForgedTxId,
                sig,
            }),
            ProtocolMessage::TxComplete(tx),
            ProtocolMessage::EpochState(state.clone()),
            ProtocolMessage::EpochStateReply(StateReply::Signed {
                epoch: Epoch(3),
                digest: Digest::ZERO,
                sig,
            }),
            ProtocolMessage::EpochStateReply(StateReply::Refused {
                epoch: Epoch(3),
                digest: Digest::ZERO,
                reason: RefuseReason::MerkleMismatch,
                sig,
            }),
            ProtocolMessage::EpochStateConf(state),
            ProtocolMessage::WithdrawReq(WithdrawRequest {
                epoch: Epoch(2),
                participant: p,
                sig,
            }),
        ]
    }

    #[test]
    fn every_variant_roundtrips() {
        for m in sample_messages() {
            let bytes = canonical_encode(&m);
            assert_eq!(decode_from::<ProtocolMessage>(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn garbage_is_rejected_not_panicking() {
        for bytes in [vec![], vec![99], vec![0, 1, 2], vec![7; 300]] {
            assert!(decode_from::<ProtocolMessage>(&bytes).is_err());
        }
        for m in sample_messages() {
            let bytes = canonical_encode(&m);
            for cut in 0..bytes.len() {
                assert!(decode_from::<ProtocolMessage>(&bytes[..cut]).is_err());
            }
        }
    }

    #[test]
    fn variant_set_covers_both_flows() {
        let transfer = MessageKind::ALL.iter().filter(|k| k.is_transfer()).count();
        let consensus = MessageKind::ALL.iter().filter(|k| k.is_consensus()).count();
        assert_eq!((transfer, consensus), (5, 3));
    }
}
