//! Deterministic protocol primitives shared by every node.

mod crypto;
mod election;
mod encoding;
mod merkle;
mod state;
mod tx;
mod types;

pub use crypto::{
    hash, tagged_digest, Digest, KeyPair, Keyring, Signature, SignatureBytes, DIGEST_LEN,
};
pub use election::elect_leader;
pub use encoding::{canonical_encode, decode_from, Decode, DecodeError, Decoder, Encode, Encoder};
pub use merkle::{tmt_root, tmt_root_or_empty, EMPTY_TX_ROOT};
pub use state::{next_balances, Balances, EpochState};
pub use tx::{leader_payload, tuple_payload, Transaction};
pub use types::{Account, Coins, Epoch, ParticipantId, TxId, ACCOUNT_LEN};

use thiserror::Error;

/// Failures of the pure protocol functions.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("no participants")]
    NoParticipants,
    #[error("empty transaction set")]
    EmptyTransactionSet,
    #[error("unordered transactions")]
    UnorderedTransactions,
    #[error("overspend in rollup for participant {0}")]
    OverspendInRollup(u64),
    #[error("coin overflow")]
    CoinOverflow,
    #[error("coin underflow")]
    CoinUnderflow,
    #[error("unknown participant {0}")]
    UnknownParticipant(u64),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}
