//! Garou: an N-party off-chain payment hub.
//!
//! The crate is organised bottom-up:
//!
//! - [`protocol`]: pure data types and functions shared by every participant
//!   (identifiers, coins, hashing, signatures, the transfer tuple, the epoch
//!   state, leader election and the transaction merkle tree).
//! - [`node`]: the participant state machine (member or epoch leader).
//! - [`chain`]: a deterministic simulated blockchain hosting the verifier
//!   contract, with a gas-accounting model.
//! - [`sim`]: the discrete-event scheduler wiring nodes and chain together,
//!   plus the adversary layer.
//! - [`harness`]: metrics, parameter sweeps and the canonical attack suite.

// Messages and flow stages carry transactions inline; they are short-lived.
#![allow(clippy::large_enum_variant)]

pub mod chain;
pub mod harness;
pub mod node;
pub mod protocol;
pub mod sim;

pub use protocol::{
    canonical_encode, elect_leader, next_balances, tmt_root, Account, Coins, Digest, Epoch,
    EpochState, KeyPair, Keyring, ParticipantId, ProtocolError, Signature, Transaction, TxId,
};
