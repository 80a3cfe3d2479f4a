//! Transaction merkle tree.
//!
//! A participant's epoch transactions, ordered by id, are reduced pairwise:
//! a single transaction hashes to `H(encode(tx))`; longer lists split after
//! the first `ceil(n/2)` elements and combine as `H(left xor right)`. The
//! leaf preimage is the fully signed canonical encoding.

use super::crypto::{hash, Digest};
use super::encoding::canonical_encode;
use super::tx::Transaction;
use super::ProtocolError;

/// Root committed for a participant with no transactions in the epoch.
pub const EMPTY_TX_ROOT: Digest = Digest::ZERO;

pub fn tmt_root(txs: &[Transaction]) -> Result<Digest, ProtocolError> {
    if txs.is_empty() {
        return Err(ProtocolError::EmptyTransactionSet);
    }
    if txs.windows(2).any(|w| w[0].tx_id >= w[1].tx_id) {
        return Err(ProtocolError::UnorderedTransactions);
    }
    Ok(reduce(txs))
}

/// [`tmt_root`] with the empty-set sentinel.
pub fn tmt_root_or_empty(txs: &[Transaction]) -> Result<Digest, ProtocolError> {
    if txs.is_empty() {
        Ok(EMPTY_TX_ROOT)
    } else {
        tmt_root(txs)
    }
}

fn reduce(txs: &[Transaction]) -> Digest {
    match txs {
        [single] => hash(&canonical_encode(single)),
        _ => {
            let (left, right) = txs.split_at(txs.len().div_ceil(2));
            hash(&reduce(left).xor(&reduce(right)).0)
        }
    }
}
