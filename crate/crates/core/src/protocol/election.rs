use super::crypto::{hash, DIGEST_LEN};
use super::types::Coins;
use super::ProtocolError;

/// Leader index of an epoch: `H(B_1 xor ... xor B_n) mod n`.
///
/// Each balance is an 8-byte big-endian word before XOR; the 32-byte digest
/// is read as a big-endian integer. Returns a position into `balances`,
/// which must be in participant (join) order.
pub fn elect_leader(balances: &[Coins]) -> Result<usize, ProtocolError> {
    if balances.is_empty() {
        return Err(ProtocolError::NoParticipants);
    }
    let folded = balances.iter().fold(0u64, |acc, b| acc ^ b.0);
    let digest = hash(&folded.to_be_bytes());
    Ok(digest_mod(&digest.0, balances.len() as u64) as usize)
}

fn digest_mod(bytes: &[u8; DIGEST_LEN], n: u64) -> u64 {
    let n = n as u128;
    bytes
        .iter()
        .fold(0u128, |acc, b| ((acc << 8) | *b as u128) % n) as u64
}
