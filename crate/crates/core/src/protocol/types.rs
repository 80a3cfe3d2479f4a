use std::fmt;

use serde::{Deserialize, Serialize};

use super::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use super::ProtocolError;

pub const ACCOUNT_LEN: usize = 20;

/// On-chain account address: the first 20 bytes of the hash of a public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Account(pub [u8; ACCOUNT_LEN]);

impl Account {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Account({})", &self.to_hex()[..8])
    }
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Account {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Account {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; ACCOUNT_LEN] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("account must be 20 bytes"))?;
        Ok(Account(arr))
    }
}

/// A hub participant: its position in join order plus its chain account.
///
/// Ordering is by `index` first, so sorted collections of participants follow
/// join order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct ParticipantId {
    pub index: u64,
    pub account: Account,
}

impl ParticipantId {
    pub fn new(index: u64, account: Account) -> Self {
        Self { index, account }
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.index)
    }
}

/// Amount of coins in the smallest currency unit.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Coins(pub u64);

impl Coins {
    pub const ZERO: Coins = Coins(0);

    pub fn checked_add(self, other: Coins) -> Result<Coins, ProtocolError> {
        self.0
            .checked_add(other.0)
            .map(Coins)
            .ok_or(ProtocolError::CoinOverflow)
    }

    pub fn checked_sub(self, other: Coins) -> Result<Coins, ProtocolError> {
        self.0
            .checked_sub(other.0)
            .map(Coins)
            .ok_or(ProtocolError::CoinUnderflow)
    }

    pub fn saturating_sub(self, other: Coins) -> Coins {
        Coins(self.0.saturating_sub(other.0))
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Checked sum of an iterator of amounts.
    pub fn sum<I: IntoIterator<Item = Coins>>(iter: I) -> Result<Coins, ProtocolError> {
        iter.into_iter().try_fold(Coins::ZERO, Coins::checked_add)
    }
}

impl fmt::Display for Coins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Epoch number.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Epoch(pub u64);

impl Epoch {
    pub fn next(self) -> Epoch {
        Epoch(self.0 + 1)
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Leader-issued transaction id; per epoch, starting at 1.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TxId(pub u64);

impl Encode for Account {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_bytes(&self.0);
    }
}

impl Decode for Account {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let bytes = dec.get_bytes()?;
        let arr: [u8; ACCOUNT_LEN] = bytes
            .try_into()
            .map_err(|_| DecodeError::BadLength("account"))?;
        Ok(Account(arr))
    }
}

impl Encode for ParticipantId {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.index);
        self.account.encode(enc);
    }
}

impl Decode for ParticipantId {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let index = dec.get_u64()?;
        let account = Account::decode(dec)?;
        Ok(ParticipantId { index, account })
    }
}

macro_rules! u64_newtype_codec {
    ($($t:ident),*) => {$(
        impl Encode for $t {
            fn encode(&self, enc: &mut Encoder) {
                enc.put_u64(self.0);
            }
        }
        impl Decode for $t {
            fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                Ok($t(dec.get_u64()?))
            }
        }
    )*};
}

u64_newtype_codec!(Coins, Epoch, TxId);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coin_arithmetic_fails_instead_of_wrapping() {
        assert_eq!(
            Coins(u64::MAX).checked_add(Coins(1)),
            Err(ProtocolError::CoinOverflow)
        );
        assert_eq!(
            Coins(0).checked_sub(Coins(1)),
            Err(ProtocolError::CoinUnderflow)
        );
        assert_eq!(Coins(5).checked_sub(Coins(2)), Ok(Coins(3)));
        assert_eq!(
            Coins::sum([Coins(u64::MAX), Coins(1)]),
            Err(ProtocolError::CoinOverflow)
        );
    }

    #[test]
    fn participants_sort_by_join_order() {
        let a = ParticipantId::new(2, Account([0; 20]));
        let b = ParticipantId::new(10, Account([0xff; 20]));
        let c = ParticipantId::new(1, Account([0xaa; 20]));
        let mut v = [a, b, c];
        v.sort();
        assert_eq!(
            v.iter().map(|p| p.index).collect::<Vec<_>>(),
            vec![1, 2, 10]
        );
    }
}
