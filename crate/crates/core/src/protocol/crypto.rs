//! Hashing and signatures.
//!
//! One hash function (SHA-256) is used everywhere: leader election, the
//! transaction merkle tree, account derivation and signing digests.
//! Signatures are Ed25519 over the 32-byte digest of a domain-tagged
//! canonical encoding.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Mutex;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use sha2::{Digest as _, Sha256};

use super::encoding::{Decode, DecodeError, Decoder, Encode, Encoder};
use super::types::{Account, ACCOUNT_LEN};

pub const DIGEST_LEN: usize = 32;

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    /// All-zero digest; also the sentinel root of an empty transaction set.
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn xor(&self, other: &Digest) -> Digest {
        let mut out = [0u8; DIGEST_LEN];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Digest(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let bytes = hex::decode(s).ok()?;
        Some(Digest(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl serde::Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("digest must be 32 hex bytes"))
    }
}

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Hash of a domain tag followed by the canonical encoding of `value`.
pub fn tagged_digest<T: Encode + ?Sized>(tag: &[u8], value: &T) -> Digest {
    let mut enc = Encoder::with_capacity(128);
    enc.put_bytes(tag);
    value.encode(&mut enc);
    hash(&enc.finish())
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SignatureBytes(pub [u8; 64]);

impl fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SignatureBytes({}..)", hex::encode(&self.0[..6]))
    }
}

/// A signature together with the account that claims to have produced it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Signature {
    pub signer: Account,
    pub bytes: SignatureBytes,
}

impl Encode for Signature {
    fn encode(&self, enc: &mut Encoder) {
        self.signer.encode(enc);
        enc.put_bytes(&self.bytes.0);
    }
}

impl Decode for Signature {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let signer = Account::decode(dec)?;
        let raw = dec.get_bytes()?;
        let bytes: [u8; 64] = raw
            .try_into()
            .map_err(|_| DecodeError::BadLength("signature"))?;
        Ok(Signature {
            signer,
            bytes: SignatureBytes(bytes),
        })
    }
}

impl Encode for Digest {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_bytes(&self.0);
    }
}

impl Decode for Digest {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let raw = dec.get_bytes()?;
        Ok(Digest(
            raw.try_into()
                .map_err(|_| DecodeError::BadLength("digest"))?,
        ))
    }
}

/// Ed25519 key pair with its derived account.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    account: Account,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("account", &self.account)
            .finish()
    }
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&seed);
        let account = account_of(&signing.verifying_key());
        Self { signing, account }
    }

    /// Deterministic key derived from a run seed and a slot number.
    pub fn derive(run_seed: u64, slot: u64) -> Self {
        let mut enc = Encoder::new();
        enc.put_bytes(b"garou/key");
        enc.put_u64(run_seed);
        enc.put_u64(slot);
        Self::from_seed(hash(&enc.finish()).0)
    }

    pub fn account(&self) -> Account {
        self.account
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn sign(&self, payload: &Digest) -> Signature {
        Signature {
            signer: self.account,
            bytes: SignatureBytes(self.signing.sign(&payload.0).to_bytes()),
        }
    }
}

fn account_of(key: &VerifyingKey) -> Account {
    let h = hash(key.as_bytes());
    let mut a = [0u8; ACCOUNT_LEN];
    a.copy_from_slice(&h.0[..ACCOUNT_LEN]);
    Account(a)
}

/// Public-key directory: resolves accounts to verifying keys.
///
/// Successful verifications are memoised. Ed25519 verification is a pure
/// function of (key, message, signature), so the cache changes wall-clock
/// cost only; the simulator charges simulated processing time per
/// verification regardless.
#[derive(Default)]
pub struct Keyring {
    keys: BTreeMap<Account, VerifyingKey>,
    verified: Mutex<HashSet<[u8; DIGEST_LEN]>>,
}

impl fmt::Debug for Keyring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keyring")
            .field("keys", &self.keys.len())
            .finish()
    }
}

impl Keyring {
    pub fn new<'a, I: IntoIterator<Item = &'a KeyPair>>(pairs: I) -> Self {
        let keys = pairs
            .into_iter()
            .map(|kp| (kp.account(), kp.verifying_key()))
            .collect();
        Self {
            keys,
            verified: Mutex::new(HashSet::new()),
        }
    }

    pub fn contains(&self, account: &Account) -> bool {
        self.keys.contains_key(account)
    }

    /// True iff `sig` is a valid signature by `expected` over `payload`.
    pub fn verify(&self, expected: &Account, payload: &Digest, sig: &Signature) -> bool {
        if sig.signer != *expected {
            return false;
        }
        let Some(key) = self.keys.get(expected) else {
            return false;
        };
        let mut enc = Encoder::with_capacity(128);
        enc.put_bytes(&expected.0);
        enc.put_bytes(&payload.0);
        enc.put_bytes(&sig.bytes.0);
        let memo = hash(&enc.finish()).0;
        if self
            .verified
            .lock()
            .expect("keyring cache poisoned")
            .contains(&memo)
        {
            return true;
        }
        let ok = key
            .verify(
                &payload.0,
                &ed25519_dalek::Signature::from_bytes(&sig.bytes.0),
            )
            .is_ok();
        if ok {
            self.verified
                .lock()
                .expect("keyring cache poisoned")
                .insert(memo);
        }
        ok
    }
}
