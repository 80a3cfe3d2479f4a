//! Golden vectors produced by `tests/data/gen_vectors.py` and property tests
//! for the pure protocol functions.

use garou_core::protocol::{
    canonical_encode, decode_from, elect_leader, hash, next_balances, tmt_root, Account, Balances,
    Coins, Digest, Epoch, EpochState, ParticipantId, Signature, SignatureBytes, Transaction, TxId,
};
use proptest::prelude::*;
use serde_json::Value;

fn vectors() -> Value {
    let raw = include_str!("data/vectors.json");
    serde_json::from_str(raw).expect("vectors.json parses")
}

fn hex_bytes(v: &Value) -> Vec<u8> {
    hex::decode(v.as_str().expect("hex string")).expect("valid hex")
}

fn pool(v: &Value) -> Vec<Transaction> {
    v["transactions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|h| decode_from::<Transaction>(&hex_bytes(h)).expect("golden tx decodes"))
        .collect()
}

#[test]
fn golden_transactions_roundtrip_and_hash() {
    let v = vectors();
    let txs = pool(&v);
    for (i, tx) in txs.iter().enumerate() {
        assert_eq!(canonical_encode(tx), hex_bytes(&v["transactions"][i]));
        assert_eq!(
            hash(&canonical_encode(tx)).to_hex(),
            v["tx_leaf_digests"][i].as_str().unwrap()
        );
    }
}

#[test]
fn golden_merkle_roots() {
    let v = vectors();
    let txs = pool(&v);
    for set in v["tmt_sets"].as_array().unwrap() {
        let chosen: Vec<Transaction> = set["indices"]
            .as_array()
            .unwrap()
            .iter()
            .map(|i| txs[i.as_u64().unwrap() as usize].clone())
            .collect();
        assert_eq!(
            tmt_root(&chosen).unwrap().to_hex(),
            set["root"].as_str().unwrap()
        );
    }
}

#[test]
fn golden_elections() {
    let v = vectors();
    let cases = v["elections"].as_array().unwrap();
    for case in cases {
        let balances: Vec<Coins> = case["balances"]
            .as_array()
            .unwrap()
            .iter()
            .map(|b| Coins(b.as_u64().unwrap()))
            .collect();
        assert_eq!(
            elect_leader(&balances).unwrap() as u64,
            case["leader"].as_u64().unwrap(),
            "balances {:?}",
            &balances[..balances.len().min(8)]
        );
    }
    // n = 4 with identical balances folds to the all-zero word.
    assert_eq!(cases[0]["leader"], 0);
    // n = 7 example (3,1,4,1,5,9,2).
    assert_eq!(cases[1]["leader"], 0);
}

#[test]
fn golden_epoch_states() {
    let v = vectors();
    for case in v["states"].as_array().unwrap() {
        let bytes = hex_bytes(&case["encoding"]);
        let st = decode_from::<EpochState>(&bytes).expect("golden state decodes");
        assert_eq!(canonical_encode(&st), bytes);
        assert_eq!(
            st.signing_digest().to_hex(),
            case["signing_digest"].as_str().unwrap()
        );
    }
}

fn arb_account() -> impl Strategy<Value = Account> {
    any::<[u8; 20]>().prop_map(Account)
}

fn arb_pid() -> impl Strategy<Value = ParticipantId> {
    (0u64..1000, arb_account()).prop_map(|(i, a)| ParticipantId::new(i, a))
}

fn arb_sig() -> impl Strategy<Value = Signature> {
    (arb_account(), prop::collection::vec(any::<u8>(), 64)).prop_map(|(signer, b)| Signature {
        signer,
        bytes: SignatureBytes(b.try_into().unwrap()),
    })
}

fn arb_tx() -> impl Strategy<Value = Transaction> {
    (
        any::<u64>(),
        any::<u64>(),
        arb_pid(),
        arb_pid(),
        any::<u64>(),
        arb_sig(),
        arb_sig(),
        prop::option::of(arb_sig()),
    )
        .prop_map(|(e, id, s, r, x, ls, ss, rs)| Transaction {
            epoch: Epoch(e),
            tx_id: TxId(id),
            sender: s,
            receiver: r,
            amount: Coins(x),
            leader_sig: ls,
            sender_sig: ss,
            receiver_sig: rs,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tx_roundtrip(tx in arb_tx()) {
        let bytes = canonical_encode(&tx);
        prop_assert_eq!(decode_from::<Transaction>(&bytes).unwrap(), tx);
    }

    #[test]
    fn tx_encoding_injective(a in arb_tx(), b in arb_tx()) {
        prop_assert_eq!(canonical_encode(&a) == canonical_encode(&b), a == b);
    }
}

fn txs_with_ids(base: &Transaction, n: usize) -> Vec<Transaction> {
    (0..n)
        .map(|i| Transaction {
            tx_id: TxId(i as u64 * 2 + 1),
            amount: Coins(base.amount.0.wrapping_add(i as u64)),
            ..base.clone()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn merkle_root_sensitive_to_mutation(base in arb_tx(), n in 1usize..40, which in any::<prop::sample::Index>(), field in 0u8..4) {
        let txs = txs_with_ids(&base, n);
        let root = tmt_root(&txs).unwrap();
        let i = which.index(n);
        let mut changed = txs.clone();
        match field {
            0 => changed[i].amount = Coins(changed[i].amount.0 ^ 1),
            1 => changed[i].receiver.index ^= 1,
            2 => changed[i].epoch = Epoch(changed[i].epoch.0 ^ 1),
            _ => changed[i].receiver_sig = None,
        }
        if changed[i] != txs[i] {
            prop_assert_ne!(tmt_root(&changed).unwrap(), root);
        }
        if n > 1 {
            let mut removed = txs.clone();
            removed.remove(i);
            prop_assert_ne!(tmt_root(&removed).unwrap(), root);
        }
    }

    #[test]
    fn rollup_matches_replay_and_conserves(
        initial in prop::collection::vec(0u64..1_000, 10),
        transfers in prop::collection::vec((0usize..10, 0usize..10, 1u64..50), 0..500),
    ) {
        let ids: Vec<ParticipantId> = (0..10).map(|i| ParticipantId::new(i, Account([i as u8; 20]))).collect();
        let prev: Balances = ids.iter().zip(&initial).map(|(p, c)| (*p, Coins(*c))).collect();
        // Naive per-transfer replay, applying only transfers the separation
        // rule admits (spending is capped by the initial balance).
        let mut spent = [0u64; 10];
        let mut replay: Vec<i128> = initial.iter().map(|c| *c as i128).collect();
        let mut sent = Balances::new();
        let mut recv = Balances::new();
        for (s, r, x) in transfers {
            if s == r || spent[s] + x > initial[s] { continue; }
            spent[s] += x;
            replay[s] -= x as i128;
            replay[r] += x as i128;
            *sent.entry(ids[s]).or_default() = Coins(sent.get(&ids[s]).map_or(0, |c| c.0) + x);
            *recv.entry(ids[r]).or_default() = Coins(recv.get(&ids[r]).map_or(0, |c| c.0) + x);
        }
        let out = next_balances(&prev, &sent, &recv).unwrap();
        for (i, p) in ids.iter().enumerate() {
            prop_assert_eq!(out[p].0 as i128, replay[i]);
        }
        let before: u64 = initial.iter().sum();
        let after: u64 = out.values().map(|c| c.0).sum();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn election_is_pure_and_in_range(balances in prop::collection::vec(any::<u64>(), 1..64)) {
        let coins: Vec<Coins> = balances.into_iter().map(Coins).collect();
        let a = elect_leader(&coins).unwrap();
        prop_assert_eq!(a, elect_leader(&coins).unwrap());
        prop_assert!(a < coins.len());
    }
}

#[test]
fn empty_root_sentinel_is_zero_digest() {
    assert_eq!(garou_core::protocol::EMPTY_TX_ROOT, Digest::ZERO);
}
