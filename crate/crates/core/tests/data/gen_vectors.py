#!/usr/bin/env python3
"""Independent oracle for golden test vectors.

Re-implements, without sharing any code with the Rust crate:
  * the canonical byte encoding of transactions and epoch states,
  * leader election  H(xor of 8-byte BE balances) mod n, digest read big-endian,
  * the transaction merkle tree, written line by line from its recursive
    definition (n = 1 -> H(tx_1); otherwise split at ceil(n/2), H(left ^ right)).

Signature bytes are random: encoding and hashing do not interpret them.
Run: python3 gen_vectors.py > vectors.json
"""
import hashlib
import json
import math
import random
import struct

H = lambda b: hashlib.sha256(b).digest()
u32 = lambda v: struct.pack(">I", v)
u64 = lambda v: struct.pack(">Q", v)
lp = lambda b: u32(len(b)) + b


def pid(index, account):
    return u64(index) + lp(account)


def sig(signer, raw):
    return lp(signer) + lp(raw)


def encode_tx(tx):
    out = u64(tx["epoch"]) + u64(tx["tx_id"])
    out += pid(*tx["sender"]) + pid(*tx["receiver"]) + u64(tx["amount"])
    out += sig(*tx["leader_sig"]) + sig(*tx["sender_sig"])
    if tx["receiver_sig"] is None:
        out += b"\x00"
    else:
        out += b"\x01" + sig(*tx["receiver_sig"])
    return out


def tmt(txs):
    n = len(txs)
    if n == 1:
        return H(encode_tx(txs[0]))
    half = math.ceil(n / 2)
    left = tmt(txs[:half])
    right = tmt(txs[half:])
    return H(bytes(a ^ b for a, b in zip(left, right)))


def leader(balances):
    acc = 0
    for b in balances:
        acc ^= b
    d = H(u64(acc))
    return int.from_bytes(d, "big") % len(balances)


def encode_map(entries, enc_value):
    out = u32(len(entries))
    for (index, account), v in sorted(entries, key=lambda e: (e[0][0], e[0][1])):
        out += pid(index, account) + enc_value(v)
    return out


def encode_state_unsigned(st):
    return (
        u64(st["epoch"])
        + encode_map(st["balances"], u64)
        + encode_map(st["tx_roots"], lp)
        + encode_map(st["enrollments"], u64)
        + encode_map(st["withdrawals"], u64)
    )


def encode_state(st):
    return encode_state_unsigned(st) + encode_map(st["signatures"], lambda s: sig(*s))


def state_digest(st):
    return H(lp(b"garou/state") + lp(encode_state_unsigned(st)))


def main():
    rng = random.Random(20190705)
    accounts = [bytes(rng.getrandbits(8) for _ in range(20)) for _ in range(12)]
    rnd_sig = lambda who: (accounts[who], bytes(rng.getrandbits(8) for _ in range(64)))

    pool = []
    tx_id = 0
    for _ in range(256):
        tx_id += rng.randint(1, 3)
        s, r = rng.sample(range(12), 2)
        pool.append({
            "epoch": rng.randint(0, 1 << 40),
            "tx_id": tx_id,
            "sender": (s, accounts[s]),
            "receiver": (r, accounts[r]),
            "amount": rng.randint(1, 1 << 63),
            "leader_sig": rnd_sig(rng.randrange(12)),
            "sender_sig": rnd_sig(s),
            "receiver_sig": rnd_sig(r) if rng.random() < 0.9 else None,
        })

    sets = []
    for k in range(1000):
        size = 1 + (k % 64)
        idx = sorted(rng.sample(range(len(pool)), size))
        sets.append({"indices": idx, "root": tmt([pool[i] for i in idx]).hex()})

    elections = [
        {"balances": [10, 10, 10, 10]},
        {"balances": [3, 1, 4, 1, 5, 9, 2]},
        {"balances": [42]},
    ]
    for _ in range(200):
        n = rng.randint(1, 300)
        elections.append({"balances": [rng.randint(0, 1 << 62) for _ in range(n)]})
    for e in elections:
        e["leader"] = leader(e["balances"])

    states = []
    for _ in range(20):
        n = rng.randint(1, 12)
        members = [(i, accounts[i]) for i in sorted(rng.sample(range(12), n))]
        st = {
            "epoch": rng.randint(0, 1000),
            "balances": [(m, rng.randint(0, 10**9)) for m in members],
            "tx_roots": [(m, bytes(rng.getrandbits(8) for _ in range(32))) for m in members],
            "enrollments": [(m, rng.randint(1, 10**6)) for m in members if rng.random() < 0.2],
            "withdrawals": [(m, rng.randint(0, 10**6)) for m in members if rng.random() < 0.2],
            "signatures": [(m, rnd_sig(m[0])) for m in members if rng.random() < 0.7],
        }
        states.append({"encoding": encode_state(st).hex(), "signing_digest": state_digest(st).hex()})

    print(json.dumps({
        "transactions": [encode_tx(t).hex() for t in pool],
        "tx_leaf_digests": [H(encode_tx(t)).hex() for t in pool],
        "tmt_sets": sets,
        "elections": elections,
        "states": states,
    }, indent=0))


if __name__ == "__main__":
    main()
