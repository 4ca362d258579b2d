"""Shared helpers for the test suite."""
import random

import pytest
from hypothesis import settings

from portchain.crypto import digest, keypair_from_seed

# shared hosts show large wall-clock variance; per-example deadlines misfire
settings.register_profile("ci", deadline=None)
settings.load_profile("ci")
from portchain.ledger import AccountState
from portchain.trie import StateTrie


def make_keys(n, tag=b"t"):
    """Deterministic key pairs with (address, keypair) in address order."""
    from portchain.crypto import address_from_public

    pairs = []
    for i in range(n):
        kp = keypair_from_seed(digest(tag + i.to_bytes(4, "big")))
        pairs.append((address_from_public(kp.public), kp))
    pairs.sort(key=lambda p: p[0])
    return pairs


def make_trie(entries):
    """Build a trie from {address: tax} or {address: AccountState}."""
    trie = StateTrie()
    for addr, val in entries.items():
        state = val if isinstance(val, AccountState) else AccountState(balance=10_000, tax=val)
        trie = trie.upsert_account(addr, state)
    return trie


def addr_of(label) -> bytes:
    if isinstance(label, str):
        label = label.encode()
    return digest(b"addr" + label)[:20]


@pytest.fixture
def rnd():
    return random.Random(0xC0FFEE)
