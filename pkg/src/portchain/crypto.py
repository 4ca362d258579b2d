"""Hashing and signature primitives.

Everything here is deterministic: SHA-256 digests and Ed25519 signatures
(which are deterministic by construction), so identical inputs produce
bit-identical outputs across runs and platforms.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

HASH_SIZE = 32
ZERO_HASH = b"\x00" * HASH_SIZE

# Hash / Address are plain bytes: 32-byte digests, 20-byte addresses.
Hash = bytes
Address = bytes

ADDRESS_SIZE = 20


def digest(data: bytes) -> Hash:
    """SHA-256 of data."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True, slots=True)
class KeyPair:
    secret: bytes  # 32-byte Ed25519 seed
    public: bytes  # 32-byte Ed25519 public key


def keypair_from_seed(seed: bytes) -> KeyPair:
    """Derive a deterministic Ed25519 key pair from a 32-byte seed."""
    if len(seed) != 32:
        seed = digest(seed)
    sk = Ed25519PrivateKey.from_private_bytes(seed)
    return KeyPair(secret=seed, public=sk.public_key().public_bytes_raw())


def address_from_public(public: bytes) -> Address:
    """Account address: first 20 bytes of the public key digest."""
    return digest(public)[:ADDRESS_SIZE]


# Loading key material is much slower than using it, so loaded key
# objects are memoized per raw byte string.
_private_cache: dict[bytes, Ed25519PrivateKey] = {}
_public_cache: dict[bytes, Ed25519PublicKey] = {}


def _private_key(secret: bytes) -> Ed25519PrivateKey:
    sk = _private_cache.get(secret)
    if sk is None:
        sk = Ed25519PrivateKey.from_private_bytes(secret)
        _private_cache[secret] = sk
    return sk


def sign(key: KeyPair, message: bytes) -> bytes:
    return _private_key(key.secret).sign(message)


# Signature checks dominate simulation time; identical (public, message,
# signature) triples recur once per receiving node, so memoize results.
_verify_cache: dict[tuple, bool] = {}


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    """True iff signature is valid; malformed inputs return False."""
    key = (public, signature, message)
    cached = _verify_cache.get(key)
    if cached is not None:
        return cached
    try:
        pk = _public_cache.get(public)
        if pk is None:
            pk = Ed25519PublicKey.from_public_bytes(public)
            _public_cache[public] = pk
        pk.verify(signature, message)
        ok = True
    except (InvalidSignature, ValueError):
        ok = False
    _verify_cache[key] = ok
    return ok
