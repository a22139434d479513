"""Signatures, MACs, hashing and Merkle batch proofs.

Three signature schemes share one API: "ed25519" and "rsa" are real
(cryptography package), "fake" is a structurally valid stand-in for pure
protocol tests where crypto cost is irrelevant.  Signatures carry a one-byte
scheme tag so cross-scheme verification fails cleanly.

All operations are counted through a shared OpCounters instance; the counters
drive the signature-amortization checks in the acceptance suite.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
from dataclasses import dataclass

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ed25519 as _ed25519
from cryptography.hazmat.primitives.asymmetric import padding, rsa as _rsa
from cryptography.exceptions import InvalidSignature

from .messages import MerkleProof

SCHEME_TAGS = {"ed25519": b"\x01", "rsa": b"\x02", "fake": b"\x03"}
_TAG_TO_SCHEME = {v: k for k, v in SCHEME_TAGS.items()}

DIGEST_SIZE = 32


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass
class OpCounters:
    sign: int = 0
    verify: int = 0
    mac: int = 0
    mac_verify: int = 0

    def snapshot(self) -> dict:
        return {
            "sign": self.sign,
            "verify": self.verify,
            "mac": self.mac,
            "mac_verify": self.mac_verify,
        }


@dataclass
class KeyPair:
    scheme: str
    owner: str
    private: object
    public: "PublicKey"


@dataclass
class PublicKey:
    scheme: str
    owner: str
    material: object


def generate_keypair(scheme: str, owner: str, seed: bytes) -> KeyPair:
    """Deterministic key generation so simulator runs are reproducible."""
    if scheme == "ed25519":
        sk = _ed25519.Ed25519PrivateKey.from_private_bytes(sha256(seed + owner.encode()))
        pub = PublicKey(scheme, owner, sk.public_key())
        return KeyPair(scheme, owner, sk, pub)
    if scheme == "rsa":
        # cryptography has no seeded RSA keygen; RSA keys are not reproducible
        # across runs, which does not affect protocol determinism.
        sk = _rsa.generate_private_key(public_exponent=65537, key_size=2048)
        pub = PublicKey(scheme, owner, sk.public_key())
        return KeyPair(scheme, owner, sk, pub)
    if scheme == "fake":
        secret = sha256(seed + b"|" + owner.encode())
        return KeyPair(scheme, owner, secret, PublicKey(scheme, owner, secret))
    raise ValueError(f"unknown scheme {scheme!r}")


def sign(key: KeyPair, data: bytes, counters: OpCounters | None = None) -> bytes:
    if counters is not None:
        counters.sign += 1
    tag = SCHEME_TAGS[key.scheme]
    if key.scheme == "ed25519":
        return tag + key.private.sign(data)
    if key.scheme == "rsa":
        return tag + key.private.sign(data, padding.PKCS1v15(), hashes.SHA256())
    return tag + sha256(key.private + data)[:16]


def verify(pub: PublicKey, data: bytes, sig: bytes,
           counters: OpCounters | None = None) -> bool:
    if counters is not None:
        counters.verify += 1
    if not sig or sig[:1] != SCHEME_TAGS[pub.scheme]:
        return False
    raw = sig[1:]
    try:
        if pub.scheme == "ed25519":
            pub.material.verify(raw, data)
            return True
        if pub.scheme == "rsa":
            pub.material.verify(raw, data, padding.PKCS1v15(), hashes.SHA256())
            return True
        return _hmac.compare_digest(raw, sha256(pub.material + data)[:16])
    except InvalidSignature:
        return False


def mac(key: bytes, data: bytes, counters: OpCounters | None = None) -> bytes:
    if counters is not None:
        counters.mac += 1
    return _hmac.new(key, data, hashlib.sha256).digest()


def mac_verify(key: bytes, data: bytes, tag: bytes,
               counters: OpCounters | None = None) -> bool:
    if counters is not None:
        counters.mac_verify += 1
    return _hmac.compare_digest(_hmac.new(key, data, hashlib.sha256).digest(), tag)


def pair_mac_key(master: bytes, a: str, b: str) -> bytes:
    """Shared MAC key for an (unordered) pair of node ids."""
    lo, hi = sorted((a, b))
    return sha256(master + b"|mac|" + lo.encode() + b"|" + hi.encode())


# ---------------------------------------------------------------------------
# Merkle batch signatures
#
# The tree shape depends only on the message count mc: a complete binary tree
# (heap shape) with 2*mc-1 nodes; message j sits at array index mc-1+j.  The
# (mc, i) pair therefore uniquely determines the leaf-to-root path shape.

_LEAF = b"\x00"
_NODE = b"\x01"

MAX_BATCH = 128


def _leaf_hash(m: bytes) -> bytes:
    return sha256(_LEAF + m)


def _path_len(mc: int, i: int) -> int:
    return (mc + i).bit_length() - 1


def merkle_sign_batch(key: KeyPair, messages: list[bytes],
                      counters: OpCounters | None = None,
                      max_batch: int = MAX_BATCH) -> list[MerkleProof]:
    """One signature over the tree root; one proof per message."""
    mc = len(messages)
    if mc == 0:
        raise ValueError("empty batch")
    if mc > max_batch:
        raise ValueError(f"batch of {mc} exceeds maximum {max_batch}")
    nodes: list[bytes] = [b""] * (2 * mc - 1)
    for j, m in enumerate(messages):
        nodes[mc - 1 + j] = _leaf_hash(m)
    for n in range(mc - 2, -1, -1):
        nodes[n] = sha256(_NODE + nodes[2 * n + 1] + nodes[2 * n + 2])
    sig = sign(key, nodes[0], counters)
    proofs = []
    for j in range(mc):
        path = []
        n = mc - 1 + j
        while n > 0:
            sibling = n + 1 if n % 2 == 1 else n - 1
            path.append(nodes[sibling])
            n = (n - 1) // 2
        proofs.append(MerkleProof(mc=mc, i=j, path=path, sig=sig))
    return proofs


class RootSigCache:
    """Caches root-signature check results keyed by (signer, root).

    Capacity is bounded by the channel slot count; oldest entries evicted.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._entries: dict[tuple[str, bytes], bool] = {}

    def get(self, key):
        return self._entries.get(key)

    def put(self, key, value: bool) -> None:
        if key not in self._entries and len(self._entries) >= self.capacity:
            self._entries.pop(next(iter(self._entries)))
        self._entries[key] = value


def merkle_verify(pub: PublicKey, message: bytes, proof: MerkleProof,
                  counters: OpCounters | None = None,
                  cache: RootSigCache | None = None) -> bool:
    mc, i = proof.mc, proof.i
    if mc < 1 or not 0 <= i < mc:
        return False
    if len(proof.path) != _path_len(mc, i):
        return False
    h = _leaf_hash(message)
    n = mc - 1 + i
    for sibling in proof.path:
        if not isinstance(sibling, (bytes, bytearray)) or len(sibling) != DIGEST_SIZE:
            return False
        if n % 2 == 1:
            h = sha256(_NODE + h + sibling)
        else:
            h = sha256(_NODE + sibling + h)
        n = (n - 1) // 2
    key = (pub.owner, h, bytes(proof.sig))
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    ok = verify(pub, h, proof.sig, counters)
    if cache is not None:
        cache.put(key, ok)
    return ok
