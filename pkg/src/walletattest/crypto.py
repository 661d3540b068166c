"""Crypto primitives: SHA-256 digests, Ed25519 signatures, seeded randomness.

Everything here is deterministic given its inputs. Key generation takes an
explicit 32-byte seed, signatures are Ed25519 (deterministic by design), and
DeterministicRng is a SHA-256 counter-mode generator so that simulator runs
replay bit-exactly on any platform.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

DIGEST_LEN = 32
SEED_LEN = 32
NONCE_LEN = 16

# Domain tag prefixed to every signed payload; keeps our signatures from
# colliding with any other Ed25519 use of the same keys.
_SIG_DOMAIN = b"walletattest/v1:"


def sha256(*chunks: bytes) -> bytes:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.digest()


class DeterministicRng:
    """SHA-256 counter-mode byte stream seeded from 32 bytes.

    child(label) derives an independent stream, so a single scenario seed can
    fan out to devices, verifiers and transport links without correlation.
    """

    def __init__(self, seed: bytes):
        if len(seed) != SEED_LEN:
            raise ValueError("seed must be 32 bytes")
        self._state = seed
        self._counter = 0

    @classmethod
    def from_int(cls, seed: int) -> "DeterministicRng":
        return cls(sha256(b"seed-int", seed.to_bytes(8, "big", signed=False)))

    def child(self, label: str) -> "DeterministicRng":
        return DeterministicRng(sha256(b"child", self._state, label.encode()))

    def bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += sha256(b"stream", self._state, self._counter.to_bytes(8, "big"))
            self._counter += 1
        return bytes(out[:n])

    def u64(self) -> int:
        return int.from_bytes(self.bytes(8), "big")

    def randrange(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randrange needs n > 0")
        return self.u64() % n

    def float01(self) -> float:
        return self.u64() / 2**64

    def snapshot(self) -> tuple[bytes, int]:
        return self._state, self._counter

    def restore(self, snap: tuple[bytes, int]) -> None:
        self._state, self._counter = snap


@dataclass(frozen=True)
class KeyPair:
    """Ed25519 keypair held as raw 32-byte seed + raw public key."""

    private_bytes: bytes
    public_bytes: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        if len(seed) != SEED_LEN:
            raise ValueError("key seed must be 32 bytes")
        priv = Ed25519PrivateKey.from_private_bytes(seed)
        pub = priv.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return cls(private_bytes=seed, public_bytes=pub)

    def sign(self, payload: bytes) -> bytes:
        priv = Ed25519PrivateKey.from_private_bytes(self.private_bytes)
        return priv.sign(_SIG_DOMAIN + payload)


def verify_signature(public_key: bytes, payload: bytes, signature: bytes) -> bool:
    """True iff signature is a valid Ed25519 signature over payload."""
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(
            signature, _SIG_DOMAIN + payload
        )
        return True
    except (InvalidSignature, ValueError):
        return False


# --- sealed boxes for migration blobs --------------------------------------


def _seal_key(auth_secret: bytes, target_manifest_ref: str, source_device: str) -> bytes:
    return sha256(
        b"blob-seal-key",
        auth_secret,
        target_manifest_ref.encode(),
        source_device.encode(),
    )


def auth_digest(auth_secret: bytes) -> bytes:
    return sha256(b"blob-auth", auth_secret)


def seal(
    plaintext: bytes,
    auth_secret: bytes,
    target_manifest_ref: str,
    source_device: str,
    nonce12: bytes,
) -> bytes:
    """Encrypt plaintext bound to the authorization secret and target model.

    Returns nonce || ciphertext; the AEAD binds the manifest and source device
    as associated data, so the payload only opens in the declared context.
    """
    key = _seal_key(auth_secret, target_manifest_ref, source_device)
    aad = target_manifest_ref.encode() + b"|" + source_device.encode()
    ct = ChaCha20Poly1305(key).encrypt(nonce12, plaintext, aad)
    return nonce12 + ct


def unseal(
    payload: bytes,
    auth_secret: bytes,
    target_manifest_ref: str,
    source_device: str,
) -> bytes | None:
    """Inverse of seal(); None if the secret or context does not match."""
    if len(payload) < 12:
        return None
    key = _seal_key(auth_secret, target_manifest_ref, source_device)
    aad = target_manifest_ref.encode() + b"|" + source_device.encode()
    try:
        return ChaCha20Poly1305(key).decrypt(payload[:12], payload[12:], aad)
    except InvalidTag:
        return None


def digests_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)
