"""Toy append-only ledger: account balances, pending pool, scripted faults.

The ledger is a stand-in blockchain for synchronization tests. Transactions
are signed under the spending key; a special recovery transaction is instead
signed by a claimant (a VASP executing an emergency sweep) and must carry the
digest of the attestation evidence bundle that justifies it. Fault injection
is scripted and deterministic: the n-th submission can be dropped (never
reaches the pool) or swapped with the following one in confirmation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import wire
from .crypto import verify_signature
from .errors import BadSignature, InsufficientBalance


@wire.wire_type(0x17)
@dataclass(frozen=True)
class SignedTx:
    from_key: bytes
    to_key: bytes
    amount: int
    seq: int
    claimant_key: bytes  # empty for normal transfers; VASP key for recovery
    bundle_digest: bytes  # evidence bundle digest for recovery transfers
    signature: bytes

    WIRE_FIELDS = (
        ("from_key", "bytes"),
        ("to_key", "bytes"),
        ("amount", "u64"),
        ("seq", "u64"),
        ("claimant_key", "bytes"),
        ("bundle_digest", "bytes"),
        ("signature", "bytes"),
    )

    @property
    def is_recovery(self) -> bool:
        return bool(self.claimant_key)


def tx_digest(tx: SignedTx) -> bytes:
    """Digest of the transaction body (signature excluded)."""
    from .crypto import sha256

    return sha256(wire.signing_bytes(tx))


def unsigned_tx(from_key: bytes, to_key: bytes, amount: int, seq: int) -> SignedTx:
    return SignedTx(from_key, to_key, amount, seq, b"", b"", b"")


def tx_signing_bytes(tx: SignedTx) -> bytes:
    return wire.signing_bytes(tx)


@dataclass
class _Pending:
    tx: SignedTx
    digest: bytes
    submit_idx: int
    confirm_at: int


@dataclass
class ToyLedger:
    confirm_delay: int = 2
    # extra confirmation delay for a swapped submission; must exceed the gap
    # to the next submission for the swap to take effect
    swap_extra_delay: int = 2
    balances: dict = field(default_factory=dict)
    pending: list = field(default_factory=list)
    confirmed: list = field(default_factory=list)  # SignedTx in confirmation order
    confirmed_digests: list = field(default_factory=list)
    dropped_digests: list = field(default_factory=list)
    submit_count: int = 0
    drop_submissions: set = field(default_factory=set)  # 1-based submission indices
    swap_submissions: set = field(default_factory=set)  # swap n with n+1

    def credit(self, key: bytes, amount: int) -> None:
        """Genesis mint; scenario setup only."""
        self.balances[key] = self.balances.get(key, 0) + amount

    def balance(self, key: bytes) -> int:
        return self.balances.get(key, 0)

    def _available(self, key: bytes) -> int:
        held = sum(p.tx.amount for p in self.pending if p.tx.from_key == key)
        return self.balance(key) - held

    def submit(self, tx: SignedTx, now: int) -> bytes:
        """Validate and enqueue a transaction; returns its digest.

        Normal transfers must verify under from_key; recovery transfers under
        the claimant key and must carry a 32-byte evidence bundle digest.
        """
        signer = tx.claimant_key if tx.is_recovery else tx.from_key
        if tx.is_recovery and len(tx.bundle_digest) != 32:
            raise BadSignature("recovery transfer lacks an evidence bundle digest")
        if not verify_signature(signer, wire.signing_bytes(tx), tx.signature):
            raise BadSignature("transaction signature invalid")
        if self._available(tx.from_key) < tx.amount:
            raise InsufficientBalance(
                f"{tx.amount} exceeds available {self._available(tx.from_key)}"
            )
        self.submit_count += 1
        idx = self.submit_count
        digest = tx_digest(tx)
        if idx in self.drop_submissions:
            self.dropped_digests.append(digest)
            return digest
        confirm_at = now + self.confirm_delay
        if idx in self.swap_submissions:
            confirm_at += self.swap_extra_delay
        self.pending.append(_Pending(tx, digest, idx, confirm_at))
        return digest

    def advance(self, now: int) -> list[bytes]:
        """Confirm transactions due at or before now; returns their digests."""
        due = [p for p in self.pending if p.confirm_at <= now]
        due.sort(key=lambda p: (p.confirm_at, p.submit_idx))
        newly = []
        for p in due:
            self.pending.remove(p)
            self.balances[p.tx.from_key] = self.balances.get(p.tx.from_key, 0) - p.tx.amount
            self.balances[p.tx.to_key] = self.balances.get(p.tx.to_key, 0) + p.tx.amount
            if self.balances[p.tx.from_key] < 0:
                raise AssertionError("ledger invariant: negative balance")
            self.confirmed.append(p.tx)
            self.confirmed_digests.append(p.digest)
            newly.append(p.digest)
        return newly

    def total_supply(self) -> int:
        return sum(self.balances.values())
