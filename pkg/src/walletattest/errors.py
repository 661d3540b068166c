"""Exception hierarchy shared across the stack.

Every failure raised by library code derives from WalletAttestError so that
callers (and the CLI boundary) can catch domain failures without swallowing
programming errors.
"""

from __future__ import annotations


class WalletAttestError(Exception):
    """Base class for all domain errors."""


# --- wire / encoding ------------------------------------------------------

class MalformedBytes(WalletAttestError):
    """Buffer cannot be decoded into the claimed wire type."""


class TrailingBytes(MalformedBytes):
    """Decoding succeeded but left unconsumed bytes."""


# --- device emulation -----------------------------------------------------

class UnknownManifest(WalletAttestError):
    pass


class UnknownParent(WalletAttestError):
    pass


class ParentErased(WalletAttestError):
    pass


class UnknownKey(WalletAttestError):
    pass


class KeyErased(WalletAttestError):
    pass


class WrongKeyRole(WalletAttestError):
    """Operation not permitted for this key kind (e.g. signing with the EK)."""


class NonMigratableKey(WalletAttestError):
    pass


class AuthFailure(WalletAttestError):
    pass


class ManifestMismatch(WalletAttestError):
    pass


class IntegrityFailure(WalletAttestError):
    pass


class EmptySelection(WalletAttestError):
    pass


class IndexOutOfRange(WalletAttestError):
    pass


# --- policy language ------------------------------------------------------

class PolicyError(WalletAttestError):
    """Base for policy parse/validation failures, carries source position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{message} (line {line}, col {col})" if line else message)
        self.line = line
        self.col = col


class PolicySyntaxError(PolicyError):
    pass


class PolicyTypeError(PolicyError):
    pass


class DuplicateRuleId(PolicyError):
    pass


# --- verifier registration ------------------------------------------------

class BadSignature(WalletAttestError):
    pass


class UnknownEndorser(WalletAttestError):
    pass


# --- relying party (VASP) -------------------------------------------------

class KeyTooShort(WalletAttestError):
    pass


class AttestationFailed(WalletAttestError):
    """Onboarding attestation produced a Fail result; the result is attached."""

    def __init__(self, result):
        super().__init__(f"attestation failed: {result.failed_rules}")
        self.result = result


class PartyInfoIncomplete(WalletAttestError):
    pass


class AccountOffBoarded(WalletAttestError):
    pass


class ChannelAuthFailure(WalletAttestError):
    pass


class CounterpartyUnknownParty(WalletAttestError):
    pass


class NoTransactionContext(WalletAttestError):
    pass


class StaleEvidence(WalletAttestError):
    pass


class RecoveryNotJustified(WalletAttestError):
    """No backup blob and no proof the lost key was non-migratable."""


class ErasureNotProven(WalletAttestError):
    pass


# --- toy ledger -----------------------------------------------------------

class InsufficientBalance(WalletAttestError):
    pass
