"""Protocol messages exchanged over the simulated VASP messaging network.

Every message is a canonical wire type. The context string threads one
logical flow (e.g. a pre-authorization) through its challenge, evidence,
result and decision messages.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import wire
from .claims import AttestationResult, Evidence, PartyInfo, TravelRuleRecord
from .vasp import DiscoveryAnswer


@wire.wire_type(0x20)
@dataclass(frozen=True)
class ChallengeRequest:
    requester_id: str
    context: str

    WIRE_FIELDS = (("requester_id", "str"), ("context", "str"))


@wire.wire_type(0x21)
@dataclass(frozen=True)
class ChallengeResponse:
    session_id: str
    nonce: bytes
    context: str

    WIRE_FIELDS = (("session_id", "str"), ("nonce", "bytes"), ("context", "str"))


@wire.wire_type(0x22)
@dataclass(frozen=True)
class EvidenceSubmission:
    session_id: str
    evidence: Evidence
    policy_id: str
    result_to: str
    context: str

    WIRE_FIELDS = (
        ("session_id", "str"),
        ("evidence", ("wire", Evidence)),
        ("policy_id", "str"),
        ("result_to", "str"),
        ("context", "str"),
    )


@wire.wire_type(0x23)
@dataclass(frozen=True)
class ResultDelivery:
    result: AttestationResult
    context: str

    WIRE_FIELDS = (("result", ("wire", AttestationResult)), ("context", "str"))


@wire.wire_type(0x24)
@dataclass(frozen=True)
class EvidenceRequest:
    """Ask a wallet to attest to the named verifier under a policy."""

    verifier_actor: str
    policy_id: str
    result_to: str
    context: str

    WIRE_FIELDS = (
        ("verifier_actor", "str"),
        ("policy_id", "str"),
        ("result_to", "str"),
        ("context", "str"),
    )


@wire.wire_type(0x2B)
@dataclass(frozen=True)
class CrossVaspAppraisalRequest:
    """Ask a peer VASP to have its customer's wallet attest for us."""

    beneficiary_key: bytes
    verifier_actor: str
    policy_id: str
    result_to: str
    context: str

    WIRE_FIELDS = (
        ("beneficiary_key", "bytes"),
        ("verifier_actor", "str"),
        ("policy_id", "str"),
        ("result_to", "str"),
        ("context", "str"),
    )


@wire.wire_type(0x29)
@dataclass(frozen=True)
class PreAuthNotify:
    """Abstract SSO stand-in: wallet announces an imminent direct transfer."""

    vaan: int
    beneficiary_key: bytes
    amount: int
    context: str

    WIRE_FIELDS = (
        ("vaan", "u64"),
        ("beneficiary_key", "bytes"),
        ("amount", "u64"),
        ("context", "str"),
    )


@wire.wire_type(0x2A)
@dataclass(frozen=True)
class PreAuthDecision:
    approved: bool
    reason: str
    window_end: int
    post_verify: bool
    context: str

    WIRE_FIELDS = (
        ("approved", "bool"),
        ("reason", "str"),
        ("window_end", "u64"),
        ("post_verify", "bool"),
        ("context", "str"),
    )


@wire.wire_type(0x27)
@dataclass(frozen=True)
class DiscoveryQuery:
    query_id: str
    address: bytes

    WIRE_FIELDS = (("query_id", "str"), ("address", "bytes"))


@wire.wire_type(0x28)
@dataclass(frozen=True)
class DiscoveryReply:
    query_id: str
    answer: DiscoveryAnswer
    vasp_code: int

    WIRE_FIELDS = (
        ("query_id", "str"),
        ("answer", ("enum", DiscoveryAnswer)),
        ("vasp_code", "u32"),
    )


@wire.wire_type(0x2C)
@dataclass(frozen=True)
class LedgerTxNotice:
    """Wallet reports the ledger transaction it just transmitted."""

    tx_digest: bytes
    vaan: int
    beneficiary_key: bytes
    amount: int

    WIRE_FIELDS = (
        ("tx_digest", "bytes"),
        ("vaan", "u64"),
        ("beneficiary_key", "bytes"),
        ("amount", "u64"),
    )


@wire.wire_type(0x25)
@dataclass(frozen=True)
class TravelRuleExchange:
    record: TravelRuleRecord
    channel_sig: bytes  # originator transport signature over the tx digest

    WIRE_FIELDS = (("record", ("wire", TravelRuleRecord)), ("channel_sig", "bytes"))


@wire.wire_type(0x26)
@dataclass(frozen=True)
class TravelRuleAck:
    tx_digest: bytes
    ok: bool
    reason: str
    beneficiary: PartyInfo
    channel_sig: bytes

    WIRE_FIELDS = (
        ("tx_digest", "bytes"),
        ("ok", "bool"),
        ("reason", "str"),
        ("beneficiary", ("wire", PartyInfo)),
        ("channel_sig", "bytes"),
    )


@wire.wire_type(0x30)
@dataclass(frozen=True)
class TraceEvent:
    tick: int
    seq: int
    actor: str
    kind: str
    detail: bytes

    WIRE_FIELDS = (
        ("tick", "u64"),
        ("seq", "u32"),
        ("actor", "str"),
        ("kind", "str"),
        ("detail", "bytes"),
    )
