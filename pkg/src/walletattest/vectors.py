"""Golden wire-vector corpus: one canonical exemplar per wire type.

The corpus is regenerated deterministically (fixed seeds, no clock) so any
drift in the canonical encoding shows up as a byte diff against the files
checked into vectors/. Every registered wire tag must have an exemplar; a
test enforces that, so new wire types cannot ship unfrozen.
"""

from __future__ import annotations

from pathlib import Path

from . import wire
from .claims import (
    AttestationResult,
    Certificate,
    Claim,
    ClaimKind,
    PartyInfo,
    TravelRuleRecord,
    TravelRuleStatus,
    Verdict,
    make_endorsement,
    sign_manifest,
    sign_value,
)
from .crypto import DeterministicRng, KeyPair
from .hwemu import build_manifest, create_device
from .ledger import SignedTx
from .messages import (
    ChallengeRequest,
    ChallengeResponse,
    CrossVaspAppraisalRequest,
    DiscoveryQuery,
    DiscoveryReply,
    EvidenceRequest,
    EvidenceSubmission,
    LedgerTxNotice,
    PreAuthDecision,
    PreAuthNotify,
    ResultDelivery,
    TraceEvent,
    TravelRuleAck,
    TravelRuleExchange,
)
from .vasp import DiscoveryAnswer


def golden_values() -> list[tuple[str, object]]:
    """Deterministic exemplar for every wire type, in a stable order."""
    manifests = {"model-a": build_manifest("model-a", "acme")}
    manifest = manifests["model-a"]
    endorser = KeyPair.from_seed(bytes([0x21]) * 32)
    verifier_key = KeyPair.from_seed(bytes([0x22]) * 32)
    vasp_key = KeyPair.from_seed(bytes([0x23]) * 32)

    device = create_device(bytes([0x11]) * 32, "model-a", manifests)
    device.set_location(47.37, 8.54, 408.0)
    h_tx = device.create_key(device.dik_handle, migratable=False)
    h_mig = device.create_key(device.dik_handle, migratable=True)
    h_gone = device.create_key(device.dik_handle, migratable=False)
    device.sign_transaction(h_tx, b"golden transfer 1")
    device.sign_transaction(h_tx, b"golden transfer 2")
    device.pcr_extend(0, bytes([0x01]) * 32)
    receipt = device.erase_key(h_gone)
    blob = device.export_key(h_mig, b"golden secret")

    nonce = bytes(range(16))
    evidence = device.quote(
        nonce,
        [
            (ClaimKind.KEY_PROVENANCE, h_tx),
            (ClaimKind.KEY_TYPE, h_tx),
            ClaimKind.SYSTEM_CONFIG,
            ClaimKind.GEO_LOCATION,
            ClaimKind.USAGE_LOG,
            ClaimKind.SIGNATURE_ORIGIN,
            (ClaimKind.ERASURE, h_gone),
        ],
    )
    endorsement = make_endorsement(
        endorser, "mfr-endorser", device.public_identity(), "model-a", manifests
    )
    signed_manifest = sign_manifest(manifest, endorser, "mfr-endorser")
    result = sign_value(
        AttestationResult(
            device_id=device.device_id,
            verdict=Verdict.PASS,
            failed_rules=(),
            loa=4,
            evaluated_at=12,
            nonce=nonce,
            signature=b"",
        ),
        verifier_key,
    )
    tx_key = device.keys[h_tx]
    certificate = sign_value(
        Certificate(
            subject_public_key=tx_key.public_key,
            vaan=(0xAABBCCDD << 32) | 1,
            issuer_vasp_code=0xAABBCCDD,
            non_migratable_marking=True,
            provenance_known_marking=True,
            signature=b"",
        ),
        vasp_key,
    )
    alice = PartyInfo(name="alice", vaan=(0xAABBCCDD << 32) | 1, public_key=tx_key.public_key)
    bob = PartyInfo(name="bob", vaan=(0x11223344 << 32) | 9, public_key=bytes([0x42]) * 32)
    record = TravelRuleRecord(
        originator=alice,
        beneficiary=bob,
        amount=250,
        tx_digest=bytes([0x5A]) * 32,
        status=TravelRuleStatus.VERIFIED,
    )
    body = SignedTx(tx_key.public_key, bob.public_key, 250, 1, b"", b"", b"")
    ledger_tx = SignedTx(
        body.from_key,
        body.to_key,
        body.amount,
        body.seq,
        b"",
        b"",
        tx_key.keypair().sign(wire.signing_bytes(body)),
    )

    usage_entry = device.usage_log[0]
    prov_claim = evidence.claims_of(ClaimKind.KEY_PROVENANCE)[0]
    values: list[tuple[str, object]] = [
        ("claim", prov_claim),
        ("key_provenance_body", prov_claim.body),
        ("key_type_body", evidence.claims_of(ClaimKind.KEY_TYPE)[0].body),
        ("geo_location_body", evidence.claims_of(ClaimKind.GEO_LOCATION)[0].body),
        ("usage_log_body", evidence.claims_of(ClaimKind.USAGE_LOG)[0].body),
        ("system_config_body", evidence.claims_of(ClaimKind.SYSTEM_CONFIG)[0].body),
        ("signature_origin_body", evidence.claims_of(ClaimKind.SIGNATURE_ORIGIN)[0].body),
        ("erasure_body", evidence.claims_of(ClaimKind.ERASURE)[0].body),
        ("cert_link", prov_claim.body.links[0]),
        ("usage_entry", usage_entry),
        ("evidence", evidence),
        ("endorsement", endorsement),
        ("reference_manifest", manifest),
        ("signed_manifest", signed_manifest),
        ("attestation_result", result),
        ("certificate", certificate),
        ("party_info", alice),
        ("travel_rule_record", record),
        ("erasure_receipt", receipt),
        ("migration_blob", blob),
        ("key_record", tx_key),
        ("signed_tx", ledger_tx),
        ("pcr_extend_record", device.pcr_history[0]),
        ("device_state", device),
        ("msg_challenge_request", ChallengeRequest("w1", "xfer:w1:1#orig")),
        (
            "msg_challenge_response",
            ChallengeResponse("vasp1-asp-s1", nonce, "xfer:w1:1#orig"),
        ),
        (
            "msg_evidence_submission",
            EvidenceSubmission("vasp1-asp-s1", evidence, "baseline", "vasp1", "xfer:w1:1#orig"),
        ),
        ("msg_result_delivery", ResultDelivery(result, "xfer:w1:1#orig")),
        (
            "msg_evidence_request",
            EvidenceRequest("vasp1-asp", "baseline", "vasp1", "xfer:w1:1#orig"),
        ),
        (
            "msg_cross_vasp_appraisal_request",
            CrossVaspAppraisalRequest(bob.public_key, "asp", "baseline", "vasp1", "xfer:w1:1#bene"),
        ),
        ("msg_preauth_notify", PreAuthNotify(alice.vaan, bob.public_key, 250, "xfer:w1:1")),
        ("msg_preauth_decision", PreAuthDecision(True, "", 60, False, "xfer:w1:1")),
        ("msg_discovery_query", DiscoveryQuery("xfer:w1:1", bob.public_key)),
        (
            "msg_discovery_reply",
            DiscoveryReply("xfer:w1:1", DiscoveryAnswer.KNOWN_AT, 0x11223344),
        ),
        ("msg_ledger_tx_notice", LedgerTxNotice(bytes([0x5A]) * 32, alice.vaan, bob.public_key, 250)),
        ("msg_travel_rule_exchange", TravelRuleExchange(record, bytes([0x66]) * 64)),
        (
            "msg_travel_rule_ack",
            TravelRuleAck(bytes([0x5A]) * 32, True, "", bob, bytes([0x67]) * 64),
        ),
        ("msg_trace_event", TraceEvent(7, 1, "vasp1", "decision", b"xfer:w1:1 approved=True")),
    ]
    return values


def write_vectors(out_dir) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for name, value in golden_values():
        data = wire.encode(value)
        (out / f"{name}.bin").write_bytes(data)
        names.append(name)
    return names


def covered_tags() -> set[int]:
    return {wire.tag_of(type(v)) for _, v in golden_values()}
