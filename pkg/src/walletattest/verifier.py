"""Attestation Service Provider: challenges, appraisal, signed results.

A Verifier owns the nonce session table, the endorsement/manifest stores and
the policy store. Every appraisal outcome is a *signed* AttestationResult,
including denials (replay, expiry, nonce mismatch, chain failure), so relying
parties can audit why evidence was rejected. Sessions are single-use even on
failure; a failed submission forces a fresh challenge.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .claims import (
    AttestationResult,
    Endorsement,
    Evidence,
    ReferenceManifest,
    SignedManifest,
    Verdict,
    sign_value,
    verify_chain,
    verify_signed,
)
from .crypto import NONCE_LEN, DeterministicRng, KeyPair
from .errors import BadSignature, UnknownEndorser
from .policy import PolicyProgram, evaluate

DEFAULT_TTL = 100  # ticks a challenge nonce stays valid


@dataclass
class ChallengeSession:
    session_id: str
    requester_id: str
    nonce: bytes
    issued_at: int
    ttl: int
    consumed: bool = False


@dataclass
class Verifier:
    verifier_id: str
    key: KeyPair
    rng: DeterministicRng
    ttl: int = DEFAULT_TTL
    clock: int = 0
    policies: dict = field(default_factory=dict)
    endorsements: dict = field(default_factory=dict)  # device_id -> Endorsement
    manifests: dict = field(default_factory=dict)  # manifest_ref -> ReferenceManifest
    endorser_roots: dict = field(default_factory=dict)  # endorser_id -> public key
    sessions: dict = field(default_factory=dict)
    results: list = field(default_factory=list)  # append-only

    def __post_init__(self):
        self._lock = threading.Lock()
        self._session_seq = 0

    @classmethod
    def create(cls, verifier_id: str, seed_rng: DeterministicRng, ttl: int = DEFAULT_TTL) -> "Verifier":
        key = KeyPair.from_seed(seed_rng.child("key").bytes(32))
        return cls(verifier_id=verifier_id, key=key, rng=seed_rng.child("nonces"), ttl=ttl)

    @property
    def public_key(self) -> bytes:
        return self.key.public_bytes

    # -- configuration ------------------------------------------------------

    def add_endorser_root(self, endorser_id: str, public_key: bytes) -> None:
        self.endorser_roots[endorser_id] = public_key

    def add_policy(self, policy_id: str, program: PolicyProgram) -> None:
        self.policies[policy_id] = program

    def register_endorsement(self, endorsement: Endorsement) -> None:
        root = self.endorser_roots.get(endorsement.endorser_id)
        if root is None:
            raise UnknownEndorser(endorsement.endorser_id)
        if not verify_signed(endorsement, root):
            raise BadSignature("endorsement signature invalid")
        with self._lock:
            self.endorsements[endorsement.device_id] = endorsement

    def register_manifest(self, signed: SignedManifest) -> None:
        root = self.endorser_roots.get(signed.endorser_id)
        if root is None:
            raise UnknownEndorser(signed.endorser_id)
        if not verify_signed(signed, root):
            raise BadSignature("manifest signature invalid")
        with self._lock:
            self.manifests[signed.manifest.manifest_ref] = signed.manifest

    # -- protocol ------------------------------------------------------------

    def new_challenge(self, requester_id: str) -> tuple[str, bytes]:
        with self._lock:
            self._session_seq += 1
            session_id = f"{self.verifier_id}-s{self._session_seq}"
            nonce = self.rng.bytes(NONCE_LEN)
            self.sessions[session_id] = ChallengeSession(
                session_id=session_id,
                requester_id=requester_id,
                nonce=nonce,
                issued_at=self.clock,
                ttl=self.ttl,
                consumed=False,
            )
            return session_id, nonce

    def appraise(self, session_id: str, evidence: Evidence, policy_id: str) -> AttestationResult:
        """Appraise evidence under a session; always returns a signed result.

        Checks run in order: session freshness and nonce echo, endorsement
        chain, then policy evaluation. The session is consumed regardless of
        outcome.
        """
        with self._lock:
            session = self.sessions.get(session_id)
            failure = None
            age = 0
            if session is None:
                failure = "session:unknown"
                nonce = evidence.nonce
            else:
                nonce = session.nonce
                if session.consumed:
                    failure = "session:replay"
                session.consumed = True
                age = self.clock - session.issued_at
                if failure is None and age > session.ttl:
                    failure = "session:expired"
                if failure is None and evidence.nonce != session.nonce:
                    failure = "session:nonce-mismatch"

            if failure is None:
                endorsement = self.endorsements.get(evidence.device_id)
                root = (
                    self.endorser_roots.get(endorsement.endorser_id)
                    if endorsement is not None
                    else None
                )
                chain = verify_chain(evidence, endorsement, root)
                if not chain:
                    failure = f"chain:{chain.reason}"

            if failure is None:
                program = self.policies.get(policy_id)
                if program is None:
                    failure = "policy:unknown-policy"

            if failure is not None:
                return self._emit(
                    device_id=evidence.device_id,
                    verdict=Verdict.FAIL,
                    failed_rules=(failure,),
                    loa=None,
                    nonce=nonce,
                )

            verdict = evaluate(
                program,
                evidence,
                list(self.endorsements.values()),
                list(self.manifests.values()),
                now=self.clock,
                evidence_age=age,
            )
            return self._emit(
                device_id=evidence.device_id,
                verdict=Verdict.PASS if verdict.passed else Verdict.FAIL,
                failed_rules=verdict.failed_rules,
                loa=verdict.loa,
                nonce=nonce,
            )

    def _emit(self, device_id, verdict, failed_rules, loa, nonce) -> AttestationResult:
        unsigned = AttestationResult(
            device_id=device_id,
            verdict=verdict,
            failed_rules=tuple(failed_rules),
            loa=loa,
            evaluated_at=self.clock,
            nonce=nonce,
            signature=b"",
        )
        result = sign_value(unsigned, self.key)
        self.results.append(result)
        return result
