"""Deterministic multi-party simulation of the VASP messaging network.

A SimWorld runs wallet, VASP and verifier actors over a message transport
with per-link delay/drop/reorder policy, next to (but separate from) a toy
ledger plane. Execution is a pure function of (scenario, seed): traces are
byte-identical across runs, and the run scans ledger payloads to confirm no
Travel Rule customer data leaked onto the transaction plane.

Interactions between *different* VASPs travel only as messages. A customer's
own wallet is treated as locally reachable by its VASP (the counter session),
so on-boarding and reconciliation drive the device directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import wire
from .claims import ClaimKind, PartyInfo, TravelRuleRecord, TravelRuleStatus
from .crypto import DeterministicRng, sha256, verify_signature
from .errors import WalletAttestError
from .hwemu import DeviceState
from .ledger import SignedTx, ToyLedger
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
from .vasp import DiscoveryAnswer, Resolution, Vasp
from .verifier import Verifier


@dataclass
class LinkPolicy:
    delay: int = 1
    drop_prob: float = 0.0
    reorder: bool = False


@dataclass
class _InFlight:
    deliver_at: int
    seq: int
    src: str
    dst: str
    msg: object


class SimWorld:
    def __init__(self, seed: int, confirm_delay: int = 2, swap_extra_delay: int = 2):
        self.clock = 0
        self.rng = DeterministicRng.from_int(seed)
        self.seed = seed
        self.actors: dict[str, object] = {}
        self.ledger = ToyLedger(confirm_delay=confirm_delay, swap_extra_delay=swap_extra_delay)
        self.queue: list[_InFlight] = []
        self.links: dict[tuple, LinkPolicy] = {}
        self._link_rngs: dict[tuple, DeterministicRng] = {}
        self.trace: list[TraceEvent] = []
        self._seq = 0
        self._msg_seq = 0

    # -- wiring ---------------------------------------------------------------

    def add_actor(self, actor) -> None:
        self.actors[actor.actor_id] = actor
        actor.world = self

    def set_link(self, src: str, dst: str, policy: LinkPolicy) -> None:
        self.links[(src, dst)] = policy

    def _link(self, src: str, dst: str) -> LinkPolicy:
        return self.links.get((src, dst)) or self.links.get(("*", "*")) or LinkPolicy()

    def _link_rng(self, src: str, dst: str) -> DeterministicRng:
        key = (src, dst)
        if key not in self._link_rngs:
            self._link_rngs[key] = self.rng.child(f"link:{src}->{dst}")
        return self._link_rngs[key]

    # -- tracing ----------------------------------------------------------------

    def record(self, actor: str, kind: str, detail) -> None:
        if isinstance(detail, str):
            payload = detail.encode()
        elif isinstance(detail, bytes):
            payload = detail
        else:
            payload = wire.encode(detail)
        self._seq += 1
        self.trace.append(
            TraceEvent(tick=self.clock, seq=self._seq, actor=actor, kind=kind, detail=payload)
        )

    def trace_lines(self) -> list[str]:
        return [wire.encode(ev).hex() for ev in self.trace]

    def trace_bytes(self) -> bytes:
        return ("\n".join(self.trace_lines()) + "\n").encode()

    # -- messaging ----------------------------------------------------------------

    def send(self, src: str, dst: str, msg) -> None:
        policy = self._link(src, dst)
        if policy.drop_prob > 0.0:
            if self._link_rng(src, dst).float01() < policy.drop_prob:
                self.record(src, f"drop>{dst}", msg)
                return
        delay = max(1, policy.delay)
        if policy.reorder and self._link_rng(src, dst).float01() < 0.5:
            delay += 1
        self._msg_seq += 1
        self.queue.append(
            _InFlight(
                deliver_at=self.clock + delay,
                seq=self._msg_seq,
                src=src,
                dst=dst,
                msg=msg,
            )
        )
        self.record(src, f"send>{dst}", msg)

    def submit_tx(self, actor_id: str, tx: SignedTx) -> bytes:
        digest = self.ledger.submit(tx, now=self.clock)
        self.record(actor_id, "ledger-submit", digest.hex())
        return digest

    # -- time ------------------------------------------------------------------------

    def begin_tick(self) -> None:
        self.clock += 1
        for actor in self.actors.values():
            actor.on_tick(self.clock)

    def finish_tick(self) -> None:
        due = sorted(
            (m for m in self.queue if m.deliver_at <= self.clock),
            key=lambda m: (m.deliver_at, m.seq),
        )
        for m in due:
            self.queue.remove(m)
            self.record(m.dst, f"deliver<{m.src}", m.msg)
            self.actors[m.dst].handle(m.src, m.msg)
        for digest in self.ledger.advance(self.clock):
            self.record("ledger", "ledger-confirm", digest.hex())

    def step(self, n: int = 1) -> None:
        for _ in range(n):
            self.begin_tick()
            self.finish_tick()

    def idle(self) -> bool:
        return not self.queue and not self.ledger.pending


def submit_tx(world: SimWorld, tx: SignedTx) -> bytes:
    return world.submit_tx("external", tx)


def step(world: SimWorld, n: int = 1) -> list[TraceEvent]:
    mark = len(world.trace)
    world.step(n)
    return world.trace[mark:]


# --- actors ------------------------------------------------------------------------


class Actor:
    actor_id: str
    world: SimWorld

    def on_tick(self, clock: int) -> None:
        pass

    def handle(self, src: str, msg) -> None:
        raise NotImplementedError


class VerifierActor(Actor):
    def __init__(self, actor_id: str, verifier: Verifier):
        self.actor_id = actor_id
        self.verifier = verifier

    def on_tick(self, clock: int) -> None:
        self.verifier.clock = clock

    def handle(self, src: str, msg) -> None:
        if isinstance(msg, ChallengeRequest):
            session_id, nonce = self.verifier.new_challenge(msg.requester_id)
            self.world.send(
                self.actor_id,
                src,
                ChallengeResponse(session_id=session_id, nonce=nonce, context=msg.context),
            )
        elif isinstance(msg, EvidenceSubmission):
            result = self.verifier.appraise(msg.session_id, msg.evidence, msg.policy_id)
            self.world.send(
                self.actor_id, msg.result_to, ResultDelivery(result=result, context=msg.context)
            )


class WalletActor(Actor):
    def __init__(self, actor_id: str, device: DeviceState, holder: str, funds: int, auth_secret: bytes):
        self.actor_id = actor_id
        self.device = device
        self.holder = holder
        self.funds = funds
        self.auth_secret = auth_secret
        self.vasp_actor: str | None = None
        self.vaan = 0
        self.handle_id: str | None = None
        self._registered_public: bytes | None = None
        self._pending_attest: dict[str, EvidenceRequest] = {}
        self._pending_transfers: dict[str, tuple[bytes, int]] = {}
        self._xfer_seq = 0
        self.decisions: list[PreAuthDecision] = []

    def on_tick(self, clock: int) -> None:
        self.device.clock = clock

    def public_key(self) -> bytes:
        if self.handle_id is not None and self.handle_id in self.device.keys:
            return self.device.keys[self.handle_id].public_key
        if self._registered_public is not None:  # key may have been erased
            return self._registered_public
        raise WalletAttestError(f"wallet {self.actor_id} has no registered key yet")

    def start_transfer(self, beneficiary_key: bytes, amount: int) -> str:
        self._xfer_seq += 1
        context = f"xfer:{self.actor_id}:{self._xfer_seq}"
        self._pending_transfers[context] = (beneficiary_key, amount)
        self.world.send(
            self.actor_id,
            self.vasp_actor,
            PreAuthNotify(
                vaan=self.vaan, beneficiary_key=beneficiary_key, amount=amount, context=context
            ),
        )
        return context

    def handle(self, src: str, msg) -> None:
        if isinstance(msg, EvidenceRequest):
            self._pending_attest[msg.context] = msg
            self.world.send(
                self.actor_id,
                msg.verifier_actor,
                ChallengeRequest(requester_id=self.actor_id, context=msg.context),
            )
        elif isinstance(msg, ChallengeResponse):
            req = self._pending_attest.pop(msg.context, None)
            if req is None:
                return
            selection = [
                (ClaimKind.KEY_PROVENANCE, self.handle_id),
                (ClaimKind.KEY_TYPE, self.handle_id),
                ClaimKind.SYSTEM_CONFIG,
                ClaimKind.GEO_LOCATION,
            ]
            evidence = self.device.quote(msg.nonce, selection)
            self.world.send(
                self.actor_id,
                src,
                EvidenceSubmission(
                    session_id=msg.session_id,
                    evidence=evidence,
                    policy_id=req.policy_id,
                    result_to=req.result_to,
                    context=msg.context,
                ),
            )
        elif isinstance(msg, PreAuthDecision):
            self.decisions.append(msg)
            pending = self._pending_transfers.pop(msg.context, None)
            if pending is None or not msg.approved:
                return
            beneficiary_key, amount = pending
            body = SignedTx(
                from_key=self.public_key(),
                to_key=beneficiary_key,
                amount=amount,
                seq=self.device.counter + 1,
                claimant_key=b"",
                bundle_digest=b"",
                signature=b"",
            )
            signature = self.device.sign_transaction(self.handle_id, wire.signing_bytes(body))
            tx = SignedTx(
                body.from_key, body.to_key, body.amount, body.seq, b"", b"", signature
            )
            try:
                digest = self.world.submit_tx(self.actor_id, tx)
            except WalletAttestError as e:
                self.world.record(self.actor_id, "ledger-reject", str(e))
                return
            self.world.send(
                self.actor_id,
                self.vasp_actor,
                LedgerTxNotice(
                    tx_digest=digest,
                    vaan=self.vaan,
                    beneficiary_key=beneficiary_key,
                    amount=amount,
                ),
            )


@dataclass
class _PendingTransfer:
    context: str
    vaan: int
    beneficiary_key: bytes
    amount: int
    replies_needed: int = 0
    known_at: int | None = None  # vasp code
    withheld: bool = False
    resolution: Resolution | None = None
    home_actor: str | None = None
    orig_result: object = None
    bene_result: object = None
    needs_bene: bool = False
    decided: bool = False


@dataclass(frozen=True)
class DirectoryEntry:
    actor_id: str
    vasp_code: int
    transport_public: bytes
    info_exchange: bool
    discovery_responses: bool


class VaspActor(Actor):
    def __init__(
        self,
        actor_id: str,
        vasp: Vasp,
        verifier: Verifier,
        verifier_actor_id: str,
        shared_asp_actor_id: str,
        route: str = "2a",
        policy_id: str = "baseline",
    ):
        self.actor_id = actor_id
        self.vasp = vasp
        self.verifier = verifier
        self.verifier_actor_id = verifier_actor_id
        self.shared_asp_actor_id = shared_asp_actor_id
        self.route = route
        self.policy_id = policy_id
        self.directory: list[DirectoryEntry] = []
        self.own_wallets: dict[int, WalletActor] = {}
        self.pending: dict[str, _PendingTransfer] = {}
        self.decisions: list[tuple[str, bool, str]] = []
        self._home_for_key: dict[bytes, str] = {}
        self.reconcile_reports: list = []

    def on_tick(self, clock: int) -> None:
        self.vasp.clock = clock

    # -- scheduled local operations (customer present at the counter) --------

    def do_onboard(self, wallet: WalletActor) -> None:
        party = PartyInfo(name=wallet.holder, vaan=0, public_key=b"")
        account, certificate = self.vasp.onboard_customer(
            party,
            wallet.device,
            self.verifier,
            auth_secret=wallet.auth_secret,
            policy_id=self.policy_id,
        )
        wallet.vasp_actor = self.actor_id
        wallet.vaan = account.vaan
        wallet.handle_id = account.primary_key().handle
        wallet._registered_public = account.primary_key().public_key
        self.own_wallets[account.vaan] = wallet
        if wallet.funds:
            self.world.ledger.credit(account.primary_key().public_key, wallet.funds)
        self.world.record(self.actor_id, "onboard", certificate)

    def do_offboard(self, wallet: WalletActor, cooperate: bool = True) -> None:
        account = self.vasp.accounts[wallet.vaan]
        try:
            report = self.vasp.offboard_customer(
                account, wallet.device, self.verifier,
                perform_erasure=cooperate, policy_id=self.policy_id,
            )
            self.world.record(self.actor_id, "offboard", f"{report.vaan} receipts={len(report.receipts)}")
        except WalletAttestError as e:
            self.world.record(self.actor_id, "offboard-failed", f"{type(e).__name__}: {e}")

    def do_reconcile(self) -> None:
        usage_logs = {
            w.device.device_id: list(w.device.usage_log)
            for w in self.own_wallets.values()
        }
        report = self.vasp.reconcile(self.world.ledger, usage_logs)
        self.reconcile_reports.append(report)
        summary = json.dumps(
            {
                "missing_records": len(report.ledger_missing_record),
                "unconfirmed": len(report.records_unconfirmed),
                "divergences": len(report.order_divergences),
                "retroactive": len(report.retroactive_rejections),
            },
            sort_keys=True,
        )
        self.world.record(self.actor_id, "reconcile", summary)

    # -- message handling ---------------------------------------------------------

    def handle(self, src: str, msg) -> None:
        if isinstance(msg, PreAuthNotify):
            self._on_preauth(msg)
        elif isinstance(msg, DiscoveryReply):
            self._on_discovery_reply(msg)
        elif isinstance(msg, DiscoveryQuery):
            self._answer_discovery(src, msg)
        elif isinstance(msg, ResultDelivery):
            self._on_result(msg)
        elif isinstance(msg, CrossVaspAppraisalRequest):
            self._on_cross_request(msg)
        elif isinstance(msg, LedgerTxNotice):
            self._on_tx_notice(msg)
        elif isinstance(msg, TravelRuleExchange):
            self._on_exchange(src, msg)
        elif isinstance(msg, TravelRuleAck):
            self._on_ack(msg)

    def _on_preauth(self, msg: PreAuthNotify) -> None:
        pending = _PendingTransfer(
            context=msg.context,
            vaan=msg.vaan,
            beneficiary_key=msg.beneficiary_key,
            amount=msg.amount,
        )
        self.pending[msg.context] = pending
        if self.vasp.account_for_key(msg.beneficiary_key) is not None:
            pending.resolution = Resolution.OWN_CUSTOMER
            self._start_attestation(pending)
            return
        if not self.directory:
            pending.resolution = Resolution.UNKNOWN
            self._start_attestation(pending)
            return
        pending.replies_needed = len(self.directory)
        for entry in self.directory:
            self.world.send(
                self.actor_id,
                entry.actor_id,
                DiscoveryQuery(query_id=msg.context, address=msg.beneficiary_key),
            )

    def _answer_discovery(self, src: str, msg: DiscoveryQuery) -> None:
        if self.vasp.account_for_key(msg.address) is not None:
            if self.vasp.jurisdiction.discovery_responses:
                answer = DiscoveryAnswer.KNOWN_AT
            else:
                answer = DiscoveryAnswer.PRIVACY_WITHHELD
        else:
            answer = DiscoveryAnswer.UNKNOWN
        self.world.send(
            self.actor_id,
            src,
            DiscoveryReply(query_id=msg.query_id, answer=answer, vasp_code=self.vasp.vasp_code),
        )

    def _entry_for_code(self, code: int) -> DirectoryEntry | None:
        return next((e for e in self.directory if e.vasp_code == code), None)

    def _on_discovery_reply(self, msg: DiscoveryReply) -> None:
        pending = self.pending.get(msg.query_id)
        if pending is None or pending.resolution is not None:
            return
        pending.replies_needed -= 1
        if msg.answer is DiscoveryAnswer.KNOWN_AT and pending.known_at is None:
            pending.known_at = msg.vasp_code
        elif msg.answer is DiscoveryAnswer.PRIVACY_WITHHELD:
            pending.withheld = True
        if pending.replies_needed > 0:
            return
        if pending.known_at is not None:
            entry = self._entry_for_code(pending.known_at)
            if entry is None or not entry.info_exchange or not self.vasp.jurisdiction.info_exchange:
                pending.resolution = Resolution.MEMBER_NO_CHANNEL
            else:
                pending.resolution = Resolution.MEMBER
                pending.home_actor = entry.actor_id
        else:
            pending.resolution = Resolution.UNKNOWN
        self._start_attestation(pending)

    def _start_attestation(self, pending: _PendingTransfer) -> None:
        if pending.resolution in (Resolution.MEMBER_NO_CHANNEL,):
            self._decide(pending)  # rejected before any attestation round-trip
            return
        account = self.vasp.accounts.get(pending.vaan)
        if account is None:
            self._send_decision(pending, approved=False, reason="UnknownAccount")
            return
        wallet = self.own_wallets.get(pending.vaan)
        self.world.send(
            self.actor_id,
            wallet.actor_id,
            EvidenceRequest(
                verifier_actor=self.verifier_actor_id,
                policy_id=self.policy_id,
                result_to=self.actor_id,
                context=pending.context + "#orig",
            ),
        )
        pending.needs_bene = pending.resolution in (Resolution.OWN_CUSTOMER, Resolution.MEMBER)
        if not pending.needs_bene:
            return
        bene_verifier = (
            self.shared_asp_actor_id if self.route == "2b" else self.verifier_actor_id
        )
        if pending.resolution is Resolution.OWN_CUSTOMER:
            bene_vaan = self.vasp.key_index[pending.beneficiary_key]
            bene_wallet = self.own_wallets[bene_vaan]
            self.world.send(
                self.actor_id,
                bene_wallet.actor_id,
                EvidenceRequest(
                    verifier_actor=bene_verifier,
                    policy_id=self.policy_id,
                    result_to=self.actor_id,
                    context=pending.context + "#bene",
                ),
            )
        else:
            self.world.send(
                self.actor_id,
                pending.home_actor,
                CrossVaspAppraisalRequest(
                    beneficiary_key=pending.beneficiary_key,
                    verifier_actor=bene_verifier,
                    policy_id=self.policy_id,
                    result_to=self.actor_id,
                    context=pending.context + "#bene",
                ),
            )

    def _on_cross_request(self, msg: CrossVaspAppraisalRequest) -> None:
        account = self.vasp.account_for_key(msg.beneficiary_key)
        if account is None:
            return
        wallet = self.own_wallets.get(account.vaan)
        if wallet is None:
            return
        self.world.send(
            self.actor_id,
            wallet.actor_id,
            EvidenceRequest(
                verifier_actor=msg.verifier_actor,
                policy_id=msg.policy_id,
                result_to=msg.result_to,
                context=msg.context,
            ),
        )

    def _on_result(self, msg: ResultDelivery) -> None:
        context, _, leg = msg.context.rpartition("#")
        pending = self.pending.get(context)
        self.vasp.archived_results.setdefault(msg.result.device_id, []).append(msg.result)
        if pending is None or pending.decided:
            return
        if leg == "orig":
            pending.orig_result = msg.result
        elif leg == "bene":
            pending.bene_result = msg.result
        if pending.orig_result is not None and (
            not pending.needs_bene or pending.bene_result is not None
        ):
            self._decide(pending)

    def _decide(self, pending: _PendingTransfer) -> None:
        pending.decided = True
        account = self.vasp.accounts.get(pending.vaan)
        if pending.resolution is Resolution.MEMBER_NO_CHANNEL:
            decision_approved = False
            reason = "CrossJurisdiction"
            window_end = 0
            post_verify = False
        else:
            account.last_result = pending.orig_result
            min_loa = self.vasp.policy.min_loa
            if pending.needs_bene and (
                not pending.bene_result.passed
                or (pending.bene_result.loa or 0) < min_loa
            ):
                decision_approved = False
                reason = "BeneficiaryAssurance"
                window_end = 0
                post_verify = False
            else:
                decision = self.vasp.preauthorize_resolved(
                    account, pending.beneficiary_key, pending.amount, pending.resolution
                )
                decision_approved = decision.approved
                reason = decision.reason
                window_end = decision.window_end or 0
                post_verify = decision.post_verify
        if pending.home_actor is not None:
            self._home_for_key[pending.beneficiary_key] = pending.home_actor
        wallet = self.own_wallets.get(pending.vaan)
        self.decisions.append((pending.context, decision_approved, reason))
        self.world.record(
            self.actor_id,
            "decision",
            f"{pending.context} approved={decision_approved} reason={reason}",
        )
        self.world.send(
            self.actor_id,
            wallet.actor_id,
            PreAuthDecision(
                approved=decision_approved,
                reason=reason,
                window_end=window_end,
                post_verify=post_verify,
                context=pending.context,
            ),
        )

    def _on_tx_notice(self, msg: LedgerTxNotice) -> None:
        account = self.vasp.accounts.get(msg.vaan)
        if account is None:
            return
        self.vasp.note_outgoing_tx(msg.tx_digest, account)
        own_bene = self.vasp.account_for_key(msg.beneficiary_key)
        if own_bene is not None:
            record = TravelRuleRecord(
                originator=account.party,
                beneficiary=own_bene.party,
                amount=msg.amount,
                tx_digest=msg.tx_digest,
                status=TravelRuleStatus.VERIFIED,
            )
            self.vasp.verify_record(record)
            return
        record = TravelRuleRecord(
            originator=account.party,
            beneficiary=PartyInfo(name="", vaan=0, public_key=msg.beneficiary_key),
            amount=msg.amount,
            tx_digest=msg.tx_digest,
            status=TravelRuleStatus.PRE_AUTHORIZED,
        )
        self.vasp.verify_record(record)
        home = self._home_for_key.get(msg.beneficiary_key)
        if home is not None:
            transcript = sha256(b"tr-channel", msg.tx_digest)
            self.world.send(
                self.actor_id,
                home,
                TravelRuleExchange(
                    record=record, channel_sig=self.vasp.transport.sign(transcript)
                ),
            )

    def _on_exchange(self, src: str, msg: TravelRuleExchange) -> None:
        record = msg.record
        origin_code = record.originator.vaan >> 32
        entry = self._entry_for_code(origin_code)
        transcript = sha256(b"tr-channel", record.tx_digest)
        if entry is None or not verify_signature(
            entry.transport_public, transcript, msg.channel_sig
        ):
            self.world.record(self.actor_id, "channel-auth-failure", src)
            return
        account = self.vasp.account_for_key(record.beneficiary.public_key)
        if account is None:
            self.world.send(
                self.actor_id,
                src,
                TravelRuleAck(
                    tx_digest=record.tx_digest,
                    ok=False,
                    reason="CounterpartyUnknownParty",
                    beneficiary=record.beneficiary,
                    channel_sig=self.vasp.transport.sign(transcript),
                ),
            )
            return
        verified = TravelRuleRecord(
            originator=record.originator,
            beneficiary=account.party,
            amount=record.amount,
            tx_digest=record.tx_digest,
            status=TravelRuleStatus.VERIFIED,
        )
        self.vasp.verify_record(verified)
        self.vasp.exchanged_parties.append(record.originator)
        self.world.send(
            self.actor_id,
            src,
            TravelRuleAck(
                tx_digest=record.tx_digest,
                ok=True,
                reason="",
                beneficiary=account.party,
                channel_sig=self.vasp.transport.sign(transcript),
            ),
        )

    def _on_ack(self, msg: TravelRuleAck) -> None:
        record = self.vasp.records.get(msg.tx_digest)
        if record is None:
            return
        if not msg.ok:
            self.world.record(self.actor_id, "exchange-deferred", msg.reason)
            return
        verified = TravelRuleRecord(
            originator=record.originator,
            beneficiary=msg.beneficiary,
            amount=record.amount,
            tx_digest=record.tx_digest,
            status=TravelRuleStatus.VERIFIED,
        )
        self.vasp.verify_record(verified)
        self.vasp.exchanged_parties.append(msg.beneficiary)
