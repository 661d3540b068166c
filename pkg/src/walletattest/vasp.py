"""Relying-party VASP: accounts, certificates, Travel Rule, recovery.

A Vasp owns its customer accounts (VAAN-keyed), the key ownership/operator
registry, its Travel Rule record store, and the relying-party policy (minimum
LOA, daily limit, windows). Operations that need attestation drive a device
and a verifier directly; the netsim module wraps the same logic in messages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import wire
from .claims import (
    AttestationResult,
    Certificate,
    Claim,
    ClaimKind,
    CreationOrigin,
    ErasureReceipt,
    Evidence,
    PartyInfo,
    TravelRuleRecord,
    TravelRuleStatus,
    sign_value,
    verify_signed,
)
from .crypto import DeterministicRng, KeyPair, sha256
from .errors import (
    AccountOffBoarded,
    AttestationFailed,
    ChannelAuthFailure,
    CounterpartyUnknownParty,
    ErasureNotProven,
    KeyTooShort,
    NoTransactionContext,
    PartyInfoIncomplete,
    RecoveryNotJustified,
    StaleEvidence,
)
from .hwemu import DeviceState
from .ledger import SignedTx, ToyLedger, tx_digest, unsigned_tx
from .verifier import Verifier


def derive_vasp_code(public_key: bytes) -> int:
    """VASP code: big-endian integer of the last 4 bytes of the public key."""
    if len(public_key) < 4:
        raise KeyTooShort(f"key has {len(public_key)} bytes, need at least 4")
    return int.from_bytes(public_key[-4:], "big")


@dataclass(frozen=True)
class Jurisdiction:
    name: str
    info_exchange: bool = True  # may send/receive Travel Rule customer info
    discovery_responses: bool = True  # may answer wallet-ownership queries


@dataclass
class RelyingPartyPolicy:
    min_loa: int = 3
    daily_limit: int = 3000
    preauth_window: int = 50  # ticks an approval stays open
    ticks_per_day: int = 1000
    recovery_evidence_window: int = 1000
    post_verify_deadline_days: int = 1


class Ownership(Enum):
    CUSTOMER_OWNED = "customer_owned"


class Operator(Enum):
    CUSTOMER = "customer"
    VASP_CUSTODIAL = "vasp_custodial"


class AccountStatus(Enum):
    ACTIVE = "active"
    OFF_BOARDED = "off_boarded"


@dataclass
class AccountKeyRecord:
    handle: str  # on-device key handle
    public_key: bytes
    ownership: Ownership
    operator: Operator
    certificate: Certificate
    backup_blob: object = None  # MigrationBlob when the key is migratable
    last_keytype_at: int | None = None
    last_keytype_migratable: bool | None = None


@dataclass
class PreAuthorization:
    beneficiary_key: bytes
    amount: int
    window_end: int
    post_verify: bool
    day: int
    tx_digest: bytes | None = None


@dataclass
class CustomerAccount:
    vaan: int
    party: PartyInfo
    wallet_device_id: str
    key_records: list = field(default_factory=list)
    status: AccountStatus = AccountStatus.ACTIVE
    daily_spent: dict = field(default_factory=dict)  # day index -> approved units
    last_result: AttestationResult | None = None
    preauths: list = field(default_factory=list)

    def primary_key(self) -> AccountKeyRecord:
        return self.key_records[0]


class DecisionKind(Enum):
    APPROVED = "approved"
    DEFERRED = "deferred"
    REJECTED = "rejected"


class Resolution(Enum):
    """How the beneficiary of a direct transfer was resolved."""

    OWN_CUSTOMER = "own_customer"
    MEMBER = "member"  # beneficiary VASP located, info channel available
    MEMBER_NO_CHANNEL = "member_no_channel"  # located, jurisdiction blocks info
    MEMBER_PARTY_PENDING = "member_party_pending"  # located, party not yet known
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    reason: str = ""
    window_end: int | None = None
    post_verify: bool = False

    @property
    def approved(self) -> bool:
        return self.kind is DecisionKind.APPROVED


class DiscoveryAnswer(Enum):
    KNOWN_AT = "known_at"
    UNKNOWN = "unknown"
    PRIVACY_WITHHELD = "privacy_withheld"


@dataclass(frozen=True)
class DiscoveryResult:
    answer: DiscoveryAnswer
    vasp_code: int = 0


@dataclass
class RecoveryPlan:
    affected_vaan: int
    steps: tuple  # ordered step names
    evidence_bundle: tuple  # AttestationResults justifying the action


@dataclass
class RecoveryReport:
    plan: RecoveryPlan
    restored_handle: str | None = None
    sweep_digest: bytes | None = None
    executed: tuple = ()


@dataclass
class OffboardReport:
    vaan: int
    final_evidence: Evidence
    final_result: AttestationResult
    receipts: tuple
    device_id: str


@dataclass
class ReconciliationReport:
    ledger_missing_record: tuple  # confirmed regulated txs with no record
    records_unconfirmed: tuple  # records with no confirmed transaction
    order_divergences: tuple  # (digest signed earlier, digest signed later)
    retroactive_rejections: tuple


class Vasp:
    """One Virtual Asset Service Provider and its relying-party state."""

    def __init__(
        self,
        vasp_id: str,
        signing: KeyPair,
        transport: KeyPair,
        jurisdiction: Jurisdiction,
        policy: RelyingPartyPolicy,
        rng: DeterministicRng,
    ):
        self.vasp_id = vasp_id
        self.signing = signing
        self.transport = transport
        self.jurisdiction = jurisdiction
        self.policy = policy
        self.rng = rng
        self.vasp_code = derive_vasp_code(signing.public_bytes)
        self.clock = 0
        self.accounts: dict[int, CustomerAccount] = {}
        self.key_index: dict[bytes, int] = {}  # public key -> vaan
        self.records: dict[bytes, TravelRuleRecord] = {}
        self.record_day: dict[bytes, int] = {}
        self.tx_contexts: set[bytes] = set()
        self.archived_results: dict[str, list] = {}
        self.known_devices: set[str] = set()
        self.exchanged_parties: list[PartyInfo] = []
        self._next_seq = 0
        self._advertised_transport: bytes | None = None

    def advertised_transport_key(self) -> bytes:
        """Transport key published in the member directory.

        Normally the real transport public key; tests override it to model a
        counterparty whose channel identity does not match the directory.
        """
        return (
            self._advertised_transport
            if self._advertised_transport is not None
            else self.transport.public_bytes
        )

    @classmethod
    def create(
        cls,
        vasp_id: str,
        seed_rng: DeterministicRng,
        jurisdiction: Jurisdiction | None = None,
        policy: RelyingPartyPolicy | None = None,
    ) -> "Vasp":
        signing = KeyPair.from_seed(seed_rng.child("signing").bytes(32))
        transport = KeyPair.from_seed(seed_rng.child("transport").bytes(32))
        return cls(
            vasp_id=vasp_id,
            signing=signing,
            transport=transport,
            jurisdiction=jurisdiction or Jurisdiction(name=f"jur-{vasp_id}"),
            policy=policy or RelyingPartyPolicy(),
            rng=seed_rng.child("ops"),
        )

    # -- account plumbing -----------------------------------------------------

    def _assign_vaan(self) -> int:
        self._next_seq += 1
        return (self.vasp_code << 32) | self._next_seq

    def _day(self) -> int:
        return self.clock // self.policy.ticks_per_day

    def account_for_key(self, public_key: bytes) -> CustomerAccount | None:
        vaan = self.key_index.get(public_key)
        return self.accounts.get(vaan) if vaan is not None else None

    def _archive(self, device_id: str, result: AttestationResult) -> None:
        self.archived_results.setdefault(device_id, []).append(result)

    # -- attestation helper -----------------------------------------------------

    def attest_key(
        self,
        device: DeviceState,
        verifier: Verifier,
        handle: str,
        policy_id: str = "baseline",
        extra_kinds: tuple = (),
    ) -> tuple[Evidence, AttestationResult]:
        """Challenge, quote and appraise one on-device key."""
        session_id, nonce = verifier.new_challenge(self.vasp_id)
        selection = [
            (ClaimKind.KEY_PROVENANCE, handle),
            (ClaimKind.KEY_TYPE, handle),
            ClaimKind.SYSTEM_CONFIG,
        ]
        selection.extend(extra_kinds)
        evidence = device.quote(nonce, selection)
        result = verifier.appraise(session_id, evidence, policy_id)
        self._archive(device.device_id, result)
        return evidence, result

    def _provenance_acceptable(self, evidence: Evidence, handle: str) -> bool:
        for claim in evidence.claims_of(ClaimKind.KEY_PROVENANCE):
            if claim.subject != handle:
                continue
            body = claim.body
            if body.creation_origin is CreationOrigin.GENERATED_ONBOARD:
                return bool(body.links)
            return body.source_device in self.known_devices
        return False

    # -- on-boarding ------------------------------------------------------------

    def onboard_customer(
        self,
        party: PartyInfo,
        device: DeviceState,
        verifier: Verifier,
        key_handle: str | None = None,
        auth_secret: bytes | None = None,
        policy_id: str = "baseline",
    ) -> tuple[CustomerAccount, Certificate]:
        """On-board a wallet holder: attest, register keys, issue certificate.

        If the presented key's provenance cannot be verified back to the
        device EK (or it was injected from an unknown device), the customer is
        required to generate a fresh on-device key, which is then re-attested.
        """
        if not party.name:
            raise PartyInfoIncomplete("party name is required")
        handle = key_handle
        if handle is None:
            apps = device.application_handles()
            handle = apps[-1] if apps else device.create_key(device.dik_handle, False)

        evidence, result = self.attest_key(device, verifier, handle, policy_id)
        if not result.passed:
            raise AttestationFailed(result)
        if not self._provenance_acceptable(evidence, handle):
            # fresh key generated inside the wallet, then re-attested
            handle = device.create_key(device.dik_handle, migratable=False)
            evidence, result = self.attest_key(device, verifier, handle, policy_id)
            if not result.passed:
                raise AttestationFailed(result)

        key_record = device.keys[handle]
        migratable = key_record.migratable
        vaan = self._assign_vaan()
        certificate = sign_value(
            Certificate(
                subject_public_key=key_record.public_key,
                vaan=vaan,
                issuer_vasp_code=self.vasp_code,
                non_migratable_marking=result.passed and not migratable,
                provenance_known_marking=self._provenance_acceptable(evidence, handle),
                signature=b"",
            ),
            self.signing,
        )
        backup = None
        if migratable and auth_secret is not None:
            backup = device.export_key(handle, auth_secret)
        account = CustomerAccount(
            vaan=vaan,
            party=PartyInfo(name=party.name, vaan=vaan, public_key=key_record.public_key),
            wallet_device_id=device.device_id,
            key_records=[
                AccountKeyRecord(
                    handle=handle,
                    public_key=key_record.public_key,
                    ownership=Ownership.CUSTOMER_OWNED,
                    operator=Operator.CUSTOMER,
                    certificate=certificate,
                    backup_blob=backup,
                    last_keytype_at=self.clock,
                    last_keytype_migratable=migratable,
                )
            ],
            last_result=result,
        )
        self.accounts[vaan] = account
        self.key_index[key_record.public_key] = vaan
        self.known_devices.add(device.device_id)
        return account, certificate

    # -- pre-authorization --------------------------------------------------------

    def preauthorize_direct_transfer(
        self,
        account: CustomerAccount,
        beneficiary,
        amount: int,
        member_vasps: tuple = (),
    ) -> Decision:
        """Decide whether a direct wallet-to-wallet transfer may proceed.

        beneficiary is either a PartyInfo or a bare public key. Approval opens
        a tick window; an unresolved beneficiary within the daily limit is
        approved with a post-verification obligation.
        """
        beneficiary_key = (
            beneficiary.public_key if isinstance(beneficiary, PartyInfo) else beneficiary
        )
        resolution = self._resolve_beneficiary(beneficiary_key, beneficiary, member_vasps)
        return self.preauthorize_resolved(account, beneficiary_key, amount, resolution)

    def preauthorize_resolved(
        self,
        account: CustomerAccount,
        beneficiary_key: bytes,
        amount: int,
        resolution: Resolution,
    ) -> Decision:
        """Core pre-authorization decision with the beneficiary pre-resolved
        (the simulator resolves over discovery messages, the library resolves
        against direct member references)."""
        if account.status is not AccountStatus.ACTIVE:
            raise AccountOffBoarded(account.vaan)
        loa = account.last_result.loa if account.last_result else None
        if loa is None or loa < self.policy.min_loa:
            return Decision(DecisionKind.REJECTED, reason="LowAssurance")
        day = self._day()
        spent = account.daily_spent.get(day, 0)
        if spent + amount > self.policy.daily_limit:
            return Decision(DecisionKind.REJECTED, reason="DailyLimit")
        if resolution is Resolution.MEMBER_NO_CHANNEL:
            # without an information channel, transfers are only permitted
            # between wallets of the institution's own customers
            return Decision(DecisionKind.REJECTED, reason="CrossJurisdiction")
        if resolution is Resolution.MEMBER_PARTY_PENDING:
            return Decision(DecisionKind.DEFERRED, reason="CounterpartyPending")
        post_verify = resolution is Resolution.UNKNOWN

        account.daily_spent[day] = spent + amount
        window_end = self.clock + self.policy.preauth_window
        account.preauths.append(
            PreAuthorization(
                beneficiary_key=beneficiary_key,
                amount=amount,
                window_end=window_end,
                post_verify=post_verify,
                day=day,
            )
        )
        return Decision(
            DecisionKind.APPROVED, window_end=window_end, post_verify=post_verify
        )

    def _resolve_beneficiary(self, beneficiary_key, beneficiary, member_vasps) -> Resolution:
        if self.key_index.get(beneficiary_key) is not None:
            return Resolution.OWN_CUSTOMER
        home = None
        if isinstance(beneficiary, PartyInfo) and beneficiary.vaan:
            code = beneficiary.vaan >> 32
            home = next((m for m in member_vasps if m.vasp_code == code), None)
        else:
            home = next(
                (m for m in member_vasps if m.account_for_key(beneficiary_key) is not None),
                None,
            )
        if home is None:
            return Resolution.UNKNOWN
        if not home.jurisdiction.info_exchange or not self.jurisdiction.info_exchange:
            return Resolution.MEMBER_NO_CHANNEL
        if home.account_for_key(beneficiary_key) is None:
            return Resolution.MEMBER_PARTY_PENDING
        return Resolution.MEMBER

    def note_outgoing_tx(self, digest: bytes, account: CustomerAccount) -> None:
        """Bind a signed ledger transaction to its open pre-authorization."""
        self.tx_contexts.add(digest)
        for pa in reversed(account.preauths):
            if pa.tx_digest is None and pa.window_end >= self.clock:
                pa.tx_digest = digest
                return

    # -- discovery ---------------------------------------------------------------

    def query_private_wallet(self, address: bytes, member_vasps: tuple) -> DiscoveryResult:
        """Broadcast ownership discovery for an address across members."""
        for m in member_vasps:
            if m is self:
                continue
            if m.account_for_key(address) is not None:
                if not m.jurisdiction.discovery_responses:
                    return DiscoveryResult(DiscoveryAnswer.PRIVACY_WITHHELD)
                return DiscoveryResult(DiscoveryAnswer.KNOWN_AT, vasp_code=m.vasp_code)
        return DiscoveryResult(DiscoveryAnswer.UNKNOWN)

    # -- recovery -------------------------------------------------------------------

    def recover_lost_device(
        self,
        account: CustomerAccount,
        new_device: DeviceState,
        verifier: Verifier,
        ledger: ToyLedger | None = None,
        auth_secret: bytes | None = None,
    ) -> RecoveryReport:
        """Restore from backup blob, or sweep assets when the key was provably
        non-migratable. Requires recent key-type evidence either way."""
        key = account.primary_key()
        if (
            key.last_keytype_at is None
            or self.clock - key.last_keytype_at > self.policy.recovery_evidence_window
        ):
            raise StaleEvidence(
                "no key-type attestation within the recovery evidence window"
            )
        bundle = tuple(
            r
            for r in self.archived_results.get(account.wallet_device_id, [])
            if r.passed
        )
        executed = []
        if key.backup_blob is not None:
            plan = RecoveryPlan(
                affected_vaan=account.vaan,
                steps=("restore_blob", "reactivate_key"),
                evidence_bundle=bundle,
            )
            handle = new_device.import_blob(key.backup_blob, auth_secret or b"")
            executed.append("restore_blob")
            account.wallet_device_id = new_device.device_id
            key.handle = handle
            executed.append("reactivate_key")
            self.known_devices.add(new_device.device_id)
            self.archived_results.setdefault(new_device.device_id, []).extend(bundle)
            return RecoveryReport(plan=plan, restored_handle=handle, executed=tuple(executed))

        if key.last_keytype_migratable is False and ledger is not None:
            plan = RecoveryPlan(
                affected_vaan=account.vaan,
                steps=("sweep_assets_to_temporary_key",),
                evidence_bundle=bundle,
            )
            if not bundle:
                raise RecoveryNotJustified("no archived Pass result for the device")
            temp = KeyPair.from_seed(self.rng.child("recovery-temp").bytes(32))
            amount = ledger.balance(key.public_key)
            bundle_digest = sha256(b"bundle", *(wire.encode(r) for r in bundle))
            body = SignedTx(
                from_key=key.public_key,
                to_key=temp.public_bytes,
                amount=amount,
                seq=self.clock,
                claimant_key=self.signing.public_bytes,
                bundle_digest=bundle_digest,
                signature=b"",
            )
            tx = sign_value(body, self.signing)
            digest = ledger.submit(tx, now=self.clock)
            executed.append("sweep_assets_to_temporary_key")
            return RecoveryReport(plan=plan, sweep_digest=digest, executed=tuple(executed))

        raise RecoveryNotJustified(
            "no backup blob and no evidence the lost key was non-migratable"
        )

    # -- off-boarding ------------------------------------------------------------------

    def offboard_customer(
        self,
        account: CustomerAccount,
        device: DeviceState,
        verifier: Verifier,
        perform_erasure: bool = True,
        policy_id: str = "baseline",
    ) -> OffboardReport:
        """Close the account: final regulated-state snapshot plus erasure proof.

        Non-migratable customer keys must yield a valid ErasureReceipt; if the
        device does not cooperate the account stays Active.
        """
        if account.status is not AccountStatus.ACTIVE:
            raise AccountOffBoarded(account.vaan)
        key = account.primary_key()
        evidence, result = self.attest_key(
            device, verifier, key.handle, policy_id, extra_kinds=(ClaimKind.USAGE_LOG,)
        )
        receipts: list[ErasureReceipt] = []
        dik_public = device.public_identity().dik_public
        for rec in account.key_records:
            if rec.handle not in device.keys:
                continue
            needs_receipt = not device.keys[rec.handle].migratable
            if not perform_erasure:
                if needs_receipt:
                    raise ErasureNotProven(
                        f"device returned no erasure receipt for {rec.handle}"
                    )
                continue
            receipt = device.erase_key(rec.handle)
            if needs_receipt and not verify_signed(receipt, dik_public):
                raise ErasureNotProven(f"receipt for {rec.handle} failed verification")
            receipts.append(receipt)
        account.status = AccountStatus.OFF_BOARDED
        return OffboardReport(
            vaan=account.vaan,
            final_evidence=evidence,
            final_result=result,
            receipts=tuple(receipts),
            device_id=device.device_id,
        )

    # -- synchronization -----------------------------------------------------------------

    def verify_record(self, record) -> None:
        """Store a verified Travel Rule record (both sides call this)."""
        self.records[record.tx_digest] = record
        self.record_day.setdefault(record.tx_digest, self._day())

    def reconcile(self, ledger: ToyLedger, usage_logs: dict | None = None) -> ReconciliationReport:
        """Correlate ledger activity, Travel Rule records and usage logs.

        Reports (a) confirmed transfers from regulated keys lacking a record,
        (b) records whose transaction never confirmed, and (c) inversions
        between on-device signing order and ledger confirmation order.
        """
        regulated = set(self.key_index)
        confirmed_order: dict[bytes, int] = {}
        missing_record = []
        for pos, (tx, digest) in enumerate(zip(ledger.confirmed, ledger.confirmed_digests)):
            confirmed_order[digest] = pos
            if tx.from_key in regulated and digest not in self.records and not tx.is_recovery:
                missing_record.append(digest)

        unconfirmed = []
        retroactive = []
        deadline_days = self.policy.post_verify_deadline_days
        for digest, record in self.records.items():
            if digest in confirmed_order:
                continue
            unconfirmed.append(digest)
            if (
                record.status is TravelRuleStatus.PRE_AUTHORIZED
                and self._day() - self.record_day.get(digest, 0) >= deadline_days
            ):
                retroactive.append(digest)
                self.records[digest] = record.with_status(TravelRuleStatus.REJECTED)

        divergences = []
        for entries in (usage_logs or {}).values():
            signed = [e.signed_digest for e in entries if e.signed_digest in confirmed_order]
            for i in range(len(signed)):
                for j in range(i + 1, len(signed)):
                    if confirmed_order[signed[j]] < confirmed_order[signed[i]]:
                        divergences.append((signed[i], signed[j]))

        return ReconciliationReport(
            ledger_missing_record=tuple(missing_record),
            records_unconfirmed=tuple(unconfirmed),
            order_divergences=tuple(divergences),
            retroactive_rejections=tuple(retroactive),
        )


# --- two-party operations ---------------------------------------------------------


def _channel_handshake(a: Vasp, b: Vasp, context: bytes) -> None:
    """Mutual transport-key authentication; raises on any failed signature."""
    transcript = sha256(b"channel", a.transport.public_bytes, b.transport.public_bytes, context)
    sig_a = a.transport.sign(transcript)
    sig_b = b.transport.sign(transcript)
    from .crypto import verify_signature

    if not verify_signature(a.advertised_transport_key(), transcript, sig_a):
        raise ChannelAuthFailure(f"{a.vasp_id} transport identity mismatch")
    if not verify_signature(b.advertised_transport_key(), transcript, sig_b):
        raise ChannelAuthFailure(f"{b.vasp_id} transport identity mismatch")


def verify_travel_rule(
    originator_vasp: Vasp, beneficiary_vasp: Vasp, record: TravelRuleRecord
) -> Decision:
    """Exchange and verify originator/beneficiary info for one transaction.

    Only permitted with an open transaction context on the originator side;
    both sides store the record as Verified on success.
    """
    _channel_handshake(originator_vasp, beneficiary_vasp, record.tx_digest)
    if record.tx_digest not in originator_vasp.tx_contexts:
        raise NoTransactionContext(record.tx_digest.hex())
    if beneficiary_vasp.account_for_key(record.beneficiary.public_key) is None:
        raise CounterpartyUnknownParty(record.beneficiary.name or "<unnamed>")
    verified = record.with_status(TravelRuleStatus.VERIFIED)
    originator_vasp.verify_record(verified)
    beneficiary_vasp.verify_record(verified)
    originator_vasp.exchanged_parties.append(record.beneficiary)
    beneficiary_vasp.exchanged_parties.append(record.originator)
    return Decision(DecisionKind.APPROVED)
