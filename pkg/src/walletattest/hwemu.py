"""Software emulation of a wallet's trusted hardware.

A DeviceState owns a key hierarchy rooted at an endorsement key (EK), a bank
of 8 hash-extend PCR registers, a monotonic counter tied to transaction
signing, an append-only usage log, and sealed key migration. Private key
bytes never leave the device except inside a sealed MigrationBlob; the whole
device state serializes canonically, which models its internal shielded
storage (not an externally conveyed output).

All behaviour is a pure function of the creation seed and the operation
sequence, so identical runs produce byte-identical device snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import wire
from .claims import (
    CertLink,
    Claim,
    ClaimKind,
    CreationOrigin,
    DeviceIdentity,
    ErasureBody,
    ErasureReceipt,
    Evidence,
    GeoLocationBody,
    HardwareClass,
    KeyKind,
    KeyProvenanceBody,
    KeyTypeBody,
    MigrationBlob,
    ReferenceManifest,
    SignatureOriginBody,
    SystemConfigBody,
    UsageEntry,
    UsageLogBody,
    sign_value,
)
from .crypto import DIGEST_LEN, NONCE_LEN, DeterministicRng, KeyPair, auth_digest, seal, sha256, unseal
from .errors import (
    AuthFailure,
    EmptySelection,
    IndexOutOfRange,
    IntegrityFailure,
    KeyErased,
    ManifestMismatch,
    NonMigratableKey,
    ParentErased,
    UnknownKey,
    UnknownManifest,
    UnknownParent,
    WrongKeyRole,
)

PCR_COUNT = 8
TX_PCR = 7  # reserved for the transaction usage chain
ZERO_DIGEST = bytes(DIGEST_LEN)


@wire.wire_type(0x14)
@dataclass
class KeyRecord:
    handle: str
    kind: KeyKind
    migratable: bool
    parent: str | None
    public_key: bytes
    private_key: bytes
    created_at: int
    creation_origin: CreationOrigin
    source_device: str = ""

    WIRE_FIELDS = (
        ("handle", "str"),
        ("kind", ("enum", KeyKind)),
        ("migratable", "bool"),
        ("parent", ("opt", "str")),
        ("public_key", "bytes"),
        ("private_key", "bytes"),
        ("created_at", "u64"),
        ("creation_origin", ("enum", CreationOrigin)),
        ("source_device", "str"),
    )

    def keypair(self) -> KeyPair:
        return KeyPair(private_bytes=self.private_key, public_bytes=self.public_key)


@wire.wire_type(0x18)
@dataclass(frozen=True)
class PcrExtendRecord:
    index: int
    measurement: bytes

    WIRE_FIELDS = (("index", "u8"), ("measurement", "bytes"))


def pcr_step(old: bytes, measurement: bytes) -> bytes:
    """One hash-extend step: SHA-256(old || measurement)."""
    return sha256(old + measurement)


def replay_pcrs(history) -> list[bytes]:
    """Recompute a PCR bank from scratch by replaying extend records."""
    bank = [ZERO_DIGEST] * PCR_COUNT
    for rec in history:
        bank[rec.index] = pcr_step(bank[rec.index], rec.measurement)
    return bank


def config_digest_of(components) -> bytes:
    h = sha256(b"config", *(c.encode() for c in components))
    return h


def default_components(manifest_ref: str, manufacturer_id: str) -> tuple:
    return (
        f"hw:{manufacturer_id}/{manifest_ref}",
        "fw:boot-1.0",
        "os:walletos-1.0",
    )


@wire.wire_type(0x15)
@dataclass
class DeviceState:
    device_id: str
    manifest_ref: str
    keys: dict = field(default_factory=dict)
    pcr_bank: list = field(default_factory=lambda: [ZERO_DIGEST] * PCR_COUNT)
    counter: int = 0
    usage_log: list = field(default_factory=list)
    erased: dict = field(default_factory=dict)  # handle -> ErasureReceipt
    config_digest: bytes = ZERO_DIGEST
    components: list = field(default_factory=list)
    location: GeoLocationBody = field(default_factory=lambda: GeoLocationBody(0.0, 0.0, 0.0))
    certifications: list = field(default_factory=list)
    pcr_history: list = field(default_factory=list)
    clock: int = 0
    rng_state: bytes = ZERO_DIGEST
    rng_counter: int = 0

    WIRE_FIELDS = (
        ("device_id", "str"),
        ("manifest_ref", "str"),
        ("keys", ("map", "str", ("wire", KeyRecord))),
        ("pcr_bank", ("list", "bytes")),
        ("counter", "u64"),
        ("usage_log", ("list", ("wire", UsageEntry))),
        ("erased", ("map", "str", ("wire", ErasureReceipt))),
        ("config_digest", "bytes"),
        ("components", ("list", "str")),
        ("location", ("wire", GeoLocationBody)),
        ("certifications", ("list", ("wire", CertLink))),
        ("pcr_history", ("list", ("wire", PcrExtendRecord))),
        ("clock", "u64"),
        ("rng_state", "bytes"),
        ("rng_counter", "u64"),
    )

    # -- internal helpers ---------------------------------------------------

    def _rng_bytes(self, n: int) -> bytes:
        rng = DeterministicRng(self.rng_state)
        rng.restore((self.rng_state, self.rng_counter))
        out = rng.bytes(n)
        self.rng_state, self.rng_counter = rng.snapshot()
        return out

    def _ek(self) -> KeyRecord:
        return next(k for k in self.keys.values() if k.kind is KeyKind.ENDORSEMENT)

    def _dik(self) -> KeyRecord:
        return next(k for k in self.keys.values() if k.kind is KeyKind.DEVICE_IDENTITY)

    def _fresh_handle(self, public_key: bytes) -> str:
        base = sha256(b"handle", public_key)[:8].hex()
        handle = base
        n = 1
        while handle in self.keys or handle in self.erased:
            n += 1
            handle = f"{base}+{n}"
        return handle

    def _install(
        self,
        kind: KeyKind,
        migratable: bool,
        parent: str | None,
        private_key: bytes,
        origin: CreationOrigin,
        source_device: str = "",
    ) -> KeyRecord:
        pair = KeyPair.from_seed(private_key)
        record = KeyRecord(
            handle=self._fresh_handle(pair.public_bytes),
            kind=kind,
            migratable=migratable,
            parent=parent,
            public_key=pair.public_bytes,
            private_key=pair.private_bytes,
            created_at=self.clock,
            creation_origin=origin,
            source_device=source_device,
        )
        self.keys[record.handle] = record
        if parent is not None:
            parent_rec = self.keys[parent]
            link = CertLink(
                child_public_key=record.public_key,
                parent_public_key=parent_rec.public_key,
                child_kind=kind,
                migratable=migratable,
                creation_origin=origin,
                signature=b"",
            )
            self.certifications.append(sign_value(link, parent_rec.keypair()))
        return record

    def _lookup(self, handle: str) -> KeyRecord:
        rec = self.keys.get(handle)
        if rec is None:
            if handle in self.erased:
                raise KeyErased(handle)
            raise UnknownKey(handle)
        return rec

    # -- public surface -------------------------------------------------------

    def public_identity(self) -> DeviceIdentity:
        return DeviceIdentity(
            device_id=self.device_id,
            ek_public=self._ek().public_key,
            dik_public=self._dik().public_key,
        )

    @property
    def dik_handle(self) -> str:
        return self._dik().handle

    @property
    def ek_handle(self) -> str:
        return self._ek().handle

    def application_handles(self) -> list[str]:
        return [h for h, k in self.keys.items() if k.kind is KeyKind.APPLICATION]

    def set_location(self, lat: float, lon: float, alt: float) -> None:
        self.location = GeoLocationBody(lat, lon, alt)

    def install_component(self, component: str) -> bytes:
        """Add a software/firmware component; changes the config digest."""
        self.components.append(component)
        self.config_digest = config_digest_of(self.components)
        return self.config_digest

    def create_key(self, parent: str, migratable: bool) -> str:
        if parent in self.erased:
            raise ParentErased(parent)
        if parent not in self.keys:
            raise UnknownParent(parent)
        seed = self._rng_bytes(32)
        record = self._install(
            KeyKind.APPLICATION, migratable, parent, seed, CreationOrigin.GENERATED_ONBOARD
        )
        return record.handle

    def sign_transaction(self, handle: str, message: bytes) -> bytes:
        rec = self._lookup(handle)
        if rec.kind is not KeyKind.APPLICATION:
            raise WrongKeyRole(f"{rec.kind.value} may not sign transactions")
        signature = rec.keypair().sign(message)
        digest = sha256(message)
        self.counter += 1
        self.pcr_bank[TX_PCR] = pcr_step(self.pcr_bank[TX_PCR], digest)
        self.pcr_history.append(PcrExtendRecord(TX_PCR, digest))
        self.usage_log.append(
            UsageEntry(
                counter_value=self.counter,
                signed_digest=digest,
                key_handle=handle,
                pcr_snapshot=self.pcr_bank[TX_PCR],
            )
        )
        return signature

    def pcr_extend(self, index: int, measurement: bytes) -> bytes:
        if not 0 <= index < PCR_COUNT:
            raise IndexOutOfRange(f"PCR index {index}")
        if len(measurement) != DIGEST_LEN:
            raise ValueError("measurement must be a 32-byte digest")
        self.pcr_bank[index] = pcr_step(self.pcr_bank[index], measurement)
        self.pcr_history.append(PcrExtendRecord(index, measurement))
        return self.pcr_bank[index]

    def provenance_links(self, handle: str) -> tuple:
        """Certification chain from a key up to (excluding) the EK."""
        rec = self._lookup(handle)
        links = []
        current = rec
        while current.parent is not None:
            link = next(
                l
                for l in self.certifications
                if l.child_public_key == current.public_key
            )
            links.append(link)
            current = self.keys[current.parent]
        return tuple(links)

    def _claims_for(self, kind: ClaimKind, subject: str | None) -> list[Claim]:
        if kind in (ClaimKind.KEY_PROVENANCE, ClaimKind.KEY_TYPE):
            handles = [subject] if subject else sorted(self.keys)
            out = []
            for h in handles:
                rec = self._lookup(h)
                if kind is ClaimKind.KEY_TYPE:
                    body = KeyTypeBody(kind=rec.kind, migratable=rec.migratable)
                else:
                    body = KeyProvenanceBody(
                        creation_origin=rec.creation_origin,
                        links=self.provenance_links(h),
                        source_device=rec.source_device,
                    )
                out.append(Claim(kind=kind, subject=h, body=body))
            return out
        if kind is ClaimKind.GEO_LOCATION:
            return [Claim(kind, self.device_id, self.location)]
        if kind is ClaimKind.USAGE_LOG:
            body = UsageLogBody(entries=tuple(self.usage_log), pcr7=self.pcr_bank[TX_PCR])
            return [Claim(kind, self.device_id, body)]
        if kind is ClaimKind.SYSTEM_CONFIG:
            body = SystemConfigBody(
                config_digest=self.config_digest,
                components=tuple(self.components),
                pcrs=tuple(self.pcr_bank),
            )
            return [Claim(kind, self.device_id, body)]
        if kind is ClaimKind.SIGNATURE_ORIGIN:
            entries = [
                e for e in self.usage_log if subject is None or e.key_handle == subject
            ]
            return [
                Claim(
                    kind,
                    e.key_handle,
                    SignatureOriginBody(
                        key_handle=e.key_handle,
                        signed_digest=e.signed_digest,
                        counter_value=e.counter_value,
                    ),
                )
                for e in entries
            ]
        if kind is ClaimKind.ERASURE:
            handles = [subject] if subject else sorted(self.erased)
            out = []
            for h in handles:
                receipt = self.erased.get(h)
                if receipt is None:
                    raise UnknownKey(h)
                body = ErasureBody(
                    key_handle=h,
                    public_key=receipt.public_key,
                    counter_value=receipt.counter_value,
                )
                out.append(Claim(kind, h, body))
            return out
        raise ValueError(kind)

    def quote(self, nonce: bytes, claim_selection) -> Evidence:
        """Produce signed evidence for the selected claims.

        claim_selection items are either a ClaimKind or a (ClaimKind, subject)
        pair; a None subject means every applicable subject on the device.
        """
        if len(nonce) != NONCE_LEN:
            raise ValueError(f"nonce must be {NONCE_LEN} bytes")
        selection = []
        for item in claim_selection:
            if isinstance(item, ClaimKind):
                selection.append((item, None))
            else:
                selection.append((item[0], item[1]))
        if not selection:
            raise EmptySelection("claim selection must be nonempty")
        claims = []
        for kind, subject in selection:
            claims.extend(self._claims_for(kind, subject))
        unsigned = Evidence(
            claims=tuple(claims),
            nonce=nonce,
            device_id=self.device_id,
            manifest_ref=self.manifest_ref,
            counter=self.counter,
            signature=b"",
        )
        return sign_value(unsigned, self._dik().keypair())

    def export_key(self, handle: str, auth_secret: bytes) -> MigrationBlob:
        rec = self._lookup(handle)
        if not rec.migratable:
            raise NonMigratableKey(handle)
        plaintext = wire.encode(rec)
        nonce12 = self._rng_bytes(12)
        payload = seal(
            plaintext, auth_secret, self.manifest_ref, self.device_id, nonce12
        )
        digest = auth_digest(auth_secret)
        tag = sha256(
            b"blob-integrity",
            payload,
            self.device_id.encode(),
            self.manifest_ref.encode(),
            digest,
        )
        return MigrationBlob(
            payload=payload,
            source_device=self.device_id,
            target_manifest_ref=self.manifest_ref,
            auth_digest=digest,
            integrity_tag=tag,
        )

    def import_blob(self, blob: MigrationBlob, auth_secret: bytes) -> str:
        if blob.target_manifest_ref != self.manifest_ref:
            raise ManifestMismatch(blob.target_manifest_ref)
        expected_tag = sha256(
            b"blob-integrity",
            blob.payload,
            blob.source_device.encode(),
            blob.target_manifest_ref.encode(),
            blob.auth_digest,
        )
        if expected_tag != blob.integrity_tag:
            raise IntegrityFailure("integrity tag mismatch")
        if auth_digest(auth_secret) != blob.auth_digest:
            raise AuthFailure("authorization secret mismatch")
        plaintext = unseal(
            blob.payload, auth_secret, blob.target_manifest_ref, blob.source_device
        )
        if plaintext is None:
            raise IntegrityFailure("sealed payload failed to open")
        source = wire.decode(plaintext)
        if not isinstance(source, KeyRecord):
            raise IntegrityFailure("sealed payload is not a key record")
        record = self._install(
            KeyKind.APPLICATION,
            source.migratable,
            self._dik().handle,
            source.private_key,
            CreationOrigin.INJECTED,
            source_device=blob.source_device,
        )
        return record.handle

    def erase_key(self, handle: str) -> ErasureReceipt:
        rec = self.keys.get(handle)
        if rec is None:
            raise UnknownKey(handle)
        if rec.kind is not KeyKind.APPLICATION:
            raise WrongKeyRole("device identity keys are permanent")
        unsigned = ErasureReceipt(
            device_id=self.device_id,
            key_handle=handle,
            public_key=rec.public_key,
            counter_value=self.counter,
            signature=b"",
        )
        receipt = sign_value(unsigned, self._dik().keypair())
        del self.keys[handle]
        self.erased[handle] = receipt
        return receipt

    def to_bytes(self) -> bytes:
        return wire.encode(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DeviceState":
        device = wire.decode(data)
        if not isinstance(device, cls):
            raise ValueError("buffer does not hold a device snapshot")
        return device


def create_device(rng_seed: bytes, manifest_ref: str, manifests: dict) -> DeviceState:
    """Instantiate a fresh device for a known model, purely from the seed."""
    if manifest_ref not in manifests:
        raise UnknownManifest(manifest_ref)
    manifest = manifests[manifest_ref]
    rng = DeterministicRng(sha256(b"device", rng_seed))
    ek_seed = rng.child("ek").bytes(32)
    dik_seed = rng.child("dik").bytes(32)
    op_rng = rng.child("ops")
    state, counter = op_rng.snapshot()

    components = list(default_components(manifest_ref, manifest.manufacturer_id))
    ek_pair = KeyPair.from_seed(ek_seed)
    device = DeviceState(
        device_id=sha256(b"device-id", ek_pair.public_bytes)[:16].hex(),
        manifest_ref=manifest_ref,
        config_digest=config_digest_of(components),
        components=components,
        rng_state=state,
        rng_counter=counter,
    )
    ek = device._install(KeyKind.ENDORSEMENT, False, None, ek_seed, CreationOrigin.GENERATED_ONBOARD)
    device._install(
        KeyKind.DEVICE_IDENTITY, False, ek.handle, dik_seed, CreationOrigin.GENERATED_ONBOARD
    )
    return device


def build_manifest(
    manifest_ref: str,
    manufacturer_id: str,
    hardware_class: HardwareClass = HardwareClass.TRUSTED_HARDWARE,
    extra_digests=(),
) -> ReferenceManifest:
    """Reference manifest whose approved set covers the default build."""
    approved = [config_digest_of(default_components(manifest_ref, manufacturer_id))]
    approved.extend(extra_digests)
    return ReferenceManifest(
        manifest_ref=manifest_ref,
        approved_config_digests=tuple(approved),
        hardware_class=hardware_class,
        manufacturer_id=manufacturer_id,
    )
