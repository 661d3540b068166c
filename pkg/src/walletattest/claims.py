"""Claim, evidence, endorsement, result, certificate and Travel Rule types.

These are the structures exchanged between wallets, verifiers and VASPs. All
of them are immutable wire types (see wire.py); signed structures carry their
signature as the trailing field, computed over wire.signing_bytes(value).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from . import wire
from .crypto import DIGEST_LEN, NONCE_LEN, KeyPair, verify_signature
from .errors import UnknownManifest


class ClaimKind(Enum):
    KEY_PROVENANCE = "key_provenance"
    KEY_TYPE = "key_type"
    GEO_LOCATION = "geo_location"
    USAGE_LOG = "usage_log"
    SYSTEM_CONFIG = "system_config"
    SIGNATURE_ORIGIN = "signature_origin"
    ERASURE = "erasure"


class KeyKind(Enum):
    ENDORSEMENT = "endorsement_key"
    DEVICE_IDENTITY = "device_identity_key"
    APPLICATION = "application_key"


class CreationOrigin(Enum):
    GENERATED_ONBOARD = "generated_onboard"
    INJECTED = "injected"


class HardwareClass(Enum):
    TRUSTED_HARDWARE = "trusted_hardware"
    SOFTWARE_ONLY = "software_only"


class Verdict(Enum):
    PASS = "pass"
    FAIL = "fail"


class TravelRuleStatus(Enum):
    PRE_AUTHORIZED = "pre_authorized"
    VERIFIED = "verified"
    POST_VERIFIED = "post_verified"
    REJECTED = "rejected"


def _check_digest(name: str, value: bytes) -> None:
    if len(value) != DIGEST_LEN:
        raise ValueError(f"{name} must be {DIGEST_LEN} bytes, got {len(value)}")


# --- key certification chain ------------------------------------------------


@wire.wire_type(0x09)
@dataclass(frozen=True)
class CertLink:
    """One certification edge: parent key vouches for a child key's metadata."""

    child_public_key: bytes
    parent_public_key: bytes
    child_kind: KeyKind
    migratable: bool
    creation_origin: CreationOrigin
    signature: bytes

    WIRE_FIELDS = (
        ("child_public_key", "bytes"),
        ("parent_public_key", "bytes"),
        ("child_kind", ("enum", KeyKind)),
        ("migratable", "bool"),
        ("creation_origin", ("enum", CreationOrigin)),
        ("signature", "bytes"),
    )

    def verify(self) -> bool:
        return verify_signature(
            self.parent_public_key, wire.signing_bytes(self), self.signature
        )


# --- claim bodies -----------------------------------------------------------


@wire.wire_type(0x0A)
@dataclass(frozen=True)
class KeyProvenanceBody:
    creation_origin: CreationOrigin
    links: tuple  # certification chain, subject first, ending at the EK
    source_device: str  # originating device for injected keys, else ""

    WIRE_FIELDS = (
        ("creation_origin", ("enum", CreationOrigin)),
        ("links", ("list", ("wire", CertLink))),
        ("source_device", "str"),
    )

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))


@wire.wire_type(0x0B)
@dataclass(frozen=True)
class KeyTypeBody:
    kind: KeyKind
    migratable: bool

    WIRE_FIELDS = (
        ("kind", ("enum", KeyKind)),
        ("migratable", "bool"),
    )


@wire.wire_type(0x0C)
@dataclass(frozen=True)
class GeoLocationBody:
    lat: float
    lon: float
    alt: float

    WIRE_FIELDS = (("lat", "f64"), ("lon", "f64"), ("alt", "f64"))


@wire.wire_type(0x11)
@dataclass(frozen=True)
class UsageEntry:
    counter_value: int
    signed_digest: bytes
    key_handle: str
    pcr_snapshot: bytes

    WIRE_FIELDS = (
        ("counter_value", "u64"),
        ("signed_digest", "bytes"),
        ("key_handle", "str"),
        ("pcr_snapshot", "bytes"),
    )

    def __post_init__(self):
        _check_digest("signed_digest", self.signed_digest)
        _check_digest("pcr_snapshot", self.pcr_snapshot)


@wire.wire_type(0x0D)
@dataclass(frozen=True)
class UsageLogBody:
    entries: tuple
    pcr7: bytes

    WIRE_FIELDS = (
        ("entries", ("list", ("wire", UsageEntry))),
        ("pcr7", "bytes"),
    )

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        _check_digest("pcr7", self.pcr7)


@wire.wire_type(0x0E)
@dataclass(frozen=True)
class SystemConfigBody:
    config_digest: bytes
    components: tuple
    pcrs: tuple  # full PCR bank snapshot, boot-time registers included

    WIRE_FIELDS = (
        ("config_digest", "bytes"),
        ("components", ("list", "str")),
        ("pcrs", ("list", "bytes")),
    )

    def __post_init__(self):
        _check_digest("config_digest", self.config_digest)
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "pcrs", tuple(self.pcrs))


@wire.wire_type(0x0F)
@dataclass(frozen=True)
class SignatureOriginBody:
    key_handle: str
    signed_digest: bytes
    counter_value: int

    WIRE_FIELDS = (
        ("key_handle", "str"),
        ("signed_digest", "bytes"),
        ("counter_value", "u64"),
    )

    def __post_init__(self):
        _check_digest("signed_digest", self.signed_digest)


@wire.wire_type(0x10)
@dataclass(frozen=True)
class ErasureBody:
    key_handle: str
    public_key: bytes
    counter_value: int

    WIRE_FIELDS = (
        ("key_handle", "str"),
        ("public_key", "bytes"),
        ("counter_value", "u64"),
    )


_BODY_FOR_KIND = {
    ClaimKind.KEY_PROVENANCE: KeyProvenanceBody,
    ClaimKind.KEY_TYPE: KeyTypeBody,
    ClaimKind.GEO_LOCATION: GeoLocationBody,
    ClaimKind.USAGE_LOG: UsageLogBody,
    ClaimKind.SYSTEM_CONFIG: SystemConfigBody,
    ClaimKind.SIGNATURE_ORIGIN: SignatureOriginBody,
    ClaimKind.ERASURE: ErasureBody,
}


@wire.wire_type(0x01)
@dataclass(frozen=True)
class Claim:
    kind: ClaimKind
    subject: str  # key handle or device id
    body: object

    WIRE_FIELDS = (
        ("kind", ("enum", ClaimKind)),
        ("subject", "str"),
        ("body", ("wire", None)),
    )

    def __post_init__(self):
        expected = _BODY_FOR_KIND[self.kind]
        if type(self.body) is not expected:
            raise ValueError(
                f"claim body for {self.kind.value} must be {expected.__name__}"
            )
        if not self.subject:
            raise ValueError("claim must name a subject")


# --- signed envelopes --------------------------------------------------------


@wire.wire_type(0x02)
@dataclass(frozen=True)
class Evidence:
    claims: tuple
    nonce: bytes
    device_id: str
    manifest_ref: str
    counter: int
    signature: bytes  # by the device identity key

    WIRE_FIELDS = (
        ("claims", ("list", ("wire", Claim))),
        ("nonce", "bytes"),
        ("device_id", "str"),
        ("manifest_ref", "str"),
        ("counter", "u64"),
        ("signature", "bytes"),
    )

    def __post_init__(self):
        object.__setattr__(self, "claims", tuple(self.claims))
        if len(self.nonce) != NONCE_LEN:
            raise ValueError(f"nonce must be {NONCE_LEN} bytes")

    def claims_of(self, kind: ClaimKind) -> tuple:
        return tuple(c for c in self.claims if c.kind is kind)


@wire.wire_type(0x03)
@dataclass(frozen=True)
class Endorsement:
    endorser_id: str
    device_id: str  # empty string for device-model scope
    manifest_ref: str
    ek_public: bytes
    dik_public: bytes
    reference_claims: tuple
    signature: bytes

    WIRE_FIELDS = (
        ("endorser_id", "str"),
        ("device_id", "str"),
        ("manifest_ref", "str"),
        ("ek_public", "bytes"),
        ("dik_public", "bytes"),
        ("reference_claims", ("list", ("wire", Claim))),
        ("signature", "bytes"),
    )

    def __post_init__(self):
        object.__setattr__(self, "reference_claims", tuple(self.reference_claims))
        if not self.device_id and not self.manifest_ref:
            raise ValueError("endorsement scope must be nonempty")


@wire.wire_type(0x04)
@dataclass(frozen=True)
class ReferenceManifest:
    manifest_ref: str
    approved_config_digests: tuple
    hardware_class: HardwareClass
    manufacturer_id: str

    WIRE_FIELDS = (
        ("manifest_ref", "str"),
        ("approved_config_digests", ("list", "bytes")),
        ("hardware_class", ("enum", HardwareClass)),
        ("manufacturer_id", "str"),
    )

    def __post_init__(self):
        digests = sorted(set(self.approved_config_digests))
        if not digests:
            raise ValueError("approved_config_digests must be nonempty")
        for d in digests:
            _check_digest("approved config digest", d)
        object.__setattr__(self, "approved_config_digests", tuple(digests))


@wire.wire_type(0x16)
@dataclass(frozen=True)
class SignedManifest:
    manifest: ReferenceManifest
    endorser_id: str
    signature: bytes

    WIRE_FIELDS = (
        ("manifest", ("wire", ReferenceManifest)),
        ("endorser_id", "str"),
        ("signature", "bytes"),
    )


@wire.wire_type(0x05)
@dataclass(frozen=True)
class AttestationResult:
    device_id: str
    verdict: Verdict
    failed_rules: tuple
    loa: int | None  # 1..4, present only on Pass
    evaluated_at: int
    nonce: bytes
    signature: bytes  # by the verifier key

    WIRE_FIELDS = (
        ("device_id", "str"),
        ("verdict", ("enum", Verdict)),
        ("failed_rules", ("list", "str")),
        ("loa", ("opt", "u8")),
        ("evaluated_at", "u64"),
        ("nonce", "bytes"),
        ("signature", "bytes"),
    )

    def __post_init__(self):
        object.__setattr__(self, "failed_rules", tuple(self.failed_rules))
        if self.verdict is Verdict.FAIL and not self.failed_rules:
            raise ValueError("Fail result must carry failed rules")
        if self.verdict is Verdict.PASS and self.loa is None:
            raise ValueError("Pass result must carry a LOA")
        if self.verdict is Verdict.FAIL and self.loa is not None:
            raise ValueError("LOA is only present on Pass")
        if self.loa is not None and not 1 <= self.loa <= 4:
            raise ValueError("LOA must be 1..4")

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS


@wire.wire_type(0x06)
@dataclass(frozen=True)
class Certificate:
    """Simplified customer-key certificate with the two trust markings."""

    subject_public_key: bytes
    vaan: int
    issuer_vasp_code: int
    non_migratable_marking: bool
    provenance_known_marking: bool
    signature: bytes  # by the issuing VASP signing key

    WIRE_FIELDS = (
        ("subject_public_key", "bytes"),
        ("vaan", "u64"),
        ("issuer_vasp_code", "u32"),
        ("non_migratable_marking", "bool"),
        ("provenance_known_marking", "bool"),
        ("signature", "bytes"),
    )


@wire.wire_type(0x07)
@dataclass(frozen=True)
class PartyInfo:
    name: str
    vaan: int
    public_key: bytes

    WIRE_FIELDS = (("name", "str"), ("vaan", "u64"), ("public_key", "bytes"))


@wire.wire_type(0x08)
@dataclass(frozen=True)
class TravelRuleRecord:
    originator: PartyInfo
    beneficiary: PartyInfo
    amount: int
    tx_digest: bytes
    status: TravelRuleStatus

    WIRE_FIELDS = (
        ("originator", ("wire", PartyInfo)),
        ("beneficiary", ("wire", PartyInfo)),
        ("amount", "u64"),
        ("tx_digest", "bytes"),
        ("status", ("enum", TravelRuleStatus)),
    )

    def __post_init__(self):
        _check_digest("tx_digest", self.tx_digest)

    def with_status(self, status: TravelRuleStatus) -> "TravelRuleRecord":
        return TravelRuleRecord(
            self.originator, self.beneficiary, self.amount, self.tx_digest, status
        )


@wire.wire_type(0x12)
@dataclass(frozen=True)
class ErasureReceipt:
    device_id: str
    key_handle: str
    public_key: bytes
    counter_value: int
    signature: bytes  # by the device identity key

    WIRE_FIELDS = (
        ("device_id", "str"),
        ("key_handle", "str"),
        ("public_key", "bytes"),
        ("counter_value", "u64"),
        ("signature", "bytes"),
    )


@wire.wire_type(0x13)
@dataclass(frozen=True)
class MigrationBlob:
    payload: bytes  # sealed key material (nonce || AEAD ciphertext)
    source_device: str
    target_manifest_ref: str
    auth_digest: bytes
    integrity_tag: bytes

    WIRE_FIELDS = (
        ("payload", "bytes"),
        ("source_device", "str"),
        ("target_manifest_ref", "str"),
        ("auth_digest", "bytes"),
        ("integrity_tag", "bytes"),
    )

    def __post_init__(self):
        _check_digest("auth_digest", self.auth_digest)
        _check_digest("integrity_tag", self.integrity_tag)


# --- helpers -----------------------------------------------------------------


def sign_value(value, key: KeyPair):
    """Return a copy of value with its trailing signature field filled in."""
    sig = key.sign(wire.signing_bytes(value))
    cls = type(value)
    kwargs = {name: getattr(value, name) for name, _ in cls.WIRE_FIELDS}
    kwargs["signature"] = sig
    return cls(**kwargs)


def verify_signed(value, public_key: bytes) -> bool:
    """Verify the trailing signature of any signed wire structure."""
    return verify_signature(public_key, wire.signing_bytes(value), value.signature)


@dataclass(frozen=True)
class DeviceIdentity:
    """Public identity triple a device exposes for endorsement."""

    device_id: str
    ek_public: bytes
    dik_public: bytes


@dataclass(frozen=True)
class ChainCheck:
    """Boolean verification outcome with a reason code for audit trails."""

    ok: bool
    reason: str

    def __bool__(self) -> bool:
        return self.ok


CHAIN_OK = ChainCheck(True, "ok")


def make_endorsement(
    endorser_key: KeyPair,
    endorser_id: str,
    device: DeviceIdentity,
    manifest_ref: str,
    manifests: dict,
    reference_claims: tuple = (),
) -> Endorsement:
    """Sign an endorsement binding a device's identity keys to its model.

    The endorser must hold the reference manifest for manifest_ref; the
    returned endorsement embeds the device identity public key used by
    verify_chain plus any intrinsic reference claims.
    """
    if manifest_ref not in manifests:
        raise UnknownManifest(manifest_ref)
    unsigned = Endorsement(
        endorser_id=endorser_id,
        device_id=device.device_id,
        manifest_ref=manifest_ref,
        ek_public=device.ek_public,
        dik_public=device.dik_public,
        reference_claims=tuple(reference_claims),
        signature=b"",
    )
    return sign_value(unsigned, endorser_key)


def verify_chain(
    evidence: Evidence,
    endorsement: Endorsement | None,
    endorser_root: bytes | None,
) -> ChainCheck:
    """Check evidence against its endorsement and the endorser's root key.

    Passes iff the endorsement verifies under endorser_root, covers this
    device, and the evidence signature verifies under the device identity
    public key named in the endorsement. Never raises; failures come back
    as ChainCheck(False, reason).
    """
    if endorsement is None:
        return ChainCheck(False, "NoEndorsement")
    if endorser_root is None:
        return ChainCheck(False, "UnknownEndorser")
    if not verify_signed(endorsement, endorser_root):
        return ChainCheck(False, "EndorserSignature")
    if endorsement.device_id and endorsement.device_id != evidence.device_id:
        return ChainCheck(False, "SubjectMismatch")
    if endorsement.manifest_ref != evidence.manifest_ref:
        return ChainCheck(False, "ManifestScopeMismatch")
    if not verify_signed(evidence, endorsement.dik_public):
        return ChainCheck(False, "EvidenceSignature")
    return CHAIN_OK


def sign_manifest(
    manifest: ReferenceManifest, endorser_key: KeyPair, endorser_id: str
) -> SignedManifest:
    return sign_value(SignedManifest(manifest, endorser_id, b""), endorser_key)
