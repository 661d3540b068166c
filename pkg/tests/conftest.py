from __future__ import annotations

import pytest

from walletattest import policy
from walletattest.claims import make_endorsement, sign_manifest
from walletattest.crypto import DeterministicRng, KeyPair
from walletattest.hwemu import build_manifest, create_device
from walletattest.scenario import packaged_policy_source
from walletattest.verifier import Verifier

MODEL = "model-a"
MANUFACTURER = "acme"


@pytest.fixture()
def manifests():
    return {MODEL: build_manifest(MODEL, MANUFACTURER)}


@pytest.fixture()
def endorser_key():
    return KeyPair.from_seed(bytes([0x07]) * 32)


@pytest.fixture()
def device(manifests):
    return create_device(bytes([0x01]) * 32, MODEL, manifests)


@pytest.fixture()
def baseline_program():
    return policy.parse_policy(packaged_policy_source("baseline"))


@pytest.fixture()
def endorsed_setup(manifests, endorser_key, baseline_program):
    """A verifier configured with baseline policy plus one endorsed device."""
    rng = DeterministicRng.from_int(99)
    verifier = Verifier.create("asp", rng.child("asp"))
    verifier.add_endorser_root("mfr", endorser_key.public_bytes)
    verifier.add_policy("baseline", baseline_program)
    verifier.register_manifest(sign_manifest(manifests[MODEL], endorser_key, "mfr"))
    dev = create_device(rng.child("dev").bytes(32), MODEL, manifests)
    endorsement = make_endorsement(
        endorser_key, "mfr", dev.public_identity(), MODEL, manifests
    )
    verifier.register_endorsement(endorsement)
    return dev, verifier, endorsement
