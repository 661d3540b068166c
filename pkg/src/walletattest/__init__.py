"""Wallet attestation protocol stack and deterministic VASP network simulator."""

__version__ = "0.1.0"
