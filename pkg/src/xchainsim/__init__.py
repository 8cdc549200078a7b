"""Deterministic simulator for a TEE-operated cross-chain exchange."""

__version__ = "0.1.0"
