"""Deterministic cryptographic primitives shared by every other module.

Hashing, single signatures, m-of-n multi-signature checks, and simulated
attestation quotes. Signature schemes are pluggable: the default is real
Ed25519 (via the `cryptography` package); a keyed stand-in backed by an
in-process key registry is available for bulk simulation runs where
signature volume dominates runtime. Both satisfy the same interface and
the same test contract.

All values are immutable and safe to share between threads.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, Tuple, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_SIZE = 32

Encodable = Union[bytes, int, str, Iterable["Encodable"]]


class CryptoError(Exception):
    """Malformed key material or unknown scheme."""


def hash_data(data: bytes) -> bytes:
    """32-byte digest of raw bytes."""
    return hashlib.sha256(data).digest()


def encode_fields(*fields: Encodable) -> bytes:
    """Canonical encoding: type-tagged, length-prefixed concatenation.

    Fields are encoded in declaration order so digests are reproducible
    across modules. Supported field types: bytes, int (non-negative),
    str, and nested sequences thereof.
    """
    out = bytearray()
    for field in fields:
        out += _encode_one(field)
    return bytes(out)


def _encode_one(value: Encodable) -> bytes:
    if hasattr(value, "canonical_encoding"):
        raw = value.canonical_encoding()
        return b"C" + len(raw).to_bytes(4, "big") + raw
    if isinstance(value, bytes):
        return b"B" + len(value).to_bytes(4, "big") + value
    if isinstance(value, bool):  # bool before int: bool is an int subclass
        return b"O" + (b"\x01" if value else b"\x00")
    if isinstance(value, int):
        if value < 0:
            raise CryptoError("canonical encoding covers non-negative integers only")
        raw = value.to_bytes((value.bit_length() + 7) // 8 or 1, "big")
        return b"I" + len(raw).to_bytes(4, "big") + raw
    if isinstance(value, str):
        raw = value.encode("utf-8")
        return b"S" + len(raw).to_bytes(4, "big") + raw
    items = [_encode_one(v) for v in value]
    body = b"".join(items)
    return b"L" + len(items).to_bytes(4, "big") + body


def hash_fields(*fields: Encodable) -> bytes:
    return hash_data(encode_fields(*fields))


ZERO_DIGEST = b"\x00" * DIGEST_SIZE


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes
    scheme: str = "ed25519"


@dataclass(frozen=True)
class Signature:
    bytes_: bytes
    signer: bytes  # public key of the signing party

    def canonical_encoding(self) -> bytes:
        return encode_fields(self.bytes_, self.signer)


@dataclass(frozen=True)
class MultiSignature:
    """A set of individual signatures over one message digest.

    Validity is a threshold predicate over distinct authorized signers,
    not an aggregated scheme.
    """

    message_digest: bytes
    signatures: Tuple[Signature, ...]
    threshold: int

    def signers(self) -> FrozenSet[bytes]:
        return frozenset(sig.signer for sig in self.signatures)

    def canonical_encoding(self) -> bytes:
        return encode_fields(self.message_digest, list(self.signatures), self.threshold)


class Ed25519Scheme:
    """Real Ed25519 signatures; deterministic given the key."""

    name = "ed25519"

    def keygen(self, seed: bytes) -> KeyPair:
        secret = hashlib.sha256(b"ed25519-key" + seed).digest()
        private = Ed25519PrivateKey.from_private_bytes(secret)
        public = private.public_key().public_bytes_raw()
        return KeyPair(public_key=public, secret_key=secret, scheme=self.name)

    def sign(self, secret_key: bytes, message: bytes) -> bytes:
        private = Ed25519PrivateKey.from_private_bytes(secret_key)
        return private.sign(message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
            return True
        except (InvalidSignature, ValueError):
            return False


class KeyedStandInScheme:
    """Fast keyed stand-in: HMAC-SHA256 with an in-process key registry.

    verify() resolves the secret for a public key through the registry,
    so a signature validates under exactly the key that produced it.
    Secrets never appear in signature bytes. Not a real asymmetric
    scheme; for simulation only.
    """

    name = "standin"

    def __init__(self) -> None:
        self._registry: Dict[bytes, bytes] = {}

    def keygen(self, seed: bytes) -> KeyPair:
        secret = hashlib.sha256(b"standin-sk" + seed).digest()
        public = hashlib.sha256(b"standin-pk" + secret).digest()
        self._registry[public] = secret
        return KeyPair(public_key=public, secret_key=secret, scheme=self.name)

    def sign(self, secret_key: bytes, message: bytes) -> bytes:
        return hmac.new(secret_key, message, hashlib.sha256).digest()

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        secret = self._registry.get(public_key)
        if secret is None:
            return False
        expected = hmac.new(secret, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)


_SCHEMES = {
    Ed25519Scheme.name: Ed25519Scheme(),
    KeyedStandInScheme.name: KeyedStandInScheme(),
}

# Repeated verification of the same (scheme, key, message, signature) is
# common: committee signatures are checked by every enclave's light client.
_VERIFY_CACHE: Dict[bytes, bool] = {}
_VERIFY_CACHE_MAX = 1 << 18


def get_scheme(name: str):
    try:
        return _SCHEMES[name]
    except KeyError:
        raise CryptoError(f"unknown signature scheme: {name}") from None


def keygen(seed: bytes, scheme: str = "ed25519") -> KeyPair:
    return get_scheme(scheme).keygen(seed)


def sign(message: bytes, keypair: KeyPair) -> Signature:
    raw = get_scheme(keypair.scheme).sign(keypair.secret_key, message)
    return Signature(bytes_=raw, signer=keypair.public_key)


def verify(message: bytes, signature: Signature, public_key: bytes, scheme: str = "ed25519") -> bool:
    """Deterministic signature check; malformed input yields False, never raises."""
    if signature.signer != public_key:
        return False
    key = hashlib.sha256(
        scheme.encode() + public_key + hash_data(message) + signature.bytes_
    ).digest()
    cached = _VERIFY_CACHE.get(key)
    if cached is not None:
        return cached
    result = get_scheme(scheme).verify(public_key, message, signature.bytes_)
    if len(_VERIFY_CACHE) < _VERIFY_CACHE_MAX:
        _VERIFY_CACHE[key] = result
    return result


def multisig_verify(
    ms: MultiSignature,
    authorized: FrozenSet[bytes],
    m: int,
    scheme: str = "ed25519",
) -> bool:
    """True iff at least m distinct authorized signers validly signed the digest.

    Signatures from signers outside the authorized set, duplicates from
    one signer, and invalid signatures are ignored rather than rejected.
    """
    valid_signers = set()
    for sig in ms.signatures:
        if sig.signer not in authorized or sig.signer in valid_signers:
            continue
        if verify(ms.message_digest, sig, sig.signer, scheme=scheme):
            valid_signers.add(sig.signer)
    return len(valid_signers) >= m


def make_multisig(
    message_digest: bytes, keypairs: Iterable[KeyPair], threshold: int
) -> MultiSignature:
    sigs = tuple(sign(message_digest, kp) for kp in keypairs)
    return MultiSignature(message_digest=message_digest, signatures=sigs, threshold=threshold)


@dataclass(frozen=True)
class AttestationQuote:
    """Simulated attestation: the manufacturer root key endorses the triple
    (enclave id, program digest, enclave public key)."""

    enclave_id: str
    program_digest: bytes
    enclave_public_key: bytes
    endorsement: Signature

    def signed_payload(self) -> bytes:
        return encode_fields(
            "attestation-quote", self.enclave_id, self.program_digest, self.enclave_public_key
        )

    def canonical_encoding(self) -> bytes:
        return self.signed_payload() + encode_fields(self.endorsement)


def attest(
    root: KeyPair, enclave_id: str, program_digest: bytes, enclave_public_key: bytes
) -> AttestationQuote:
    payload = encode_fields("attestation-quote", enclave_id, program_digest, enclave_public_key)
    return AttestationQuote(
        enclave_id=enclave_id,
        program_digest=program_digest,
        enclave_public_key=enclave_public_key,
        endorsement=sign(payload, root),
    )


def verify_quote(quote: AttestationQuote, root_public_key: bytes, scheme: str = "ed25519") -> bool:
    return verify(quote.signed_payload(), quote.endorsement, root_public_key, scheme=scheme)
