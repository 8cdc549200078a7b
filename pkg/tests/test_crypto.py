import hashlib
import itertools

import pytest

from xchainsim import crypto

SCHEMES = ["ed25519", "standin"]


def test_hash_is_deterministic():
    assert crypto.hash_data(b"payload") == crypto.hash_data(b"payload")
    assert len(crypto.hash_data(b"")) == crypto.DIGEST_SIZE


def test_hash_empty_differs_from_zero_byte():
    # Oracle: compute both with the chosen hash directly.
    assert hashlib.sha256(b"").digest() != hashlib.sha256(b"\x00").digest()
    assert crypto.hash_data(b"") != crypto.hash_data(b"\x00")


def test_canonical_encoding_is_reproducible():
    a = crypto.hash_fields(b"\xaa" * 20, 5, 17)
    b = crypto.hash_fields(b"\xaa" * 20, 5, 17)
    assert a == b


def test_canonical_encoding_separates_types_and_boundaries():
    assert crypto.encode_fields(b"ab", b"c") != crypto.encode_fields(b"a", b"bc")
    assert crypto.encode_fields(5) != crypto.encode_fields(b"\x05")
    assert crypto.encode_fields("5") != crypto.encode_fields(5)
    assert crypto.encode_fields([1, 2]) != crypto.encode_fields(1, 2)
    assert crypto.encode_fields(True) != crypto.encode_fields(1)


def test_canonical_encoding_rejects_negative_ints():
    with pytest.raises(crypto.CryptoError):
        crypto.encode_fields(-1)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_sign_verify_round_trip(scheme):
    kp = crypto.keygen(b"seed-1", scheme)
    sig = crypto.sign(b"message", kp)
    assert crypto.verify(b"message", sig, kp.public_key, scheme=scheme)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_verify_rejects_other_keys(scheme):
    universe = [crypto.keygen(b"seed-%d" % i, scheme) for i in range(5)]
    sig = crypto.sign(b"message", universe[0])
    assert crypto.verify(b"message", sig, universe[0].public_key, scheme=scheme)
    for other in universe[1:]:
        assert not crypto.verify(b"message", sig, other.public_key, scheme=scheme)
        forged = crypto.Signature(bytes_=sig.bytes_, signer=other.public_key)
        assert not crypto.verify(b"message", forged, other.public_key, scheme=scheme)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_verify_rejects_flipped_message_byte(scheme):
    kp = crypto.keygen(b"seed-2", scheme)
    message = bytearray(b"exact message bytes")
    sig = crypto.sign(bytes(message), kp)
    for i in range(len(message)):
        mutated = bytearray(message)
        mutated[i] ^= 0x01
        assert not crypto.verify(bytes(mutated), sig, kp.public_key, scheme=scheme)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_verify_tolerates_malformed_signature_bytes(scheme):
    kp = crypto.keygen(b"seed-3", scheme)
    junk = crypto.Signature(bytes_=b"not-a-signature", signer=kp.public_key)
    assert crypto.verify(b"m", junk, kp.public_key, scheme=scheme) is False


@pytest.mark.parametrize("scheme", SCHEMES)
def test_multisig_two_of_three_passes(scheme):
    ops = [crypto.keygen(b"op-%d" % i, scheme) for i in range(3)]
    authorized = frozenset(kp.public_key for kp in ops)
    digest = crypto.hash_data(b"batch")
    ms = crypto.make_multisig(digest, ops[:2], threshold=2)
    assert crypto.multisig_verify(ms, authorized, 2, scheme=scheme)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_multisig_below_threshold_fails(scheme):
    ops = [crypto.keygen(b"op-%d" % i, scheme) for i in range(3)]
    authorized = frozenset(kp.public_key for kp in ops)
    digest = crypto.hash_data(b"batch")
    ms = crypto.make_multisig(digest, ops[:1], threshold=2)
    assert not crypto.multisig_verify(ms, authorized, 2, scheme=scheme)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_multisig_duplicate_signers_counted_once(scheme):
    # Brute force over all signer multisets of size <= 3 drawn from 3 keys:
    # validity must depend only on the set of distinct signers.
    ops = [crypto.keygen(b"op-%d" % i, scheme) for i in range(3)]
    authorized = frozenset(kp.public_key for kp in ops)
    digest = crypto.hash_data(b"batch")
    for size in range(1, 4):
        for combo in itertools.product(range(3), repeat=size):
            ms = crypto.make_multisig(digest, [ops[i] for i in combo], threshold=2)
            expected = len(set(combo)) >= 2
            assert crypto.multisig_verify(ms, authorized, 2, scheme=scheme) == expected


def test_multisig_ignores_unauthorized_signers():
    ops = [crypto.keygen(b"op-%d" % i) for i in range(3)]
    outsider = crypto.keygen(b"outsider")
    authorized = frozenset(kp.public_key for kp in ops)
    digest = crypto.hash_data(b"batch")
    ms = crypto.make_multisig(digest, [ops[0], outsider], threshold=2)
    # The outsider signature is ignored, not an error; threshold unmet.
    assert not crypto.multisig_verify(ms, authorized, 2)
    ms2 = crypto.make_multisig(digest, [ops[0], ops[1], outsider], threshold=2)
    assert crypto.multisig_verify(ms2, authorized, 2)


def test_multisig_threshold_exhaustive_up_to_seven():
    # For all n <= 7, m <= n: validity iff distinct authorized signer count >= m.
    scheme = "standin"
    keys = [crypto.keygen(b"exh-%d" % i, scheme) for i in range(7)]
    digest = crypto.hash_data(b"exhaustive")
    for n in (3, 5, 7):
        authorized = frozenset(kp.public_key for kp in keys[:n])
        for m in range(1, n + 1):
            for size in range(n + 1):
                for subset in itertools.combinations(range(n), size):
                    ms = crypto.make_multisig(digest, [keys[i] for i in subset], threshold=m)
                    assert crypto.multisig_verify(ms, authorized, m, scheme=scheme) == (
                        size >= m
                    ), (n, m, subset)


def test_multisig_monotone_in_signature_set():
    # Adding a valid authorized signature never flips true -> false.
    scheme = "standin"
    keys = [crypto.keygen(b"mono-%d" % i, scheme) for i in range(5)]
    authorized = frozenset(kp.public_key for kp in keys)
    digest = crypto.hash_data(b"monotone")
    for size in range(5):
        for subset in itertools.combinations(range(5), size):
            base = crypto.make_multisig(digest, [keys[i] for i in subset], threshold=3)
            before = crypto.multisig_verify(base, authorized, 3, scheme=scheme)
            for extra in range(5):
                grown = crypto.make_multisig(
                    digest, [keys[i] for i in subset] + [keys[extra]], threshold=3
                )
                after = crypto.multisig_verify(grown, authorized, 3, scheme=scheme)
                assert after >= before


@pytest.mark.parametrize("scheme", SCHEMES)
def test_attestation_round_trip(scheme):
    root = crypto.keygen(b"manufacturer-root", scheme)
    enclave = crypto.keygen(b"enclave-0", scheme)
    prog = crypto.hash_data(b"program-v1")
    quote = crypto.attest(root, "enclave-0", prog, enclave.public_key)
    assert crypto.verify_quote(quote, root.public_key, scheme=scheme)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_attestation_rejects_substituted_public_key(scheme):
    root = crypto.keygen(b"manufacturer-root", scheme)
    enclave = crypto.keygen(b"enclave-0", scheme)
    intruder = crypto.keygen(b"enclave-x", scheme)
    prog = crypto.hash_data(b"program-v1")
    quote = crypto.attest(root, "enclave-0", prog, enclave.public_key)
    tampered = crypto.AttestationQuote(
        enclave_id=quote.enclave_id,
        program_digest=quote.program_digest,
        enclave_public_key=intruder.public_key,
        endorsement=quote.endorsement,
    )
    assert not crypto.verify_quote(tampered, root.public_key, scheme=scheme)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_attestation_rejects_wrong_program_digest(scheme):
    # Models an operator installing a different program than attested.
    root = crypto.keygen(b"manufacturer-root", scheme)
    enclave = crypto.keygen(b"enclave-0", scheme)
    quote = crypto.attest(root, "enclave-0", crypto.hash_data(b"program-v1"), enclave.public_key)
    tampered = crypto.AttestationQuote(
        enclave_id=quote.enclave_id,
        program_digest=crypto.hash_data(b"program-v2"),
        enclave_public_key=quote.enclave_public_key,
        endorsement=quote.endorsement,
    )
    assert not crypto.verify_quote(tampered, root.public_key, scheme=scheme)
