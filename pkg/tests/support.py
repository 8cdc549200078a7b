"""Shared builders for unit tests: funded chains with a registered vault."""

from __future__ import annotations

from fractions import Fraction

from xchainsim import crypto
from xchainsim.chain import Chain, ChainConfig, address_for
from xchainsim.crypto import KeyPair
from xchainsim.vault import BlockProof, Vault, VaultParams

SCHEME = "standin"  # fast stand-in for unit tests; the crypto suite covers ed25519

PROGRAM_DIGEST = crypto.hash_data(b"exchange-program-v1")


def root_keypair(scheme: str = SCHEME) -> KeyPair:
    return crypto.keygen(b"manufacturer-root", scheme)


def operator_keypairs(n: int, chain_id: str = "S", scheme: str = SCHEME):
    return [
        crypto.keygen(crypto.encode_fields("operator", chain_id, i), scheme) for i in range(n)
    ]


def make_chain(chain_id: str = "S", **overrides) -> Chain:
    cfg = dict(
        chain_id=chain_id,
        finality_delay=2,
        committee_size=4,
        committee_rotation_period=64,
        committee_threshold_fraction=Fraction(2, 3),
        scheme=SCHEME,
    )
    cfg.update(overrides)
    return Chain(ChainConfig(**cfg))


def new_vault_chain(
    chain_id: str = "S",
    n_ops: int = 3,
    response_window: int = 20,
    liquidity: int = 0,
    registration_lag: int = 32,
    scheme: str = SCHEME,
    **chain_overrides,
):
    """Chain with an installed vault and n_ops registered operators.

    Returns (chain, vault, operator keypairs). Registration runs through
    real on-chain transactions.
    """
    chain = make_chain(chain_id, scheme=scheme, **chain_overrides)
    params = VaultParams(
        expected_program_digest=PROGRAM_DIGEST,
        root_public_key=root_keypair(scheme).public_key,
        registration_lag=registration_lag,
        response_window=response_window,
        scheme=scheme,
    )
    vault = Vault(chain_id, params)
    chain.install_contract(vault)
    if liquidity:
        vault.fund(liquidity)
        chain.minted_total += liquidity
    ops = operator_keypairs(n_ops, chain_id, scheme)
    register_operators(chain, ops, scheme)
    return chain, vault, ops


def register_operators(chain: Chain, keypairs, scheme: str = SCHEME) -> None:
    root = root_keypair(scheme)
    for i, kp in enumerate(keypairs):
        host = address_for(crypto.keygen(b"host-%d" % i, scheme).public_key)
        chain.mint(host, 10)
        tip = chain.headers[-1]
        proof = BlockProof(
            header_digest=tip.header_digest(),
            height=tip.height,
            signature=crypto.sign(tip.header_digest(), kp),
        )
        quote = crypto.attest(root, f"enclave-{i}", PROGRAM_DIGEST, kp.public_key)
        chain.submit_call(host, "register", (quote, proof, kp.public_key), value=10)
    run_ticks(chain, chain.config.finality_delay)
    registered = chain.contract.operators
    assert all(kp.public_key in registered for kp in keypairs), "registration failed"


def run_ticks(chain: Chain, n: int) -> None:
    for _ in range(n):
        chain.advance_tick()


def operator_multisig(digest: bytes, keypairs, threshold: int) -> crypto.MultiSignature:
    return crypto.make_multisig(digest, keypairs[:threshold], threshold)


def fund_account(chain: Chain, seed: bytes, amount: int, scheme: str = SCHEME) -> bytes:
    account = address_for(crypto.keygen(seed, scheme).public_key)
    chain.mint(account, amount)
    return account
