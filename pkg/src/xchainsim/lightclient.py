"""In-enclave header verification: bootstrap from the latest k finalized
headers, track sync-committee handoffs, verify finality signatures, and
prove transaction inclusion.

The client retains only the headers accepted since initialization plus the
current and next committee; bootstrap block data is verified against the
header tx roots and then discarded. Verification is pure header/signature
checking; it never trusts the host beyond the initial committee material,
which is anchored on-chain by the registration block proof.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from . import crypto, merkle
from .chain import BlockHeader, SyncCommittee
from .crypto import KeyPair
from .vault import BlockProof


class BootstrapError(Exception):
    """Bootstrap material inconsistent or under-signed."""


class InclusionResult(enum.Enum):
    INCLUDED = "included"
    NOT_INCLUDED = "not_included"
    UNKNOWN_HEIGHT = "unknown_height"


@dataclass(frozen=True)
class LightClientConfig:
    chain_id: str
    committee_rotation_period: int
    committee_threshold: int  # required distinct valid committee signatures
    scheme: str = "ed25519"

    def epoch_of_height(self, height: int) -> int:
        return height // self.committee_rotation_period


@dataclass
class LightClientState:
    config: LightClientConfig
    headers: List[BlockHeader]  # accepted finalized headers since initialization
    current_committee: SyncCommittee
    next_committee: SyncCommittee
    lag_bound: int

    @property
    def tip(self) -> BlockHeader:
        return self.headers[-1]

    def state_size(self) -> dict:
        """Retention accounting: headers since initialization plus exactly
        the current and next committee."""
        return {"headers": len(self.headers), "committees": 2}

    def header_at(self, height: int) -> Optional[BlockHeader]:
        first = self.headers[0].height
        index = height - first
        if 0 <= index < len(self.headers):
            return self.headers[index]
        return None


def _committee_signature_count(
    header: BlockHeader, committee: SyncCommittee, scheme: str
) -> int:
    digest = header.signing_digest()
    keys = set(committee.validator_keys)
    valid = set()
    for sig in header.committee_signatures:
        if sig.signer not in keys or sig.signer in valid:
            continue
        if crypto.verify(digest, sig, sig.signer, scheme=scheme):
            valid.add(sig.signer)
    return len(valid)


def bootstrap(
    config: LightClientConfig,
    headers: Sequence[BlockHeader],
    current_committee: SyncCommittee,
    next_committee: SyncCommittee,
    block_data: Sequence[Sequence[bytes]],
    lag_bound: int,
    enclave_keypair: Optional[KeyPair] = None,
) -> Tuple[LightClientState, Optional[BlockProof]]:
    """Initialize from the last-k finalized headers plus committee material.

    block_data holds the transaction id lists backing each header's tx
    root; it is checked and then discarded. Returns the initialized state
    and, when a keypair is supplied, the tip header digest signed by it
    (the synchronization proof handed to the vault at registration).
    """
    if not headers:
        raise BootstrapError("no headers supplied")
    if len(block_data) != len(headers):
        raise BootstrapError("block data does not cover the supplied headers")
    for prev, cur in zip(headers, headers[1:]):
        if cur.height != prev.height + 1:
            raise BootstrapError(f"height gap at {cur.height}")
        if cur.parent_digest != prev.header_digest():
            raise BootstrapError(f"broken parent link at height {cur.height}")
        if cur.timestamp <= prev.timestamp:
            raise BootstrapError(f"timestamp not increasing at height {cur.height}")
    for header, tx_ids in zip(headers, block_data):
        if merkle.compute_root(list(tx_ids)) != header.tx_root:
            raise BootstrapError(f"tx root mismatch at height {header.height}")
    tip = headers[-1]
    if any(h.chain_id != config.chain_id for h in headers):
        raise BootstrapError("headers belong to a different chain")
    tip_epoch = config.epoch_of_height(tip.height)
    if current_committee.epoch != tip_epoch:
        raise BootstrapError("current committee epoch does not match the tip")
    if next_committee.epoch != tip_epoch + 1:
        raise BootstrapError("next committee epoch must follow the current one")
    if tip.next_committee_commitment != next_committee.commitment():
        raise BootstrapError("next committee does not match the tip commitment")
    count = _committee_signature_count(tip, current_committee, config.scheme)
    if count < config.committee_threshold:
        raise BootstrapError(
            f"tip has {count} committee signatures, need {config.committee_threshold}"
        )
    state = LightClientState(
        config=config,
        headers=list(headers),
        current_committee=current_committee,
        next_committee=next_committee,
        lag_bound=lag_bound,
    )
    proof = None
    if enclave_keypair is not None:
        proof = BlockProof(
            header_digest=tip.header_digest(),
            height=tip.height,
            signature=crypto.sign(tip.header_digest(), enclave_keypair),
        )
    return state, proof


def ingest_header(
    state: LightClientState,
    header: BlockHeader,
    new_next_committee: Optional[SyncCommittee] = None,
) -> Tuple[bool, str]:
    """Extend the verified header list by one. Returns (accepted, reason).

    On an epoch boundary the handoff is verified: signatures must come
    from the committee previously committed to, and the freshly supplied
    next committee must hash to the new header's commitment.
    """
    config = state.config
    tip = state.tip
    if header.chain_id != config.chain_id:
        return False, "wrong-chain"
    if header.height <= tip.height:
        return False, "stale-height"
    if header.height != tip.height + 1:
        return False, "height-gap"
    if header.parent_digest != tip.header_digest():
        return False, "parent-mismatch"
    if header.timestamp <= tip.timestamp:
        return False, "timestamp-not-monotone"
    epoch = config.epoch_of_height(header.height)
    rotating = epoch == state.current_committee.epoch + 1
    if not rotating and epoch != state.current_committee.epoch:
        return False, "epoch-discontinuity"
    committee = state.next_committee if rotating else state.current_committee
    if _committee_signature_count(header, committee, config.scheme) < config.committee_threshold:
        return False, "committee-signatures"
    if rotating:
        if new_next_committee is None:
            return False, "missing-next-committee"
        if new_next_committee.epoch != epoch + 1:
            return False, "next-committee-epoch"
        if new_next_committee.commitment() != header.next_committee_commitment:
            return False, "next-committee-commitment"
        state.current_committee = state.next_committee
        state.next_committee = new_next_committee
    else:
        if header.next_committee_commitment != state.next_committee.commitment():
            return False, "commitment-mismatch"
    state.headers.append(header)
    return True, "ok"


def verify_inclusion(state: LightClientState, proof: merkle.InclusionProof) -> InclusionResult:
    """Check a transaction inclusion proof against a verified header.

    Heights outside the verified range yield UNKNOWN_HEIGHT so the host
    can supply more headers rather than treating the proof as false.
    """
    header = state.header_at(proof.height)
    if header is None:
        return InclusionResult.UNKNOWN_HEIGHT
    if merkle.fold_path(proof.tx_id, proof.path) == header.tx_root:
        return InclusionResult.INCLUDED
    return InclusionResult.NOT_INCLUDED
