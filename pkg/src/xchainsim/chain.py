"""Simulated blockchains with logical-tick time and deterministic finality.

Each chain finalizes at most one block per tick. A transaction submitted
at tick t is included in the block finalized at tick t + finality_delay,
in FIFO order. Every finalized header carries signatures from the sync
committee of its epoch plus a commitment to the next epoch's committee,
so light clients can follow committee handoffs without full state.

A contract host executes vault calls during finalization and meters
operation-count cost proxies per call. Finalized history is append-only;
there are no forks or reorgs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Tuple

from . import crypto, merkle
from .crypto import KeyPair, Signature, encode_fields, hash_fields

ADDRESS_SIZE = 20

# Calls carrying an operator multisig: identical resubmissions by many
# hosts are deduplicated at the mempool instead of re-executing.
DEDUP_METHODS = {"transfer", "confirm", "respond_challenge", "update_checkpoint", "htlc_claim"}


def address_for(public_key: bytes) -> bytes:
    return crypto.hash_data(b"address" + public_key)[:ADDRESS_SIZE]


class TxRejected(Exception):
    """Transaction refused at submission; no state change."""


class CallRevert(Exception):
    """Contract call failed its preconditions; the call has no effect."""


@dataclass(frozen=True)
class ChainConfig:
    chain_id: str
    finality_delay: int = 2
    committee_size: int = 16
    committee_rotation_period: int = 64
    committee_threshold_fraction: Fraction = Fraction(2, 3)
    scheme: str = "ed25519"
    script_only: bool = False  # no contract host; only plain transfers and time locks

    def __post_init__(self) -> None:
        if self.finality_delay < 1:
            raise ValueError("finality_delay must be >= 1")
        if self.committee_size < 1:
            raise ValueError("committee_size must be >= 1")
        if not Fraction(1, 2) < self.committee_threshold_fraction <= 1:
            raise ValueError("committee threshold fraction must be in (1/2, 1]")

    @property
    def committee_threshold(self) -> int:
        frac = self.committee_threshold_fraction * self.committee_size
        return -(-frac.numerator // frac.denominator)  # ceil


@dataclass(frozen=True)
class SyncCommittee:
    epoch: int
    validator_keys: Tuple[bytes, ...]

    def commitment(self) -> bytes:
        return hash_fields("committee", self.epoch, list(self.validator_keys))


@dataclass(frozen=True)
class BlockHeader:
    chain_id: str
    height: int
    parent_digest: bytes
    state_digest: bytes
    tx_root: bytes
    timestamp: int
    next_committee_commitment: bytes
    committee_signatures: Tuple[Signature, ...]

    def signing_digest(self) -> bytes:
        return hash_fields(
            "header",
            self.chain_id,
            self.height,
            self.parent_digest,
            self.state_digest,
            self.tx_root,
            self.timestamp,
            self.next_committee_commitment,
        )

    def header_digest(self) -> bytes:
        """Header identity: the signed content, excluding the signatures."""
        return self.signing_digest()


@dataclass
class ChainTx:
    id: bytes
    sender: bytes
    method: str  # "" for a plain value transfer
    args: tuple
    value: int
    receiver: Optional[bytes]
    submitted_at: int
    seq: int
    finalized_at: Optional[int] = None
    ok: Optional[bool] = None
    error: str = ""

    def payload_digest(self) -> bytes:
        return hash_fields("call", self.method, list(self.args), self.value)

    def canonical_encoding(self) -> bytes:
        return encode_fields(
            "tx", self.sender, self.method, list(self.args), self.value,
            self.receiver or b"", self.submitted_at, self.seq,
        )


@dataclass
class CostMeter:
    storage_writes: int = 0
    storage_deletes: int = 0
    sig_verifications: int = 0
    hash_ops: int = 0


@dataclass(frozen=True)
class CallRecord:
    height: int
    method: str
    ok: bool
    error: str
    batch_len: int
    meter: CostMeter


@dataclass(frozen=True)
class Event:
    chain_id: str
    height: int
    kind: str
    fields: Tuple[Tuple[str, object], ...]

    def get(self, key: str):
        for k, v in self.fields:
            if k == key:
                return v
        return None

    def export_line(self) -> str:
        parts = [self.chain_id, str(self.height), self.kind]
        for k, v in self.fields:
            parts.append(f"{k}={v.hex() if isinstance(v, bytes) else v}")
        return " ".join(parts)


class CallContext:
    """Execution context handed to the contract for one call."""

    def __init__(self, chain: "Chain", tx: ChainTx, meter: CostMeter, height: int):
        self.chain = chain
        self.tx = tx
        self.meter = meter
        self.height = height
        self.timestamp = height  # one block per tick: finalizing tick == height

    def emit(self, kind: str, **fields) -> None:
        self.chain._emit(self.height, kind, fields)

    def credit(self, account: bytes, amount: int) -> None:
        self.chain.balances[account] = self.chain.balances.get(account, 0) + amount

    def debit(self, account: bytes, amount: int) -> None:
        balance = self.chain.balances.get(account, 0)
        if balance < amount:
            raise CallRevert(f"insufficient balance: {balance} < {amount}")
        self.chain.balances[account] = balance - amount

    def finalized_header_digests(self, last: int) -> List[bytes]:
        headers = self.chain.headers[-last:]
        return [h.header_digest() for h in headers]


class Chain:
    """Single-owner chain state machine; mutated only by the scheduler."""

    def __init__(self, config: ChainConfig):
        self.config = config
        self.tick = 0
        self.headers: List[BlockHeader] = []
        self.blocks: List[List[ChainTx]] = []
        self.balances: Dict[bytes, int] = {}
        self.mempool: List[ChainTx] = []
        self.events: List[Event] = []
        self.call_records: List[CallRecord] = []
        self.contract = None  # vault installed by the harness
        self.htlc_locks: Dict[bytes, object] = {}  # lock id -> time-lock record
        self.minted_total = 0
        self._seq = 0
        self._committees: Dict[int, Tuple[SyncCommittee, List[KeyPair]]] = {}
        self._pending_payloads: Dict[bytes, bytes] = {}  # payload digest -> tx id
        self._executed_payloads: set = set()
        genesis = self._make_header(
            height=0, tx_root=merkle.EMPTY_ROOT, parent=crypto.ZERO_DIGEST, state=crypto.ZERO_DIGEST
        )
        self.headers.append(genesis)
        self.blocks.append([])

    # -- setup ------------------------------------------------------------

    def mint(self, account: bytes, amount: int) -> None:
        """Scenario setup only; tracked so conservation checks can net it out."""
        self.balances[account] = self.balances.get(account, 0) + amount
        self.minted_total += amount

    def install_contract(self, contract) -> None:
        if self.config.script_only:
            raise ValueError(f"chain {self.config.chain_id} is script-only")
        self.contract = contract

    # -- committees --------------------------------------------------------

    def epoch_of_height(self, height: int) -> int:
        return height // self.config.committee_rotation_period

    def committee(self, epoch: int) -> SyncCommittee:
        return self._committee_entry(epoch)[0]

    def committee_keypairs(self, epoch: int) -> List[KeyPair]:
        return self._committee_entry(epoch)[1]

    def _committee_entry(self, epoch: int) -> Tuple[SyncCommittee, List[KeyPair]]:
        entry = self._committees.get(epoch)
        if entry is None:
            keypairs = [
                crypto.keygen(
                    encode_fields("validator", self.config.chain_id, epoch, i),
                    self.config.scheme,
                )
                for i in range(self.config.committee_size)
            ]
            committee = SyncCommittee(
                epoch=epoch, validator_keys=tuple(kp.public_key for kp in keypairs)
            )
            entry = (committee, keypairs)
            self._committees[epoch] = entry
        return entry

    # -- submission ---------------------------------------------------------

    def submit_transfer(self, sender: bytes, receiver: bytes, value: int) -> bytes:
        if self.balances.get(sender, 0) < value:
            raise TxRejected("insufficient balance")
        return self._enqueue(sender, "", (), value, receiver)

    def submit_call(self, sender: bytes, method: str, args: tuple, value: int = 0) -> bytes:
        if self.config.script_only and not method.startswith("htlc_"):
            raise TxRejected(f"chain {self.config.chain_id} accepts no contract calls")
        if not self.config.script_only and self.contract is None and not method.startswith("htlc_"):
            raise TxRejected("no contract installed")
        if self.balances.get(sender, 0) < value:
            raise TxRejected("insufficient balance")
        if method in DEDUP_METHODS:
            payload = hash_fields("call", method, list(args), value)
            if payload in self._executed_payloads:
                return self._pending_payloads.get(payload, crypto.ZERO_DIGEST)
            existing = self._pending_payloads.get(payload)
            if existing is not None:
                return existing
        tx_id = self._enqueue(sender, method, args, value, None)
        if method in DEDUP_METHODS:
            self._pending_payloads[hash_fields("call", method, list(args), value)] = tx_id
        return tx_id

    def _enqueue(
        self, sender: bytes, method: str, args: tuple, value: int, receiver: Optional[bytes]
    ) -> bytes:
        self._seq += 1
        tx = ChainTx(
            id=crypto.ZERO_DIGEST,
            sender=sender,
            method=method,
            args=args,
            value=value,
            receiver=receiver,
            submitted_at=self.tick,
            seq=self._seq,
        )
        tx.id = crypto.hash_data(tx.canonical_encoding())
        self.mempool.append(tx)
        return tx.id

    # -- block production ----------------------------------------------------

    def advance_tick(self) -> BlockHeader:
        """Finalize the next block: all mempool transactions whose finality
        delay has elapsed, FIFO. An empty block still finalizes."""
        self.tick += 1
        height = self.tick
        due, pending = [], []
        for tx in self.mempool:
            if self.tick - tx.submitted_at >= self.config.finality_delay:
                due.append(tx)
            else:
                pending.append(tx)
        self.mempool = pending
        for tx in due:
            tx.finalized_at = self.tick
            self._execute(tx, height)
        tx_root = merkle.compute_root([tx.id for tx in due])
        state = hash_fields("state", self.headers[-1].state_digest, tx_root, height)
        header = self._make_header(
            height=height, tx_root=tx_root, parent=self.headers[-1].header_digest(), state=state
        )
        self.headers.append(header)
        self.blocks.append(due)
        return header

    def _make_header(self, height: int, tx_root: bytes, parent: bytes, state: bytes) -> BlockHeader:
        epoch = self.epoch_of_height(height)
        next_commitment = self.committee(epoch + 1).commitment()
        unsigned = BlockHeader(
            chain_id=self.config.chain_id,
            height=height,
            parent_digest=parent,
            state_digest=state,
            tx_root=tx_root,
            timestamp=height,
            next_committee_commitment=next_commitment,
            committee_signatures=(),
        )
        digest = unsigned.signing_digest()
        sigs = tuple(crypto.sign(digest, kp) for kp in self.committee_keypairs(epoch))
        return replace(unsigned, committee_signatures=sigs)

    def _execute(self, tx: ChainTx, height: int) -> None:
        if tx.method == "":
            try:
                if self.balances.get(tx.sender, 0) < tx.value:
                    raise CallRevert("insufficient balance at execution")
                self.balances[tx.sender] -= tx.value
                self.balances[tx.receiver] = self.balances.get(tx.receiver, 0) + tx.value
                tx.ok = True
            except CallRevert as exc:
                tx.ok, tx.error = False, str(exc)
            return
        meter = CostMeter()
        ctx = CallContext(self, tx, meter, height)
        handler = self._resolve_method(tx.method)
        batch_len = 1
        try:
            if handler is None:
                raise CallRevert(f"unknown method {tx.method}")
            result = handler(ctx, tx)
            batch_len = result if isinstance(result, int) and result > 0 else 1
            tx.ok = True
            self._executed_payloads.add(tx.payload_digest())
        except CallRevert as exc:
            tx.ok, tx.error = False, str(exc)
        finally:
            self._pending_payloads.pop(tx.payload_digest(), None)
        self.call_records.append(
            CallRecord(
                height=height, method=tx.method, ok=tx.ok, error=tx.error,
                batch_len=batch_len, meter=meter,
            )
        )

    def _resolve_method(self, method: str) -> Optional[Callable]:
        if method.startswith("htlc_"):
            from . import htlc

            return htlc.dispatch_table().get(method)
        if self.contract is None:
            return None
        return getattr(self.contract, "call_" + method, None)

    def _emit(self, height: int, kind: str, fields: Dict[str, object]) -> None:
        self.events.append(
            Event(
                chain_id=self.config.chain_id,
                height=height,
                kind=kind,
                fields=tuple(sorted(fields.items())),
            )
        )

    # -- queries ---------------------------------------------------------------

    @property
    def finalized_height(self) -> int:
        return self.headers[-1].height

    def read_event_log(self, from_height: int = 0) -> List[Event]:
        if from_height > self.finalized_height:
            return []
        return [e for e in self.events if e.height >= from_height]

    def find_tx(self, tx_id: bytes) -> Optional[ChainTx]:
        for block in self.blocks:
            for tx in block:
                if tx.id == tx_id:
                    return tx
        return None

    def make_inclusion_proof(self, height: int, tx_id: bytes) -> merkle.InclusionProof:
        if height > self.finalized_height:
            raise ValueError(f"height {height} not finalized")
        leaves = [tx.id for tx in self.blocks[height]]
        index = leaves.index(tx_id)
        return merkle.InclusionProof(tx_id=tx_id, height=height, path=merkle.make_path(leaves, index))

    def recent_block_digests(self, last: int = 265) -> List[bytes]:
        """Digests of the most recent finalized blocks, oldest first."""
        return [h.header_digest() for h in self.headers[-last:]]

    def total_supply(self) -> int:
        held = sum(self.balances.values())
        if self.contract is not None:
            held += self.contract.held_total()
        held += sum(lock.amount for lock in self.htlc_locks.values() if not lock.resolved)
        return held

    # -- adversarial API ----------------------------------------------------------

    def forge_header(self, tamper: str) -> BlockHeader:
        """Craft a header at the next height failing one light-client check.

        Mutation kinds: parent, skip_height, insufficient_signatures,
        corrupt_signature, fake_committee, stale_committee, bad_timestamp.
        """
        tip = self.headers[-1]
        height = tip.height + 1
        epoch = self.epoch_of_height(height)
        tx_root = merkle.compute_root([])
        state = hash_fields("state", tip.state_digest, tx_root, height)
        base = BlockHeader(
            chain_id=self.config.chain_id,
            height=height,
            parent_digest=tip.header_digest(),
            state_digest=state,
            tx_root=tx_root,
            timestamp=height,
            next_committee_commitment=self.committee(epoch + 1).commitment(),
            committee_signatures=(),
        )
        if tamper == "parent":
            base = replace(base, parent_digest=crypto.hash_data(b"bogus-parent"))
            return self._sign_header(base, self.committee_keypairs(epoch))
        if tamper == "skip_height":
            base = replace(base, height=height + 1, timestamp=height + 1)
            return self._sign_header(base, self.committee_keypairs(self.epoch_of_height(height + 1)))
        if tamper == "bad_timestamp":
            base = replace(base, timestamp=tip.timestamp)
            return self._sign_header(base, self.committee_keypairs(epoch))
        if tamper == "insufficient_signatures":
            keep = self.config.committee_threshold - 1
            return self._sign_header(base, self.committee_keypairs(epoch)[:keep])
        if tamper == "corrupt_signature":
            keys = self.committee_keypairs(epoch)[: self.config.committee_threshold]
            header = self._sign_header(base, keys)
            sigs = list(header.committee_signatures)
            sigs[0] = Signature(bytes_=b"\x00" * 64, signer=sigs[0].signer)
            return replace(header, committee_signatures=tuple(sigs))
        if tamper == "fake_committee":
            fake = [
                crypto.keygen(encode_fields("fake-validator", i), self.config.scheme)
                for i in range(self.config.committee_size)
            ]
            return self._sign_header(base, fake)
        if tamper == "stale_committee":
            if epoch == self.epoch_of_height(tip.height):
                raise ValueError("stale_committee forgery requires the next height to rotate")
            return self._sign_header(base, self.committee_keypairs(epoch - 1))
        raise ValueError(f"unknown tamper kind {tamper!r}")

    def _sign_header(self, header: BlockHeader, keypairs) -> BlockHeader:
        digest = header.signing_digest()
        sigs = tuple(crypto.sign(digest, kp) for kp in keypairs)
        return replace(header, committee_signatures=sigs)
