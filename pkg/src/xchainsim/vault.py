"""On-chain vault contract: operator registration, deposits, batched
multisig transfers, the challenge lifecycle, confirmations, checkpoints.

Deployed on both chains by the harness. All state mutation happens inside
contract calls executed by the chain host during block finalization; every
method validates its preconditions completely before touching state, so a
revert (CallRevert) leaves no partial effects.

Pending deposits stay withdrawable through the challenge path until an
operator multisig confirms them; confirmed records are eventually removed
in checkpoint batches. Any state-mutating entry point other than deposit,
start_challenge, and resolve_challenge requires an m-of-n operator
multisig, where m = f + 1 over the registered operator count n = 2f + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Optional, Tuple

from . import crypto
from .chain import CallContext, CallRevert, ChainTx
from .crypto import AttestationQuote, MultiSignature, Signature, encode_fields, hash_fields


@dataclass(frozen=True)
class TransferItem:
    receiver: bytes
    amount: int
    source_deposit_id: bytes

    def canonical_encoding(self) -> bytes:
        return encode_fields(self.receiver, self.amount, self.source_deposit_id)


@dataclass(frozen=True)
class TransferBatch:
    """Batched payouts for one target chain, authorized by one multisig.

    expiry bounds how late the batch may execute: a batch finalizing after
    its expiry reverts, so a withheld-and-replayed submission can never
    land once the source deposits have become refundable.
    """

    target_chain_id: str
    transfers: Tuple[TransferItem, ...]
    expiry: int
    multisig: Optional[MultiSignature] = None

    def digest(self) -> bytes:
        return hash_fields(
            "transfer-batch", self.target_chain_id, self.expiry, list(self.transfers)
        )

    def canonical_encoding(self) -> bytes:
        body = encode_fields(
            "transfer-batch", self.target_chain_id, self.expiry, list(self.transfers)
        )
        if self.multisig is None:
            return body
        return body + encode_fields(
            self.multisig.message_digest,
            [[s.bytes_, s.signer] for s in self.multisig.signatures],
            self.multisig.threshold,
        )

    def total_amount(self) -> int:
        return sum(item.amount for item in self.transfers)


def confirm_digest(chain_id: str, deposit_ids) -> bytes:
    return hash_fields("confirm", chain_id, list(deposit_ids))


def respond_digest(chain_id: str, deposit_id: bytes) -> bytes:
    return hash_fields("challenge-response", chain_id, deposit_id)


def checkpoint_digest(chain_id: str, deposit_ids) -> bytes:
    return hash_fields("checkpoint", chain_id, list(deposit_ids))


def deposit_id_for(sender: bytes, value: int, timestamp: int) -> bytes:
    return hash_fields("deposit", sender, value, timestamp)


@dataclass(frozen=True)
class BlockProof:
    """A recent finalized header digest signed by the registering enclave."""

    header_digest: bytes
    height: int
    signature: Signature

    def canonical_encoding(self) -> bytes:
        return encode_fields(
            self.header_digest, self.height, self.signature.bytes_, self.signature.signer
        )


@dataclass
class DepositRecord:
    id: bytes
    sender: bytes
    value: int
    under_challenge: bool = False
    challenge_started_at: Optional[int] = None
    confirmed: bool = False


@dataclass
class VaultParams:
    expected_program_digest: bytes
    root_public_key: bytes
    registration_lag: int = 32  # accept block proofs referencing the last k headers
    response_window: int = 80  # ticks a challenge stays open before refund
    pledge_percent: Fraction = Fraction(1, 100)
    pledge_floor: int = 1
    scheme: str = "ed25519"


class Vault:
    def __init__(self, chain_id: str, params: VaultParams):
        self.chain_id = chain_id
        self.params = params
        self.operators: Dict[bytes, int] = {}  # public key -> registered_at tick
        self.threshold = 0
        self.deposits: Dict[bytes, DepositRecord] = {}
        self.balance = 0
        self.pledges: Dict[bytes, Tuple[bytes, int]] = {}  # deposit id -> (challenger, amount)
        self.stakes: Dict[bytes, int] = {}
        self.processed_batches: set = set()

    # -- accounting -----------------------------------------------------------

    def held_total(self) -> int:
        return (
            self.balance
            + sum(amount for _, amount in self.pledges.values())
            + sum(self.stakes.values())
        )

    def fund(self, amount: int) -> None:
        """Seed vault liquidity during scenario setup."""
        self.balance += amount

    def pledge_required(self, value: int) -> int:
        scaled = int(self.params.pledge_percent * value)
        return max(scaled, self.params.pledge_floor)

    def operator_keys(self) -> frozenset:
        return frozenset(self.operators)

    def _check_multisig(self, ctx: CallContext, ms: Optional[MultiSignature], digest: bytes) -> None:
        ctx.meter.sig_verifications += 1  # one on-chain verification per call
        if ms is None or ms.message_digest != digest:
            raise CallRevert("multisig missing or signed over a different payload")
        if not crypto.multisig_verify(ms, self.operator_keys(), self.threshold, self.params.scheme):
            raise CallRevert(
                f"multisig below threshold {self.threshold} of {len(self.operators)}"
            )

    # -- entry points -----------------------------------------------------------

    def call_register(self, ctx: CallContext, tx: ChainTx) -> None:
        quote, block_proof, public_key = tx.args
        if public_key in self.operators:
            raise CallRevert("operator key already registered")
        if not crypto.verify_quote(quote, self.params.root_public_key, self.params.scheme):
            raise CallRevert("invalid attestation quote")
        if quote.program_digest != self.params.expected_program_digest:
            raise CallRevert("attestation covers an unexpected program")
        if quote.enclave_public_key != public_key:
            raise CallRevert("attestation covers a different key")
        ctx.meter.sig_verifications += 1
        if not crypto.verify(
            block_proof.header_digest, block_proof.signature, public_key, self.params.scheme
        ):
            raise CallRevert("block proof not signed by the registering key")
        recent = ctx.finalized_header_digests(self.params.registration_lag)
        if block_proof.header_digest not in recent:
            raise CallRevert(
                f"block proof older than the last {self.params.registration_lag} headers"
            )
        if tx.value:
            ctx.debit(tx.sender, tx.value)
        self.operators[public_key] = ctx.timestamp
        self.stakes[public_key] = tx.value
        self.threshold = len(self.operators) // 2 + 1
        ctx.meter.storage_writes += 2
        ctx.emit("Register", operator=public_key, stake=tx.value, threshold=self.threshold)

    def call_deposit(self, ctx: CallContext, tx: ChainTx) -> None:
        value = tx.value
        if value <= 0:
            raise CallRevert("deposit value must be positive")
        deposit_id = deposit_id_for(tx.sender, value, ctx.timestamp)
        ctx.meter.hash_ops += 1
        if deposit_id in self.deposits:
            # Same sender, value, and block timestamp; the client retries next tick.
            raise CallRevert("deposit id collision in this block")
        ctx.debit(tx.sender, value)
        self.deposits[deposit_id] = DepositRecord(id=deposit_id, sender=tx.sender, value=value)
        self.balance += value
        ctx.meter.storage_writes += 2
        ctx.emit("Deposit", id=deposit_id, sender=tx.sender, value=value)

    def call_transfer(self, ctx: CallContext, tx: ChainTx) -> int:
        (batch,) = tx.args
        digest = batch.digest()
        ctx.meter.hash_ops += 1
        self._check_multisig(ctx, batch.multisig, digest)
        if batch.target_chain_id != self.chain_id:
            raise CallRevert("batch targets a different chain")
        if ctx.timestamp > batch.expiry:
            raise CallRevert(f"batch expired at {batch.expiry}, now {ctx.timestamp}")
        if digest in self.processed_batches:
            raise CallRevert("batch already processed")
        total = batch.total_amount()
        if total > self.balance:
            raise CallRevert(f"insufficient vault balance {self.balance} for batch {total}")
        self.balance -= total
        self.processed_batches.add(digest)
        ctx.meter.storage_writes += 1
        for item in batch.transfers:
            ctx.credit(item.receiver, item.amount)
            ctx.meter.storage_writes += 1
            ctx.emit(
                "Transfer",
                receiver=item.receiver,
                amount=item.amount,
                source_deposit_id=item.source_deposit_id,
                batch=digest,
            )
        return len(batch.transfers)

    def call_confirm(self, ctx: CallContext, tx: ChainTx) -> int:
        ids, multisig = tx.args
        self._check_multisig(ctx, multisig, confirm_digest(self.chain_id, ids))
        confirmed = 0
        for deposit_id in ids:
            record = self.deposits.get(deposit_id)
            if record is None or record.confirmed:
                continue  # unknown or already confirmed: skipped, others proceed
            if record.under_challenge:
                challenger, amount = self.pledges.pop(deposit_id)
                ctx.credit(challenger, amount)
                record.under_challenge = False
                record.challenge_started_at = None
                ctx.emit("ChallengeVoided", id=deposit_id, challenger=challenger, pledge=amount)
            record.confirmed = True
            confirmed += 1
            ctx.meter.storage_writes += 1
            ctx.emit("Confirm", id=deposit_id)
        return max(len(ids), 1)

    def call_start_challenge(self, ctx: CallContext, tx: ChainTx) -> None:
        deposit_id, value = tx.args
        pledge = tx.value
        record = self.deposits.get(deposit_id)
        if record is None:
            raise CallRevert("no such deposit")
        if record.confirmed:
            raise CallRevert("deposit already confirmed")
        if record.under_challenge:
            raise CallRevert("deposit already under challenge")
        if value != record.value:
            raise CallRevert("challenged value does not match the deposit")
        required = self.pledge_required(record.value)
        if pledge < required:
            raise CallRevert(f"pledge {pledge} below requirement {required}")
        ctx.debit(tx.sender, pledge)
        self.pledges[deposit_id] = (tx.sender, pledge)
        record.under_challenge = True
        record.challenge_started_at = ctx.timestamp
        ctx.meter.storage_writes += 2
        ctx.emit("Challenge", id=deposit_id, challenger=tx.sender, pledge=pledge)

    def call_resolve_challenge(self, ctx: CallContext, tx: ChainTx) -> None:
        (deposit_id,) = tx.args
        record = self.deposits.get(deposit_id)
        if record is None or not record.under_challenge:
            raise CallRevert("deposit not under challenge")
        elapsed = ctx.timestamp - record.challenge_started_at
        if not elapsed > self.params.response_window:
            raise CallRevert(
                f"response window still open: {elapsed} <= {self.params.response_window}"
            )
        challenger, pledge = self.pledges.pop(deposit_id)
        self.balance -= record.value
        ctx.credit(record.sender, record.value)
        ctx.credit(challenger, pledge)
        del self.deposits[deposit_id]
        ctx.meter.storage_deletes += 1
        ctx.emit("Refund", id=deposit_id, sender=record.sender, value=record.value)

    def call_respond_challenge(self, ctx: CallContext, tx: ChainTx) -> None:
        deposit_id, multisig = tx.args
        self._check_multisig(ctx, multisig, respond_digest(self.chain_id, deposit_id))
        record = self.deposits.get(deposit_id)
        if record is None or not record.under_challenge:
            raise CallRevert("deposit not under challenge")
        challenger, pledge = self.pledges.pop(deposit_id)
        self.balance += pledge  # forfeited
        del self.deposits[deposit_id]
        ctx.meter.storage_deletes += 1
        ctx.emit("ChallengeResponse", id=deposit_id, challenger=challenger, forfeited=pledge)

    def call_update_checkpoint(self, ctx: CallContext, tx: ChainTx) -> int:
        ids, multisig = tx.args
        self._check_multisig(ctx, multisig, checkpoint_digest(self.chain_id, ids))
        deleted = []
        for deposit_id in ids:
            record = self.deposits.get(deposit_id)
            if record is None or record.under_challenge:
                continue  # active challenges survive checkpointing
            del self.deposits[deposit_id]
            ctx.meter.storage_deletes += 1
            deleted.append(deposit_id)
        ctx.emit("Checkpoint", requested=len(ids), deleted=len(deleted))
        return max(len(ids), 1)
