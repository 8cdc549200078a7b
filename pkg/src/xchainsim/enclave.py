"""The simulated TEE and the exchange program it runs.

An enclave is a sequential reactor: the host resumes it once per tick with
the messages it chose to deliver, and collects the outputs (peer messages,
chain submissions, client replies), each batch endorsed by the enclave
identity key. Secret keys never leave the enclave; everything the host can
do to it is delay, drop, replay, or suspension, which the surrounding
harness expresses through HostFilter policies.

Program logic, per exchange: validate the client request against the
deposit proven through the light client, price it on the replicated
constant-product pool, replicate the priced batch through raft, contribute
a signature share only after this enclave itself verified the underlying
cross-chain facts, and submit completed multisigs to the vaults. The same
self-verification gate guards confirm, challenge-response, and checkpoint
shares: an enclave never endorses a transfer-dependent statement it has
not checked against its own verified headers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

from . import amm, consensus, crypto, lightclient, merkle
from .chain import BlockHeader, ChainTx, SyncCommittee, address_for
from .consensus import (
    BatchPayload,
    CheckpointPayload,
    ConfirmPayload,
    LogEntry,
    RaftConfig,
    RaftNode,
    RespondPayload,
    SignatureShareSet,
    ShareMessage,
    SignedEnvelope,
    seal,
)
from .crypto import KeyPair, MultiSignature, Signature, encode_fields, hash_fields
from .lightclient import InclusionResult, LightClientConfig, LightClientState
from .vault import BlockProof, TransferBatch, deposit_id_for


# -- host filter ------------------------------------------------------------------

DELIVER = ("deliver",)
DROP = ("drop",)


def delay(ticks: int) -> tuple:
    return ("delay", ticks)


def replay(count: int) -> tuple:
    return ("replay", count)


@dataclass
class HostFilter:
    """A malicious host's power over one enclave's I/O.

    Policies map message-class tags to an action; unlisted classes are
    delivered. The filter manipulates delivery only; signed contents pass
    through untouched (tampering is rejected downstream by signature
    checks, so it reduces to drop)."""

    policies: Dict[str, tuple] = field(default_factory=dict)
    available: bool = True

    def action_for(self, class_tag: str) -> tuple:
        return self.policies.get(class_tag, DELIVER)


# -- messages ----------------------------------------------------------------------

CLASS_CLIENT_REQUEST = "client_request"
CLASS_RAFT = "raft"


def header_class(chain_id: str) -> str:
    return f"header_{chain_id}"


def submission_class(chain_id: str) -> str:
    return f"submission_{chain_id}"


CLASS_CLIENT_REPLY = "client_reply"


@dataclass(frozen=True)
class ExchangeRequest:
    """Client's off-chain exchange request, signed with the depositing key."""

    deposit_id: bytes
    source_chain_id: str
    sender_address: bytes
    target_chain_id: str
    receiver_address: bytes
    signature: Signature

    def signed_payload(self) -> bytes:
        return encode_fields(
            "exchange-request",
            self.deposit_id,
            self.source_chain_id,
            self.sender_address,
            self.target_chain_id,
            self.receiver_address,
        )

    def canonical_encoding(self) -> bytes:
        return self.signed_payload() + encode_fields(self.signature)


def make_request(
    client_keypair: KeyPair,
    deposit_id: bytes,
    source_chain_id: str,
    target_chain_id: str,
    receiver_address: bytes,
) -> ExchangeRequest:
    sender = address_for(client_keypair.public_key)
    unsigned = ExchangeRequest(
        deposit_id=deposit_id,
        source_chain_id=source_chain_id,
        sender_address=sender,
        target_chain_id=target_chain_id,
        receiver_address=receiver_address,
        signature=Signature(b"", b""),
    )
    sig = crypto.sign(unsigned.signed_payload(), client_keypair)
    return replace(unsigned, signature=sig)


@dataclass(frozen=True)
class HeaderBundle:
    """One finalized header plus the vault-relevant transactions in its
    block, each with an inclusion proof, and committee material on epoch
    boundaries. Produced by the host from its chain view."""

    chain_id: str
    header: BlockHeader
    txs: Tuple[Tuple[ChainTx, merkle.InclusionProof], ...]
    committee: Optional[SyncCommittee] = None

    def canonical_encoding(self) -> bytes:
        return encode_fields(
            "header-bundle", self.chain_id, self.header.header_digest(),
            [tx.id for tx, _ in self.txs],
        )


InboundBody = Union[ExchangeRequest, HeaderBundle, SignedEnvelope]


@dataclass(frozen=True)
class Inbound:
    class_tag: str
    body: InboundBody
    seq: int


@dataclass(frozen=True)
class TickInput:
    now: int
    messages: Tuple[Inbound, ...]


@dataclass(frozen=True)
class Submission:
    chain_id: str
    method: str
    args: tuple

    @property
    def class_tag(self) -> str:
        return submission_class(self.chain_id)

    def canonical_encoding(self) -> bytes:
        return encode_fields("submission", self.chain_id, self.method, list(self.args))


@dataclass(frozen=True)
class ClientReply:
    client_address: bytes
    deposit_id: bytes
    status: str
    amount: int = 0

    class_tag = CLASS_CLIENT_REPLY

    def canonical_encoding(self) -> bytes:
        return encode_fields("client-reply", self.client_address, self.deposit_id, self.status, self.amount)


@dataclass(frozen=True)
class PeerMessage:
    dst: int
    envelope: SignedEnvelope

    class_tag = CLASS_RAFT

    def canonical_encoding(self) -> bytes:
        return encode_fields("peer", self.dst, self.envelope)


Output = Union[Submission, ClientReply, PeerMessage]


@dataclass(frozen=True)
class TransferIntent:
    source_deposit_id: bytes
    source_chain_id: str
    target_chain_id: str
    amount: int  # priced target-side amount
    receiver: bytes
    source_value: int
    net_input: int
    deposit_finalized_at: int


# -- program configuration ------------------------------------------------------------


@dataclass(frozen=True)
class ChainParams:
    chain_id: str
    committee_rotation_period: int
    committee_threshold: int
    finality_delay: int
    response_window: int  # the vault's challenge response window on this chain

    def lc_config(self, scheme: str) -> LightClientConfig:
        return LightClientConfig(
            chain_id=self.chain_id,
            committee_rotation_period=self.committee_rotation_period,
            committee_threshold=self.committee_threshold,
            scheme=scheme,
        )


@dataclass(frozen=True)
class ProgramConfig:
    source_chain_id: str
    target_chain_id: str
    chains: Dict[str, ChainParams]
    n_operators: int
    fee_per_tx: int
    pool_x: int
    pool_y: int
    max_batch: int = 2000
    checkpoint_batch_size: int = 20
    checkpoint_period: int = 0  # 0 disables the periodic trigger
    lag_bound: int = 32
    parked_retry_factor: int = 2  # parked requests live 2 * source finality delay
    scheme: str = "ed25519"
    raft: RaftConfig = RaftConfig()

    def digest(self) -> bytes:
        return hash_fields(
            "exchange-program",
            self.source_chain_id,
            self.target_chain_id,
            self.n_operators,
            self.fee_per_tx,
            self.pool_x,
            self.pool_y,
            self.max_batch,
            self.checkpoint_batch_size,
            self.checkpoint_period,
        )


@dataclass
class DutyState:
    """Lifecycle of one multisig-backed statement: signature share gated on
    self-verification, then on-chain submission until observed done."""

    payload: consensus.Payload
    submit_chain_id: str
    method: str
    share_sent: bool = False
    done: bool = False


class Enclave:
    def __init__(self, eid: str, node_id: int, config: ProgramConfig, install_seed: bytes):
        self.eid = eid
        self.node_id = node_id
        self.config = config
        self.program_digest = config.digest()
        self.keys: Dict[str, KeyPair] = {
            chain_id: crypto.keygen(
                encode_fields("enclave-key", install_seed, eid, chain_id), config.scheme
            )
            for chain_id in sorted(config.chains)
        }
        self.identity = self.keys[config.source_chain_id]
        self.light_clients: Dict[str, LightClientState] = {}
        self.raft: Optional[RaftNode] = None
        self.operator_keys: Dict[str, Dict[int, bytes]] = {}
        self.now = 0

        # Replicated state, deterministic from the applied log.
        self.pool = amm.Pool(reserve_x=config.pool_x, reserve_y=config.pool_y,
                             invariant_k=config.pool_x * config.pool_y)
        self.processed: Dict[bytes, TransferIntent] = {}
        self.batch_payloads: Dict[bytes, BatchPayload] = {}
        self.deposit_batch: Dict[bytes, bytes] = {}  # deposit id -> batch digest
        self.applied_confirmed: set = set()
        self.applied_responded: set = set()
        self.applied_checkpointed: set = set()

        # Local view built from verified headers.
        self.verified_deposits: Dict[bytes, Tuple[bytes, int, int]] = {}  # id -> (sender, value, height)
        self.batch_finalized: set = set()
        self.onchain_confirmed: set = set()
        self.onchain_checkpointed: set = set()
        self.refunded: set = set()
        self.challenges_open: Dict[bytes, int] = {}

        # Requests.
        self.requests: Dict[bytes, ExchangeRequest] = {}
        self.pending: List[bytes] = []  # deposit ids awaiting batching, FIFO
        self.parked: Dict[bytes, Tuple[ExchangeRequest, int]] = {}  # id -> (request, deadline)
        self.rejected_requests: set = set()

        # Multisig duties.
        self.duties: Dict[bytes, DutyState] = {}
        self.share_sets: Dict[bytes, SignatureShareSet] = {}
        self.multisigs: Dict[bytes, MultiSignature] = {}
        self.replied: set = set()

        self._outputs: List[Output] = []
        self.intent_log: List[TransferIntent] = []  # every intent this enclave created

    # -- initialization -------------------------------------------------------------

    def public_key(self, chain_id: str) -> bytes:
        return self.keys[chain_id].public_key

    def bootstrap_chain(
        self,
        chain_id: str,
        headers,
        current_committee: SyncCommittee,
        next_committee: SyncCommittee,
        block_data,
    ) -> BlockProof:
        params = self.config.chains[chain_id]
        state, proof = lightclient.bootstrap(
            params.lc_config(self.config.scheme),
            headers,
            current_committee,
            next_committee,
            block_data,
            self.config.lag_bound,
            enclave_keypair=self.keys[chain_id],
        )
        self.light_clients[chain_id] = state
        return proof

    def activate(self, operator_keys: Dict[str, Dict[int, bytes]]) -> None:
        """Provide the registered operator key directory (as recorded on the
        vaults) and start the replication node."""
        self.operator_keys = operator_keys
        peer_keys = dict(operator_keys[self.config.source_chain_id])
        self.raft = RaftNode(
            node_id=self.node_id,
            n=self.config.n_operators,
            identity=self.identity,
            peer_keys=peer_keys,
            config=self.config.raft,
        )

    def authorized_keys(self, chain_id: str) -> frozenset:
        return frozenset(self.operator_keys[chain_id].values())

    # -- the reactor -----------------------------------------------------------------

    def resume(self, tick_input: TickInput) -> Tuple[Tuple[Output, ...], Signature]:
        """Process one tick of delivered inputs; deterministic in (state, input)."""
        self.now = tick_input.now
        self._outputs = []
        for msg in tick_input.messages:
            body = msg.body
            if isinstance(body, ExchangeRequest):
                self._on_request(body)
            elif isinstance(body, HeaderBundle):
                self._on_header_bundle(body)
            elif isinstance(body, SignedEnvelope):
                self._on_peer_envelope(body)
        if self.raft is not None:
            self.raft.tick(self.now)
            self._retry_parked()
            if self.raft.role == consensus.LEADER:
                self._leader_duties()
            self._apply_committed()
            self._share_duties()
            self._submission_duties()
            self._drain_raft_outbox()
        outputs = tuple(self._outputs)
        endorsement = crypto.sign(hash_fields("resume-output", self.eid, self.now, list(outputs)), self.identity)
        return outputs, endorsement

    # -- request handling ----------------------------------------------------------------

    def _on_request(self, req: ExchangeRequest) -> None:
        dep_id = req.deposit_id
        if dep_id in self.requests or dep_id in self.rejected_requests:
            if dep_id not in self.replied and dep_id in self.rejected_requests:
                return
            self._reply(req, "duplicate")
            return
        if req.source_chain_id != self.config.source_chain_id or (
            req.target_chain_id != self.config.target_chain_id
        ):
            self._reject(req, "unsupported-route")
            return
        if not crypto.verify(
            req.signed_payload(), req.signature, req.signature.signer, scheme=self.config.scheme
        ) or address_for(req.signature.signer) != req.sender_address:
            self._reject(req, "bad-signature")
            return
        if dep_id in self.refunded or dep_id in self.onchain_checkpointed:
            self._reject(req, "deposit-closed")
            return
        if dep_id in self.verified_deposits:
            self._admit(req)
        else:
            horizon = self.config.parked_retry_factor * self.config.chains[
                req.source_chain_id
            ].finality_delay
            self.parked[dep_id] = (req, self.now + horizon)

    def _admit(self, req: ExchangeRequest) -> None:
        sender, value, _height = self.verified_deposits[req.deposit_id]
        if sender != req.sender_address:
            self._reject(req, "sender-mismatch")
            return
        if value <= self.config.fee_per_tx:
            self._reject(req, "value-below-fee")
            return
        self.requests[req.deposit_id] = req
        self.pending.append(req.deposit_id)
        self._reply(req, "accepted")

    def _reject(self, req: ExchangeRequest, status: str) -> None:
        self.rejected_requests.add(req.deposit_id)
        self._reply(req, status)

    def _reply(self, req: ExchangeRequest, status: str, amount: int = 0) -> None:
        self._outputs.append(
            ClientReply(
                client_address=req.sender_address,
                deposit_id=req.deposit_id,
                status=status,
                amount=amount,
            )
        )

    def _retry_parked(self) -> None:
        for dep_id in sorted(self.parked):
            req, deadline = self.parked[dep_id]
            if dep_id in self.verified_deposits:
                del self.parked[dep_id]
                self._admit(req)
            elif self.now > deadline:
                del self.parked[dep_id]
                self._reject(req, "deposit-not-finalized")

    # -- header ingestion --------------------------------------------------------------------

    def _on_header_bundle(self, bundle: HeaderBundle) -> None:
        state = self.light_clients.get(bundle.chain_id)
        if state is None:
            return
        accepted, _reason = lightclient.ingest_header(state, bundle.header, bundle.committee)
        if not accepted:
            return  # duplicates, gaps, and forgeries all land here
        for tx, proof in bundle.txs:
            if crypto.hash_data(tx.canonical_encoding()) != tx.id or proof.tx_id != tx.id:
                continue
            if proof.height != bundle.header.height:
                continue
            if lightclient.verify_inclusion(state, proof) != InclusionResult.INCLUDED:
                continue
            self._on_verified_tx(bundle.chain_id, tx, proof.height)

    def _on_verified_tx(self, chain_id: str, tx: ChainTx, height: int) -> None:
        method = tx.method
        if chain_id == self.config.source_chain_id:
            if method == "deposit":
                dep_id = deposit_id_for(tx.sender, tx.value, height)
                self.verified_deposits[dep_id] = (tx.sender, tx.value, height)
            elif method == "start_challenge":
                dep_id = tx.args[0]
                self.challenges_open[dep_id] = height
            elif method == "resolve_challenge":
                dep_id = tx.args[0]
                self.refunded.add(dep_id)
                self.challenges_open.pop(dep_id, None)
            elif method == "respond_challenge":
                self.challenges_open.pop(tx.args[0], None)
            elif method == "confirm":
                for dep_id in tx.args[0]:
                    self.onchain_confirmed.add(dep_id)
                    self.challenges_open.pop(dep_id, None)
            elif method == "update_checkpoint":
                for dep_id in tx.args[0]:
                    self.onchain_checkpointed.add(dep_id)
        if chain_id == self.config.target_chain_id and method == "transfer":
            batch: TransferBatch = tx.args[0]
            digest = batch.digest()
            if digest in self.batch_payloads:
                self.batch_finalized.add(digest)
                self._emit_client_replies(digest)

    def _emit_client_replies(self, batch_digest: bytes) -> None:
        payload = self.batch_payloads[batch_digest]
        for item in payload.batch.transfers:
            dep_id = item.source_deposit_id
            req = self.requests.get(dep_id)
            if req is None or dep_id in self.replied:
                continue
            self.replied.add(dep_id)
            self._reply(req, "completed", amount=item.amount)

    # -- peer messages ------------------------------------------------------------------------

    def _on_peer_envelope(self, env: SignedEnvelope) -> None:
        if self.raft is None:
            return
        if isinstance(env.body, ShareMessage):
            body = consensus.open_envelope(
                env, self.raft.peer_keys, self.config.scheme
            )
            if body is None:
                return
            self._accept_share(body)
            return
        self.raft.receive(env, self.now)

    def _accept_share(self, msg: ShareMessage) -> None:
        duty = self.duties.get(msg.payload_digest)
        if duty is None or duty.done:
            return
        share_set = self._share_set_for(msg.payload_digest, duty)
        share_set.add_share(msg.share, self.authorized_keys(msg.chain_id), self.config.scheme)

    def _share_set_for(self, digest: bytes, duty: DutyState) -> SignatureShareSet:
        share_set = self.share_sets.get(digest)
        if share_set is None:
            share_set = SignatureShareSet(
                payload_digest=digest, threshold=self.config.n_operators // 2 + 1
            )
            self.share_sets[digest] = share_set
        return share_set

    # -- leader duties ----------------------------------------------------------------------------

    def _leader_duties(self) -> None:
        self._propose_batches()
        self._propose_confirms()
        self._propose_responses()
        self._propose_checkpoints()

    def _pool_projection(self) -> amm.Pool:
        """Replicated pool plus the effects of every log entry not yet
        applied; new batches are priced against this projection so apply
        recomputes the same amounts."""
        pool = amm.Pool(
            reserve_x=self.pool.reserve_x,
            reserve_y=self.pool.reserve_y,
            invariant_k=self.pool.invariant_k,
        )
        for entry in self.raft.log[self.raft._applied_index :]:
            if isinstance(entry.payload, BatchPayload):
                for item, net in zip(entry.payload.batch.transfers, entry.payload.net_inputs):
                    if item.source_deposit_id in self.processed:
                        continue
                    pool.reserve_x += net
                    pool.reserve_y -= item.amount
        return pool

    def _ids_in_flight(self) -> set:
        ids = set(self.processed)
        for entry in self.raft.log:
            if isinstance(entry.payload, BatchPayload):
                ids.update(i.source_deposit_id for i in entry.payload.batch.transfers)
        return ids

    def _propose_batches(self) -> None:
        if not self.pending:
            return
        in_flight = self._ids_in_flight()
        projection = self._pool_projection()
        target_delay = self.config.chains[self.config.target_chain_id].finality_delay
        response_window = self.config.chains[self.config.source_chain_id].response_window
        intents: List[TransferIntent] = []
        still_pending: List[bytes] = []
        for dep_id in self.pending:
            if dep_id in in_flight or dep_id in self.refunded:
                continue
            req = self.requests[dep_id]
            sender, value, dep_height = self.verified_deposits[dep_id]
            expiry = dep_height + response_window - 1
            if self.now + target_delay + 1 > expiry:
                self._reject(req, "expired")
                continue
            net = value - self.config.fee_per_tx
            try:
                amount = amm.exchange(projection, net)
            except amm.TradeRejected:
                self._reject(req, "unpriceable")
                continue
            intents.append(
                TransferIntent(
                    source_deposit_id=dep_id,
                    source_chain_id=req.source_chain_id,
                    target_chain_id=req.target_chain_id,
                    amount=amount,
                    receiver=req.receiver_address,
                    source_value=value,
                    net_input=net,
                    deposit_finalized_at=dep_height,
                )
            )
        self.pending = still_pending
        if not intents:
            return
        self.intent_log.extend(intents)

        def expiry_fn(group) -> int:
            return min(i.deposit_finalized_at for i in group) + response_window - 1

        for batch in consensus.batch_transfers(intents, self.config.max_batch, expiry_fn):
            by_id = {i.source_deposit_id: i for i in intents}
            nets = tuple(by_id[item.source_deposit_id].net_input for item in batch.transfers)
            payload = BatchPayload(batch=batch, net_inputs=nets)
            self.raft.propose(payload)

    def _propose_confirms(self) -> None:
        log_digests = self.raft.log_payload_digests()
        for digest in sorted(self.batch_finalized):
            payload = self.batch_payloads.get(digest)
            if payload is None:
                continue
            ids = tuple(
                sorted(
                    item.source_deposit_id
                    for item in payload.batch.transfers
                    if item.source_deposit_id not in self.applied_confirmed
                    and item.source_deposit_id not in self.onchain_confirmed
                )
            )
            if not ids:
                continue
            confirm = ConfirmPayload(chain_id=self.config.source_chain_id, deposit_ids=ids)
            if confirm.digest() in log_digests:
                continue
            self.raft.propose(confirm)

    def _propose_responses(self) -> None:
        log_digests = self.raft.log_payload_digests()
        for dep_id in sorted(self.challenges_open):
            if dep_id in self.applied_responded or dep_id in self.onchain_confirmed:
                continue
            batch_digest = self.deposit_batch.get(dep_id)
            if batch_digest is None or batch_digest not in self.batch_finalized:
                continue  # nothing provable yet; the submission duty pushes the batch
            respond = RespondPayload(chain_id=self.config.source_chain_id, deposit_id=dep_id)
            if respond.digest() in log_digests:
                continue
            self.raft.propose(respond)

    def _checkpoint_eligible(self) -> List[bytes]:
        eligible = []
        for dep_id in sorted(self.applied_confirmed):
            if dep_id in self.applied_checkpointed or dep_id in self.onchain_checkpointed:
                continue
            if dep_id in self.challenges_open:
                continue
            batch_digest = self.deposit_batch.get(dep_id)
            if batch_digest is None or batch_digest not in self.batch_finalized:
                continue
            eligible.append(dep_id)
        return eligible

    def _propose_checkpoints(self) -> None:
        eligible = self._checkpoint_eligible()
        size = self.config.checkpoint_batch_size
        period = self.config.checkpoint_period
        due_by_period = period > 0 and self.now % period == 0 and eligible
        if len(eligible) < size and not due_by_period:
            return
        ids = tuple(eligible[:size]) if len(eligible) >= size else tuple(eligible)
        payload = CheckpointPayload(chain_id=self.config.source_chain_id, deposit_ids=ids)
        if payload.digest() in self.raft.log_payload_digests():
            return
        self.raft.propose(payload)

    # -- applying the committed log ------------------------------------------------------------------

    def _apply_committed(self) -> None:
        for entry in self.raft.take_committed():
            payload = entry.payload
            if isinstance(payload, BatchPayload):
                self._apply_batch(payload)
            elif isinstance(payload, ConfirmPayload):
                self.applied_confirmed.update(payload.deposit_ids)
                self._ensure_duty(payload, self.config.source_chain_id, "confirm")
            elif isinstance(payload, RespondPayload):
                self.applied_responded.add(payload.deposit_id)
                self._ensure_duty(payload, self.config.source_chain_id, "respond_challenge")
            elif isinstance(payload, CheckpointPayload):
                self.applied_checkpointed.update(payload.deposit_ids)
                self._ensure_duty(payload, self.config.source_chain_id, "update_checkpoint")

    def _apply_batch(self, payload: BatchPayload) -> None:
        digest = payload.batch.digest()
        self.batch_payloads[digest] = payload
        for item, net in zip(payload.batch.transfers, payload.net_inputs):
            dep_id = item.source_deposit_id
            assert dep_id not in self.processed, "deposit batched twice"
            amount = amm.exchange(self.pool, net)
            assert amount == item.amount, "replicated pricing diverged"
            self.processed[dep_id] = TransferIntent(
                source_deposit_id=dep_id,
                source_chain_id=self.config.source_chain_id,
                target_chain_id=payload.batch.target_chain_id,
                amount=item.amount,
                receiver=item.receiver,
                source_value=net + self.config.fee_per_tx,
                net_input=net,
                deposit_finalized_at=0,
            )
            self.deposit_batch[dep_id] = digest
        self._ensure_duty(payload, payload.batch.target_chain_id, "transfer")

    def _ensure_duty(self, payload: consensus.Payload, chain_id: str, method: str) -> None:
        digest = payload.digest()
        if digest not in self.duties:
            self.duties[digest] = DutyState(payload=payload, submit_chain_id=chain_id, method=method)

    # -- shares and submissions --------------------------------------------------------------------------

    def _self_verified(self, duty: DutyState) -> bool:
        payload = duty.payload
        if isinstance(payload, BatchPayload):
            for item in payload.batch.transfers:
                dep_id = item.source_deposit_id
                info = self.verified_deposits.get(dep_id)
                req = self.requests.get(dep_id)
                if info is None or req is None:
                    return False
                if req.receiver_address != item.receiver or info[0] != req.sender_address:
                    return False
            return True
        if isinstance(payload, ConfirmPayload):
            ids = payload.deposit_ids
        elif isinstance(payload, RespondPayload):
            ids = (payload.deposit_id,)
        else:  # CheckpointPayload
            ids = payload.deposit_ids
        for dep_id in ids:
            batch_digest = self.deposit_batch.get(dep_id)
            if batch_digest is None or batch_digest not in self.batch_finalized:
                return False
        return True

    def _share_duties(self) -> None:
        for digest in sorted(self.duties):
            duty = self.duties[digest]
            if duty.share_sent or duty.done:
                continue
            if not self._self_verified(duty):
                continue
            keypair = self.keys[duty.submit_chain_id]
            share = crypto.sign(digest, keypair)
            duty.share_sent = True
            share_set = self._share_set_for(digest, duty)
            share_set.add_share(share, self.authorized_keys(duty.submit_chain_id), self.config.scheme)
            msg = ShareMessage(
                signer_id=self.node_id,
                chain_id=duty.submit_chain_id,
                payload_digest=digest,
                share=share,
            )
            for peer in sorted(self.raft.peer_keys):
                if peer != self.node_id:
                    self._outputs.append(
                        PeerMessage(dst=peer, envelope=seal(self.node_id, msg, self.identity))
                    )

    def _duty_done(self, duty: DutyState) -> bool:
        payload = duty.payload
        if isinstance(payload, BatchPayload):
            digest = payload.batch.digest()
            if digest in self.batch_finalized:
                return True
            target_delay = self.config.chains[payload.batch.target_chain_id].finality_delay
            return self.now + target_delay > payload.batch.expiry
        if isinstance(payload, ConfirmPayload):
            closed = self.onchain_confirmed | self.refunded | self.onchain_checkpointed
            return all(dep_id in closed for dep_id in payload.deposit_ids)
        if isinstance(payload, RespondPayload):
            return payload.deposit_id not in self.challenges_open
        closed = self.onchain_checkpointed | self.refunded
        return all(dep_id in closed for dep_id in payload.deposit_ids)

    def _submission_duties(self) -> None:
        for digest in sorted(self.duties):
            duty = self.duties[digest]
            if duty.done or self._duty_done(duty):
                duty.done = True
                continue
            share_set = self.share_sets.get(digest)
            if share_set is None or not share_set.complete():
                continue
            multisig = self.multisigs.get(digest)
            if multisig is None:
                multisig = share_set.to_multisig()
                self.multisigs[digest] = multisig
            payload = duty.payload
            if isinstance(payload, BatchPayload):
                signed_batch = replace(payload.batch, multisig=multisig)
                args = (signed_batch,)
            elif isinstance(payload, ConfirmPayload):
                args = (payload.deposit_ids, multisig)
            elif isinstance(payload, RespondPayload):
                args = (payload.deposit_id, multisig)
            else:
                args = (payload.deposit_ids, multisig)
            self._outputs.append(
                Submission(chain_id=duty.submit_chain_id, method=duty.method, args=args)
            )

    def _drain_raft_outbox(self) -> None:
        for dst, env in self.raft.drain_outbox():
            self._outputs.append(PeerMessage(dst=dst, envelope=env))
