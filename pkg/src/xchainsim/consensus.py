"""Raft replication among the n = 2f+1 enclaves plus threshold signature
collection.

The replicated log carries protocol decisions (transfer batches, confirm
sets, challenge responses, checkpoints). An entry commits once a majority
(f+1) of enclaves hold it; committed order is identical everywhere. After
commitment, enclaves exchange signature shares over the payload digest and
any holder of f+1 distinct shares can assemble the on-chain multisig.

Every message is signed by the sending enclave's registered key and
verified on receipt, which reduces host tampering to message drop/delay.
Election timeouts are deterministic per-node staggered constants so whole
runs replay bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from . import crypto
from .crypto import KeyPair, MultiSignature, Signature, encode_fields
from .vault import TransferBatch, checkpoint_digest, confirm_digest, respond_digest


# -- log payloads ----------------------------------------------------------------


@dataclass(frozen=True)
class BatchPayload:
    """A transfer batch plus the net source-side inputs (deposit value minus
    fee) per item, so every replica can apply identical pool updates."""

    kind = "batch"
    batch: TransferBatch
    net_inputs: Tuple[int, ...]

    def digest(self) -> bytes:
        return self.batch.digest()

    def canonical_encoding(self) -> bytes:
        return encode_fields("payload-batch", self.batch, list(self.net_inputs))


@dataclass(frozen=True)
class ConfirmPayload:
    kind = "confirm"
    chain_id: str
    deposit_ids: Tuple[bytes, ...]

    def digest(self) -> bytes:
        return confirm_digest(self.chain_id, self.deposit_ids)

    def canonical_encoding(self) -> bytes:
        return encode_fields("payload-confirm", self.chain_id, list(self.deposit_ids))


@dataclass(frozen=True)
class RespondPayload:
    kind = "respond"
    chain_id: str
    deposit_id: bytes

    def digest(self) -> bytes:
        return respond_digest(self.chain_id, self.deposit_id)

    def canonical_encoding(self) -> bytes:
        return encode_fields("payload-respond", self.chain_id, self.deposit_id)


@dataclass(frozen=True)
class CheckpointPayload:
    kind = "checkpoint"
    chain_id: str
    deposit_ids: Tuple[bytes, ...]

    def digest(self) -> bytes:
        return checkpoint_digest(self.chain_id, self.deposit_ids)

    def canonical_encoding(self) -> bytes:
        return encode_fields("payload-checkpoint", self.chain_id, list(self.deposit_ids))


Payload = Union[BatchPayload, ConfirmPayload, RespondPayload, CheckpointPayload]


@dataclass(frozen=True)
class LogEntry:
    term: int
    index: int
    payload: Payload

    def canonical_encoding(self) -> bytes:
        return encode_fields("log-entry", self.term, self.index, self.payload)


# -- wire messages -------------------------------------------------------------------


@dataclass(frozen=True)
class RequestVote:
    kind = "request_vote"
    term: int
    candidate_id: int
    last_log_index: int
    last_log_term: int

    def canonical_encoding(self) -> bytes:
        return encode_fields(
            self.kind, self.term, self.candidate_id, self.last_log_index, self.last_log_term
        )


@dataclass(frozen=True)
class VoteReply:
    kind = "vote_reply"
    term: int
    voter_id: int
    candidate_id: int
    granted: bool

    def canonical_encoding(self) -> bytes:
        return encode_fields(self.kind, self.term, self.voter_id, self.candidate_id, self.granted)


@dataclass(frozen=True)
class AppendEntries:
    kind = "append_entries"
    term: int
    leader_id: int
    prev_index: int
    prev_term: int
    entries: Tuple[LogEntry, ...]
    leader_commit: int

    def canonical_encoding(self) -> bytes:
        return encode_fields(
            self.kind, self.term, self.leader_id, self.prev_index, self.prev_term,
            list(self.entries), self.leader_commit,
        )


@dataclass(frozen=True)
class AppendReply:
    kind = "append_reply"
    term: int
    follower_id: int
    success: bool
    match_index: int

    def canonical_encoding(self) -> bytes:
        return encode_fields(self.kind, self.term, self.follower_id, self.success, self.match_index)


@dataclass(frozen=True)
class ShareMessage:
    """One enclave's signature share over a committed payload digest."""

    kind = "share"
    signer_id: int
    chain_id: str
    payload_digest: bytes
    share: Signature

    def canonical_encoding(self) -> bytes:
        return encode_fields(self.kind, self.signer_id, self.chain_id, self.payload_digest, self.share)


RaftBody = Union[RequestVote, VoteReply, AppendEntries, AppendReply, ShareMessage]


@dataclass(frozen=True)
class SignedEnvelope:
    sender_id: int
    body: RaftBody
    signature: Signature

    def canonical_encoding(self) -> bytes:
        return encode_fields("envelope", self.sender_id, self.body, self.signature)


def seal(sender_id: int, body: RaftBody, keypair: KeyPair) -> SignedEnvelope:
    sig = crypto.sign(body.canonical_encoding(), keypair)
    return SignedEnvelope(sender_id=sender_id, body=body, signature=sig)


def open_envelope(env: SignedEnvelope, peer_keys: Dict[int, bytes], scheme: str) -> Optional[RaftBody]:
    """Verify the envelope against the sender's registered key; None if bad."""
    expected = peer_keys.get(env.sender_id)
    if expected is None:
        return None
    if not crypto.verify(env.body.canonical_encoding(), env.signature, expected, scheme=scheme):
        return None
    return env.body


# -- signature shares -----------------------------------------------------------------


@dataclass
class SignatureShareSet:
    payload_digest: bytes
    threshold: int
    shares: Dict[bytes, Signature] = field(default_factory=dict)

    def add_share(self, share: Signature, authorized: frozenset, scheme: str) -> bool:
        """Record one share; unregistered signers and duplicates are ignored."""
        if share.signer not in authorized or share.signer in self.shares:
            return False
        if not crypto.verify(self.payload_digest, share, share.signer, scheme=scheme):
            return False
        self.shares[share.signer] = share
        return True

    def complete(self) -> bool:
        return len(self.shares) >= self.threshold

    def to_multisig(self) -> MultiSignature:
        ordered = tuple(self.shares[k] for k in sorted(self.shares))
        return MultiSignature(
            message_digest=self.payload_digest, signatures=ordered, threshold=self.threshold
        )


# -- batching ---------------------------------------------------------------------------


def batch_transfers(intents: Sequence, max_batch: int, expiry_fn) -> List[TransferBatch]:
    """Group priced intents into per-target-chain batches, FIFO within each
    group, at most max_batch items per batch.

    Each intent carries (target_chain_id, receiver, amount,
    source_deposit_id, deposit_finalized_at); expiry_fn maps a tuple of
    intents to the batch expiry tick.
    """
    from .vault import TransferItem

    by_chain: Dict[str, List] = {}
    for intent in intents:
        by_chain.setdefault(intent.target_chain_id, []).append(intent)
    batches = []
    for chain_id in sorted(by_chain):
        queue = by_chain[chain_id]
        for start in range(0, len(queue), max_batch):
            group = tuple(queue[start : start + max_batch])
            items = tuple(
                TransferItem(
                    receiver=i.receiver, amount=i.amount, source_deposit_id=i.source_deposit_id
                )
                for i in group
            )
            batches.append(
                TransferBatch(target_chain_id=chain_id, transfers=items, expiry=expiry_fn(group))
            )
    return batches


# -- the raft node ------------------------------------------------------------------------


FOLLOWER, CANDIDATE, LEADER = "follower", "candidate", "leader"


@dataclass(frozen=True)
class RaftConfig:
    election_base: int = 8
    election_step: int = 3
    heartbeat_interval: int = 2
    scheme: str = "ed25519"


class RaftNode:
    """One enclave's replication state machine, driven by tick() and
    receive(); outbound messages accumulate in an outbox the host drains."""

    def __init__(
        self,
        node_id: int,
        n: int,
        identity: KeyPair,
        peer_keys: Dict[int, bytes],
        config: RaftConfig,
    ):
        self.node_id = node_id
        self.n = n
        self.identity = identity
        self.peer_keys = peer_keys
        self.config = config
        self.role = FOLLOWER
        self.term = 0
        self.voted_for: Optional[int] = None
        self.leader_id: Optional[int] = None
        self.log: List[LogEntry] = []  # entry.index == position + 1
        self.commit_index = 0
        self._applied_index = 0
        self.next_index: Dict[int, int] = {}
        self.match_index: Dict[int, int] = {}
        self.votes: set = set()
        self.election_deadline = self._timeout_from(0)
        self._last_heartbeat_sent = -(10**9)
        self.outbox: List[Tuple[int, SignedEnvelope]] = []
        self.elections_started = 0

    # -- helpers ------------------------------------------------------------

    @property
    def majority(self) -> int:
        return self.n // 2 + 1

    def _timeout_from(self, now: int) -> int:
        return now + self.config.election_base + self.node_id * self.config.election_step

    def _last_log(self) -> Tuple[int, int]:
        if not self.log:
            return (0, 0)
        last = self.log[-1]
        return (last.index, last.term)

    def _send(self, dst: int, body: RaftBody) -> None:
        self.outbox.append((dst, seal(self.node_id, body, self.identity)))

    def _broadcast(self, body: RaftBody) -> None:
        for peer in sorted(self.peer_keys):
            if peer != self.node_id:
                self._send(peer, body)

    def drain_outbox(self) -> List[Tuple[int, SignedEnvelope]]:
        out, self.outbox = self.outbox, []
        return out

    def log_payload_digests(self) -> set:
        return {entry.payload.digest() for entry in self.log}

    def take_committed(self) -> List[LogEntry]:
        """Entries newly committed since the previous call, in log order."""
        if self.commit_index <= self._applied_index:
            return []
        newly = self.log[self._applied_index : self.commit_index]
        self._applied_index = self.commit_index
        return newly

    # -- timers -------------------------------------------------------------------

    def tick(self, now: int) -> None:
        if self.role == LEADER:
            if now - self._last_heartbeat_sent >= self.config.heartbeat_interval:
                self._replicate_to_all(now)
            return
        if now >= self.election_deadline:
            self._start_election(now)

    def _start_election(self, now: int) -> None:
        self.role = CANDIDATE
        self.term += 1
        self.voted_for = self.node_id
        self.votes = {self.node_id}
        self.leader_id = None
        self.election_deadline = self._timeout_from(now)
        self.elections_started += 1
        last_index, last_term = self._last_log()
        self._broadcast(
            RequestVote(
                term=self.term,
                candidate_id=self.node_id,
                last_log_index=last_index,
                last_log_term=last_term,
            )
        )
        if self.majority == 1:
            self._become_leader(now)

    def _become_leader(self, now: int) -> None:
        self.role = LEADER
        self.leader_id = self.node_id
        last_index, _ = self._last_log()
        self.next_index = {p: last_index + 1 for p in self.peer_keys if p != self.node_id}
        self.match_index = {p: 0 for p in self.peer_keys if p != self.node_id}
        self._replicate_to_all(now)

    def _become_follower(self, term: int, now: int) -> None:
        self.role = FOLLOWER
        self.term = term
        self.voted_for = None
        self.votes = set()
        self.election_deadline = self._timeout_from(now)

    # -- leader duties -----------------------------------------------------------------

    def propose(self, payload: Payload) -> Optional[LogEntry]:
        if self.role != LEADER:
            return None
        entry = LogEntry(term=self.term, index=len(self.log) + 1, payload=payload)
        self.log.append(entry)
        if self.majority == 1:
            self._advance_commit()
        return entry

    def _replicate_to_all(self, now: int) -> None:
        self._last_heartbeat_sent = now
        for peer in sorted(self.next_index):
            self._replicate_to(peer)

    def _replicate_to(self, peer: int) -> None:
        nxt = self.next_index[peer]
        prev_index = nxt - 1
        prev_term = self.log[prev_index - 1].term if prev_index >= 1 and self.log else 0
        entries = tuple(self.log[nxt - 1 :])
        self._send(
            peer,
            AppendEntries(
                term=self.term,
                leader_id=self.node_id,
                prev_index=prev_index,
                prev_term=prev_term,
                entries=entries,
                leader_commit=self.commit_index,
            ),
        )

    def _advance_commit(self) -> None:
        last_index, _ = self._last_log()
        for n in range(last_index, self.commit_index, -1):
            if self.log[n - 1].term != self.term:
                break
            replicas = 1 + sum(1 for m in self.match_index.values() if m >= n)
            if replicas >= self.majority:
                self.commit_index = n
                break

    # -- message handling ------------------------------------------------------------------

    def receive(self, env: SignedEnvelope, now: int) -> None:
        body = open_envelope(env, self.peer_keys, self.config.scheme)
        if body is None or env.sender_id == self.node_id:
            return
        if body.kind == "request_vote":
            self._on_request_vote(body, now)
        elif body.kind == "vote_reply":
            self._on_vote_reply(body, now)
        elif body.kind == "append_entries":
            self._on_append_entries(body, now)
        elif body.kind == "append_reply":
            self._on_append_reply(body, now)
        # Share messages are handled by the enclave layer, not raft.

    def _on_request_vote(self, msg: RequestVote, now: int) -> None:
        if msg.term > self.term:
            self._become_follower(msg.term, now)
        granted = False
        if msg.term == self.term and self.voted_for in (None, msg.candidate_id):
            last_index, last_term = self._last_log()
            up_to_date = (msg.last_log_term, msg.last_log_index) >= (last_term, last_index)
            if up_to_date:
                granted = True
                self.voted_for = msg.candidate_id
                self.election_deadline = self._timeout_from(now)
        self._send(
            msg.candidate_id,
            VoteReply(
                term=self.term, voter_id=self.node_id, candidate_id=msg.candidate_id, granted=granted
            ),
        )

    def _on_vote_reply(self, msg: VoteReply, now: int) -> None:
        if msg.term > self.term:
            self._become_follower(msg.term, now)
            return
        if self.role != CANDIDATE or msg.term != self.term or msg.candidate_id != self.node_id:
            return
        if msg.granted:
            self.votes.add(msg.voter_id)
            if len(self.votes) >= self.majority:
                self._become_leader(now)

    def _on_append_entries(self, msg: AppendEntries, now: int) -> None:
        if msg.term > self.term:
            self._become_follower(msg.term, now)
        if msg.term < self.term:
            self._send(
                msg.leader_id,
                AppendReply(term=self.term, follower_id=self.node_id, success=False, match_index=0),
            )
            return
        # Valid leader for this term.
        if self.role != FOLLOWER:
            self._become_follower(msg.term, now)
        self.leader_id = msg.leader_id
        self.election_deadline = self._timeout_from(now)
        if msg.prev_index > 0:
            if len(self.log) < msg.prev_index or self.log[msg.prev_index - 1].term != msg.prev_term:
                self._send(
                    msg.leader_id,
                    AppendReply(
                        term=self.term, follower_id=self.node_id, success=False, match_index=0
                    ),
                )
                return
        # Append, truncating any conflicting suffix.
        for entry in msg.entries:
            if len(self.log) >= entry.index:
                if self.log[entry.index - 1].term != entry.term:
                    del self.log[entry.index - 1 :]
                    self.log.append(entry)
            else:
                self.log.append(entry)
        match = msg.prev_index + len(msg.entries)
        if msg.leader_commit > self.commit_index:
            self.commit_index = min(msg.leader_commit, len(self.log))
        self._send(
            msg.leader_id,
            AppendReply(term=self.term, follower_id=self.node_id, success=True, match_index=match),
        )

    def _on_append_reply(self, msg: AppendReply, now: int) -> None:
        if msg.term > self.term:
            self._become_follower(msg.term, now)
            return
        if self.role != LEADER or msg.term != self.term:
            return
        if msg.success:
            self.match_index[msg.follower_id] = max(
                self.match_index.get(msg.follower_id, 0), msg.match_index
            )
            self.next_index[msg.follower_id] = self.match_index[msg.follower_id] + 1
            self._advance_commit()
        else:
            self.next_index[msg.follower_id] = max(1, self.next_index.get(msg.follower_id, 1) - 1)
