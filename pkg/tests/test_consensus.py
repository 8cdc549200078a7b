import random

import pytest

from xchainsim import consensus, crypto
from xchainsim.consensus import (
    AppendEntries,
    ConfirmPayload,
    RaftConfig,
    RaftNode,
    RespondPayload,
    SignatureShareSet,
    batch_transfers,
    open_envelope,
    seal,
)

from support import SCHEME


class LocalNet:
    """Deterministic lossless-by-default network for raft unit tests.

    Messages sent at tick t are delivered at t+1 in (sender, order) order.
    Nodes in `down` neither receive nor tick. `drop(src, dst)` hooks allow
    seeded loss injection.
    """

    def __init__(self, n, config=None):
        config = config or RaftConfig(scheme=SCHEME)
        keys = [crypto.keygen(b"raft-node-%d" % i, SCHEME) for i in range(n)]
        peer_keys = {i: kp.public_key for i, kp in enumerate(keys)}
        self.nodes = {
            i: RaftNode(i, n, keys[i], dict(peer_keys), config) for i in range(n)
        }
        self.inboxes = {i: [] for i in range(n)}
        self.down = set()
        self.now = 0
        self.drop = lambda src, dst, body: False

    def leader(self):
        leaders = [node for i, node in self.nodes.items()
                   if node.role == consensus.LEADER and i not in self.down]
        return leaders[-1] if leaders else None

    def step(self):
        self.now += 1
        pending = {i: msgs for i, msgs in self.inboxes.items()}
        self.inboxes = {i: [] for i in self.nodes}
        for i in sorted(self.nodes):
            if i in self.down:
                continue
            node = self.nodes[i]
            for env in pending[i]:
                node.receive(env, self.now)
            node.tick(self.now)
            for dst, env in node.drain_outbox():
                if dst in self.down or self.drop(i, dst, env):
                    continue
                self.inboxes[dst].append(env)

    def run(self, ticks):
        for _ in range(ticks):
            self.step()


def payload(tag: bytes):
    return RespondPayload(chain_id="T", deposit_id=crypto.hash_data(tag))


def test_leader_elected_and_entry_commits_when_all_healthy():
    net = LocalNet(3)
    net.run(20)
    leader = net.leader()
    assert leader is not None
    entry = leader.propose(payload(b"p1"))
    assert entry is not None
    net.run(6)
    for node in net.nodes.values():
        assert node.commit_index == entry.index
        assert node.log[entry.index - 1].payload.digest() == entry.payload.digest()


def test_commit_within_bounded_ticks_of_proposal():
    net = LocalNet(5)
    net.run(30)
    leader = net.leader()
    entry = leader.propose(payload(b"bounded"))
    rtt = 2  # one tick out, one tick back
    bound = 2 * rtt + RaftConfig().heartbeat_interval
    for waited in range(bound + 1):
        if all(n.commit_index >= entry.index for n in net.nodes.values()):
            break
        net.step()
    assert all(n.commit_index >= entry.index for n in net.nodes.values())


def test_new_leader_elected_after_crash_and_entry_commits():
    net = LocalNet(3)
    net.run(20)
    old = net.leader()
    net.down.add(old.node_id)
    net.run(40)  # worst-case staggered timeout
    new = net.leader()
    assert new is not None and new.node_id != old.node_id
    entry = new.propose(payload(b"after-crash"))
    net.run(6)
    for i, node in net.nodes.items():
        if i == old.node_id:
            continue
        assert node.commit_index >= entry.index


def test_no_commit_without_majority():
    net = LocalNet(3)
    net.run(20)
    leader = net.leader()
    others = [i for i in net.nodes if i != leader.node_id]
    net.down.update(others)  # suspend 2 of 3
    entry = leader.propose(payload(b"stalled"))
    net.run(30)
    assert leader.commit_index < entry.index


def test_recovered_follower_catches_up():
    net = LocalNet(3)
    net.run(20)
    leader = net.leader()
    lagger = [i for i in net.nodes if i != leader.node_id][0]
    net.down.add(lagger)
    entries = [leader.propose(payload(b"e%d" % i)) for i in range(3)]
    net.run(10)
    net.down.remove(lagger)
    net.run(40)  # rejoin bumps the term and forces a re-election first
    assert net.nodes[lagger].commit_index >= entries[-1].index
    digests = [e.payload.digest() for e in net.nodes[lagger].log[: entries[-1].index]]
    assert digests == [e.payload.digest() for e in leader.log[: entries[-1].index]]


def assert_prefix_consistent(net):
    logs = [
        [(e.term, e.payload.digest()) for e in node.log[: node.commit_index]]
        for node in net.nodes.values()
    ]
    for a in logs:
        for b in logs:
            shorter, longer = (a, b) if len(a) <= len(b) else (b, a)
            assert longer[: len(shorter)] == shorter


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_log_safety_under_random_faults(seed):
    rng = random.Random(seed)
    net = LocalNet(5)
    net.drop = lambda src, dst, env: rng.random() < 0.15
    proposed = 0
    for tick in range(250):
        if tick % 7 == 0:
            leader = net.leader()
            if leader is not None and leader.node_id not in net.down:
                if leader.propose(payload(b"s%d-%d" % (seed, proposed))):
                    proposed += 1
        if tick % 31 == 0 and net.leader() is not None:
            # Periodically crash and revive one node, never losing majority.
            victim = rng.randrange(5)
            if len(net.down) < 2:
                net.down.add(victim)
            else:
                net.down.clear()
        net.step()
        assert_prefix_consistent(net)
    net.down.clear()
    net.drop = lambda src, dst, env: False
    net.run(60)
    assert_prefix_consistent(net)
    committed = max(node.commit_index for node in net.nodes.values())
    assert committed > 0


def test_same_fault_schedule_replays_identically():
    def run_once():
        rng = random.Random(42)
        net = LocalNet(3)
        net.drop = lambda src, dst, env: rng.random() < 0.2
        for tick in range(150):
            leader = net.leader()
            if tick % 5 == 0 and leader is not None:
                leader.propose(payload(b"d%d" % tick))
            net.step()
        return [
            [(e.term, e.index, e.payload.digest()) for e in node.log]
            for node in net.nodes.values()
        ]

    assert run_once() == run_once()


def test_tampered_message_is_dropped():
    keys = {i: crypto.keygen(b"raft-node-%d" % i, SCHEME) for i in range(2)}
    peer_keys = {i: kp.public_key for i, kp in keys.items()}
    honest = seal(0, payload_body := AppendEntries(
        term=3, leader_id=0, prev_index=0, prev_term=0, entries=(), leader_commit=0
    ), keys[0])
    assert open_envelope(honest, peer_keys, SCHEME) == payload_body
    forged_body = AppendEntries(
        term=9, leader_id=0, prev_index=0, prev_term=0, entries=(), leader_commit=0
    )
    tampered = consensus.SignedEnvelope(sender_id=0, body=forged_body, signature=honest.signature)
    assert open_envelope(tampered, peer_keys, SCHEME) is None
    unknown_sender = consensus.SignedEnvelope(sender_id=7, body=honest.body, signature=honest.signature)
    assert open_envelope(unknown_sender, peer_keys, SCHEME) is None


def test_share_set_collects_threshold():
    ops = [crypto.keygen(b"share-op-%d" % i, SCHEME) for i in range(3)]
    authorized = frozenset(kp.public_key for kp in ops)
    digest = crypto.hash_data(b"payload")
    shares = SignatureShareSet(payload_digest=digest, threshold=2)
    assert shares.add_share(crypto.sign(digest, ops[0]), authorized, SCHEME)
    assert not shares.complete()
    assert shares.add_share(crypto.sign(digest, ops[1]), authorized, SCHEME)
    assert shares.complete()
    ms = shares.to_multisig()
    assert crypto.multisig_verify(ms, authorized, 2, scheme=SCHEME)


def test_share_set_ignores_duplicates_and_strangers():
    ops = [crypto.keygen(b"share-op-%d" % i, SCHEME) for i in range(3)]
    stranger = crypto.keygen(b"stranger", SCHEME)
    authorized = frozenset(kp.public_key for kp in ops)
    digest = crypto.hash_data(b"payload")
    shares = SignatureShareSet(payload_digest=digest, threshold=2)
    assert shares.add_share(crypto.sign(digest, ops[0]), authorized, SCHEME)
    assert not shares.add_share(crypto.sign(digest, ops[0]), authorized, SCHEME)  # duplicate
    assert not shares.add_share(crypto.sign(digest, stranger), authorized, SCHEME)
    assert not shares.complete()  # one unique signer only


def test_share_set_rejects_invalid_share_bytes():
    ops = [crypto.keygen(b"share-op-%d" % i, SCHEME) for i in range(2)]
    authorized = frozenset(kp.public_key for kp in ops)
    digest = crypto.hash_data(b"payload")
    shares = SignatureShareSet(payload_digest=digest, threshold=1)
    bogus = crypto.Signature(bytes_=b"junk", signer=ops[0].public_key)
    assert not shares.add_share(bogus, authorized, SCHEME)


class FakeIntent:
    def __init__(self, chain, i):
        self.target_chain_id = chain
        self.receiver = crypto.hash_data(b"r%d" % i)[:20]
        self.amount = 10 + i
        self.source_deposit_id = crypto.hash_data(b"dep%d" % i)
        self.deposit_finalized_at = 5


def test_batch_transfers_groups_by_chain():
    intents = [FakeIntent("T", i) for i in range(5)] + [FakeIntent("U", i) for i in range(3)]
    batches = batch_transfers(intents, max_batch=2000, expiry_fn=lambda g: 99)
    assert [(b.target_chain_id, len(b.transfers)) for b in batches] == [("T", 5), ("U", 3)]
    assert all(b.expiry == 99 for b in batches)


def test_batch_transfers_splits_at_max_batch():
    intents = [FakeIntent("T", i) for i in range(2500)]
    batches = batch_transfers(intents, max_batch=2000, expiry_fn=lambda g: 10)
    assert [len(b.transfers) for b in batches] == [2000, 500]
    # FIFO within the group.
    assert batches[0].transfers[0].amount == 10
    assert batches[1].transfers[-1].amount == 10 + 2499


def test_batch_transfers_empty():
    assert batch_transfers([], max_batch=10, expiry_fn=lambda g: 0) == []


def test_confirm_payload_digest_matches_vault_expectation():
    from xchainsim.vault import confirm_digest

    ids = (crypto.hash_data(b"a"), crypto.hash_data(b"b"))
    assert ConfirmPayload(chain_id="S", deposit_ids=ids).digest() == confirm_digest("S", ids)
