"""Binary Merkle tree over block transaction ids, with inclusion proofs.

Leaves are 32-byte transaction ids. Odd nodes are promoted unchanged to
the next level. An empty block has a fixed sentinel root.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .crypto import hash_data

EMPTY_ROOT = hash_data(b"merkle-empty")

# (sibling digest, sibling_is_left) per level, leaf upward
ProofPath = Tuple[Tuple[bytes, bool], ...]


@dataclass(frozen=True)
class InclusionProof:
    tx_id: bytes
    height: int
    path: ProofPath

    def canonical_encoding(self) -> bytes:
        from .crypto import encode_fields

        return encode_fields(
            self.tx_id, self.height, [[sib, flag] for sib, flag in self.path]
        )


def _parent(left: bytes, right: bytes) -> bytes:
    return hash_data(b"merkle-node" + left + right)


def compute_root(leaves: Sequence[bytes]) -> bytes:
    if not leaves:
        return EMPTY_ROOT
    level: List[bytes] = list(leaves)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(_parent(level[i], level[i + 1]))
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def make_path(leaves: Sequence[bytes], index: int) -> ProofPath:
    if not 0 <= index < len(leaves):
        raise IndexError(f"leaf index {index} out of range")
    path = []
    level = list(leaves)
    pos = index
    while len(level) > 1:
        if pos % 2 == 0:
            if pos + 1 < len(level):
                path.append((level[pos + 1], False))
        else:
            path.append((level[pos - 1], True))
        # Rebuild the next level; an unpaired last node is promoted, so its
        # position collapses without a path element.
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(_parent(level[i], level[i + 1]))
        if len(level) % 2:
            nxt.append(level[-1])
        pos = pos // 2
        level = nxt
    return tuple(path)


def fold_path(leaf: bytes, path: ProofPath) -> bytes:
    node = leaf
    for sibling, sibling_is_left in path:
        node = _parent(sibling, node) if sibling_is_left else _parent(node, sibling)
    return node
