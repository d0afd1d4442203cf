"""Binary Merkle trees over frames, GOPs and storage chunks.

Parents are ``hash(left || right)``.  A level with an odd number of nodes
pairs its last node with a copy of itself, and a one-leaf tree has the leaf
itself as root.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .codec import CompressedGop
from .crypto import Digest, hash_bytes, hash_concat
from .wire import U8, U64

LEFT = 0
RIGHT = 1


@dataclass(frozen=True)
class MerkleTree:
    leaves: tuple[Digest, ...]
    levels: tuple[tuple[Digest, ...], ...]

    @property
    def root(self) -> Digest:
        return self.levels[-1][0]

    @property
    def height(self) -> int:
        return len(self.levels) - 1


@dataclass(frozen=True)
class ProofStep:
    digest: Digest
    side: U8  # where the sibling sits: LEFT or RIGHT


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: U64
    siblings: tuple[ProofStep, ...]


def build_tree(leaves: Sequence[bytes]) -> MerkleTree:
    if not leaves:
        raise ValueError("cannot build a Merkle tree with no leaves")
    level = tuple(Digest(x) for x in leaves)
    levels = [level]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            right = level[i + 1] if i + 1 < len(level) else level[i]
            nxt.append(hash_concat(level[i], right))
        level = tuple(nxt)
        levels.append(level)
    return MerkleTree(levels[0], tuple(levels))


def merkle_root(leaves: Sequence[bytes]) -> Digest:
    return build_tree(leaves).root


def frame_tree(source: CompressedGop | Sequence[bytes]) -> MerkleTree:
    """Tree whose leaves are the hashes of the per-frame payloads, in order.

    Accepts a CompressedGop (plaintext payloads) or any payload sequence, such
    as the encrypted per-frame payloads that end up on chain.
    """
    payloads = source.payloads if isinstance(source, CompressedGop) else source
    return build_tree([hash_bytes(p) for p in payloads])


def block_root(gop_roots: Sequence[bytes]) -> Digest:
    if not gop_roots:
        raise ValueError("block_root needs at least one GOP root")
    return merkle_root(gop_roots)


def prove(tree: MerkleTree, leaf_index: int) -> MerkleProof:
    if not 0 <= leaf_index < len(tree.leaves):
        raise IndexError(f"leaf index {leaf_index} out of range")
    steps = []
    idx = leaf_index
    for level in tree.levels[:-1]:
        if idx % 2 == 0:
            sib = level[idx + 1] if idx + 1 < len(level) else level[idx]
            steps.append(ProofStep(sib, RIGHT))
        else:
            steps.append(ProofStep(level[idx - 1], LEFT))
        idx //= 2
    return MerkleProof(leaf_index, tuple(steps))


def verify_proof(root: bytes, leaf: bytes, proof: MerkleProof, n_leaves: int | None = None) -> bool:
    """Recompute the root from `leaf` along `proof`.

    Sibling sides must agree with the bits of ``proof.leaf_index``; pass
    ``n_leaves`` to also reject indices past the end of the tree.
    """
    idx = proof.leaf_index
    if n_leaves is not None and not 0 <= idx < n_leaves:
        return False
    if idx >> len(proof.siblings):
        return False
    node = bytes(leaf)
    for step in proof.siblings:
        expected_side = RIGHT if idx % 2 == 0 else LEFT
        if step.side != expected_side:
            return False
        node = hash_concat(node, step.digest) if step.side == RIGHT else hash_concat(step.digest, node)
        idx //= 2
    return node == bytes(root)
