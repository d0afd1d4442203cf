from __future__ import annotations

import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compress_store import codec
from compress_store.merkle import (
    LEFT,
    RIGHT,
    MerkleProof,
    ProofStep,
    block_root,
    build_tree,
    frame_tree,
    merkle_root,
    prove,
    verify_proof,
)


def H(b: bytes) -> bytes:
    return hashlib.sha256(b).digest()


def ref_root(leaves: list[bytes]) -> bytes:
    """Independent recursive definition: pad odd levels by duplication."""
    if len(leaves) == 1:
        return leaves[0]
    if len(leaves) % 2:
        leaves = leaves + [leaves[-1]]
    return ref_root([H(leaves[i] + leaves[i + 1]) for i in range(0, len(leaves), 2)])


def ref_path(leaves: list[bytes], index: int) -> list[tuple[bytes, int]]:
    path = []
    level = list(leaves)
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        if index % 2:
            path.append((level[index - 1], LEFT))
        else:
            path.append((level[index + 1], RIGHT))
        level = [H(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        index //= 2
    return path


def leaves_for(n: int, seed: int = 0) -> list[bytes]:
    rng = random.Random(seed * 1000 + n)
    return [H(rng.randbytes(16)) for _ in range(n)]


def test_small_trees_by_hand():
    h0, h1, h2 = (H(bytes([i])) for i in range(3))
    assert merkle_root([h0]) == h0
    assert merkle_root([h0, h1]) == H(h0 + h1)
    assert merkle_root([h0, h1, h2]) == H(H(h0 + h1) + H(h2 + h2))


def test_frame_tree_hashes_payloads():
    g = codec.generate_synthetic_video(16, 16, 1, 3, 1)[0]
    c = codec.encode_gop(g, 4)
    h = [H(p) for p in c.payloads]
    assert frame_tree(c).root == H(H(h[0] + h[1]) + H(h[2] + h[2]))
    assert frame_tree(list(c.payloads)).root == frame_tree(c).root


def test_block_root_shapes():
    r = [H(bytes([i])) for i in range(5)]
    assert block_root(r[:1]) == r[0]
    assert block_root(r[:2]) == H(r[0] + r[1])
    # five GOPs: three levels with duplication at levels 0 and 1
    l1 = [H(r[0] + r[1]), H(r[2] + r[3]), H(r[4] + r[4])]
    l2 = [H(l1[0] + l1[1]), H(l1[2] + l1[2])]
    assert block_root(r) == H(l2[0] + l2[1]) == ref_root(r)
    with pytest.raises(ValueError):
        block_root([])


@pytest.mark.parametrize("n", range(1, 34))
def test_roots_and_proofs_match_reference(n):
    leaves = leaves_for(n)
    tree = build_tree(leaves)
    assert tree.root == ref_root(leaves)
    for i in range(n):
        proof = prove(tree, i)
        assert [(bytes(s.digest), s.side) for s in proof.siblings] == ref_path(leaves, i)
        assert verify_proof(tree.root, leaves[i], proof, n)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 13, 33])
def test_proofs_are_sound(n):
    rng = random.Random(n)
    leaves = leaves_for(n, 1)
    tree = build_tree(leaves)
    for i in range(n):
        proof = prove(tree, i)
        bad_leaf = bytearray(leaves[i])
        bad_leaf[rng.randrange(32)] ^= 1 << rng.randrange(8)
        assert not verify_proof(tree.root, bytes(bad_leaf), proof, n)
        if n > 1:
            assert not verify_proof(tree.root, leaves[(i + 1) % n], proof, n) or leaves[(i + 1) % n] == leaves[i]
            step = rng.randrange(len(proof.siblings))
            s = proof.siblings[step]
            flipped = list(proof.siblings)
            flipped[step] = ProofStep(s.digest, RIGHT if s.side == LEFT else LEFT)
            assert not verify_proof(tree.root, leaves[i], MerkleProof(i, tuple(flipped)), n)
            wrong = list(proof.siblings)
            wrong[step] = ProofStep(H(s.digest), s.side)
            assert not verify_proof(tree.root, leaves[i], MerkleProof(i, tuple(wrong)), n)
        assert not verify_proof(tree.root, leaves[i], MerkleProof(i + n, proof.siblings), n)


def test_prove_rejects_out_of_range():
    tree = build_tree(leaves_for(4))
    with pytest.raises(IndexError):
        prove(tree, 4)
    with pytest.raises(IndexError):
        prove(tree, -1)
    with pytest.raises(ValueError):
        build_tree([])


def test_trees_are_deterministic():
    leaves = leaves_for(11)
    assert build_tree(leaves) == build_tree(list(leaves))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=33), st.data())
def test_root_changes_when_any_leaf_changes(leaves, data):
    i = data.draw(st.integers(0, len(leaves) - 1))
    changed = list(leaves)
    changed[i] = H(changed[i])
    assert merkle_root(changed) != merkle_root(leaves)
    assert merkle_root(leaves) == ref_root(leaves)
