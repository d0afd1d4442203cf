"""Content-addressed storage nodes, storage proofs and the traveling auditor."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable

from .crypto import DIGEST_SIZE, Digest, hash_bytes, hash_concat
from .merkle import MerkleProof, MerkleTree, build_tree, prove, verify_proof
from .wire import U32, U64

DEFAULT_CHUNK_SIZE = 4096
DEFAULT_CHALLENGE_SIZE = 16


class StorageError(Exception):
    pass


class ObjectNotFound(StorageError):
    pass


class CapacityError(StorageError):
    pass


class ChallengeError(StorageError):
    """Malformed challenge, e.g. a chunk index past the end of the object."""


class InsufficientCredits(StorageError):
    pass


@dataclass(frozen=True)
class ContentAddress:
    digest: Digest

    @classmethod
    def of(cls, data: bytes) -> "ContentAddress":
        return cls(hash_bytes(data))

    def hex(self) -> str:
        return self.digest.hex()


def chunk_count(size: int, chunk_size: int) -> int:
    return max(1, math.ceil(size / chunk_size))


def split_chunks(data: bytes, chunk_size: int) -> list[bytes]:
    if not data:
        return [b""]
    return [data[i : i + chunk_size] for i in range(0, len(data), chunk_size)]


def chunk_tree(data: bytes, chunk_size: int = DEFAULT_CHUNK_SIZE) -> MerkleTree:
    return build_tree([hash_bytes(c) for c in split_chunks(data, chunk_size)])


@dataclass
class StoredObject:
    chunks: list[bytes | None]
    chunk_size: int
    tree: MerkleTree
    size: int

    @classmethod
    def from_bytes(cls, data: bytes, chunk_size: int) -> "StoredObject":
        chunks = split_chunks(data, chunk_size)
        return cls(list(chunks), chunk_size, build_tree([hash_bytes(c) for c in chunks]), len(data))

    @property
    def complete(self) -> bool:
        return all(c is not None for c in self.chunks)

    def data(self) -> bytes:
        if not self.complete:
            raise ObjectNotFound("object has missing chunks")
        return b"".join(self.chunks)  # type: ignore[arg-type]


@dataclass(frozen=True)
class StorageChallenge:
    address: Digest
    nonce: bytes
    chunk_indices: tuple[U32, ...]


@dataclass(frozen=True)
class ChunkResponse:
    index: U32
    chunk: bytes
    proof: MerkleProof
    binding: Digest


@dataclass(frozen=True)
class StorageProof:
    address: Digest
    nonce: bytes
    responses: tuple[ChunkResponse, ...]


def binding_digest(nonce: bytes, chunk: bytes) -> Digest:
    return hash_concat(nonce, chunk)


class StorageNode:
    """One storage actor owning its object map.

    ``capacity`` is in bytes.  Identical content is stored (and charged)
    once.  The ``drop_*``/``flip_byte``/``overwrite`` helpers model faulty or
    malicious behaviour for tests and experiments.
    """

    def __init__(self, node_id: str, capacity: int, chunk_size: int = DEFAULT_CHUNK_SIZE):
        self.node_id = node_id
        self.capacity = capacity
        self.chunk_size = chunk_size
        self.objects: dict[bytes, StoredObject] = {}
        self.used = 0

    @property
    def free(self) -> int:
        return self.capacity - self.used

    def store(self, data: bytes) -> ContentAddress:
        addr = ContentAddress.of(data)
        if addr.digest in self.objects:
            return addr
        if len(data) > self.free:
            raise CapacityError(f"{self.node_id}: need {len(data)} bytes, {self.free} free")
        self.objects[addr.digest] = StoredObject.from_bytes(data, self.chunk_size)
        self.used += len(data)
        return addr

    def has(self, address: bytes) -> bool:
        return address in self.objects

    def retrieve(self, address: bytes) -> bytes:
        obj = self.objects.get(bytes(address))
        if obj is None:
            raise ObjectNotFound(bytes(address).hex())
        return obj.data()

    def respond(self, challenge: StorageChallenge) -> StorageProof:
        obj = self.objects.get(bytes(challenge.address))
        if obj is None:
            raise ObjectNotFound(bytes(challenge.address).hex())
        responses = []
        for i in challenge.chunk_indices:
            if not 0 <= i < len(obj.chunks):
                raise ChallengeError(f"chunk index {i} out of range")
            chunk = obj.chunks[i]
            if chunk is None:
                # lost data: the best a cheater can do is guess
                chunk = b""
            responses.append(ChunkResponse(i, chunk, prove(obj.tree, i), binding_digest(challenge.nonce, chunk)))
        return StorageProof(challenge.address, challenge.nonce, tuple(responses))

    # -- fault injection ----------------------------------------------------

    def delete(self, address: bytes) -> None:
        obj = self.objects.pop(bytes(address))
        self.used -= obj.size

    def drop_chunks(self, address: bytes, indices: Iterable[int]) -> None:
        obj = self.objects[bytes(address)]
        for i in indices:
            obj.chunks[i] = None

    def flip_byte(self, address: bytes, offset: int, mask: int = 0x01) -> None:
        obj = self.objects[bytes(address)]
        ci, off = divmod(offset, obj.chunk_size)
        chunk = obj.chunks[ci]
        if chunk is None or off >= len(chunk):
            raise IndexError(f"offset {offset} outside stored object")
        obj.chunks[ci] = chunk[:off] + bytes([chunk[off] ^ mask]) + chunk[off + 1 :]

    def overwrite(self, address: bytes, data: bytes) -> None:
        """Replace the bytes behind an existing address, keeping the address."""
        old = self.objects[bytes(address)]
        self.used += len(data) - old.size
        self.objects[bytes(address)] = StoredObject.from_bytes(data, self.chunk_size)


def make_challenge(address: bytes, n_chunks: int, k: int, rng_seed: int | bytes | str) -> StorageChallenge:
    """k distinct chunk indices drawn uniformly, plus a fresh 32-byte nonce."""
    if not 1 <= k <= n_chunks:
        raise ChallengeError(f"need 1 <= k <= {n_chunks}, got k={k}")
    rng = random.Random(rng_seed)
    nonce = rng.randbytes(DIGEST_SIZE)
    indices = tuple(sorted(rng.sample(range(n_chunks), k)))
    return StorageChallenge(Digest(address), nonce, indices)


def verify_storage_proof(
    chunk_root: bytes, challenge: StorageChallenge, proof: StorageProof, n_chunks: int | None = None
) -> bool:
    if proof.address != challenge.address or proof.nonce != challenge.nonce:
        return False
    if len(proof.responses) != len(challenge.chunk_indices):
        return False
    for idx, resp in zip(challenge.chunk_indices, proof.responses):
        if resp.index != idx or resp.proof.leaf_index != idx:
            return False
        if resp.binding != binding_digest(challenge.nonce, resp.chunk):
            return False
        if not verify_proof(chunk_root, hash_bytes(resp.chunk), resp.proof, n_chunks):
            return False
    return True


def challenge_node(
    node: StorageNode | None,
    address: bytes,
    chunk_root: bytes,
    size: int,
    chunk_size: int,
    k: int,
    rng_seed: int | bytes | str,
) -> tuple[bool, str]:
    """Run one challenge/response exchange; returns (passed, reason)."""
    if node is None:
        return False, "unreachable"
    n = chunk_count(size, chunk_size)
    challenge = make_challenge(address, n, min(k, n), rng_seed)
    try:
        proof = node.respond(challenge)
    except ObjectNotFound:
        return False, "not-found"
    except ChallengeError:
        return False, "protocol-error"
    if not verify_storage_proof(chunk_root, challenge, proof, n):
        return False, "bad-proof"
    return True, "ok"


def pass_probability(n: int, m: int, k: int) -> float:
    """Chance that a node missing m of n chunks survives k distinct uniform picks."""
    if k > n - m:
        return 0.0
    return math.comb(n - m, k) / math.comb(n, k)


# -- incentives -------------------------------------------------------------


class CreditLedger:
    """Byte-denominated storage credits.

    Grants and spends may carry a reference; a repeated reference is a no-op,
    which makes rewarding an accepted block idempotent.  Pending credits
    accrue to storage nodes per held object and are settled or forfeited by
    audits.
    """

    def __init__(self, initial: dict[str, int] | None = None):
        self.balances: dict[str, int] = {}
        self.pending: dict[tuple[str, bytes], int] = {}
        self.total_granted = 0
        self.total_spent = 0
        self.total_forfeited = 0
        self._refs: set[tuple[str, object]] = set()
        for account, amount in (initial or {}).items():
            self.grant(account, amount)

    def balance(self, account: str) -> int:
        return self.balances.get(account, 0)

    def grant(self, account: str, amount: int, ref: object = None) -> bool:
        if amount < 0:
            raise ValueError("grant amount must be non-negative")
        if ref is not None:
            if ("grant", ref) in self._refs:
                return False
            self._refs.add(("grant", ref))
        self.balances[account] = self.balance(account) + amount
        self.total_granted += amount
        return True

    def spend(self, account: str, amount: int, ref: object = None) -> bool:
        if amount < 0:
            raise ValueError("spend amount must be non-negative")
        if ref is not None and ("spend", ref) in self._refs:
            return False
        if self.balance(account) < amount:
            raise InsufficientCredits(f"{account} has {self.balance(account)}, needs {amount}")
        if ref is not None:
            self._refs.add(("spend", ref))
        self.balances[account] = self.balance(account) - amount
        self.total_spent += amount
        return True

    def accrue(self, account: str, obj: bytes, amount: int) -> None:
        key = (account, bytes(obj))
        self.pending[key] = self.pending.get(key, 0) + amount

    def settle(self, account: str, obj: bytes) -> int:
        amount = self.pending.pop((account, bytes(obj)), 0)
        if amount:
            self.grant(account, amount)
        return amount

    def forfeit(self, account: str, obj: bytes) -> int:
        amount = self.pending.pop((account, bytes(obj)), 0)
        self.total_forfeited += amount
        return amount

    def total(self) -> int:
        return sum(self.balances.values())


# -- traveling auditor ------------------------------------------------------


@dataclass(frozen=True)
class AuditTarget:
    """What the auditor needs to know about one on-chain object."""

    node_id: str
    address: Digest
    chunk_root: Digest
    size: U64
    chunk_size: U32
    label: str = ""


@dataclass(frozen=True)
class AuditEntry:
    round: int
    node_id: str
    address: str
    label: str
    passed: bool
    reason: str


@dataclass
class AuditReport:
    entries: list[AuditEntry] = field(default_factory=list)
    flagged_nodes: set[str] = field(default_factory=set)
    forfeited: int = 0
    paid: int = 0

    @property
    def failures(self) -> int:
        return sum(not e.passed for e in self.entries)

    def merge(self, other: "AuditReport") -> None:
        self.entries.extend(other.entries)
        self.flagged_nodes |= other.flagged_nodes
        self.forfeited += other.forfeited
        self.paid += other.paid

    def to_dict(self) -> dict:
        return {
            "checks": len(self.entries),
            "failures": self.failures,
            "flagged_nodes": sorted(self.flagged_nodes),
            "credits_paid": self.paid,
            "credits_forfeited": self.forfeited,
            "entries": [e.__dict__ for e in self.entries],
        }


class TravelingAuditor:
    """Periodically re-challenges storage nodes on sampled on-chain objects.

    Each round every held object accrues ``holding_rate`` pending credits for
    its node; sampled objects that pass are paid out, those that fail are
    forfeited and their node is flagged.
    """

    def __init__(
        self,
        nodes: dict[str, StorageNode],
        ledger: CreditLedger | None = None,
        samples_per_round: int = 1,
        k: int = DEFAULT_CHALLENGE_SIZE,
        holding_rate: int = 0,
    ):
        self.nodes = nodes
        self.ledger = ledger if ledger is not None else CreditLedger()
        self.samples_per_round = samples_per_round
        self.k = k
        self.holding_rate = holding_rate
        self.rounds = 0

    def sampling_probability(self, n_targets: int) -> float:
        return min(1.0, self.samples_per_round / n_targets)

    def audit_round(self, targets: list[AuditTarget], rng_seed: int | bytes | str) -> AuditReport:
        if not targets:
            raise ValueError("nothing to audit: chain has no subblocks")
        rng = random.Random(rng_seed)
        report = AuditReport()
        round_no = self.rounds
        self.rounds += 1
        if self.holding_rate:
            for t in targets:
                self.ledger.accrue(t.node_id, t.address, self.holding_rate)
        picks = rng.sample(range(len(targets)), min(self.samples_per_round, len(targets)))
        for i in sorted(picks):
            t = targets[i]
            passed, reason = challenge_node(
                self.nodes.get(t.node_id), t.address, t.chunk_root, t.size, t.chunk_size, self.k,
                rng.randbytes(32),
            )
            report.entries.append(AuditEntry(round_no, t.node_id, t.address.hex(), t.label, passed, reason))
            if passed:
                report.paid += self.ledger.settle(t.node_id, t.address)
            else:
                report.flagged_nodes.add(t.node_id)
                report.forfeited += self.ledger.forfeit(t.node_id, t.address)
        return report
