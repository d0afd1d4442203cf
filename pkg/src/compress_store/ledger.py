"""On-chain data model: subblocks, blocks, chain bookkeeping and fork choice.

Only metadata lives on chain.  A subblock points at the encrypted GOP held by
a storage node and records everything needed to verify it: Merkle roots,
codec parameters, the claimed quality and the chain digests embedded in the
GOP's I frame.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

from .crypto import ZERO_DIGEST, Digest, KeyPair, check_signature, hash_bytes, sign
from .merkle import block_root
from .storage import AuditTarget
from .wire import F64, U32, U64, DecodingError, decode, encode

DEFAULT_B_MAX = 5
MAX_SUBBLOCK_BYTES = 1024
MAX_SENSOR_METADATA = 256
CHAIN_MAGIC = b"CSCHAIN1"


class RejectReason(str, enum.Enum):
    """Stable reason codes shared by the ledger, consensus, simulator and CLI."""

    SIGNATURE = "signature-fail"
    STRUCTURE = "structure-fail"
    MERKLE = "merkle-fail"
    STORAGE = "storage-fail"
    QUALITY = "quality-fail"
    CHAIN_LINK = "chain-link-fail"


class InvalidBlock(ValueError):
    def __init__(self, reason: RejectReason, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class GopHeader:
    """The initiator-authored part of a GOP transaction (what it signs)."""

    video_id: str
    gop_index: U64
    gop_timestamp: U64
    raw_gop_digest: Digest
    access_privileges: bytes
    sensor_metadata: bytes
    initiator_pubkey: bytes


@dataclass(frozen=True)
class StoragePointer:
    address: Digest
    node_id: str
    size: U64
    chunk_size: U32
    chunk_root: Digest


@dataclass(frozen=True)
class CodecParams:
    algorithm_id: str
    quantizer: U32
    width: U32
    height: U32
    frame_count: U32


@dataclass(frozen=True)
class QualityClaim:
    mean_psnr_db: F64
    threshold_db: F64


@dataclass(frozen=True)
class SubBlock:
    header: GopHeader
    initiator_signature: bytes
    gop_merkle_root: Digest
    storage: StoragePointer
    codec: CodecParams
    quality: QualityClaim
    chain_prev_i: Digest
    chain_prev_last_p: Digest

    @property
    def key(self) -> tuple[str, int]:
        return self.header.video_id, self.header.gop_index

    @property
    def raw_size(self) -> int:
        c = self.codec
        return c.width * c.height * c.frame_count

    def initiator_signature_ok(self) -> bool:
        return check_signature(self.header.initiator_pubkey, encode(self.header), self.initiator_signature)


@dataclass(frozen=True)
class Block:
    prev_block_hash: Digest
    height: U64
    timestamp_ms: U64
    miner_id: str
    miner_pubkey: bytes
    threshold_db: F64
    block_merkle_root: Digest
    subblocks: tuple[SubBlock, ...]
    storage_proof_refs: tuple[Digest, ...]
    miner_signature: bytes

    def signing_bytes(self) -> bytes:
        return encode(dataclasses.replace(self, miner_signature=b""))

    @cached_property
    def hash(self) -> Digest:
        return hash_bytes(self.signing_bytes())

    @property
    def frame_count(self) -> int:
        return sum(sb.codec.frame_count for sb in self.subblocks)

    @property
    def raw_size(self) -> int:
        return sum(sb.raw_size for sb in self.subblocks)

    def miner_signature_ok(self) -> bool:
        return check_signature(self.miner_pubkey, self.signing_bytes(), self.miner_signature)


def sign_header(header: GopHeader, keys: KeyPair) -> bytes:
    return sign(keys.secret_key, encode(header))


def make_subblock(
    header: GopHeader,
    initiator_signature: bytes,
    gop_merkle_root: bytes,
    storage: StoragePointer,
    codec: CodecParams,
    quality: QualityClaim,
    chain_prev_i: bytes,
    chain_prev_last_p: bytes,
) -> SubBlock:
    if len(header.sensor_metadata) > MAX_SENSOR_METADATA:
        raise ValueError(f"sensor metadata exceeds {MAX_SENSOR_METADATA} bytes")
    sb = SubBlock(
        header, initiator_signature, Digest(gop_merkle_root), storage, codec, quality,
        Digest(chain_prev_i), Digest(chain_prev_last_p),
    )
    if not sb.initiator_signature_ok():
        raise InvalidBlock(RejectReason.SIGNATURE, f"initiator signature on {sb.key}")
    if len(encode(sb)) > MAX_SUBBLOCK_BYTES:
        raise ValueError(f"subblock encodes to more than {MAX_SUBBLOCK_BYTES} bytes")
    return sb


def genesis_block() -> Block:
    return Block(ZERO_DIGEST, 0, 0, "genesis", b"", 0.0, ZERO_DIGEST, (), (), b"")


def assemble_block(
    subblocks: Sequence[SubBlock],
    prev: Block,
    miner_id: str,
    miner_keys: KeyPair,
    timestamp_ms: int,
    threshold_db: float,
    storage_proof_refs: Sequence[bytes] = (),
    b_max: int = DEFAULT_B_MAX,
) -> Block:
    if not 1 <= len(subblocks) <= b_max:
        raise InvalidBlock(RejectReason.STRUCTURE, f"block needs 1..{b_max} subblocks, got {len(subblocks)}")
    for sb in subblocks:
        if not sb.initiator_signature_ok():
            raise InvalidBlock(RejectReason.SIGNATURE, f"initiator signature on {sb.key}")
    unsigned = Block(
        prev_block_hash=prev.hash,
        height=prev.height + 1,
        timestamp_ms=timestamp_ms,
        miner_id=miner_id,
        miner_pubkey=miner_keys.public_key,
        threshold_db=threshold_db,
        block_merkle_root=block_root([sb.gop_merkle_root for sb in subblocks]),
        subblocks=tuple(subblocks),
        storage_proof_refs=tuple(Digest(r) for r in storage_proof_refs),
        miner_signature=b"",
    )
    return dataclasses.replace(unsigned, miner_signature=sign(miner_keys.secret_key, unsigned.signing_bytes()))


def check_block_structure(block: Block, parent: Block, b_max: int) -> None:
    """Context-free and parent-relative checks; raises InvalidBlock."""
    if not block.miner_signature_ok():
        raise InvalidBlock(RejectReason.SIGNATURE, "miner signature")
    for sb in block.subblocks:
        if not sb.initiator_signature_ok():
            raise InvalidBlock(RejectReason.SIGNATURE, f"initiator signature on {sb.key}")
    if not 1 <= len(block.subblocks) <= b_max:
        raise InvalidBlock(RejectReason.STRUCTURE, f"{len(block.subblocks)} subblocks, limit {b_max}")
    if block.prev_block_hash != parent.hash or block.height != parent.height + 1:
        raise InvalidBlock(RejectReason.STRUCTURE, "height does not follow parent")
    for sb in block.subblocks:
        if len(encode(sb)) > MAX_SUBBLOCK_BYTES:
            raise InvalidBlock(RejectReason.STRUCTURE, f"oversize subblock {sb.key}")
        if sb.quality.threshold_db != block.threshold_db:
            raise InvalidBlock(RejectReason.QUALITY, f"subblock {sb.key} threshold differs from block")
    if len(set(sb.key for sb in block.subblocks)) != len(block.subblocks):
        raise InvalidBlock(RejectReason.STRUCTURE, "duplicate GOP inside block")
    if block.block_merkle_root != block_root([sb.gop_merkle_root for sb in block.subblocks]):
        raise InvalidBlock(RejectReason.MERKLE, "block merkle root")


class AppendStatus(str, enum.Enum):
    APPENDED = "appended"
    DUPLICATE = "duplicate"
    ORPHAN = "orphan"
    REJECTED = "rejected"


@dataclass(frozen=True)
class AppendResult:
    status: AppendStatus
    reason: RejectReason | None = None
    detail: str = ""


class Chain:
    """Block tree rooted at genesis, with orphan holding and fork choice.

    Owned by a single node; blocks themselves are immutable values.
    """

    def __init__(self, genesis: Block | None = None, b_max: int = DEFAULT_B_MAX):
        self.genesis = genesis or genesis_block()
        self.b_max = b_max
        self.blocks: dict[bytes, Block] = {self.genesis.hash: self.genesis}
        self.children: dict[bytes, list[bytes]] = {self.genesis.hash: []}
        self.orphans: dict[bytes, dict[bytes, Block]] = {}
        self.rejected: dict[bytes, RejectReason] = {}

    def __contains__(self, block_hash: bytes) -> bool:
        return block_hash in self.blocks

    def __len__(self) -> int:
        return len(self.blocks)

    def get(self, block_hash: bytes) -> Block:
        return self.blocks[block_hash]

    def tips(self) -> list[Block]:
        return [self.blocks[h] for h, kids in self.children.items() if not kids]

    def fork_choice(self) -> Block:
        """Longest chain; equal heights go to the lexicographically smaller hash."""
        return min(self.tips(), key=lambda b: (-b.height, bytes(b.hash)))

    @property
    def tip(self) -> Block:
        return self.fork_choice()

    def ancestors(self, block_hash: bytes) -> Iterator[Block]:
        """The block itself, then its parent, and so on down to genesis."""
        h = block_hash
        while True:
            b = self.blocks[h]
            yield b
            if b.height == 0:
                return
            h = b.prev_block_hash

    def branch(self, tip_hash: bytes | None = None) -> list[Block]:
        """Genesis-first list of blocks ending at `tip_hash` (default: canonical tip)."""
        tip_hash = self.tip.hash if tip_hash is None else tip_hash
        return list(self.ancestors(tip_hash))[::-1]

    def is_ancestor(self, maybe_ancestor: bytes, block_hash: bytes) -> bool:
        anc = self.blocks[maybe_ancestor]
        for b in self.ancestors(block_hash):
            if b.height < anc.height:
                return False
            if b.hash == maybe_ancestor:
                return True
        return False

    def precheck(self, block: Block) -> AppendResult | None:
        """Duplicate/orphan/structure outcome, or None if the block may proceed."""
        h = block.hash
        if h in self.blocks:
            return AppendResult(AppendStatus.DUPLICATE)
        if h in self.rejected:
            return AppendResult(AppendStatus.REJECTED, self.rejected[h], "previously rejected")
        if not block.miner_signature_ok():
            return self._reject(block, InvalidBlock(RejectReason.SIGNATURE, "miner signature"))
        parent = self.blocks.get(block.prev_block_hash)
        if parent is None:
            self.orphans.setdefault(bytes(block.prev_block_hash), {})[h] = block
            return AppendResult(AppendStatus.ORPHAN)
        try:
            check_block_structure(block, parent, self.b_max)
        except InvalidBlock as exc:
            return self._reject(block, exc)
        return None

    def _reject(self, block: Block, exc: InvalidBlock) -> AppendResult:
        self.rejected[block.hash] = exc.reason
        return AppendResult(AppendStatus.REJECTED, exc.reason, exc.detail)

    def reject(self, block: Block, exc: InvalidBlock) -> AppendResult:
        return self._reject(block, exc)

    def validate_and_append(self, block: Block) -> AppendResult:
        """Structural validation and insertion.

        Consensus-level checks must already have passed for `block`.
        """
        pre = self.precheck(block)
        if pre is not None:
            return pre
        self.blocks[block.hash] = block
        self.children[block.hash] = []
        self.children[block.prev_block_hash].append(block.hash)
        return AppendResult(AppendStatus.APPENDED)

    def take_orphans(self, parent_hash: bytes) -> list[Block]:
        """Orphans waiting on `parent_hash`, removed from the pool, hash-ordered."""
        waiting = self.orphans.pop(bytes(parent_hash), {})
        return [waiting[h] for h in sorted(waiting)]

    @property
    def orphan_count(self) -> int:
        return sum(len(v) for v in self.orphans.values())

    def canonical_subblocks(self) -> list[tuple[Block, int, SubBlock]]:
        return [(b, i, sb) for b in self.branch() for i, sb in enumerate(b.subblocks)]


def audit_targets(blocks: Sequence[Block]) -> list[AuditTarget]:
    targets = []
    for b in blocks:
        for i, sb in enumerate(b.subblocks):
            s = sb.storage
            targets.append(
                AuditTarget(s.node_id, s.address, s.chunk_root, s.size, s.chunk_size, f"{b.height}:{i}")
            )
    return targets


# -- chain dump ---------------------------------------------------------------


def dump_blocks(blocks: Sequence[Block]) -> bytes:
    """Magic, then each block as a 4-byte big-endian length and its encoding."""
    out = bytearray(CHAIN_MAGIC)
    for b in blocks:
        raw = encode(b)
        out += len(raw).to_bytes(4, "big")
        out += raw
    return bytes(out)


def load_blocks(data: bytes) -> list[Block]:
    if not data.startswith(CHAIN_MAGIC):
        raise DecodingError("not a chain dump (bad magic)")
    pos = len(CHAIN_MAGIC)
    blocks = []
    while pos < len(data):
        if pos + 4 > len(data):
            raise DecodingError("truncated block length")
        n = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        if pos + n > len(data):
            raise DecodingError("truncated block")
        blocks.append(decode(Block, data[pos : pos + n]))
        pos += n
    return blocks


def chain_from_blocks(blocks: Sequence[Block], b_max: int = DEFAULT_B_MAX) -> Chain:
    """Rebuild a Chain from a dump (structural checks only)."""
    if not blocks:
        return Chain(b_max=b_max)
    chain = Chain(blocks[0], b_max=b_max) if blocks[0].height == 0 else Chain(b_max=b_max)
    for b in blocks:
        if b.height == 0:
            continue
        res = chain.validate_and_append(b)
        if res.status not in (AppendStatus.APPENDED, AppendStatus.DUPLICATE):
            raise InvalidBlock(res.reason or RejectReason.STRUCTURE, f"block {b.height}: {res.status.value}")
    return chain
