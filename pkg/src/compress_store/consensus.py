"""Proof of WorkStore: mining by compression plus verifiable storage.

Mining a block means, for each GOP transaction: authenticate it, sweep the
quantizer ladder for the smallest encoding that still meets the quality
threshold, chain it to the previous GOP of the same video, encrypt each
frame, place the ciphertext on a storage node (paying credits), prove the
placement, and emit a subblock.  Verification repeats the checks from the
verifier's side: (a) a fresh storage challenge, (b) Merkle recomputation
from the stored ciphertext, and (c) decryption, decoding and quality
recomputation against the verifier's own raw copy (proof of compression),
including the chain digests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import codec
from .codec import CompressedGop, Gop, QualityReport
from .crypto import (
    ZERO_DIGEST,
    DecryptionError,
    Digest,
    KeyPair,
    check_signature,
    decrypt,
    encrypt,
    hash_bytes,
)
from .ledger import (
    DEFAULT_B_MAX,
    AppendResult,
    AppendStatus,
    Block,
    Chain,
    CodecParams,
    GopHeader,
    InvalidBlock,
    QualityClaim,
    RejectReason,
    StoragePointer,
    SubBlock,
    assemble_block,
    audit_targets,
    check_block_structure,
    make_subblock,
    sign_header,
)
from .merkle import frame_tree
from .storage import (
    DEFAULT_CHALLENGE_SIZE,
    AuditReport,
    CapacityError,
    CreditLedger,
    InsufficientCredits,
    ObjectNotFound,
    StorageNode,
    TravelingAuditor,
    challenge_node,
    chunk_tree,
    make_challenge,
    verify_storage_proof,
)
from .wire import DecodingError, decode_bytes_list, encode, encode_bytes_list

ALGORITHM_ID = "toy-rle-v1"
QUANTIZER_LADDER = (64, 32, 16, 8, 4, 2, 1)
# reported and recomputed PSNR come from identical integer arithmetic
PSNR_TOLERANCE_DB = 1e-9

VideoHeads = dict[str, "tuple[int, Digest, Digest]"]


class MiningError(Exception):
    pass


class MissingRawGop(Exception):
    """The verifier has no raw copy of a GOP yet; verification must wait."""

    def __init__(self, key: tuple[str, int]):
        super().__init__(f"raw GOP {key} not cached")
        self.key = key


@dataclass(frozen=True)
class GopTransaction:
    header: GopHeader
    signature: bytes
    gop: Gop

    @property
    def key(self) -> tuple[str, int]:
        return self.header.video_id, self.header.gop_index

    def authentic(self) -> bool:
        return check_signature(self.header.initiator_pubkey, encode(self.header), self.signature) and (
            raw_gop_digest(self.gop) == self.header.raw_gop_digest
        )

    def wire_size(self, location_only: bool = False) -> int:
        """Bytes on the wire: full raw GOP, or header plus a location string."""
        base = len(encode(self.header)) + len(self.signature)
        return base + (64 if location_only else self.gop.raw_size)


def raw_gop_digest(gop: Gop) -> Digest:
    return hash_bytes(b"".join(f.samples for f in gop.frames))


def wrap_key(reader_key: bytes, content_key: bytes) -> bytes:
    return encrypt(reader_key, content_key)


def unwrap_key(reader_key: bytes, access_privileges: bytes) -> bytes:
    return decrypt(reader_key, access_privileges)


def make_transaction(
    gop: Gop,
    video_id: str,
    initiator_keys: KeyPair,
    content_key: bytes,
    reader_key: bytes,
    sensor_metadata: bytes = b"",
) -> GopTransaction:
    header = GopHeader(
        video_id=video_id,
        gop_index=gop.index,
        gop_timestamp=gop.timestamp,
        raw_gop_digest=raw_gop_digest(gop),
        access_privileges=wrap_key(reader_key, content_key),
        sensor_metadata=sensor_metadata,
        initiator_pubkey=initiator_keys.public_key,
    )
    return GopTransaction(header, sign_header(header, initiator_keys), gop)


def chain_link_digests(prev: CompressedGop | None) -> tuple[Digest, Digest]:
    """(hash of previous I payload, hash of previous last-P payload)."""
    if prev is None:
        return ZERO_DIGEST, ZERO_DIGEST
    return hash_bytes(prev.i_payload), hash_bytes(prev.last_payload)


# -- storage market -----------------------------------------------------------


class StorageDirectory:
    """The storage nodes a miner can reach, plus the credit ledger that pays them."""

    def __init__(self, nodes: Iterable[StorageNode], ledger: CreditLedger | None = None):
        self.nodes: dict[str, StorageNode] = {n.node_id: n for n in nodes}
        self.ledger = ledger if ledger is not None else CreditLedger()

    def get(self, node_id: str) -> StorageNode | None:
        return self.nodes.get(node_id)

    def place(self, payer: str, data: bytes) -> StoragePointer:
        """Store on the first willing node in a payer-specific rotation and pay for it."""
        if not self.nodes:
            raise MiningError("no storage nodes")
        address = hash_bytes(data)
        ids = sorted(self.nodes)
        start = int.from_bytes(hash_bytes(payer.encode() + address)[:4], "big") % len(ids)
        order = ids[start:] + ids[:start]
        if self.ledger.balance(payer) < len(data):
            raise MiningError(f"{payer} lacks credits for {len(data)} bytes")
        for nid in order:
            node = self.nodes[nid]
            try:
                node.store(data)
            except CapacityError:
                continue
            try:
                self.ledger.spend(payer, len(data), ref=(payer, nid, bytes(address)))
            except InsufficientCredits as exc:
                raise MiningError(str(exc)) from exc
            root = chunk_tree(data, node.chunk_size).root
            return StoragePointer(address, nid, len(data), node.chunk_size, root)
        raise MiningError(f"no storage node has room for {len(data)} bytes")


# -- mining -------------------------------------------------------------------


@dataclass(frozen=True)
class MiningParams:
    b_max: int = DEFAULT_B_MAX
    quantizers: tuple[int, ...] = QUANTIZER_LADDER
    threshold_db: float = 35.0
    challenge_k: int = DEFAULT_CHALLENGE_SIZE

    def __post_init__(self):
        if not math.isfinite(self.threshold_db):
            raise ValueError("threshold_db must be finite (lossless meets any finite threshold)")
        if not self.quantizers or min(self.quantizers) < 1:
            raise ValueError("quantizers must be a non-empty set of integers >= 1")
        if self.b_max < 1:
            raise ValueError("b_max must be >= 1")


@dataclass(frozen=True)
class Encoding:
    compressed: CompressedGop
    report: QualityReport
    search_steps: int
    sizes: dict  # quantizer -> compressed size, for every quantizer tried


def select_encoding(
    gop: Gop,
    quantizers: Sequence[int],
    threshold_db: float,
    chain_prev_i: bytes = ZERO_DIGEST,
    chain_prev_last_p: bytes = ZERO_DIGEST,
) -> Encoding:
    """Sweep coarse to fine; keep the smallest encoding meeting the threshold.

    Size ties go to the coarser quantizer.  Quality is measured on the
    encoder's closed-loop reconstruction, which equals the decoder output.
    """
    frames = gop.stack()
    best: tuple[CompressedGop, QualityReport] | None = None
    sizes = {}
    for q in sorted(set(quantizers), reverse=True):
        c, recon = codec._encode(frames, q, chain_prev_i, chain_prev_last_p)
        rep = codec._report(frames, recon, threshold_db)
        sizes[q] = c.size
        if rep.meets_threshold and (best is None or c.size < best[0].size):
            best = (c, rep)
    if best is None:
        # unreachable with quantizer 1 in the ladder and a finite threshold
        raise MiningError(f"no quantizer in {sorted(quantizers)} meets {threshold_db} dB")
    return Encoding(best[0], best[1], len(sizes), sizes)


def encrypt_frames(content_key: bytes, c: CompressedGop) -> list[bytes]:
    return [encrypt(content_key, p) for p in c.payloads]


@dataclass(frozen=True)
class MinedGop:
    transaction: GopTransaction
    encoding: Encoding
    stored_object: bytes
    pointer: StoragePointer
    proof_ref: Digest
    subblock: SubBlock


@dataclass(frozen=True)
class MiningResult:
    block: Block
    gops: tuple[MinedGop, ...]
    pixels: int
    search_steps: int
    skipped: tuple[tuple[str, int, str], ...] = ()

    @property
    def work_units(self) -> int:
        return self.pixels * self.search_steps


def _own_storage_proof(directory: StorageDirectory, pointer: StoragePointer, k: int, seed: bytes) -> Digest:
    """Challenge the chosen node once; the proof digest goes on chain."""
    node = directory.get(pointer.node_id)
    n = max(1, -(-pointer.size // pointer.chunk_size))
    challenge = make_challenge(pointer.address, n, min(k, n), seed)
    proof = node.respond(challenge)
    if not verify_storage_proof(pointer.chunk_root, challenge, proof, n):
        raise MiningError(f"storage node {pointer.node_id} failed the miner's own challenge")
    return hash_bytes(encode(proof))


def mine(
    pending: Sequence[GopTransaction],
    params: MiningParams,
    miner_id: str,
    miner_keys: KeyPair,
    reader_key: bytes,
    directory: StorageDirectory,
    prev: Block,
    heads: VideoHeads | None = None,
    timestamp_ms: int = 0,
) -> MiningResult:
    """Pack up to b_max pending GOPs into a block on top of `prev`.

    `heads` maps video_id to (last gop_index, I digest, last-P digest) as of
    `prev`.  GOPs that fail authentication, are out of order, or cannot be
    placed are skipped (and with them the rest of that video).
    """
    heads = dict(heads or {})
    mined: list[MinedGop] = []
    skipped: list[tuple[str, int, str]] = []
    blocked: set[str] = set()
    pixels = steps = 0
    for tx in pending:
        if len(mined) >= params.b_max:
            break
        vid, idx = tx.key
        if vid in blocked:
            skipped.append((vid, idx, "video-blocked"))
            continue
        if not tx.authentic():
            skipped.append((vid, idx, "unauthenticated"))
            blocked.add(vid)
            continue
        last = heads.get(vid)
        expected = 0 if last is None else last[0] + 1
        if idx != expected:
            skipped.append((vid, idx, f"out-of-order (expected {expected})"))
            blocked.add(vid)
            continue
        prev_i, prev_p = (ZERO_DIGEST, ZERO_DIGEST) if last is None else (last[1], last[2])

        enc = select_encoding(tx.gop, params.quantizers, params.threshold_db, prev_i, prev_p)
        pixels += tx.gop.raw_size
        steps += enc.search_steps
        c = enc.compressed
        try:
            content_key = unwrap_key(reader_key, tx.header.access_privileges)
            ciphertexts = encrypt_frames(content_key, c)
            blob = encode_bytes_list(ciphertexts)
            pointer = directory.place(miner_id, blob)
            proof_ref = _own_storage_proof(
                directory, pointer, params.challenge_k, hash_bytes(miner_id.encode() + pointer.address)
            )
        except (MiningError, DecryptionError) as exc:
            skipped.append((vid, idx, str(exc)))
            blocked.add(vid)
            continue
        sb = make_subblock(
            header=tx.header,
            initiator_signature=tx.signature,
            gop_merkle_root=frame_tree(ciphertexts).root,
            storage=pointer,
            codec=CodecParams(ALGORITHM_ID, c.quantizer, c.width, c.height, c.frame_count),
            quality=QualityClaim(enc.report.mean_psnr_db, params.threshold_db),
            chain_prev_i=c.chain_prev_i,
            chain_prev_last_p=c.chain_prev_last_p,
        )
        mined.append(MinedGop(tx, enc, blob, pointer, proof_ref, sb))
        heads[vid] = (idx, *chain_link_digests(c))
    if not mined:
        raise MiningError(f"nothing minable: {skipped}")
    block = assemble_block(
        [m.subblock for m in mined],
        prev,
        miner_id,
        miner_keys,
        timestamp_ms,
        params.threshold_db,
        [m.proof_ref for m in mined],
        params.b_max,
    )
    return MiningResult(block, tuple(mined), pixels, steps, tuple(skipped))


# -- verification -------------------------------------------------------------


class VerifierCache:
    """Raw GOP copies received from initiators, keyed by (video_id, gop_index)."""

    def __init__(self):
        self.entries: dict[tuple[str, int], Gop] = {}
        self.evicted: set[tuple[str, int]] = set()

    def put(self, key: tuple[str, int], gop: Gop) -> bool:
        if key in self.evicted:
            return False
        self.entries[key] = gop
        return True

    def get(self, key: tuple[str, int]) -> Gop | None:
        return self.entries.get(key)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def evict(self, keys: Iterable[tuple[str, int]]) -> int:
        n = 0
        for k in keys:
            if self.entries.pop(k, None) is not None:
                n += 1
            self.evicted.add(k)
        return n

    @property
    def bytes_held(self) -> int:
        return sum(g.raw_size for g in self.entries.values())


@dataclass
class Verdict:
    accepted: bool
    reason: RejectReason | None = None
    detail: str = ""
    heads: VideoHeads = field(default_factory=dict)
    recomputed_psnr: dict = field(default_factory=dict)

    @classmethod
    def reject(cls, exc: InvalidBlock) -> "Verdict":
        return cls(False, exc.reason, exc.detail)


def _fail(reason: RejectReason, detail: str):
    raise InvalidBlock(reason, detail)


def verify_subblock(
    sb: SubBlock,
    raw: Gop,
    directory: StorageDirectory,
    reader_key: bytes,
    heads: VideoHeads,
    threshold_db: float,
    challenge_k: int,
    challenge_seed: bytes,
) -> tuple[CompressedGop, float]:
    """Checks (a), (b), (c) for one subblock; returns the decrypted GOP and its true PSNR."""
    key = sb.key
    vid, idx = key
    last = heads.get(vid)
    expected = 0 if last is None else last[0] + 1
    if idx != expected:
        _fail(RejectReason.STRUCTURE, f"{key}: expected gop_index {expected}")
    if raw_gop_digest(raw) != sb.header.raw_gop_digest:
        _fail(RejectReason.STRUCTURE, f"{key}: cached raw GOP does not match signed digest")
    cp = sb.codec
    if cp.algorithm_id != ALGORITHM_ID or cp.quantizer < 1:
        _fail(RejectReason.QUALITY, f"{key}: unsupported codec parameters")
    if (cp.width, cp.height, cp.frame_count) != (raw.width, raw.height, len(raw.frames)):
        _fail(RejectReason.QUALITY, f"{key}: codec geometry differs from raw GOP")

    # (a) fresh storage challenge
    ptr = sb.storage
    node = directory.get(ptr.node_id)
    ok, why = challenge_node(node, ptr.address, ptr.chunk_root, ptr.size, ptr.chunk_size, challenge_k, challenge_seed)
    if not ok:
        _fail(RejectReason.STORAGE, f"{key}: challenge {why}")
    try:
        blob = node.retrieve(ptr.address)
    except ObjectNotFound:
        _fail(RejectReason.STORAGE, f"{key}: object not retrievable")
    if hash_bytes(blob) != ptr.address or len(blob) != ptr.size:
        _fail(RejectReason.STORAGE, f"{key}: content does not match its address")

    # (b) Merkle recomputation over the stored per-frame ciphertexts
    try:
        ciphertexts = decode_bytes_list(blob)
    except DecodingError:
        _fail(RejectReason.MERKLE, f"{key}: stored object is not a frame list")
    if len(ciphertexts) != cp.frame_count:
        _fail(RejectReason.MERKLE, f"{key}: {len(ciphertexts)} stored frames, expected {cp.frame_count}")
    if frame_tree(ciphertexts).root != sb.gop_merkle_root:
        _fail(RejectReason.MERKLE, f"{key}: GOP merkle root")

    # (c) proof of compression
    try:
        content_key = unwrap_key(reader_key, sb.header.access_privileges)
        payloads = [decrypt(content_key, ct) for ct in ciphertexts]
    except DecryptionError:
        _fail(RejectReason.QUALITY, f"{key}: payload does not decrypt")
    i_payload = payloads[0]
    if i_payload[: codec.CHAIN_HEADER_SIZE] != sb.chain_prev_i + sb.chain_prev_last_p:
        _fail(RejectReason.CHAIN_LINK, f"{key}: I-frame chain header differs from subblock")
    expected_link = (ZERO_DIGEST, ZERO_DIGEST) if last is None else (last[1], last[2])
    if (sb.chain_prev_i, sb.chain_prev_last_p) != expected_link:
        _fail(RejectReason.CHAIN_LINK, f"{key}: chain digests do not match previous GOP")
    c = CompressedGop(i_payload, tuple(payloads[1:]), cp.quantizer, sb.chain_prev_i, sb.chain_prev_last_p,
                      cp.width, cp.height, cp.frame_count)
    try:
        recon = codec.decode_frames(c)
    except codec.DecodeError as exc:
        _fail(RejectReason.QUALITY, f"{key}: decode failed ({exc})")
    report = codec._report(raw.stack(), recon, threshold_db)
    true_psnr = report.mean_psnr_db
    claimed = sb.quality.mean_psnr_db
    same = (claimed == true_psnr) or (
        math.isfinite(true_psnr) and abs(claimed - true_psnr) <= PSNR_TOLERANCE_DB
    )
    if not same:
        _fail(RejectReason.QUALITY, f"{key}: claimed {claimed:.4f} dB, measured {true_psnr:.4f} dB")
    if not report.meets_threshold:
        _fail(RejectReason.QUALITY, f"{key}: {true_psnr:.4f} dB below threshold {threshold_db} dB")
    return c, true_psnr


def verify_block(
    block: Block,
    raw_cache: VerifierCache,
    chain: Chain,
    directory: StorageDirectory,
    reader_key: bytes,
    heads: VideoHeads,
    threshold_db: float,
    challenge_k: int = DEFAULT_CHALLENGE_SIZE,
    challenge_seed: bytes = b"",
) -> Verdict:
    """Full verification of `block` against its parent in `chain`.

    `heads` are the video heads as of the parent.  Raises MissingRawGop when
    the cache lacks a GOP (the caller should retry later); every failed
    check is reported as a Verdict with a stable reason code.
    """
    parent = chain.blocks.get(block.prev_block_hash)
    try:
        if parent is None:
            _fail(RejectReason.STRUCTURE, "unknown parent")
        check_block_structure(block, parent, chain.b_max)
        if block.threshold_db != threshold_db:
            _fail(RejectReason.QUALITY, f"block threshold {block.threshold_db} != network {threshold_db}")
        missing = [sb.key for sb in block.subblocks if sb.key not in raw_cache]
        if missing:
            raise MissingRawGop(missing[0])
        new_heads = dict(heads)
        psnrs = {}
        for i, sb in enumerate(block.subblocks):
            seed = hash_bytes(challenge_seed + block.hash + i.to_bytes(4, "big"))
            c, psnr = verify_subblock(
                sb, raw_cache.get(sb.key), directory, reader_key, new_heads, threshold_db, challenge_k, seed
            )
            new_heads[sb.header.video_id] = (sb.header.gop_index, *chain_link_digests(c))
            psnrs[sb.key] = psnr
    except InvalidBlock as exc:
        return Verdict.reject(exc)
    return Verdict(True, heads=new_heads, recomputed_psnr=psnrs)


def reward(ledger: CreditLedger, block: Block) -> bool:
    """Credit the miner with the raw bytes its block covers; idempotent per block."""
    return ledger.grant(block.miner_id, block.raw_size, ref=("block-reward", bytes(block.hash)))


def audit_round(auditor: TravelingAuditor, chain: Chain, rng_seed) -> AuditReport:
    return auditor.audit_round(audit_targets(chain.branch()), rng_seed)


# -- a full node ------------------------------------------------------------------


@dataclass
class ReceiveOutcome:
    block_hash: Digest
    status: str  # appended | duplicate | orphan | deferred | rejected
    reason: RejectReason | None = None
    detail: str = ""


class FullNode:
    """Chain, raw-GOP cache and verification state for one participant.

    Raw GOPs are evicted once the block covering them is `eviction_depth`
    blocks deep on the canonical chain (0 evicts on acceptance).
    """

    def __init__(
        self,
        node_id: str,
        reader_key: bytes,
        directory: StorageDirectory,
        params: MiningParams,
        eviction_depth: int = 0,
        ledger: CreditLedger | None = None,
        verify_seed: bytes = b"",
    ):
        self.node_id = node_id
        self.reader_key = reader_key
        self.directory = directory
        self.params = params
        self.chain = Chain(b_max=params.b_max)
        self.cache = VerifierCache()
        self.eviction_depth = eviction_depth
        self.ledger = ledger if ledger is not None else directory.ledger
        self.verify_seed = verify_seed or node_id.encode()
        self.heads: dict[bytes, VideoHeads] = {self.chain.genesis.hash: {}}
        self.transactions: dict[tuple[str, int], GopTransaction] = {}
        self.deferred: dict[bytes, Block] = {}
        self.rejections: dict[str, int] = {}
        self._evicted_blocks: set[bytes] = set()

    @property
    def tip(self) -> Block:
        return self.chain.tip

    def tip_heads(self) -> VideoHeads:
        return self.heads[self.chain.tip.hash]

    def add_transaction(self, tx: GopTransaction) -> bool:
        if not tx.authentic():
            return False
        self.transactions[tx.key] = tx
        self.cache.put(tx.key, tx.gop)
        return True

    def pending(self) -> list[GopTransaction]:
        """Transactions not yet covered by the canonical chain, in mining order."""
        heads = self.tip_heads()
        out = []
        for key in sorted(self.transactions, key=lambda k: (self.transactions[k].header.gop_timestamp, k)):
            vid, idx = key
            last = heads.get(vid)
            if last is None or idx > last[0]:
                out.append(self.transactions[key])
        return out

    def minable(self) -> list[GopTransaction]:
        """Pending transactions that extend each video contiguously from the tip."""
        heads = self.tip_heads()
        nxt = {vid: h[0] + 1 for vid, h in heads.items()}
        out = []
        for tx in self.pending():
            vid, idx = tx.key
            if idx == nxt.get(vid, 0):
                out.append(tx)
                nxt[vid] = idx + 1
        return out

    def adopt_own(self, result: MiningResult) -> list[ReceiveOutcome]:
        """Append a block this node mined itself, skipping re-verification."""
        block = result.block
        res = self.chain.validate_and_append(block)
        if res.status != AppendStatus.APPENDED:
            return [ReceiveOutcome(block.hash, res.status.value, res.reason, res.detail)]
        heads = dict(self.heads[bytes(block.prev_block_hash)])
        for m in result.gops:
            heads[m.transaction.header.video_id] = (
                m.transaction.header.gop_index, *chain_link_digests(m.encoding.compressed)
            )
        self.heads[block.hash] = heads
        reward(self.ledger, block)
        outcomes = [ReceiveOutcome(block.hash, "appended")]
        for orphan in self.chain.take_orphans(block.hash):
            outcomes.extend(self.receive_block(orphan))
        self._evict_deep()
        return outcomes

    def receive_block(self, block: Block) -> list[ReceiveOutcome]:
        """Validate and append `block`, then anything it unblocks."""
        outcomes = []
        queue = [block]
        while queue:
            b = queue.pop(0)
            out = self._receive_one(b)
            outcomes.append(out)
            if out.status == "appended":
                queue.extend(self.chain.take_orphans(b.hash))
        if any(o.status == "appended" for o in outcomes):
            self._evict_deep()
        return outcomes

    def retry_deferred(self) -> list[ReceiveOutcome]:
        outcomes = []
        for h in sorted(self.deferred):
            b = self.deferred.pop(h)
            outcomes.extend(self.receive_block(b))
        return outcomes

    def _receive_one(self, block: Block) -> ReceiveOutcome:
        h = block.hash
        pre = self.chain.precheck(block)
        if pre is not None:
            if pre.status == AppendStatus.REJECTED:
                self._count(pre.reason)
            return ReceiveOutcome(h, pre.status.value, pre.reason, pre.detail)
        try:
            verdict = verify_block(
                block, self.cache, self.chain, self.directory, self.reader_key,
                self.heads[bytes(block.prev_block_hash)], self.params.threshold_db,
                self.params.challenge_k, self.verify_seed,
            )
        except MissingRawGop:
            self.deferred[h] = block
            return ReceiveOutcome(h, "deferred")
        if not verdict.accepted:
            self.chain.reject(block, InvalidBlock(verdict.reason, verdict.detail))
            self._count(verdict.reason)
            return ReceiveOutcome(h, "rejected", verdict.reason, verdict.detail)
        res: AppendResult = self.chain.validate_and_append(block)
        if res.status != AppendStatus.APPENDED:
            return ReceiveOutcome(h, res.status.value, res.reason, res.detail)
        self.heads[h] = verdict.heads
        reward(self.ledger, block)
        return ReceiveOutcome(h, "appended")

    def _count(self, reason: RejectReason | None) -> None:
        key = reason.value if reason else "unknown"
        self.rejections[key] = self.rejections.get(key, 0) + 1

    def _evict_deep(self) -> None:
        tip = self.chain.tip
        for b in self.chain.ancestors(tip.hash):
            if tip.height - b.height < self.eviction_depth:
                continue
            if b.hash in self._evicted_blocks or b.height == 0:
                break
            self._evicted_blocks.add(b.hash)
            keys = [sb.key for sb in b.subblocks]
            self.cache.evict(keys)
            for k in keys:
                self.transactions.pop(k, None)
