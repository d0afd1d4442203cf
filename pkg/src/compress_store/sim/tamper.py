"""After-the-fact re-verification of a finished run, and tampering with it.

The re-verification pass has no raw video (verifiers evicted it long ago),
so it checks what the chain and storage can still prove on their own:
signatures and block links, stored bytes against their addresses and
Merkle roots, decryptability and decodability, and the chain digests that
tie every GOP to its predecessor.  A broken chain digest taints every later
GOP of the video; a broken block taints every later block.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import codec
from ..consensus import ALGORITHM_ID, StorageDirectory, chain_link_digests, unwrap_key
from ..crypto import ZERO_DIGEST, DecryptionError, decrypt, encrypt, hash_bytes
from ..ledger import Block, InvalidBlock, RejectReason, SubBlock, check_block_structure
from ..merkle import frame_tree
from ..storage import ObjectNotFound, chunk_tree
from ..wire import DecodingError, decode_bytes_list, encode_bytes_list

DESCENDANT = "chain-descendant"
TAMPER_KINDS = ("none", "flip-byte", "replace-gop", "subblock-field")
SUBBLOCK_FIELDS = ("quality", "quantizer", "gop_merkle_root", "storage_node", "chain_prev_i", "sensor_metadata")


class TamperError(ValueError):
    """Tamper target not found or not applicable."""


@dataclass(frozen=True)
class Flag:
    height: int
    index: int
    video_id: str
    gop_index: int
    reasons: tuple[str, ...]
    detail: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"reasons": list(self.reasons)}


@dataclass
class DetectionReport:
    checked: int = 0
    flags: list[Flag] = field(default_factory=list)
    tamper: dict = field(default_factory=dict)

    @property
    def clean(self) -> bool:
        return not self.flags

    @property
    def flagged_keys(self) -> set[tuple[str, int]]:
        return {(f.video_id, f.gop_index) for f in self.flags}

    @property
    def flagged_positions(self) -> set[tuple[int, int]]:
        return {(f.height, f.index) for f in self.flags}

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "tamper": self.tamper,
            "checked_subblocks": self.checked,
            "flagged": len(self.flags),
            "clean": self.clean,
            "flags": [f.to_dict() for f in self.flags],
        }


@dataclass(frozen=True)
class TamperSpec:
    kind: str = "none"
    address: str | None = None  # hex content address (flip-byte)
    offset: int = 0
    mask: int = 0x01
    video_id: str = "video-0"
    gop_index: int = 0
    rechain: bool = False  # replace-gop: also re-chain and re-store every later GOP
    height: int = 1
    index: int = 0
    field_name: str = "quality"

    def __post_init__(self):
        if self.kind not in TAMPER_KINDS:
            raise TamperError(f"unknown tamper kind {self.kind!r}")
        if self.kind == "subblock-field" and self.field_name not in SUBBLOCK_FIELDS:
            raise TamperError(f"unknown subblock field {self.field_name!r}; choose from {SUBBLOCK_FIELDS}")
        if not 1 <= self.mask <= 255:
            raise TamperError("mask must be in [1, 255]")


# -- re-verification ----------------------------------------------------------


def _stored_payloads(sb: SubBlock, directory: StorageDirectory, reader_key: bytes):
    """Direct checks on one subblock.  Returns (failures, payloads or None)."""
    fails: list[tuple[str, str]] = []
    ptr = sb.storage
    if not sb.initiator_signature_ok():
        fails.append((RejectReason.SIGNATURE.value, "initiator signature"))
    node = directory.get(ptr.node_id)
    blob = None
    if node is None:
        fails.append((RejectReason.STORAGE.value, f"unknown storage node {ptr.node_id}"))
    else:
        try:
            blob = node.retrieve(ptr.address)
        except ObjectNotFound:
            fails.append((RejectReason.STORAGE.value, "object missing"))
    if blob is None:
        return fails, None
    if hash_bytes(blob) != ptr.address or len(blob) != ptr.size:
        fails.append((RejectReason.STORAGE.value, "content does not match address"))
    elif chunk_tree(blob, ptr.chunk_size).root != ptr.chunk_root:
        fails.append((RejectReason.STORAGE.value, "chunk root"))
    try:
        ciphertexts = decode_bytes_list(blob)
    except DecodingError:
        fails.append((RejectReason.MERKLE.value, "stored object is not a frame list"))
        return fails, None
    if len(ciphertexts) != sb.codec.frame_count or frame_tree(ciphertexts).root != sb.gop_merkle_root:
        fails.append((RejectReason.MERKLE.value, "GOP merkle root"))
    try:
        key = unwrap_key(reader_key, sb.header.access_privileges)
        payloads = [decrypt(key, ct) for ct in ciphertexts]
    except DecryptionError:
        fails.append((RejectReason.QUALITY.value, "payload does not decrypt"))
        return fails, None
    if not payloads:
        fails.append((RejectReason.QUALITY.value, "empty GOP"))
        return fails, None
    cp = sb.codec
    head = payloads[0][: codec.CHAIN_HEADER_SIZE]
    try:
        c = codec.CompressedGop(payloads[0], tuple(payloads[1:]), cp.quantizer, head[:32], head[32:],
                                cp.width, cp.height, cp.frame_count)
        if cp.algorithm_id != ALGORITHM_ID:
            raise codec.DecodeError(f"unknown algorithm {cp.algorithm_id}")
        codec.decode_frames(c)
    except (ValueError, codec.DecodeError) as exc:
        fails.append((RejectReason.QUALITY.value, f"decode: {exc}"))
    if head != bytes(sb.chain_prev_i) + bytes(sb.chain_prev_last_p):
        fails.append((RejectReason.CHAIN_LINK.value, "I-frame chain header differs from subblock"))
    return fails, payloads


def scan_chain(blocks: Sequence[Block], directory: StorageDirectory, reader_key: bytes, b_max: int) -> DetectionReport:
    """Re-verify a canonical branch (genesis first) against the storage network."""
    report = DetectionReport()
    # per video: (last gop index, digests of its stored payloads or None, tainted)
    heads: dict[str, tuple[int, tuple[bytes, bytes] | None, bool]] = {}
    broken_block = False
    for pos, block in enumerate(blocks):
        if block.height == 0:
            continue
        block_fail: tuple[str, str] | None = None
        parent = blocks[pos - 1] if pos > 0 else None
        if broken_block:
            block_fail = (DESCENDANT, "built on a flagged block")
        elif parent is None:
            block_fail = (RejectReason.STRUCTURE.value, "no parent")
        else:
            try:
                check_block_structure(block, parent, b_max)
            except InvalidBlock as exc:
                block_fail = (exc.reason.value, exc.detail)
        if block_fail is not None:
            broken_block = True

        for i, sb in enumerate(block.subblocks):
            report.checked += 1
            vid, idx = sb.key
            fails, payloads = _stored_payloads(sb, directory, reader_key)
            if block_fail is not None:
                fails.insert(0, block_fail)
            last = heads.get(vid)
            tainted = last[2] if last else False
            expected = 0 if last is None else last[0] + 1
            if idx != expected:
                fails.append((RejectReason.STRUCTURE.value, f"expected gop_index {expected}"))
            if last is None:
                if (sb.chain_prev_i, sb.chain_prev_last_p) != (ZERO_DIGEST, ZERO_DIGEST):
                    fails.append((RejectReason.CHAIN_LINK.value, "first GOP must have zero chain digests"))
            elif last[1] is not None and (bytes(sb.chain_prev_i), bytes(sb.chain_prev_last_p)) != last[1]:
                fails.append((RejectReason.CHAIN_LINK.value, "chain digests do not match the stored previous GOP"))
            link_broken = any(r == RejectReason.CHAIN_LINK.value for r, _ in fails)
            if tainted and not link_broken:
                fails.append((DESCENDANT, "an earlier GOP of this video failed its chain link"))
            digests = None
            if payloads is not None:
                digests = (bytes(hash_bytes(payloads[0])), bytes(hash_bytes(payloads[-1])))
            heads[vid] = (idx, digests, tainted or link_broken)
            if fails:
                reasons = tuple(dict.fromkeys(r for r, _ in fails))
                report.flags.append(Flag(block.height, i, vid, idx, reasons, "; ".join(d for _, d in fails)))
    return report


# -- tampering ----------------------------------------------------------------


def _locate(blocks: Sequence[Block], video_id: str, gop_index: int) -> tuple[int, int]:
    for pos, b in enumerate(blocks):
        for i, sb in enumerate(b.subblocks):
            if sb.key == (video_id, gop_index):
                return pos, i
    raise TamperError(f"GOP {video_id}#{gop_index} is not on the chain")


def _content_key(sb: SubBlock, reader_key: bytes) -> bytes:
    return unwrap_key(reader_key, sb.header.access_privileges)


def _load_compressed(sb: SubBlock, directory: StorageDirectory, reader_key: bytes) -> codec.CompressedGop:
    blob = directory.get(sb.storage.node_id).retrieve(sb.storage.address)
    key = _content_key(sb, reader_key)
    payloads = [decrypt(key, ct) for ct in decode_bytes_list(blob)]
    cp = sb.codec
    return codec.CompressedGop(payloads[0], tuple(payloads[1:]), cp.quantizer, sb.chain_prev_i,
                               sb.chain_prev_last_p, cp.width, cp.height, cp.frame_count)


def _overwrite(sb: SubBlock, directory: StorageDirectory, reader_key: bytes, c: codec.CompressedGop) -> None:
    key = _content_key(sb, reader_key)
    blob = encode_bytes_list([encrypt(key, p) for p in c.payloads])
    directory.get(sb.storage.node_id).overwrite(sb.storage.address, blob)


def _mutate_subblock(sb: SubBlock, name: str) -> SubBlock:
    if name == "quality":
        return dataclasses.replace(sb, quality=dataclasses.replace(sb.quality, mean_psnr_db=sb.quality.mean_psnr_db + 1.0))
    if name == "quantizer":
        return dataclasses.replace(sb, codec=dataclasses.replace(sb.codec, quantizer=sb.codec.quantizer + 1))
    if name == "gop_merkle_root":
        return dataclasses.replace(sb, gop_merkle_root=hash_bytes(sb.gop_merkle_root))
    if name == "storage_node":
        return dataclasses.replace(sb, storage=dataclasses.replace(sb.storage, node_id=sb.storage.node_id + "-x"))
    if name == "chain_prev_i":
        return dataclasses.replace(sb, chain_prev_i=hash_bytes(sb.chain_prev_i))
    header = dataclasses.replace(sb.header, sensor_metadata=sb.header.sensor_metadata + b"!")
    return dataclasses.replace(sb, header=header)


def apply_tamper(
    blocks: list[Block], directory: StorageDirectory, reader_key: bytes, spec: TamperSpec
) -> tuple[list[Block], dict]:
    """Mutate storage (in place) and/or return a modified block list."""
    desc: dict = {"kind": spec.kind}
    if spec.kind == "none":
        return blocks, desc

    if spec.kind == "flip-byte":
        if spec.address is None:
            raise TamperError("flip-byte needs an address")
        try:
            address = bytes.fromhex(spec.address)
        except ValueError as exc:
            raise TamperError(f"bad address {spec.address!r}") from exc
        # identical objects mined on competing branches may sit on several nodes; corrupt every copy
        holders = [nid for nid in sorted(directory.nodes) if directory.nodes[nid].has(address)]
        if not holders:
            raise TamperError(f"no storage node holds {spec.address}")
        for node_id in holders:
            try:
                directory.nodes[node_id].flip_byte(address, spec.offset, spec.mask)
            except IndexError as exc:
                raise TamperError(str(exc)) from exc
        desc.update(address=spec.address, offset=spec.offset, mask=spec.mask, nodes=holders)
        return blocks, desc

    if spec.kind == "replace-gop":
        pos, i = _locate(blocks, spec.video_id, spec.gop_index)
        sb = blocks[pos].subblocks[i]
        old = _load_compressed(sb, directory, reader_key)
        # a plausible forgery: different picture content, same chain header
        inverted = 255 - codec.decode_frames(old).astype(np.int64)
        frames = tuple(codec.Frame.from_array(f.astype(np.uint8)) for f in inverted)
        forged = codec.encode_gop(codec.Gop(frames, spec.gop_index, sb.header.gop_timestamp), old.quantizer,
                                  old.chain_prev_i, old.chain_prev_last_p)
        _overwrite(sb, directory, reader_key, forged)
        desc.update(video_id=spec.video_id, gop_index=spec.gop_index, height=blocks[pos].height,
                    index=i, rechain=spec.rechain)
        if spec.rechain:
            prev = forged
            later_subs = [(p, j, s) for p, b in enumerate(blocks) for j, s in enumerate(b.subblocks)]
            for p, j, later in later_subs:
                if (p, j) <= (pos, i) or later.header.video_id != spec.video_id:
                    continue
                c = codec.rechain(_load_compressed(later, directory, reader_key), *chain_link_digests(prev))
                _overwrite(later, directory, reader_key, c)
                prev = c
        return blocks, desc

    # subblock-field
    pos = next((p for p, b in enumerate(blocks) if b.height == spec.height), None)
    if pos is None or spec.height == 0:
        raise TamperError(f"no block at height {spec.height}")
    block = blocks[pos]
    if not 0 <= spec.index < len(block.subblocks):
        raise TamperError(f"block {spec.height} has no subblock {spec.index}")
    subs = list(block.subblocks)
    subs[spec.index] = _mutate_subblock(subs[spec.index], spec.field_name)
    out = list(blocks)
    out[pos] = dataclasses.replace(block, subblocks=tuple(subs))
    desc.update(height=spec.height, index=spec.index, field=spec.field_name)
    return out, desc


def tamper_experiment(
    blocks: Sequence[Block],
    directory: StorageDirectory,
    reader_key: bytes,
    spec: TamperSpec,
    b_max: int,
    *,
    in_place: bool = False,
) -> DetectionReport:
    """Apply `spec` to (a copy of) the storage and chain, then re-verify everything."""
    if not in_place:
        directory = StorageDirectory(copy.deepcopy(list(directory.nodes.values())), directory.ledger)
    tampered, desc = apply_tamper(list(blocks), directory, reader_key, spec)
    report = scan_chain(tampered, directory, reader_key, b_max)
    report.tamper = desc
    return report
