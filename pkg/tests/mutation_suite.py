"""Single-point corruptions of an honest mined block, each with the reason code
a verifier must report.

Four families:
  * unsigned edits to any block or subblock field (the miner's signature breaks)
  * edits re-signed by a dishonest miner (the specific check must catch them)
  * damage to the stored object behind a pointer
  * corrupted coded payloads, re-encrypted, re-stored and re-signed consistently
"""

from __future__ import annotations

import copy
import dataclasses
import random
from dataclasses import dataclass
from typing import Callable

from compress_store.consensus import FullNode, unwrap_key
from compress_store.crypto import decrypt, encrypt, hash_bytes, sign
from compress_store.ledger import Block, RejectReason, SubBlock
from compress_store.merkle import block_root, frame_tree
from compress_store.storage import chunk_tree
from compress_store.wire import decode_bytes_list, encode_bytes_list

from helpers import READER_KEY, Mined

SIG = RejectReason.SIGNATURE
STORAGE = RejectReason.STORAGE
MERKLE = RejectReason.MERKLE
QUALITY = RejectReason.QUALITY
CHAIN = RejectReason.CHAIN_LINK
STRUCTURE = RejectReason.STRUCTURE


@dataclass
class Case:
    name: str
    family: str
    expected: frozenset
    apply: Callable[[Mined], Block]


def resign(world: Mined, block: Block, fix_root: bool = True) -> Block:
    if fix_root:
        block = dataclasses.replace(block, block_merkle_root=block_root([sb.gop_merkle_root for sb in block.subblocks]))
    unsigned = dataclasses.replace(block, miner_signature=b"")
    return dataclasses.replace(unsigned, miner_signature=sign(world.miner_keys.secret_key, unsigned.signing_bytes()))


def with_subblock(block: Block, i: int, sb: SubBlock) -> Block:
    subs = list(block.subblocks)
    subs[i] = sb
    return dataclasses.replace(block, subblocks=tuple(subs))


def _r(obj, **kw):
    return dataclasses.replace(obj, **kw)


# field name -> (mutator, reason when re-signed by the miner)
SUBBLOCK_FIELDS: dict[str, tuple[Callable[[SubBlock], SubBlock], RejectReason]] = {
    "gop_merkle_root": (lambda sb: _r(sb, gop_merkle_root=hash_bytes(sb.gop_merkle_root)), MERKLE),
    "storage.address": (lambda sb: _r(sb, storage=_r(sb.storage, address=hash_bytes(sb.storage.address))), STORAGE),
    "storage.node_id": (lambda sb: _r(sb, storage=_r(sb.storage, node_id="nowhere")), STORAGE),
    "storage.size": (lambda sb: _r(sb, storage=_r(sb.storage, size=sb.storage.size + 1)), STORAGE),
    "storage.chunk_size": (lambda sb: _r(sb, storage=_r(sb.storage, chunk_size=64)), STORAGE),
    "storage.chunk_root": (lambda sb: _r(sb, storage=_r(sb.storage, chunk_root=hash_bytes(sb.storage.chunk_root))), STORAGE),
    "codec.algorithm_id": (lambda sb: _r(sb, codec=_r(sb.codec, algorithm_id="other-codec")), QUALITY),
    "codec.quantizer": (lambda sb: _r(sb, codec=_r(sb.codec, quantizer=sb.codec.quantizer * 2)), QUALITY),
    "codec.width": (lambda sb: _r(sb, codec=_r(sb.codec, width=sb.codec.width + 1)), QUALITY),
    "codec.height": (lambda sb: _r(sb, codec=_r(sb.codec, height=sb.codec.height + 1)), QUALITY),
    "codec.frame_count": (lambda sb: _r(sb, codec=_r(sb.codec, frame_count=sb.codec.frame_count - 1)), QUALITY),
    "quality.mean_psnr_db": (lambda sb: _r(sb, quality=_r(sb.quality, mean_psnr_db=sb.quality.mean_psnr_db + 1.0)), QUALITY),
    "quality.threshold_db": (lambda sb: _r(sb, quality=_r(sb.quality, threshold_db=sb.quality.threshold_db - 5)), QUALITY),
    "chain_prev_i": (lambda sb: _r(sb, chain_prev_i=hash_bytes(b"forged-i")), CHAIN),
    "chain_prev_last_p": (lambda sb: _r(sb, chain_prev_last_p=hash_bytes(b"forged-p")), CHAIN),
    "initiator_signature": (lambda sb: _r(sb, initiator_signature=bytes(64)), SIG),
    "header.video_id": (lambda sb: _r(sb, header=_r(sb.header, video_id="video-x")), SIG),
    "header.gop_index": (lambda sb: _r(sb, header=_r(sb.header, gop_index=sb.header.gop_index + 100)), SIG),
    "header.gop_timestamp": (lambda sb: _r(sb, header=_r(sb.header, gop_timestamp=sb.header.gop_timestamp + 1)), SIG),
    "header.raw_gop_digest": (lambda sb: _r(sb, header=_r(sb.header, raw_gop_digest=hash_bytes(b"r"))), SIG),
    "header.access_privileges": (lambda sb: _r(sb, header=_r(sb.header, access_privileges=b"\x00" * 60)), SIG),
    "header.sensor_metadata": (lambda sb: _r(sb, header=_r(sb.header, sensor_metadata=b"tampered")), SIG),
}

BLOCK_FIELDS: dict[str, tuple[Callable[[Block], Block], RejectReason]] = {
    "height": (lambda b: _r(b, height=b.height + 1), STRUCTURE),
    "prev_block_hash": (lambda b: _r(b, prev_block_hash=hash_bytes(b"elsewhere")), None),
    "threshold_db": (lambda b: _r(b, threshold_db=b.threshold_db - 5), QUALITY),
    "block_merkle_root": (lambda b: _r(b, block_merkle_root=hash_bytes(b"root")), MERKLE),
    "timestamp_ms": (lambda b: _r(b, timestamp_ms=b.timestamp_ms + 1), None),
    "miner_id": (lambda b: _r(b, miner_id="someone-else"), None),
    "storage_proof_refs": (lambda b: _r(b, storage_proof_refs=b.storage_proof_refs[::-1]), None),
}


def _unsigned_sub(i: int, name: str) -> Case:
    mut = SUBBLOCK_FIELDS[name][0]
    return Case(f"unsigned sb{i}.{name}", "subblock-field", frozenset({SIG}),
                lambda w: with_subblock(w.block, i, mut(w.block.subblocks[i])))


def _resigned_sub(i: int, name: str) -> Case:
    mut, reason = SUBBLOCK_FIELDS[name]
    return Case(f"re-signed sb{i}.{name}", "subblock-field", frozenset({reason}),
                lambda w: resign(w, with_subblock(w.block, i, mut(w.block.subblocks[i]))))


def _block_field(name: str, resigned: bool) -> Case:
    mut, reason = BLOCK_FIELDS[name]
    if not resigned:
        return Case(f"unsigned block.{name}", "block-field", frozenset({SIG}), lambda w: mut(w.block))
    return Case(f"re-signed block.{name}", "block-field", frozenset({reason}),
                lambda w: resign(w, mut(w.block), fix_root=False))


def _node_of(w: Mined, sb: SubBlock):
    return w.directory.get(sb.storage.node_id)


def _storage_case(i: int, kind: str, offset: int = 0) -> Case:
    def apply(w: Mined) -> Block:
        sb = w.block.subblocks[i]
        node = _node_of(w, sb)
        addr = sb.storage.address
        if kind == "flip":
            node.flip_byte(addr, offset % sb.storage.size, 0x40)
        elif kind == "drop":
            node.drop_chunks(addr, [0])
        elif kind == "delete":
            node.delete(addr)
        elif kind == "garbage":
            node.overwrite(addr, random.Random(i).randbytes(sb.storage.size))
        elif kind == "truncate":
            node.overwrite(addr, node.retrieve(addr)[:-1])
        return w.block

    return Case(f"storage sb{i} {kind}@{offset}", "storage-content", frozenset({STORAGE, MERKLE}), apply)


def restore_payloads(w: Mined, i: int, payloads: list[bytes]) -> Block:
    """A dishonest miner stores these plaintext payloads instead, consistently."""
    sb = w.block.subblocks[i]
    key = unwrap_key(READER_KEY, sb.header.access_privileges)
    cts = [encrypt(key, p) for p in payloads]
    blob = encode_bytes_list(cts)
    node = _node_of(w, sb)
    addr = node.store(blob).digest
    ptr = _r(sb.storage, address=addr, size=len(blob), chunk_root=chunk_tree(blob, sb.storage.chunk_size).root)
    new = _r(sb, storage=ptr, gop_merkle_root=frame_tree(cts).root)
    return resign(w, with_subblock(w.block, i, new))


def stored_payloads(w: Mined, i: int) -> list[bytes]:
    sb = w.block.subblocks[i]
    key = unwrap_key(READER_KEY, sb.header.access_privileges)
    blob = _node_of(w, sb).retrieve(sb.storage.address)
    return [decrypt(key, ct) for ct in decode_bytes_list(blob)]


def _payload_case(i: int, frame: int, pos_seed: int) -> Case:
    def expected_for(w: Mined):
        payloads = stored_payloads(w, i)
        rng = random.Random(pos_seed)
        pos = rng.randrange(len(payloads[frame]))
        return payloads, pos, rng.randrange(8)

    def apply(w: Mined) -> Block:
        payloads, pos, bit = expected_for(w)
        bad = bytearray(payloads[frame])
        bad[pos] ^= 1 << bit
        payloads[frame] = bytes(bad)
        return restore_payloads(w, i, payloads)

    # flips inside the I-frame chain header surface as chain-link failures
    return Case(f"payload sb{i} frame{frame} #{pos_seed}", "payload-bytes", frozenset({QUALITY, CHAIN}), apply)


def _swap_case(i: int) -> Case:
    def apply(w: Mined) -> Block:
        # a valid encoding, but of the wrong GOP
        j = (i + 1) % len(w.block.subblocks)
        return restore_payloads(w, i, stored_payloads(w, j))

    return Case(f"payload sb{i} swapped", "payload-bytes", frozenset({QUALITY, CHAIN}), apply)


def all_cases(n_subblocks: int = 5, payload_trials: int = 60) -> list[Case]:
    cases: list[Case] = []
    for i in range(n_subblocks):
        for name in SUBBLOCK_FIELDS:
            cases.append(_unsigned_sub(i, name))
            cases.append(_resigned_sub(i, name))
    for name in BLOCK_FIELDS:
        cases.append(_block_field(name, False))
        if BLOCK_FIELDS[name][1] is not None:
            cases.append(_block_field(name, True))
    for i in range(n_subblocks):
        for off in (0, 7, 100, 555, 10_000):
            cases.append(_storage_case(i, "flip", off))
        for kind in ("drop", "delete", "garbage", "truncate"):
            cases.append(_storage_case(i, kind))
        cases.append(_swap_case(i))
    rng = random.Random(2024)
    for t in range(payload_trials):
        cases.append(_payload_case(rng.randrange(n_subblocks), rng.randrange(5), t))
    return cases


@dataclass
class Outcome:
    case: Case
    status: str
    reason: RejectReason | None

    @property
    def ok(self) -> bool:
        return self.status == "rejected" and self.reason in self.case.expected


def run_case(base: Mined, case: Case) -> Outcome:
    world = copy.deepcopy(base)
    block = case.apply(world)
    verifier: FullNode = world.verifier()
    out = verifier.receive_block(block)[0]
    return Outcome(case, out.status, out.reason)


def run_suite(base: Mined | None = None) -> list[Outcome]:
    base = base or Mined()
    return [run_case(base, c) for c in all_cases(len(base.block.subblocks))]
