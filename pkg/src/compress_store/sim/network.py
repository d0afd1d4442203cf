"""Actors and the simulation driver.

Initiators stream signed GOP transactions; miners race to compress and store
them (public mode), work on pseudorandomly assigned GOP groups (sharded
mode), or the first initiator produces blocks on a fixed timer (private
mode).  Every full node verifies every block it receives.  Mining cost is
simulated time from the work model; the compression, storage and
verification themselves are real.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Any

from .. import codec
from ..consensus import (
    FullNode,
    GopTransaction,
    MiningError,
    MiningParams,
    MiningResult,
    StorageDirectory,
    make_transaction,
    mine,
)
from ..crypto import KeyPair, derive_seed, hash_bytes
from ..ledger import Block, audit_targets
from ..storage import AuditReport, CreditLedger, StorageNode, TravelingAuditor
from ..wire import encode
from .engine import EventQueue
from .scenario import Scenario

log = logging.getLogger(__name__)


def theoretical_pps(gop_size: float, gops_per_block: float, block_interval_s: float) -> float:
    """Frames committed per second if every block carries gops_per_block full GOPs."""
    if block_interval_s <= 0:
        raise ValueError("block interval must be positive")
    if gop_size <= 0 or gops_per_block <= 0:
        raise ValueError("gop size and GOPs per block must be positive")
    return gop_size * gops_per_block / block_interval_s


def _seed_int(*parts: Any) -> int:
    return int.from_bytes(derive_seed("sim", *parts)[:8], "big")


class Network:
    """Message transport with seeded uniform link latency and byte accounting."""

    def __init__(self, scenario: Scenario, queue: EventQueue):
        self.scenario = scenario
        self.queue = queue
        self.rng = random.Random(_seed_int(scenario.rng_seed, "latency"))
        self.actors: dict[str, "Participant"] = {}
        self.bytes_broadcast = 0
        self.bytes_by_kind: dict[str, int] = {}
        self.messages = 0
        self.message_log: list[tuple[float, str, str, str, int]] = []
        self.bytes_downloaded = 0

    def latency(self) -> float:
        s = self.scenario
        return self.rng.uniform(s.latency_min_s, s.latency_max_s)

    def send(self, src: str, dst: str, kind: str, payload: Any, size: int) -> None:
        self.bytes_broadcast += size
        self.bytes_by_kind[kind] = self.bytes_by_kind.get(kind, 0) + size
        self.messages += 1
        self.message_log.append((self.queue.now, src, dst, kind, size))
        self.queue.schedule(self.latency(), dst, self.actors[dst].on_message, kind, payload, src)

    def broadcast(self, src: str, kind: str, payload: Any, size: int) -> None:
        for dst in sorted(self.actors):
            if dst != src:
                self.send(src, dst, kind, payload, size)


class Participant:
    """A full node attached to the network: keeps a chain and verifies blocks."""

    role = "verifier"

    def __init__(self, node_id: str, net: Network, full: FullNode):
        self.node_id = node_id
        self.net = net
        self.full = full
        self.commit_times: dict[bytes, float] = {}
        self.downloaded: set[tuple[str, int]] = set()
        self.mined: list[bytes] = []

    @property
    def now(self) -> float:
        return self.net.queue.now

    def download(self, keys) -> None:
        if not self.net.scenario.location_only_broadcast:
            return
        for k in keys:
            if k not in self.downloaded:
                self.downloaded.add(k)
                tx = self.full.transactions.get(k)
                if tx is not None:
                    self.net.bytes_downloaded += tx.gop.raw_size

    def on_message(self, kind: str, payload: Any, src: str) -> None:
        before = self.full.tip.hash
        if kind == "tx":
            self.full.add_transaction(payload)
            self._record(self.full.retry_deferred())
            self.on_transaction(payload)
        elif kind == "block":
            self.download(sb.key for sb in payload.subblocks)
            self._record(self.full.receive_block(payload))
        if self.full.tip.hash != before:
            self.on_tip_change()

    def _record(self, outcomes) -> None:
        for o in outcomes:
            if o.status == "appended":
                self.commit_times.setdefault(bytes(o.block_hash), self.now)

    def publish(self, result: MiningResult) -> None:
        block = result.block
        self._record(self.full.adopt_own(result))
        self.mined.append(bytes(block.hash))
        self.net.broadcast(self.node_id, "block", block, len(encode(block)))

    def on_transaction(self, tx: GopTransaction) -> None:
        pass

    def on_tip_change(self) -> None:
        pass


@dataclass
class _Job:
    token: int
    parent: bytes
    txs: list[GopTransaction]


class Miner(Participant):
    """Public-mode miner: races everyone on the first b_max minable GOPs."""

    role = "miner"

    def __init__(self, node_id: str, net: Network, full: FullNode, keys: KeyPair, work_rng: random.Random):
        super().__init__(node_id, net, full)
        self.keys = keys
        self.work_rng = work_rng
        self.job: _Job | None = None
        self._tokens = 0
        self.failures: list[str] = []

    def work_time(self, txs: list[GopTransaction]) -> float:
        s = self.net.scenario
        mean = sum(
            s.work_alpha_s_per_pixel * tx.gop.raw_size + s.work_beta_s_per_step * len(set(s.quantizers))
            for tx in txs
        )
        if s.work_cv <= 0 or mean <= 0:
            return mean
        shape = 1.0 / (s.work_cv**2)
        return self.work_rng.gammavariate(shape, mean / shape)

    def on_transaction(self, tx: GopTransaction) -> None:
        self.maybe_start()

    def on_tip_change(self) -> None:
        if self.job is not None and self.job.parent != self.full.tip.hash:
            self.job = None
        self.maybe_start()

    def maybe_start(self) -> None:
        if self.job is not None:
            return
        b_max = self.net.scenario.b_max
        txs = self.full.minable()
        if len(txs) < b_max:
            return
        chosen = txs[:b_max]
        self.download(tx.key for tx in chosen)
        self._tokens += 1
        self.job = _Job(self._tokens, bytes(self.full.tip.hash), chosen)
        self.net.queue.schedule(self.work_time(chosen), self.node_id, self.complete, self._tokens)

    def complete(self, token: int) -> None:
        job = self.job
        if job is None or job.token != token:
            return
        self.job = None
        self.produce(job.txs)
        self.maybe_start()

    def produce(self, txs: list[GopTransaction]) -> Block | None:
        full = self.full
        try:
            result = mine(
                txs, full.params, self.node_id, self.keys, full.reader_key, full.directory,
                full.tip, full.tip_heads(), int(round(self.now * 1000)),
            )
        except MiningError as exc:
            self.failures.append(str(exc))
            log.debug("%s: mining failed: %s", self.node_id, exc)
            return None
        self.publish(result)
        return result.block


class ShardMiner(Miner):
    """Sharded mode: compresses only the GOP groups it owns, in parallel with peers.

    A group is b_max consecutive GOPs of one video.  Its owner is the miner
    with the smallest hash(miner_id || epoch || video || first index).  The
    compression cost is paid as soon as the group is complete; the block is
    released once the preceding group is on the owner's canonical chain.
    """

    def __init__(self, *args, miner_ids: list[str], **kwargs):
        super().__init__(*args, **kwargs)
        self.miner_ids = miner_ids
        self.queued: set[tuple[str, int]] = set()
        self.backlog: list[tuple[str, int]] = []
        self.ready: list[tuple[str, int]] = []
        self.busy = False

    def owner(self, video_id: str, first: int) -> str:
        b_max = self.net.scenario.b_max
        epoch = (first // b_max) // len(self.miner_ids)
        return min(
            self.miner_ids,
            key=lambda m: hash_bytes(derive_seed("shard", m, epoch, video_id, first)),
        )

    def group_txs(self, group: tuple[str, int]) -> list[GopTransaction] | None:
        vid, first = group
        txs = [self.full.transactions.get((vid, first + j)) for j in range(self.net.scenario.b_max)]
        return None if any(t is None for t in txs) else txs

    def on_transaction(self, tx: GopTransaction) -> None:
        vid, idx = tx.key
        first = idx - idx % self.net.scenario.b_max
        group = (vid, first)
        if group in self.queued or self.owner(vid, first) != self.node_id:
            return
        if self.group_txs(group) is None:
            return
        self.queued.add(group)
        self.backlog.append(group)
        self._next_job()

    def _next_job(self) -> None:
        if self.busy or not self.backlog:
            return
        group = self.backlog.pop(0)
        txs = self.group_txs(group)
        self.download(tx.key for tx in txs)
        self.busy = True
        self.net.queue.schedule(self.work_time(txs), self.node_id, self._compressed, group)

    def _compressed(self, group: tuple[str, int]) -> None:
        self.busy = False
        self.ready.append(group)
        self._next_job()
        self.try_finalize()

    def on_tip_change(self) -> None:
        self.try_finalize()

    def maybe_start(self) -> None:
        pass

    def try_finalize(self) -> None:
        progressed = True
        while progressed and self.ready:
            progressed = False
            heads = self.full.tip_heads()
            for group in list(self.ready):
                vid, first = group
                last = heads.get(vid)
                nxt = 0 if last is None else last[0] + 1
                if nxt > first:
                    self.ready.remove(group)  # already covered
                    continue
                if nxt == first:
                    self.ready.remove(group)
                    if self.produce(self.group_txs(group)) is not None:
                        progressed = True
                    break


class Initiator(Participant):
    """Video source.  In private mode the first initiator also produces blocks."""

    role = "initiator"

    def __init__(
        self,
        node_id: str,
        net: Network,
        full: FullNode,
        keys: KeyPair,
        video_id: str,
        gops: list[codec.Gop],
        content_key: bytes,
        producer: bool = False,
    ):
        super().__init__(node_id, net, full)
        self.keys = keys
        self.video_id = video_id
        self.gops = gops
        self.content_key = content_key
        self.producer = producer
        self.transactions: list[GopTransaction] = []

    def start(self) -> None:
        s = self.net.scenario
        period = 1.0 / s.feed_rate_gops_per_s
        for g in self.gops:
            t = (g.index + 1) * period
            if t <= s.duration_s:
                self.net.queue.schedule_at(t, self.node_id, self.emit, g)
        if self.producer:
            self.net.queue.schedule(s.trusted_interval_s, self.node_id, self.tick)

    def emit(self, gop: codec.Gop) -> None:
        s = self.net.scenario
        meta = derive_seed("sensor", self.video_id, gop.index)[: s.sensor_metadata_bytes]
        meta = meta.ljust(s.sensor_metadata_bytes, b"\x00")
        tx = make_transaction(gop, self.video_id, self.keys, self.content_key, self.full.reader_key, meta)
        self.transactions.append(tx)
        self.full.add_transaction(tx)
        self.net.broadcast(self.node_id, "tx", tx, tx.wire_size(s.location_only_broadcast))

    def tick(self) -> None:
        s = self.net.scenario
        txs = self.full.minable()[: s.b_max]
        if txs:
            try:
                result = mine(
                    txs, self.full.params, self.node_id, self.keys, self.full.reader_key,
                    self.full.directory, self.full.tip, self.full.tip_heads(), int(round(self.now * 1000)),
                )
            except MiningError as exc:
                log.debug("%s: block production failed: %s", self.node_id, exc)
            else:
                self.publish(result)
        self.net.queue.schedule(s.trusted_interval_s, self.node_id, self.tick)


@dataclass
class RunOutput:
    scenario: Scenario
    metrics: dict
    actors: dict[str, Participant]
    directory: StorageDirectory
    videos: dict[str, list[codec.Gop]]
    reader_key: bytes
    observer: str
    audit: AuditReport = field(default_factory=AuditReport)

    @property
    def canonical(self) -> list[Block]:
        return self.actors[self.observer].full.chain.branch()

    def block_rows(self) -> list[dict]:
        obs = self.actors[self.observer]
        rows = []
        for b in self.canonical[1:]:
            rows.append(
                {
                    "height": b.height,
                    "hash": b.hash.hex(),
                    "miner": b.miner_id,
                    "mined_at_s": b.timestamp_ms / 1000.0,
                    "committed_at_s": obs.commit_times.get(bytes(b.hash), float("nan")),
                    "gops": len(b.subblocks),
                    "frames": b.frame_count,
                    "raw_bytes": b.raw_size,
                    "stored_bytes": sum(sb.storage.size for sb in b.subblocks),
                    "mean_quantizer": sum(sb.codec.quantizer for sb in b.subblocks) / len(b.subblocks),
                }
            )
        return rows


def build_keys(scenario: Scenario):
    seed = scenario.rng_seed
    reader_key = derive_seed("reader", seed)
    content_keys = {f"video-{i}": derive_seed("content", seed, i) for i in range(scenario.n_initiators)}
    return reader_key, content_keys


def build_videos(scenario: Scenario) -> dict[str, list[codec.Gop]]:
    s = scenario
    videos = {}
    for i in range(s.n_initiators):
        videos[f"video-{i}"] = codec.generate_synthetic_video(
            s.frame_width, s.frame_height, s.n_gops_per_video(), s.gop_size,
            _seed_int(s.rng_seed, "video", i), motion=s.motion, noise=s.noise,
            frame_interval_ms=s.frame_interval_ms,
        )
    return videos


def capacity_warnings(s: Scenario) -> list[str]:
    feed = s.n_initiators * s.feed_rate_gops_per_s
    block_work = s.b_max * s.mean_gop_work_s
    if s.mode == "private_trusted":
        capacity = s.b_max / s.trusted_interval_s
    elif block_work <= 0:
        capacity = math.inf
    elif s.mode == "sharded":
        capacity = s.n_miners * s.b_max / block_work
    else:
        capacity = s.b_max / block_work
    if feed > 10 * capacity:
        return [f"feed-exceeds-capacity: {feed:.3g} GOP/s offered, about {capacity:.3g} GOP/s minable"]
    return []


def run(scenario: Scenario) -> RunOutput:
    s = scenario
    queue = EventQueue()
    net = Network(s, queue)
    reader_key, content_keys = build_keys(s)
    videos = build_videos(s)

    ledger = CreditLedger()
    nodes = [StorageNode(f"storage-{i}", s.storage_capacity_bytes, s.chunk_size) for i in range(s.n_storage)]
    directory = StorageDirectory(nodes, ledger)
    params = MiningParams(s.b_max, tuple(s.quantizers), s.threshold_db, s.challenge_k)

    def full_node(node_id: str) -> FullNode:
        return FullNode(node_id, reader_key, directory, params, s.eviction_depth, ledger,
                        derive_seed("verify", s.rng_seed, node_id))

    miner_ids = [f"miner-{i}" for i in range(s.n_miners)]
    for i, vid in enumerate(sorted(videos)):
        nid = f"initiator-{i}"
        producer = s.mode == "private_trusted" and i == 0
        if producer:
            ledger.grant(nid, s.initial_credits)
        net.actors[nid] = Initiator(
            nid, net, full_node(nid), KeyPair.derive("initiator", s.rng_seed, i), vid, videos[vid],
            content_keys[vid], producer,
        )
    for i, mid in enumerate(miner_ids):
        keys = KeyPair.derive("miner", s.rng_seed, i)
        work_rng = random.Random(_seed_int(s.rng_seed, "work", mid))
        if s.mode == "public_pows":
            actor = Miner(mid, net, full_node(mid), keys, work_rng)
        elif s.mode == "sharded":
            actor = ShardMiner(mid, net, full_node(mid), keys, work_rng, miner_ids=miner_ids)
        else:
            actor = Participant(mid, net, full_node(mid))
        if s.mode != "private_trusted":
            ledger.grant(mid, s.initial_credits)
        net.actors[mid] = actor
    for i in range(s.n_verifiers):
        vid = f"verifier-{i}"
        net.actors[vid] = Participant(vid, net, full_node(vid))
    observer = "verifier-0"

    auditor = TravelingAuditor({n.node_id: n for n in nodes}, ledger, s.audit_samples, s.challenge_k, s.holding_rate)
    audit = AuditReport()
    if s.audit_interval_s > 0:

        def audit_tick(round_no: int) -> None:
            targets = audit_targets(net.actors[observer].full.chain.branch())
            if targets:
                audit.merge(auditor.audit_round(targets, _seed_int(s.rng_seed, "audit", round_no)))
            queue.schedule(s.audit_interval_s, "auditor", audit_tick, round_no + 1)

        queue.schedule(s.audit_interval_s, "auditor", audit_tick, 0)

    for actor in net.actors.values():
        if isinstance(actor, Initiator):
            actor.start()
    queue.run(s.duration_s)

    out = RunOutput(s, {}, net.actors, directory, videos, reader_key, observer, audit)
    out.metrics = collect_metrics(out, net, queue)
    return out


def collect_metrics(out: RunOutput, net: Network, queue: EventQueue) -> dict:
    s = out.scenario
    obs = out.actors[out.observer]
    chain = obs.full.chain
    canonical = chain.branch()
    window = s.duration_s - s.warmup_s

    frames_total = sum(b.frame_count for b in canonical)
    frames_window = sum(
        b.frame_count
        for b in canonical[1:]
        if s.warmup_s <= obs.commit_times.get(bytes(b.hash), -1.0) <= s.duration_s
    )
    by_height: dict[int, int] = {}
    for b in chain.blocks.values():
        by_height[b.height] = by_height.get(b.height, 0) + 1
    fork_count = sum(1 for n in by_height.values() if n > 1)

    canon_hashes = {bytes(b.hash) for b in canonical}
    mined = [h for a in out.actors.values() for h in a.mined]
    branches = {nid: [bytes(b.hash) for b in a.full.chain.branch()] for nid, a in out.actors.items()}
    prefix = 0
    shortest = min(len(b) for b in branches.values())
    for h in range(shortest):
        if len({b[h] for b in branches.values()}) == 1:
            prefix = h
        else:
            break

    rejections: dict[str, int] = {}
    for a in out.actors.values():
        for k, v in a.full.rejections.items():
            rejections[k] = rejections.get(k, 0) + v

    commit = [obs.commit_times[bytes(b.hash)] for b in canonical[1:] if bytes(b.hash) in obs.commit_times]
    intervals = [b - a for a, b in zip(commit, commit[1:])]
    raw_bytes = sum(sb.raw_size for b in canonical for sb in b.subblocks)
    stored_bytes = sum(sb.storage.size for b in canonical for sb in b.subblocks)
    quantizers = [sb.codec.quantizer for b in canonical for sb in b.subblocks]

    return {
        "schema_version": 1,
        "mode": s.mode,
        "rng_seed": s.rng_seed,
        "duration_s": s.duration_s,
        "warmup_s": s.warmup_s,
        "theoretical_pps": theoretical_pps(s.gop_size, s.b_max, s.block_interval_s),
        "committed_frames": frames_total,
        "committed_pps": frames_total / s.duration_s,
        "committed_pps_after_warmup": frames_window / window,
        "canonical_height": canonical[-1].height,
        "blocks_mined": len(mined),
        "stale_blocks_mined": sum(1 for h in mined if h not in canon_hashes),
        "fork_count": fork_count,
        "orphaned_blocks": len(chain.blocks) - len(canonical),
        "mean_block_interval_s": sum(intervals) / len(intervals) if intervals else None,
        "rejected_blocks": dict(sorted(rejections.items())),
        "deferred_blocks": sum(len(a.full.deferred) for a in out.actors.values()),
        "bytes_broadcast": net.bytes_broadcast,
        "bytes_by_kind": dict(sorted(net.bytes_by_kind.items())),
        "bytes_downloaded": net.bytes_downloaded,
        "messages": net.messages,
        "raw_bytes": raw_bytes,
        "stored_ciphertext_bytes": stored_bytes,
        "compression_ratio": raw_bytes / stored_bytes if stored_bytes else None,
        "mean_quantizer": sum(quantizers) / len(quantizers) if quantizers else None,
        "credits": dict(sorted(out.directory.ledger.balances.items())),
        "audit_checks": len(out.audit.entries),
        "audit_failures": out.audit.failures,
        "audit_flagged_nodes": sorted(out.audit.flagged_nodes),
        "common_prefix_height": prefix,
        "tip_heights": {nid: len(b) - 1 for nid, b in sorted(branches.items())},
        "tip_hashes": {nid: b[-1].hex() for nid, b in sorted(branches.items())},
        "events_processed": queue.processed,
        "warnings": capacity_warnings(s),
    }
