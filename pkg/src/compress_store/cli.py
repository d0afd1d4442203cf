"""Command line entry point.

Exit codes: 0 success, 2 bad arguments or scenario file, 3 protocol
violation at run time (rejected honest block, failed audit, unreadable
chain dump).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import random
import sys
from pathlib import Path

from . import __version__, codec
from .consensus import QUANTIZER_LADDER, select_encoding
from .ledger import audit_targets
from .sim.network import run, theoretical_pps
from .sim.rundir import load_run, save_run
from .sim.scenario import Scenario, ScenarioError
from .sim.tamper import SUBBLOCK_FIELDS, TamperError, TamperSpec, scan_chain, tamper_experiment
from .storage import TravelingAuditor
from .wire import DecodingError, encode

EXIT_USAGE = 2
EXIT_PROTOCOL = 3
OUT_ENV = "COMPRESS_STORE_OUT"

log = logging.getLogger("compress_store")


class UsageError(Exception):
    pass


class ProtocolViolation(Exception):
    pass


def jsonable(obj):
    """Dataclasses to dicts, bytes to hex, non-finite floats to strings."""
    if dataclasses.is_dataclass(obj):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (bytes, bytearray)):
        return bytes(obj).hex()
    if isinstance(obj, (list, tuple)):
        return [jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _print_json(obj) -> None:
    print(json.dumps(jsonable(obj), indent=2, sort_keys=True))


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "out")


# -- subcommands --------------------------------------------------------------


def cmd_pps(args) -> int:
    gop = args.gop if args.gop is not None else args.gop_pos
    per_block = args.gops_per_block if args.gops_per_block is not None else args.per_block_pos
    interval = args.interval if args.interval is not None else args.interval_pos
    if None in (gop, per_block, interval):
        raise UsageError("pps needs GOP size, GOPs per block and block interval")
    try:
        print(theoretical_pps(gop, per_block, interval))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return 0


def cmd_gen_video(args) -> int:
    try:
        gops = codec.generate_synthetic_video(
            args.width, args.height, args.gops, args.gop_size, args.seed,
            motion=args.motion, noise=args.noise,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    summary = {"seed": args.seed, "width": args.width, "height": args.height, "gops": args.gops,
               "gop_size": args.gop_size, "statistics": codec.video_statistics(gops)}
    if args.threshold is not None:
        enc = [select_encoding(g, QUANTIZER_LADDER, args.threshold) for g in gops]
        summary["encoding"] = [
            {"gop": g.index, "quantizer": e.compressed.quantizer, "bytes": e.compressed.size,
             "ratio": g.raw_size / e.compressed.size, "psnr_db": e.report.mean_psnr_db}
            for g, e in zip(gops, enc)
        ]
    if args.out:
        Path(args.out).write_bytes(encode(list(gops)))
        summary["written"] = args.out
    _print_json(summary)
    return 0


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise UsageError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_scenario(args) -> Scenario:
    raw = {}
    if args.scenario:
        try:
            raw = json.loads(Path(args.scenario).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(
                f"{args.scenario}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
        except OSError as exc:
            raise ScenarioError(f"{args.scenario}: {exc.strerror}") from exc
        if not isinstance(raw, dict):
            raise ScenarioError(f"{args.scenario}: scenario must be a JSON object")
    for item in args.set or ():
        k, v = _parse_override(item)
        raw[k] = v
    if args.mode:
        raw["mode"] = args.mode
    if args.duration is not None:
        raw["duration_s"] = args.duration
    if args.seed is not None:
        raw["rng_seed"] = args.seed
    return Scenario.from_dict(raw)


def cmd_run(args) -> int:
    scenario = load_scenario(args)
    out = run(scenario)
    path = save_run(out, args.out or _default_out())
    m = out.metrics
    summary = {k: m[k] for k in (
        "mode", "rng_seed", "committed_pps", "committed_pps_after_warmup", "theoretical_pps",
        "canonical_height", "fork_count", "orphaned_blocks", "bytes_broadcast", "raw_bytes",
        "stored_ciphertext_bytes", "audit_failures", "rejected_blocks", "warnings",
    )}
    summary["out"] = str(path)
    _print_json(summary)
    for w in m["warnings"]:
        log.warning(w)
    if m["rejected_blocks"]:
        raise ProtocolViolation(f"honest blocks rejected: {m['rejected_blocks']}")
    return 0


def _load(path: str):
    try:
        return load_run(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    except DecodingError as exc:
        raise ProtocolViolation(f"chain dump unreadable: {exc}") from exc


def cmd_inspect(args) -> int:
    loaded = _load(args.run)
    blocks = loaded.blocks
    if args.height is not None:
        match = [b for b in blocks if b.height == args.height]
        if not match:
            raise UsageError(f"no block at height {args.height}")
        b = match[0]
        _print_json({"hash": b.hash, **jsonable(b)})
        return 0
    rows = []
    for b in blocks:
        rows.append({
            "height": b.height,
            "hash": b.hash,
            "prev": b.prev_block_hash,
            "miner": b.miner_id,
            "timestamp_ms": b.timestamp_ms,
            "gops": [f"{sb.header.video_id}#{sb.header.gop_index}" for sb in b.subblocks],
            "quantizers": [sb.codec.quantizer for sb in b.subblocks],
            "psnr_db": [sb.quality.mean_psnr_db for sb in b.subblocks],
            "addresses": [sb.storage.address for sb in b.subblocks],
        })
    _print_json({"schema_version": 1, "blocks": len(blocks), "tip": blocks[-1].hash if blocks else None,
                 "chain": rows})
    return 0


def _tamper_spec(args) -> TamperSpec:
    chosen = [x for x in (args.flip_byte, args.replace_gop, args.field) if x]
    if len(chosen) > 1:
        raise UsageError("choose one of --flip-byte, --replace-gop, --field")
    try:
        if args.flip_byte:
            addr, _, off = args.flip_byte.partition(":")
            return TamperSpec("flip-byte", address=addr, offset=int(off or 0), mask=args.mask)
        if args.replace_gop:
            vid, _, idx = args.replace_gop.rpartition(":")
            return TamperSpec("replace-gop", video_id=vid or "video-0", gop_index=int(idx), rechain=args.rechain)
        if args.field:
            h, i, name = args.field.split(":")
            return TamperSpec("subblock-field", height=int(h), index=int(i), field_name=name)
    except ValueError as exc:
        raise UsageError(f"bad tamper target: {exc}") from exc
    return TamperSpec("none")


def cmd_tamper(args) -> int:
    loaded = _load(args.run)
    spec = _tamper_spec(args)
    try:
        report = tamper_experiment(loaded.blocks, loaded.directory, loaded.reader_key, spec, loaded.scenario.b_max)
    except TamperError as exc:
        raise UsageError(str(exc)) from exc
    _print_json(report.to_dict())
    return 0


def cmd_audit(args) -> int:
    loaded = _load(args.run)
    directory = loaded.directory
    if args.drop_fraction:
        rng = random.Random(args.seed)
        node = directory.get(args.node)
        if node is None:
            raise UsageError(f"unknown storage node {args.node}")
        for address, obj in sorted(node.objects.items()):
            n = len(obj.chunks)
            node.drop_chunks(address, rng.sample(range(n), max(1, round(args.drop_fraction * n))))
    targets = audit_targets(loaded.blocks)
    if not targets:
        raise UsageError("chain has no subblocks to audit")
    auditor = TravelingAuditor(directory.nodes, directory.ledger, args.samples, args.k, holding_rate=1)
    report = None
    for r in range(args.rounds):
        rr = auditor.audit_round(targets, f"{args.seed}:{r}")
        if report is None:
            report = rr
        else:
            report.merge(rr)
    result = {"schema_version": 1, "rounds": args.rounds, "targets": len(targets), **report.to_dict()}
    if args.scan:
        result["scan"] = scan_chain(loaded.blocks, directory, loaded.reader_key, loaded.scenario.b_max).to_dict()
    _print_json(result)
    if report.failures or (args.scan and not result["scan"]["clean"]):
        raise ProtocolViolation(f"audit found {report.failures} failing challenge(s)")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compress-store", description="Compress-and-store blockchain simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pps", help="theoretical committed frames per second")
    s.add_argument("gop_pos", nargs="?", type=float, metavar="GOP")
    s.add_argument("per_block_pos", nargs="?", type=float, metavar="GOPS_PER_BLOCK")
    s.add_argument("interval_pos", nargs="?", type=float, metavar="INTERVAL_S")
    s.add_argument("--gop", type=float)
    s.add_argument("--gops-per-block", type=float)
    s.add_argument("--interval", type=float)
    s.set_defaults(func=cmd_pps)

    s = sub.add_parser("gen-video", help="generate a synthetic video")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--gops", type=int, default=1)
    s.add_argument("--gop-size", type=int, default=25)
    s.add_argument("--motion", type=float, default=1.0)
    s.add_argument("--noise", type=int, default=2)
    s.add_argument("--threshold", type=float, help="also report the mined encoding at this PSNR threshold")
    s.add_argument("--out", help="write the GOPs (canonical encoding) to this file")
    s.set_defaults(func=cmd_gen_video)

    s = sub.add_parser("run", help="run a scenario and write a run directory")
    s.add_argument("--scenario", help="scenario JSON file (defaults apply to missing keys)")
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=("public_pows", "private_trusted", "sharded"))
    s.add_argument("--duration", type=float)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one scenario key")
    s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("inspect-chain", help="render a chain dump as JSON")
    s.add_argument("--run", default=None, help="run directory")
    s.add_argument("--height", type=int)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("tamper", help="tamper with a copy of a run and re-verify it")
    s.add_argument("--run", default=None)
    s.add_argument("--flip-byte", metavar="ADDRESS:OFFSET")
    s.add_argument("--mask", type=int, default=1)
    s.add_argument("--replace-gop", metavar="VIDEO:INDEX")
    s.add_argument("--rechain", action="store_true", help="with --replace-gop: re-chain later GOPs too")
    s.add_argument("--field", metavar="HEIGHT:INDEX:NAME", help=f"NAME one of {', '.join(SUBBLOCK_FIELDS)}")
    s.set_defaults(func=cmd_tamper)

    s = sub.add_parser("audit", help="challenge storage nodes on on-chain objects")
    s.add_argument("--run", default=None)
    s.add_argument("--rounds", type=int, default=10)
    s.add_argument("--samples", type=int, default=4)
    s.add_argument("--k", type=int, default=16)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--node", default="storage-0")
    s.add_argument("--drop-fraction", type=float, default=0.0, help="first drop this share of NODE's chunks")
    s.add_argument("--scan", action="store_true", help="also re-verify the whole chain")
    s.set_defaults(func=cmd_audit)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "run", "x") is None and args.command in ("inspect-chain", "tamper", "audit"):
        args.run = _default_out()
    try:
        return args.func(args)
    except (ScenarioError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProtocolViolation as exc:
        print(f"protocol-violation: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
