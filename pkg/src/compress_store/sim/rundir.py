"""Run directory: everything needed to re-verify a finished run offline.

    scenario.json            the exact scenario (schema_version 1)
    metrics.json, metrics.csv
    blocks.csv               one row per canonical block (for external plotting)
    chain.bin                canonical branch as a length-prefixed block stream
    storage/<node>/<address>.bin
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

from ..consensus import StorageDirectory
from ..ledger import Block, dump_blocks, load_blocks
from ..storage import CreditLedger, StorageNode, StoredObject
from .network import RunOutput, build_keys
from .scenario import Scenario

BLOCK_COLUMNS = (
    "height", "hash", "miner", "mined_at_s", "committed_at_s", "gops", "frames",
    "raw_bytes", "stored_bytes", "mean_quantizer",
)


def metrics_json(metrics: dict) -> str:
    return json.dumps(metrics, indent=2, sort_keys=True) + "\n"


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, object]]:
    rows = []
    for k in sorted(d):
        v = d[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            rows.extend(_flatten(v, key + "."))
        elif isinstance(v, list):
            rows.append((key, ";".join(str(x) for x in v)))
        else:
            rows.append((key, "" if v is None else v))
    return rows


def metrics_csv(metrics: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    w.writerows(_flatten(metrics))
    return buf.getvalue()


def blocks_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BLOCK_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def save_run(out: RunOutput, path: str | Path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "scenario.json").write_text(out.scenario.to_json())
    (root / "metrics.json").write_text(metrics_json(out.metrics))
    (root / "metrics.csv").write_text(metrics_csv(out.metrics))
    (root / "blocks.csv").write_text(blocks_csv(out.block_rows()))
    (root / "chain.bin").write_bytes(dump_blocks(out.canonical))
    for node_id, node in sorted(out.directory.nodes.items()):
        d = root / "storage" / node_id
        d.mkdir(parents=True, exist_ok=True)
        for old in d.glob("*.bin"):
            old.unlink()
        for address, obj in sorted(node.objects.items()):
            if obj.complete:
                (d / f"{address.hex()}.bin").write_bytes(obj.data())
    return root


@dataclass
class LoadedRun:
    path: Path
    scenario: Scenario
    metrics: dict
    blocks: list[Block]
    directory: StorageDirectory
    reader_key: bytes


def load_run(path: str | Path) -> LoadedRun:
    root = Path(path)
    if not (root / "chain.bin").is_file():
        raise FileNotFoundError(f"{root} is not a run directory (no chain.bin)")
    scenario = Scenario.load(root / "scenario.json")
    metrics_path = root / "metrics.json"
    metrics = json.loads(metrics_path.read_text()) if metrics_path.is_file() else {}
    blocks = load_blocks((root / "chain.bin").read_bytes())
    nodes = []
    storage = root / "storage"
    for d in sorted(p for p in storage.iterdir() if p.is_dir()) if storage.is_dir() else []:
        node = StorageNode(d.name, scenario.storage_capacity_bytes, scenario.chunk_size)
        for f in sorted(d.glob("*.bin")):
            # keyed by the file name, so a tampered copy stays tampered
            data = f.read_bytes()
            node.objects[bytes.fromhex(f.stem)] = StoredObject.from_bytes(data, scenario.chunk_size)
            node.used += len(data)
        nodes.append(node)
    reader_key, _ = build_keys(scenario)
    return LoadedRun(root, scenario, metrics, blocks, StorageDirectory(nodes, CreditLedger()), reader_key)
