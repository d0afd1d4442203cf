"""Recompute the committed golden values.  Run only when the codec changes on purpose:

    python3 tests/golden/regenerate.py > tests/golden/golden.json
"""

from __future__ import annotations

import json

from compress_store import codec
from compress_store.consensus import QUANTIZER_LADDER, chain_link_digests, select_encoding
from compress_store.crypto import hash_bytes

GOLDEN_SIZE = 64
GOLDEN_GOP = 25
GOLDEN_SEED = 1
SWEEP_GOPS = 4
SWEEP_THRESHOLD = 35.0


def golden_video(n_gops=1):
    return codec.generate_synthetic_video(GOLDEN_SIZE, GOLDEN_SIZE, n_gops, GOLDEN_GOP, GOLDEN_SEED)


def compute() -> dict:
    gop = golden_video()[0]
    per_q = {}
    for q in (1, 2, 4, 8, 16, 32, 64):
        c = codec.encode_gop(gop, q)
        rep = codec.quality_of(gop, c, 30.0)
        per_q[str(q)] = {
            "size": c.size,
            "psnr_db": None if rep.mean_psnr_db == float("inf") else round(rep.mean_psnr_db, 9),
            "payload_digest": hash_bytes(b"".join(c.payloads)).hex(),
        }
    sweep = []
    prev = None
    for g in golden_video(SWEEP_GOPS):
        enc = select_encoding(g, QUANTIZER_LADDER, SWEEP_THRESHOLD, *chain_link_digests(prev))
        prev = enc.compressed
        sweep.append({
            "gop": g.index,
            "quantizer": enc.compressed.quantizer,
            "size": enc.compressed.size,
            "psnr_db": round(enc.report.mean_psnr_db, 9),
            "sizes": {str(q): s for q, s in sorted(enc.sizes.items())},
        })
    return {
        "video": {"width": GOLDEN_SIZE, "height": GOLDEN_SIZE, "gop_size": GOLDEN_GOP, "seed": GOLDEN_SEED},
        "raw_digest": hash_bytes(b"".join(f.samples for f in gop.frames)).hex(),
        "raw_size": gop.raw_size,
        "per_quantizer": per_q,
        "sweep_threshold_db": SWEEP_THRESHOLD,
        "sweep": sweep,
    }


if __name__ == "__main__":
    print(json.dumps(compute(), indent=2, sort_keys=True))
