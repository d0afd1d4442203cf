"""Acceptance checks.  Each prints one PASS/FAIL line (also collected in the terminal summary)."""

from __future__ import annotations

import json
import math
import random
import statistics
import subprocess
import sys
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from compress_store import codec
from compress_store.cli import main as cli_main
from compress_store.merkle import build_tree, prove, verify_proof
from compress_store.sim import Scenario, run, theoretical_pps
from compress_store.sim.tamper import TamperSpec, tamper_experiment
from compress_store.storage import StorageNode, chunk_tree, make_challenge, pass_probability, verify_storage_proof

from helpers import criterion
from mutation_suite import run_suite
from test_merkle import leaves_for, ref_path, ref_root

GOLDEN = json.loads((Path(__file__).parent / "golden" / "golden.json").read_text())

# a fast public-race world: tiny frames, mining cost dominated by the per-step term
SMALL = Scenario(
    duration_s=120, warmup_s=10, frame_width=8, frame_height=8, gop_size=5,
    work_alpha_s_per_pixel=2e-3, rng_seed=3,
)


# -- throughput -------------------------------------------------------------


def test_pps_formula(capsys):
    assert cli_main(["pps", "25", "5", "10"]) == 0
    out = capsys.readouterr().out.strip()
    criterion("pps 25 5 10", float(out) == 12.5 == theoretical_pps(25, 5, 10), f"printed {out}")


def test_public_sim_throughput():
    s = Scenario(duration_s=600.0, warmup_s=60.0)
    assert theoretical_pps(s.gop_size, s.b_max, s.block_interval_s) == 12.5
    t0 = time.perf_counter()
    m = run(s).metrics
    wall = time.perf_counter() - t0
    pps = m["committed_pps_after_warmup"]
    ok = 11.25 <= pps <= 13.75 and wall < 60.0
    criterion("public committed_pps", ok,
              f"{pps:.3f} frames/s in [11.25, 13.75], wall {wall:.1f}s < 60s, forks {m['fork_count']}")


# -- validation -------------------------------------------------------------


def test_honest_blocks_never_rejected():
    base = SMALL.replace(duration_s=60.0, warmup_s=5.0)
    rejected = Counter()
    blocks = 0
    for seed in range(100):
        m = run(base.replace(rng_seed=seed)).metrics
        rejected.update(m["rejected_blocks"])
        blocks += m["blocks_mined"]
    criterion("honest acceptance", not rejected and blocks > 0,
              f"100 seeded runs, {blocks} honest blocks mined, rejections {dict(rejected) or 0}")


def test_mutation_suite():
    outcomes = run_suite()
    wrong = [o for o in outcomes if not o.ok]
    by_reason = Counter(o.reason.value for o in outcomes if o.reason)
    ok = len(outcomes) >= 200 and not wrong
    criterion("mutation suite", ok,
              f"{len(outcomes) - len(wrong)}/{len(outcomes)} rejected with the expected code {dict(by_reason)}"
              + (f"; first miss {wrong[0].case.name} -> {wrong[0].status}/{wrong[0].reason}" if wrong else ""))


# -- storage proofs ---------------------------------------------------------


def test_monte_carlo_pass_rate():
    n, m, k, trials = 10, 2, 3, 100_000
    rng = random.Random(20240)
    data = rng.randbytes(16 * n)
    node = StorageNode("mc", 1 << 20, chunk_size=16)
    address = node.store(data).digest
    root = chunk_tree(data, 16).root
    node.drop_chunks(address, rng.sample(range(n), m))
    passed = 0
    for _ in range(trials):
        ch = make_challenge(address, n, k, rng.getrandbits(64))
        passed += verify_storage_proof(root, ch, node.respond(ch), n)
    rate = passed / trials
    criterion("Monte Carlo n=10 m=2 k=3", abs(rate - 7 / 15) <= 0.02,
              f"pass rate {rate:.4f} vs 7/15 = {7 / 15:.4f} (tolerance 0.02)")


def test_detection_bound():
    k = 16
    # without replacement never beats with replacement: pass <= (1 - m/n)^k <= 0.95^16
    analytic = 1 - 0.95**k
    worst = (None, 1.0)
    for n in list(range(64, 2049)) + [4096, 10_000, 100_000]:
        m = math.ceil(0.05 * n)
        detect = 1 - Fraction(math.comb(n - m, k), math.comb(n, k))
        assert float(detect) == pytest.approx(1 - pass_probability(n, m, k), abs=1e-12)
        if detect < worst[1]:
            worst = (n, detect)
    ok = analytic >= 0.55 and worst[1] >= Fraction(55, 100)
    criterion("detection k=16 m/n>=0.05", ok,
              f"min exact detection {float(worst[1]):.4f} at n={worst[0]}, analytic floor {analytic:.4f} >= 0.55")


# -- tamper evidence --------------------------------------------------------


@pytest.fixture(scope="module")
def two_video_runs():
    return [run(SMALL.replace(n_initiators=2, rng_seed=seed)) for seed in (3, 4, 5)]


def test_untampered_zero_false_flags(two_video_runs):
    flags = checked = 0
    for out in two_video_runs:
        rep = tamper_experiment(out.canonical, out.directory, out.reader_key, TamperSpec(), out.scenario.b_max)
        flags += len(rep.flags)
        checked += rep.checked
    criterion("untampered", flags == 0 and checked > 0, f"{checked} subblocks re-verified, {flags} flags")


def test_byte_flip_flags_subblock(two_video_runs):
    rng = random.Random(4)
    trials = misses = 0
    for out in two_video_runs:
        subs = [(b.height, i, sb) for b in out.canonical for i, sb in enumerate(b.subblocks)]
        for h, i, sb in rng.sample(subs, 10):
            spec = TamperSpec("flip-byte", address=sb.storage.address.hex(),
                              offset=rng.randrange(sb.storage.size), mask=1 << rng.randrange(8))
            rep = tamper_experiment(out.canonical, out.directory, out.reader_key, spec, out.scenario.b_max)
            trials += 1
            misses += (h, i) not in rep.flagged_positions or rep.flagged_keys != {sb.key}
    criterion("byte flip", misses == 0,
              f"{trials - misses}/{trials} flips flagged exactly the tampered subblock")


def test_replace_gop_flags_later_gops(two_video_runs):
    trials = misses = 0
    for out in two_video_runs:
        keys = [sb.key for b in out.canonical for sb in b.subblocks]
        for vid in ("video-0", "video-1"):
            top = max(k[1] for k in keys if k[0] == vid)
            for g in (0, top // 2, top):
                for rechain in (False, True):
                    spec = TamperSpec("replace-gop", video_id=vid, gop_index=g, rechain=rechain)
                    rep = tamper_experiment(out.canonical, out.directory, out.reader_key, spec, out.scenario.b_max)
                    want = {k for k in keys if k[0] == vid and k[1] >= g}
                    trials += 1
                    misses += rep.flagged_keys != want
    criterion("replace GOP", misses == 0,
              f"{trials - misses}/{trials} replacements flagged exactly that GOP and every later GOP of its video")


# -- codec ------------------------------------------------------------------


def _lossless_corpus(count: int):
    rng = np.random.default_rng(5)
    out = []
    seed = 0
    while len(out) < count:
        seed += 1
        w, h = int(rng.integers(8, 25)), int(rng.integers(8, 25))
        size = int(rng.integers(2, 7))
        if seed % 4 == 0:
            # white noise: the hardest case for the residual coder
            frames = tuple(codec.Frame.from_array(rng.integers(0, 256, (h, w), dtype=np.uint8)) for _ in range(size))
            out.append(codec.Gop(frames, 0, 0))
        else:
            out.extend(codec.generate_synthetic_video(w, h, 5, size, seed, noise=int(rng.integers(0, 6))))
    return out[:count]


def test_lossless_round_trip():
    gops = _lossless_corpus(1000)
    bad = 0
    for g in gops:
        c = codec.encode_gop(g, 1, bytes(range(32)), bytes(32))
        bad += not np.array_equal(codec.decode_frames(c), g.stack())
    criterion("q=1 round trip", bad == 0 and len(gops) == 1000, f"{1000 - bad}/1000 GOPs bit-exact")


def test_golden_quality_and_ratio():
    gop = codec.generate_synthetic_video(64, 64, 1, 25, 1)[0]
    c = codec.encode_gop(gop, 8)
    rep = codec.quality_of(gop, c, 30.0)
    ratio = gop.raw_size / c.size
    golden = GOLDEN["per_quantizer"]["8"]
    ok = rep.mean_psnr_db >= 30.0 and ratio > 1.0 and c.size == golden["size"]
    criterion("golden q=8", ok,
              f"PSNR {rep.mean_psnr_db:.2f} dB >= 30, ratio {ratio:.3f} > 1, size {c.size} matches golden")


# -- merkle -----------------------------------------------------------------


def test_merkle_matches_reference():
    mismatches = proofs = 0
    for n in range(1, 34):
        leaves = leaves_for(n, seed=6)
        tree = build_tree(leaves)
        mismatches += tree.root != ref_root(leaves)
        for i in range(n):
            p = prove(tree, i)
            proofs += 1
            mismatches += [(bytes(s.digest), s.side) for s in p.siblings] != ref_path(leaves, i)
            mismatches += not verify_proof(tree.root, leaves[i], p, n)
    criterion("merkle 1..33", mismatches == 0, f"33 roots and {proofs} proofs byte-identical to the reference")


# -- determinism ------------------------------------------------------------


def test_cli_run_is_byte_identical(tmp_path):
    args = ["--seed", "11", "--duration", "90", "--set", "warmup_s=5", "--set", "frame_width=8",
            "--set", "frame_height=8", "--set", "gop_size=5", "--set", "work_alpha_s_per_pixel=0.002"]
    for name in ("a", "b"):
        subprocess.run([sys.executable, "-m", "compress_store", "run", *args, "--out", str(tmp_path / name)],
                       check=True, capture_output=True)
    files = ("metrics.json", "metrics.csv", "blocks.csv", "chain.bin")
    same = [f for f in files if (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
    criterion("run --seed determinism", len(same) == len(files), f"identical: {', '.join(same)}")


# -- work-time variance vs forks --------------------------------------------


def test_variance_does_not_increase_forks():
    cvs = (0.1, 0.5, 1.0)
    means = []
    for cv in cvs:
        forks = [run(SMALL.replace(work_cv=cv, rng_seed=seed)).metrics["fork_count"] for seed in range(30)]
        means.append(statistics.fmean(forks))
    ok = all(b <= a for a, b in zip(means, means[1:]))
    detail = ", ".join(f"cv {cv}: {m:.2f}" for cv, m in zip(cvs, means))
    criterion("forks vs work variance", ok, f"mean forks over 30 seeds at fixed mean work: {detail}")
