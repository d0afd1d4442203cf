"""Scenario configuration, loaded from JSON."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

from ..consensus import QUANTIZER_LADDER

MODES = ("public_pows", "private_trusted", "sharded")
SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Bad scenario file or contradictory settings."""


@dataclass(frozen=True)
class Scenario:
    mode: str = "public_pows"
    n_initiators: int = 1
    n_miners: int = 4
    n_storage: int = 3
    n_verifiers: int = 2

    # network
    latency_min_s: float = 0.05
    latency_max_s: float = 0.5
    location_only_broadcast: bool = False

    # chain
    b_max: int = 5
    block_interval_s: float = 10.0
    trusted_interval_s: float = 2.0
    threshold_db: float = 35.0
    quantizers: tuple[int, ...] = QUANTIZER_LADDER
    eviction_depth: int = 2

    # video source
    gop_size: int = 25
    frame_width: int = 32
    frame_height: int = 32
    feed_rate_gops_per_s: float = 0.5
    motion: float = 1.0
    noise: int = 2
    sensor_metadata_bytes: int = 16

    # mining work model: seconds per GOP = alpha * pixels + beta * search steps
    work_alpha_s_per_pixel: float = 2.5e-5
    work_beta_s_per_step: float = 0.02
    work_cv: float = 0.5

    # storage
    storage_capacity_bytes: int = 1 << 30
    chunk_size: int = 4096
    challenge_k: int = 16
    initial_credits: int = 1 << 24
    audit_interval_s: float = 0.0
    audit_samples: int = 2
    holding_rate: int = 1

    # run
    duration_s: float = 600.0
    warmup_s: float = 60.0
    rng_seed: int = 1

    def __post_init__(self):
        errs = []
        if self.mode not in MODES:
            errs.append(f"mode must be one of {MODES}")
        for name in ("n_initiators", "n_miners", "n_storage", "n_verifiers", "b_max", "gop_size"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        if self.duration_s <= 0:
            errs.append("duration_s must be > 0")
        if not 0 <= self.warmup_s < self.duration_s:
            errs.append("warmup_s must lie in [0, duration_s)")
        if not 0 <= self.latency_min_s <= self.latency_max_s:
            errs.append("need 0 <= latency_min_s <= latency_max_s")
        if self.feed_rate_gops_per_s <= 0:
            errs.append("feed_rate_gops_per_s must be > 0")
        if self.block_interval_s <= 0 or self.trusted_interval_s <= 0:
            errs.append("block intervals must be > 0")
        if not math.isfinite(self.threshold_db):
            errs.append("threshold_db must be finite")
        if not self.quantizers or min(self.quantizers) < 1:
            errs.append("quantizers must be integers >= 1")
        if self.frame_width < 8 or self.frame_height < 8:
            errs.append("frames must be at least 8x8")
        if self.gop_size < 2:
            errs.append("gop_size must be >= 2")
        if self.work_cv < 0 or self.work_alpha_s_per_pixel < 0 or self.work_beta_s_per_step < 0:
            errs.append("work model parameters must be non-negative")
        if self.chunk_size < 1 or self.challenge_k < 1:
            errs.append("chunk_size and challenge_k must be >= 1")
        if self.eviction_depth < 0:
            errs.append("eviction_depth must be >= 0")
        if not 0 <= self.sensor_metadata_bytes <= 256:
            errs.append("sensor_metadata_bytes must lie in [0, 256]")
        if errs:
            raise ScenarioError("; ".join(errs))

    # -- derived --------------------------------------------------------------

    @property
    def gop_pixels(self) -> int:
        return self.gop_size * self.frame_width * self.frame_height

    @property
    def mean_gop_work_s(self) -> float:
        return self.work_alpha_s_per_pixel * self.gop_pixels + self.work_beta_s_per_step * len(
            set(self.quantizers)
        )

    @property
    def frame_interval_ms(self) -> int:
        return max(1, round(1000.0 / (self.feed_rate_gops_per_s * self.gop_size)))

    def n_gops_per_video(self) -> int:
        return int(math.floor(self.duration_s * self.feed_rate_gops_per_s)) + 1

    # -- (de)serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["quantizers"] = list(self.quantizers)
        return {"schema_version": SCHEMA_VERSION, **d}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        if not isinstance(raw, dict):
            raise ScenarioError("scenario must be a JSON object")
        raw = dict(raw)
        version = raw.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported schema_version {version}")
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {', '.join(unknown)}")
        kwargs = {}
        for name, value in raw.items():
            default = known[name].default
            if name == "quantizers":
                if not isinstance(value, list) or not all(isinstance(q, int) for q in value):
                    raise ScenarioError("quantizers must be a list of integers")
                value = tuple(value)
            elif isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ScenarioError(f"{name} must be a boolean")
            elif isinstance(default, int):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ScenarioError(f"{name} must be an integer")
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ScenarioError(f"{name} must be a number")
                value = float(value)
            elif isinstance(default, str) and not isinstance(value, str):
                raise ScenarioError(f"{name} must be a string")
            kwargs[name] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        except OSError as exc:
            raise ScenarioError(f"{path}: {exc.strerror}") from exc
        return cls.from_dict(raw)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)
