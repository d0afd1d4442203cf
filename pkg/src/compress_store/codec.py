"""Toy predictive video coder.

Frames are 8-bit luma grids.  A GOP is coded as one intra frame followed by
P frames, each P frame being the quantized residual against the
*reconstructed* previous frame (closed loop, so encoder and decoder never
drift).  Quantized values are run-length coded into varint tokens.

Payload layout
--------------
I payload::

    chain_prev_i (32 bytes) || chain_prev_last_p (32 bytes) || rle_body

P payload::

    rle_body

``rle_body`` is a stream of unsigned LEB128 varints::

    run_count || token_1 .. token_run_count || escape_1 .. escape_e

with ``token = (run_length - 1) << 4 | min(zigzag(value), 15)``.  Every token
whose low nibble is 15 owns the next escape, ``zigzag(value) - 15``, in
order.  The runs cover exactly ``width * height`` samples in row-major
order.  Intra values are ``round(sample / q)``; P values are
``round((sample - prev_recon) / q)``, rounding half away from zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .crypto import DIGEST_SIZE, ZERO_DIGEST, Digest
from .wire import F64, U32, U64

CHAIN_HEADER_SIZE = 2 * DIGEST_SIZE
ESCAPE = 15
PEAK = 255


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    width: U32
    height: U32
    samples: bytes

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("frame dimensions must be positive")
        if len(self.samples) != self.width * self.height:
            raise ValueError("sample count must equal width*height")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Frame":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError("frame array must be 2-D")
        if arr.min(initial=0) < 0 or arr.max(initial=0) > PEAK:
            raise ValueError("samples must lie in [0, 255]")
        h, w = arr.shape
        return cls(w, h, arr.astype(np.uint8).tobytes())

    def pixels(self) -> np.ndarray:
        return np.frombuffer(self.samples, dtype=np.uint8).reshape(self.height, self.width)


@dataclass(frozen=True)
class Gop:
    frames: tuple[Frame, ...]
    index: U64
    timestamp: U64

    def __post_init__(self):
        if not self.frames:
            raise ValueError("GOP must contain at least one frame")
        w, h = self.frames[0].width, self.frames[0].height
        if any(f.width != w or f.height != h for f in self.frames):
            raise ValueError("all frames in a GOP must share dimensions")

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def raw_size(self) -> int:
        return len(self.frames) * self.width * self.height

    def stack(self) -> np.ndarray:
        return np.stack([f.pixels() for f in self.frames])


@dataclass(frozen=True)
class CompressedGop:
    i_payload: bytes
    p_payloads: tuple[bytes, ...]
    quantizer: U32
    chain_prev_i: Digest
    chain_prev_last_p: Digest
    width: U32
    height: U32
    frame_count: U32

    def __post_init__(self):
        if self.quantizer < 1:
            raise ValueError("quantizer must be >= 1")
        if len(self.p_payloads) != self.frame_count - 1:
            raise ValueError("p_payloads length must be frame_count - 1")
        if self.i_payload[:CHAIN_HEADER_SIZE] != self.chain_prev_i + self.chain_prev_last_p:
            raise ValueError("I payload chain header does not match chain digests")

    @property
    def payloads(self) -> tuple[bytes, ...]:
        return (self.i_payload, *self.p_payloads)

    @property
    def last_payload(self) -> bytes:
        # a GOP without P frames uses its I frame as the "last P"
        return self.p_payloads[-1] if self.p_payloads else self.i_payload

    @property
    def size(self) -> int:
        return sum(len(p) for p in self.payloads)

    @property
    def raw_size(self) -> int:
        return self.frame_count * self.width * self.height


@dataclass(frozen=True)
class QualityReport:
    per_frame_mse: tuple[F64, ...]
    mean_psnr_db: F64
    meets_threshold: bool


# -- synthetic source -------------------------------------------------------


def generate_synthetic_video(
    width: int,
    height: int,
    n_gops: int,
    gop_size: int,
    motion_seed: int,
    *,
    motion: float = 1.0,
    noise: int = 2,
    n_objects: int = 3,
    start_ms: int = 0,
    frame_interval_ms: int = 40,
) -> list[Gop]:
    """Deterministic test video: a drifting gradient with moving squares.

    ``motion`` scales every displacement (0 freezes the scene) and ``noise``
    is the half-width of uniform integer sensor noise added per frame.
    """
    if width <= 0 or height <= 0:
        raise ValueError("frame dimensions must be positive")
    if width < 8 or height < 8:
        raise ValueError("frames must be at least 8x8")
    if gop_size < 2:
        raise ValueError("gop_size must be >= 2")
    if n_gops < 0:
        raise ValueError("n_gops must be >= 0")
    rng = np.random.default_rng(motion_seed)
    side = max(2, min(width, height) // 6)
    pos = rng.uniform(0, [width, height], size=(n_objects, 2))
    vel = rng.uniform(-1.0, 1.0, size=(n_objects, 2)) * motion
    level = rng.integers(150, 240, size=n_objects)
    phase = rng.uniform(0, 2 * np.pi)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    ramp = 30.0 + 90.0 * (xs + ys) / (width + height)

    gops = []
    for g in range(n_gops):
        frames = []
        for k in range(gop_size):
            t = g * gop_size + k
            img = ramp + 25.0 * np.sin(2 * np.pi * (xs - 0.5 * motion * t) / 32.0 + phase)
            for (px, py), (vx, vy), lv in zip(pos, vel, level):
                x0 = int(round(px + vx * t)) % width
                y0 = int(round(py + vy * t)) % height
                rows = (np.arange(side) + y0) % height
                cols = (np.arange(side) + x0) % width
                img[np.ix_(rows, cols)] = lv
            if noise:
                img = img + rng.integers(-noise, noise + 1, size=img.shape)
            frames.append(Frame.from_array(np.clip(np.rint(img), 0, PEAK)))
        gops.append(Gop(tuple(frames), g, start_ms + g * gop_size * frame_interval_ms))
    return gops


def video_statistics(gops: list[Gop]) -> dict:
    """Mean absolute sample value and mean absolute inter-frame delta."""
    frames = np.concatenate([g.stack().astype(np.int16) for g in gops])
    deltas = np.abs(np.diff(frames, axis=0)) if len(frames) > 1 else np.zeros(1)
    return {
        "frames": int(len(frames)),
        "mean_abs_sample": float(np.abs(frames).mean()),
        "mean_abs_delta": float(deltas.mean()),
    }


# -- quality ----------------------------------------------------------------


def mse(a: Frame, b: Frame) -> float:
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("frame dimensions differ")
    d = a.pixels().astype(np.int64) - b.pixels().astype(np.int64)
    return float((d * d).sum()) / (a.width * a.height)


def psnr_db(mse_value: float) -> float:
    if mse_value < 0:
        raise ValueError("mse must be non-negative")
    if mse_value == 0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse_value)


def _report(original: np.ndarray, recon: np.ndarray, threshold_db: float) -> QualityReport:
    d = original.astype(np.int64) - recon.astype(np.int64)
    per_frame = (d * d).reshape(len(d), -1).mean(axis=1)
    per_frame_mse = tuple(float(x) for x in per_frame)
    mean_psnr = psnr_db(float(np.mean(per_frame)))
    return QualityReport(per_frame_mse, mean_psnr, mean_psnr >= threshold_db)


def quality_of(original: Gop, c: CompressedGop, threshold_db: float) -> QualityReport:
    if len(original.frames) != c.frame_count:
        raise ValueError("frame count mismatch")
    if (original.width, original.height) != (c.width, c.height):
        raise ValueError("dimension mismatch")
    return _report(original.stack(), decode_frames(c), threshold_db)


# -- run-length coding ------------------------------------------------------


def _round_div(x: np.ndarray, q: int) -> np.ndarray:
    """round(x / q), halves away from zero, integer exact."""
    return np.sign(x) * ((2 * np.abs(x) + q) // (2 * q))


def _varint_pack(vals: np.ndarray) -> bytes:
    vals = vals.astype(np.uint64)
    nbytes = np.ones(len(vals), dtype=np.int64)
    for j in range(1, 10):
        more = vals >= (np.uint64(1) << np.uint64(7 * j))
        if not more.any():
            break
        nbytes += more
    starts = np.concatenate(([0], np.cumsum(nbytes)[:-1]))
    out = np.empty(int(nbytes.sum()), dtype=np.uint8)
    for j in range(int(nbytes.max(initial=1))):
        sel = nbytes > j
        byte = (vals[sel] >> np.uint64(7 * j)) & np.uint64(0x7F)
        cont = (nbytes[sel] > j + 1).astype(np.uint64) << np.uint64(7)
        out[starts[sel] + j] = (byte | cont).astype(np.uint8)
    return out.tobytes()


def _varint_unpack(data: bytes) -> np.ndarray:
    b = np.frombuffer(data, dtype=np.uint8)
    if len(b) == 0:
        return np.zeros(0, dtype=np.int64)
    last = b < 0x80
    if not last[-1]:
        raise DecodeError("truncated varint")
    ends = np.flatnonzero(last)
    starts = np.concatenate(([0], ends[:-1] + 1))
    lengths = ends - starts + 1
    if lengths.max() > 9:
        raise DecodeError("varint too long")
    group = np.repeat(np.arange(len(starts)), lengths)
    shift = (np.arange(len(b)) - starts[group]) * 7
    contrib = (b & 0x7F).astype(np.int64) << shift
    return np.add.reduceat(contrib, starts)


def rle_encode(values: np.ndarray) -> bytes:
    flat = np.asarray(values, dtype=np.int64).ravel()
    if len(flat) == 0:
        return _varint_pack(np.zeros(1, dtype=np.int64))
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    runs = np.diff(np.concatenate((starts, [len(flat)])))
    vals = flat[starts]
    zz = np.where(vals >= 0, vals * 2, -vals * 2 - 1)
    nibble = np.minimum(zz, ESCAPE)
    tokens = ((runs - 1) << 4) | nibble
    escapes = zz[zz >= ESCAPE] - ESCAPE
    return _varint_pack(np.concatenate(([len(runs)], tokens, escapes)))


def rle_decode(data: bytes, n: int) -> np.ndarray:
    ints = _varint_unpack(data)
    if len(ints) == 0:
        raise DecodeError("empty RLE stream")
    n_runs = int(ints[0])
    if n_runs > len(ints) - 1:
        raise DecodeError("RLE run count exceeds stream length")
    tokens = ints[1 : 1 + n_runs]
    escapes = ints[1 + n_runs :]
    runs = (tokens >> 4) + 1
    zz = tokens & 0xF
    esc = zz == ESCAPE
    if int(esc.sum()) != len(escapes):
        raise DecodeError("escape count does not match escape section")
    zz[esc] += escapes
    if runs.sum() != n:
        raise DecodeError(f"RLE stream covers {int(runs.sum())} samples, expected {n}")
    vals = np.where(zz % 2 == 0, zz // 2, -(zz + 1) // 2)
    return np.repeat(vals, runs)


# -- GOP coding -------------------------------------------------------------


def _encode(
    frames: np.ndarray, quantizer: int, chain_prev_i: bytes, chain_prev_last_p: bytes
) -> tuple[CompressedGop, np.ndarray]:
    q = int(quantizer)
    if q < 1:
        raise ValueError("quantizer must be >= 1")
    n, h, w = frames.shape
    src = frames.astype(np.int64)
    recon = np.empty_like(src)

    iq = _round_div(src[0], q)
    recon[0] = np.minimum(iq * q, PEAK)
    i_payload = bytes(chain_prev_i) + bytes(chain_prev_last_p) + rle_encode(iq)

    p_payloads = []
    for k in range(1, n):
        rq = _round_div(src[k] - recon[k - 1], q)
        recon[k] = np.clip(recon[k - 1] + rq * q, 0, PEAK)
        p_payloads.append(rle_encode(rq))

    c = CompressedGop(
        i_payload=i_payload,
        p_payloads=tuple(p_payloads),
        quantizer=q,
        chain_prev_i=Digest(chain_prev_i),
        chain_prev_last_p=Digest(chain_prev_last_p),
        width=w,
        height=h,
        frame_count=n,
    )
    return c, recon.astype(np.uint8)


def encode_gop(
    gop: Gop,
    quantizer: int,
    chain_prev_i: bytes = ZERO_DIGEST,
    chain_prev_last_p: bytes = ZERO_DIGEST,
) -> CompressedGop:
    return _encode(gop.stack(), quantizer, chain_prev_i, chain_prev_last_p)[0]


def encode_gop_with_reconstruction(
    gop: Gop,
    quantizer: int,
    chain_prev_i: bytes = ZERO_DIGEST,
    chain_prev_last_p: bytes = ZERO_DIGEST,
) -> tuple[CompressedGop, np.ndarray]:
    """Encode and also return the encoder's own reconstruction (n, h, w)."""
    return _encode(gop.stack(), quantizer, chain_prev_i, chain_prev_last_p)


def rechain(c: CompressedGop, chain_prev_i: bytes, chain_prev_last_p: bytes) -> CompressedGop:
    """Replace the chain header; coded samples do not depend on it."""
    body = c.i_payload[CHAIN_HEADER_SIZE:]
    return CompressedGop(
        i_payload=bytes(chain_prev_i) + bytes(chain_prev_last_p) + body,
        p_payloads=c.p_payloads,
        quantizer=c.quantizer,
        chain_prev_i=Digest(chain_prev_i),
        chain_prev_last_p=Digest(chain_prev_last_p),
        width=c.width,
        height=c.height,
        frame_count=c.frame_count,
    )


def decode_frames(c: CompressedGop) -> np.ndarray:
    """Reconstructed samples as a (frame_count, height, width) uint8 array."""
    q, w, h = c.quantizer, c.width, c.height
    if len(c.i_payload) < CHAIN_HEADER_SIZE:
        raise DecodeError("I payload shorter than chain header")
    n_px = w * h
    out = np.empty((c.frame_count, h, w), dtype=np.int64)

    iq = rle_decode(c.i_payload[CHAIN_HEADER_SIZE:], n_px).reshape(h, w)
    if (iq < 0).any() or (iq > _round_div(np.int64(PEAK), q)).any():
        raise DecodeError("intra value outside the quantizer's range")
    out[0] = np.minimum(iq * q, PEAK)

    for k, payload in enumerate(c.p_payloads, start=1):
        rq = rle_decode(payload, n_px).reshape(h, w)
        prev = out[k - 1]
        # the encoder can only emit residuals that land within q/2 of [0, 255]
        if (rq < _round_div(-prev, q)).any() or (rq > _round_div(PEAK - prev, q)).any():
            raise DecodeError(f"residual outside the quantizer's range in frame {k}")
        out[k] = np.clip(prev + rq * q, 0, PEAK)
    return out.astype(np.uint8)


def decode_gop(c: CompressedGop, index: int = 0, timestamp: int = 0) -> Gop:
    frames = tuple(Frame.from_array(a) for a in decode_frames(c))
    return Gop(frames, index, timestamp)
