"""Latent schedules: linear interpolation between encoded keyframes plus
seeded Gaussian noise, serialized to a bit-exact binary container.

The in-between count for a segment of d seconds at `rate` latent frames per
second is n = max(1, round_half_up(d*rate)) - 1; junction keyframes are
shared between segments, never duplicated. Noise scaling has two modes:
standard multiplies by sigma, paper-literal by sigma squared.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import LengthMismatchError, TargetLengthInfeasibleError
from .keyframes import Keyframe, TimeSpan

CCLS_MAGIC = b"CCLS"
CCLS_VERSION = 1
NOISE_MODES = {"standard": 0, "paper_literal": 1}
DEFAULT_LATENT_RATE = 4.0  # 161-frame reference video under 4x temporal compression
DEFAULT_TARGET_FRAMES = 41


def round_half_up(x: float) -> float:
    """Deterministic rounding; avoids platform/backend banker's rounding."""
    return math.floor(x + 0.5)


def interior_count(d: float, rate: float) -> int:
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    return int(max(1, round_half_up(d * rate))) - 1


def interpolate(
    prev_latent: Sequence[float],
    next_latent: Sequence[float],
    d: TimeSpan,
    rate: float = DEFAULT_LATENT_RATE,
    n_override: Optional[int] = None,
) -> List[np.ndarray]:
    """Strictly-interior frames between two latents; endpoints belong to the
    adjacent segments. Frame j (1-based) sits at alpha = j/(n+1)."""
    prev_arr = np.asarray(prev_latent, dtype=np.float64)
    next_arr = np.asarray(next_latent, dtype=np.float64)
    if prev_arr.shape != next_arr.shape or prev_arr.ndim != 1:
        raise LengthMismatchError(
            f"latent lengths differ: {prev_arr.shape} vs {next_arr.shape}"
        )
    n = interior_count(d.d, rate) if n_override is None else n_override
    if n < 0:
        raise ValueError(f"interior count must be >= 0, got {n}")
    frames = []
    for j in range(1, n + 1):
        alpha = j / (n + 1)
        frames.append((1.0 - alpha) * prev_arr + alpha * next_arr)
    return frames


@dataclass(frozen=True, eq=False)
class LatentSchedule:
    frames: np.ndarray  # F x D float64, noise already applied
    segment_pairs: Tuple[Tuple[int, int], ...]  # per frame: (t_prev, t_next)
    noise_sigma: float
    seed: int
    mode: str = "standard"

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {self.frames.shape}")
        if len(self.segment_pairs) != self.frames.shape[0]:
            raise ValueError(
                f"{len(self.segment_pairs)} segment pairs for {self.frames.shape[0]} frames"
            )
        if self.mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode {self.mode!r}")

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])

    def junction_indices(self) -> List[int]:
        return [i for i, (lo, hi) in enumerate(self.segment_pairs) if lo == hi]

    def to_bytes(self) -> bytes:
        data = np.ascontiguousarray(self.frames, dtype="<f4")
        header = CCLS_MAGIC + struct.pack(
            "<III", CCLS_VERSION, self.frame_count, self.dim
        )
        trailer = struct.pack(
            "<QdB", self.seed, float(self.noise_sigma), NOISE_MODES[self.mode]
        )
        return header + data.tobytes(order="C") + trailer

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def to_json(self) -> dict:
        return {
            "frame_count": self.frame_count,
            "dim": self.dim,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "mode": self.mode,
            "segment_pairs": [list(pair) for pair in self.segment_pairs],
            "digest": self.digest(),
        }


def read_ccls(blob: bytes) -> Tuple[np.ndarray, dict]:
    """Parse a CCLS container back into (float32 frames, metadata)."""
    if blob[:4] != CCLS_MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r}, expected {CCLS_MAGIC!r}")
    version, frame_count, dim = struct.unpack("<III", blob[4:16])
    if version != CCLS_VERSION:
        raise ValueError(f"unsupported CCLS version {version}")
    body_len = frame_count * dim * 4
    expected = 16 + body_len + struct.calcsize("<QdB")
    if len(blob) != expected:
        raise ValueError(f"container length {len(blob)} != expected {expected}")
    frames = np.frombuffer(blob[16 : 16 + body_len], dtype="<f4").reshape(
        frame_count, dim
    )
    seed, sigma, mode_byte = struct.unpack("<QdB", blob[16 + body_len :])
    mode = {v: k for k, v in NOISE_MODES.items()}[mode_byte]
    return frames.copy(), {
        "version": version,
        "frame_count": frame_count,
        "dim": dim,
        "seed": seed,
        "sigma": sigma,
        "mode": mode,
    }


def _proportional_counts(
    spans: Sequence[TimeSpan], rate: float, target_interior: int
) -> List[int]:
    """Largest-remainder apportionment of interior frames across segments,
    weighted by span duration."""
    total_d = sum(span.d for span in spans)
    quotas = [target_interior * span.d / total_d for span in spans]
    counts = [int(math.floor(q)) for q in quotas]
    shortfall = target_interior - sum(counts)
    remainders = sorted(
        range(len(spans)), key=lambda i: (-(quotas[i] - math.floor(quotas[i])), i)
    )
    for i in remainders[:shortfall]:
        counts[i] += 1
    return counts


def build_schedule(
    keyframes: Sequence[Keyframe],
    spans: Sequence[TimeSpan],
    encoder,
    sigma: float,
    seed: int,
    rate: float = DEFAULT_LATENT_RATE,
    target_frames: Optional[int] = DEFAULT_TARGET_FRAMES,
    mode: str = "standard",
) -> LatentSchedule:
    """Encode keyframes once, interpolate segments sharing junction latents,
    re-round interior counts to hit the target length, then add seeded noise."""
    if len(spans) != len(keyframes) - 1:
        raise ValueError(
            f"need {len(keyframes) - 1} spans for {len(keyframes)} keyframes, got {len(spans)}"
        )
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if mode not in NOISE_MODES:
        raise ValueError(f"unknown noise mode {mode!r}")

    encoded = [np.asarray(encoder.encode_image(k.image), dtype=np.float64) for k in keyframes]
    for vec in encoded:
        if vec.shape != encoded[0].shape:
            raise LengthMismatchError("latent encoder returned inconsistent dims")

    count = len(keyframes)
    if target_frames is not None and count > target_frames:
        raise TargetLengthInfeasibleError(
            f"{count} keyframes cannot fit a {target_frames}-frame schedule"
        )

    if not spans:
        # Single event: a constant schedule padded to the target length.
        reps = target_frames if target_frames is not None else 1
        clean = np.tile(encoded[0], (reps, 1))
        pairs = tuple((keyframes[0].t_index, keyframes[0].t_index) for _ in range(reps))
    else:
        counts = [interior_count(span.d, rate) for span in spans]
        if target_frames is not None:
            counts = _proportional_counts(spans, rate, target_frames - count)
        rows: List[np.ndarray] = [encoded[0]]
        pairs_list: List[Tuple[int, int]] = [
            (keyframes[0].t_index, keyframes[0].t_index)
        ]
        for idx, span in enumerate(spans):
            t_prev = keyframes[idx].t_index
            t_next = keyframes[idx + 1].t_index
            interior = interpolate(
                encoded[idx], encoded[idx + 1], span, rate, n_override=counts[idx]
            )
            rows.extend(interior)
            pairs_list.extend((t_prev, t_next) for _ in interior)
            rows.append(encoded[idx + 1])
            pairs_list.append((t_next, t_next))
        clean = np.vstack(rows)
        pairs = tuple(pairs_list)

    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal(clean.shape)
    multiplier = sigma if mode == "standard" else sigma * sigma
    frames = clean + multiplier * noise
    return LatentSchedule(
        frames=frames,
        segment_pairs=pairs,
        noise_sigma=float(sigma),
        seed=int(seed),
        mode=mode,
    )
