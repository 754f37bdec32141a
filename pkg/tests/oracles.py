"""Independent reference implementations the test suite checks the engine
against.

Everything here is written from the documented behavior alone: plain loops,
no imports from the package internals beyond public dataclasses, so an
implementation bug cannot hide in both places.
"""

from __future__ import annotations

import colorsys
import math
from typing import Dict, List, Sequence, Tuple

SeriesMap = Dict[Tuple[str, str], List[float]]


def normalize_series(values: Sequence[float]) -> List[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0 for _ in values]
    return [(v - lo) / (hi - lo) for v in values]


def brute_force_scores(series: SeriesMap) -> List[float]:
    """Per-step L2 norm over min-max-normalized deltas of every series."""
    normalized = {key: normalize_series(vals) for key, vals in series.items()}
    n = len(next(iter(series.values())))
    scores = []
    for i in range(1, n):
        total = 0.0
        for vals in normalized.values():
            d = vals[i] - vals[i - 1]
            total += d * d
        scores.append(math.sqrt(total))
    return scores


def brute_force_boundaries(
    series: SeriesMap, tau_p: float, min_gap: int
) -> List[int]:
    """Scan scores left to right; keep strict exceedances spaced by min_gap."""
    scores = brute_force_scores(series)
    kept: List[int] = []
    for i, score in enumerate(scores, start=1):
        if score <= tau_p:
            continue
        if min_gap > 1 and kept and i - kept[-1] < min_gap:
            continue
        kept.append(i)
    return kept


def interior_count_table() -> Dict[float, int]:
    """Hand-derived in-between frame counts for the enumerated d*rate grid.

    n = max(1, round-half-up(d*rate)) - 1:
      0.5  -> round 1  -> 0
      1    -> round 1  -> 0
      1.49 -> round 1  -> 0
      1.5  -> round 2  -> 1
      2    -> round 2  -> 1
      10   -> round 10 -> 9
    """
    return {0.5: 0, 1.0: 0, 1.49: 0, 1.5: 1, 2.0: 1, 10.0: 9}


def reference_interpolate(
    prev: Sequence[float], nxt: Sequence[float], n: int
) -> List[List[float]]:
    """Interior frames only; frame j of n sits at fraction j/(n+1)."""
    frames = []
    for j in range(1, n + 1):
        alpha = j / (n + 1)
        frames.append([(1 - alpha) * p + alpha * q for p, q in zip(prev, nxt)])
    return frames


def reference_mean_hue(image) -> float:
    """Saturation-weighted mean hue via colorsys, one pixel at a time.

    Hues below 0.5 are unwrapped by a full turn so the warm end of the wheel
    sits above the cool end; fully desaturated images score 0.
    """
    height, width = image.shape[0], image.shape[1]
    total = 0.0
    weight = 0.0
    for y in range(height):
        for x in range(width):
            r, g, b = (float(c) / 255.0 for c in image[y, x][:3])
            h, s, _v = colorsys.rgb_to_hsv(r, g, b)
            if h < 0.5:
                h += 1.0
            total += h * s
            weight += s
    if weight == 0.0:
        return 0.0
    return total / weight


def word_tokens(text: str) -> set:
    """Lowercase alphanumeric runs."""
    tokens, current = set(), []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.add("".join(current))
            current = []
    if current:
        tokens.add("".join(current))
    return tokens


def token_overlap(query_names: Sequence[str], doc_texts: Sequence[str]) -> float:
    """|query tokens ∩ doc tokens| / |query tokens|."""
    query = set()
    for name in query_names:
        query |= word_tokens(name)
    if not query:
        return 0.0
    doc = set()
    for text in doc_texts:
        doc |= word_tokens(text)
    return len(query & doc) / len(query)


def trigram_counts(text: str) -> Dict[str, int]:
    s = " ".join(text.lower().split())
    counts: Dict[str, int] = {}
    if not s:
        return counts
    if len(s) < 3:
        counts[s] = 1
        return counts
    for i in range(len(s) - 2):
        gram = s[i : i + 3]
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def trigram_cosine(a: str, b: str) -> float:
    """Count-vector cosine over character trigrams, uniform weights."""
    ca, cb = trigram_counts(a), trigram_counts(b)
    if not ca or not cb:
        return 0.0
    dot = sum(count * cb.get(gram, 0) for gram, count in ca.items())
    if dot == 0:
        return 0.0
    norm_a = math.sqrt(sum(c * c for c in ca.values()))
    norm_b = math.sqrt(sum(c * c for c in cb.values()))
    return dot / (norm_a * norm_b)
