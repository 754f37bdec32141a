"""Deterministic image utilities shared by keyframe synthesis and the mock
edit backend: named hues, canvas generation, cue overlays, and a
content-addressed PNG cache safe under concurrent writers."""

from __future__ import annotations

import hashlib
import io
import os
import re
import threading
from typing import Dict, Optional, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image

# Named hues in [0,1) HSV hue space.
COLOR_HUES: Dict[str, float] = {
    "red": 0.0,
    "orange": 1.0 / 12.0,
    "yellow": 1.0 / 6.0,
    "green": 1.0 / 3.0,
    "cyan": 0.5,
    "blue": 2.0 / 3.0,
    "purple": 5.0 / 6.0,
    "violet": 5.0 / 6.0,
    "magenta": 11.0 / 12.0,
}

_COLOR_WORD = re.compile(
    r"\b(" + "|".join(sorted(COLOR_HUES, key=len, reverse=True)) + r")\b",
    re.IGNORECASE,
)


def hue_to_rgb(hue: float, saturation: float = 0.85, value: float = 0.9) -> Tuple[int, int, int]:
    rgb = hsv_to_rgb([hue % 1.0, saturation, value])
    return tuple(int(round(c * 255)) for c in rgb)


def first_color_in(text: str) -> Optional[str]:
    match = _COLOR_WORD.search(text)
    if match is None:
        return None
    name = match.group(1).lower()
    return name


def mean_hue(image: np.ndarray) -> float:
    """Mean HSV hue weighted by saturation, unwrapped so the purple-to-red
    arc (0.83 -> 1.0) reads as increasing instead of wrapping to 0."""
    hsv = rgb_to_hsv(np.asarray(image, dtype=np.float64) / 255.0)
    hue = hsv[..., 0]
    sat = hsv[..., 1]
    weight = sat.sum()
    if weight == 0:
        return 0.0
    unwrapped = np.where(hue < 0.5, hue + 1.0, hue)
    return float((unwrapped * sat).sum() / weight)


def blank_canvas(width: int, height: int) -> np.ndarray:
    """Deterministic gradient canvas; non-uniform so spatial edits stay visible."""
    x = np.linspace(96, 160, width, dtype=np.float64)[None, :]
    y = np.linspace(96, 160, height, dtype=np.float64)[:, None]
    base = np.zeros((height, width, 3), dtype=np.float64)
    base[..., 0] = x
    base[..., 1] = (x + y) / 2.0
    base[..., 2] = y
    return base.astype(np.uint8)


def image_digest(image: np.ndarray) -> str:
    arr = np.ascontiguousarray(image)
    header = f"img|{arr.shape}|{arr.dtype}".encode("utf-8")
    return hashlib.sha256(header + arr.tobytes()).hexdigest()


def png_bytes(image: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(
        buffer, format="PNG"
    )
    return buffer.getvalue()


def png_to_array(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def render_cue_overlay(image: np.ndarray, operator: dict) -> np.ndarray:
    """Draw the operator cue (region box, drag arrow) on a copy of the image."""
    out = np.asarray(image, dtype=np.uint8).copy()
    height, width = out.shape[:2]
    region = operator.get("region") or {"x": 0.0, "y": 0.0, "w": 1.0, "h": 1.0}
    x0 = int(round(float(region["x"]) * (width - 1)))
    y0 = int(round(float(region["y"]) * (height - 1)))
    x1 = int(round(min(float(region["x"]) + float(region["w"]), 1.0) * (width - 1)))
    y1 = int(round(min(float(region["y"]) + float(region["h"]), 1.0) * (height - 1)))
    cue = np.array([255, 32, 32], dtype=np.uint8)
    thickness = max(1, min(height, width) // 256)
    out[y0 : y0 + thickness, x0 : x1 + 1] = cue
    out[max(0, y1 - thickness + 1) : y1 + 1, x0 : x1 + 1] = cue
    out[y0 : y1 + 1, x0 : x0 + thickness] = cue
    out[y0 : y1 + 1, max(0, x1 - thickness + 1) : x1 + 1] = cue
    vector = operator.get("vector")
    if vector and operator.get("kind") == "drag":
        cx, cy = (x0 + x1) // 2, (y0 + y1) // 2
        dx = float(vector.get("dx", 0.0))
        dy = float(vector.get("dy", 0.0))
        steps = max(2, min(height, width) // 8)
        for step in range(steps):
            px = int(round(cx + dx * step))
            py = int(round(cy + dy * step))
            if 0 <= px < width and 0 <= py < height:
                out[py, px] = cue
    return out


class ImageCache:
    """Content-addressed PNG store; atomic writes keep parallel chains safe."""

    def __init__(self, directory: Optional[str] = None):
        self.directory = directory
        if directory is not None:
            os.makedirs(directory, exist_ok=True)
        self._memory: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _path(self, key: str) -> Optional[str]:
        if self.directory is None:
            return None
        return os.path.join(self.directory, f"{key}.png")

    def get(self, key: str) -> Optional[np.ndarray]:
        with self._lock:
            if key in self._memory:
                return self._memory[key].copy()
        path = self._path(key)
        if path is not None and os.path.exists(path):
            with open(path, "rb") as fh:
                image = png_to_array(fh.read())
            with self._lock:
                self._memory[key] = image
            return image.copy()
        return None

    def put(self, key: str, image: np.ndarray) -> None:
        # Copy on write: callers keep mutable references to what they stored.
        arr = np.array(image, dtype=np.uint8, copy=True)
        with self._lock:
            self._memory[key] = arr
        path = self._path(key)
        if path is not None:
            tmp = f"{path}.tmp.{os.getpid()}.{threading.get_ident()}"
            with open(tmp, "wb") as fh:
                fh.write(png_bytes(arr))
            os.replace(tmp, path)

    def __contains__(self, key: str) -> bool:
        if key in self._memory:
            return True
        path = self._path(key)
        return path is not None and os.path.exists(path)
