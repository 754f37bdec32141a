"""Deterministic mock backends.

Every mock is a pure function of (payload, configured seed), so full pipeline
runs are reproducible offline and manifests can be compared byte-for-byte.
The mock reasoner is table-driven: explicit fixtures match first, then a
per-task default handler produces a schema-valid response.
"""

from __future__ import annotations

import hashlib
import json
from typing import List, Optional, Sequence

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image

from ..errors import BackendError
from ..imaging import COLOR_HUES
from .base import (
    BackendDescriptor,
    BackendSuite,
    CallLog,
    DenoiserBackend,
    ImageEditBackend,
    LatentEncoderBackend,
    ReasoningBackend,
    TextEncoderBackend,
    content_key,
)
from .schemas import validate_payload


def _rng(seed: int, *parts: str) -> np.random.Generator:
    material = f"{seed}|" + "|".join(parts)
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


class MockReasoner(ReasoningBackend):
    """Fixture-table reasoner; falls back to deterministic per-task heuristics.

    Fixtures are `{kind, contains?, response}` records checked in order: a
    fixture matches when its kind equals the payload kind and `contains` (if
    given) is a substring of the canonical payload JSON.
    """

    def __init__(self, seed: int = 0, fixtures: Sequence[dict] = (), call_log: Optional[CallLog] = None):
        self.seed = seed
        self.fixtures = list(fixtures)
        self.call_log = call_log

    def reason(self, payload: dict, schema: dict) -> dict:
        self._require_schema(schema)
        key = content_key(payload)
        if self.call_log is not None:
            self.call_log.record(self.kind, key)
        kind = payload.get("kind", "")
        blob = json.dumps(payload, sort_keys=True, default=str)
        for fixture in self.fixtures:
            if fixture.get("kind") != kind:
                continue
            needle = fixture.get("contains")
            if needle is not None and needle not in blob:
                continue
            response = fixture["response"]
            break
        else:
            response = self._default(kind, payload.get("payload", {}))
        validate_payload(response, schema)
        return response

    # --- default handlers -------------------------------------------------

    def _default(self, kind: str, body: dict) -> dict:
        handler = getattr(self, f"_task_{kind}", None)
        if handler is None:
            raise BackendError(f"mock reasoner has no handler for task kind {kind!r}")
        return handler(body)

    def _task_regenerate_formula_names(self, body: dict) -> dict:
        candidates = [str(c) for c in body.get("candidates", [])]
        if not candidates:
            raise BackendError("no candidate names to regenerate from")
        return {"names": candidates}

    def _task_propose_bindings(self, body: dict) -> dict:
        bindings = {}
        for var in body.get("variables", []):
            symbol = var["symbol"]
            default = var.get("default")
            bindings[symbol] = float(default) if default is not None else 1.0
        return {"bindings": bindings}

    def _task_init_graph(self, body: dict) -> dict:
        description = body.get("description", "").lower()
        if "ball" in description and "water" in description:
            return {
                "nodes": [
                    {"id": "ball", "label": "glass ball",
                     "attributes": {"material": "glass", "position": "above surface"}},
                    {"id": "water", "label": "water",
                     "attributes": {"phase": "liquid", "clarity": "clear"}},
                ],
                "edges": [
                    {"source": "ball", "target": "water", "relation": "approaches", "attributes": {}},
                ],
            }
        if "litmus" in description or ("acid" in description and "solution" in description):
            return {
                "nodes": [
                    {"id": "solution", "label": "litmus solution",
                     "attributes": {"color": "purple", "phase": "liquid"}},
                    {"id": "dropper", "label": "dropper",
                     "attributes": {"content": "acid"}},
                ],
                "edges": [
                    {"source": "dropper", "target": "solution", "relation": "drips_into", "attributes": {}},
                ],
            }
        if "ice" in description:
            holder = "pan" if "pan" in description else "plate"
            return {
                "nodes": [
                    {"id": "ice", "label": "ice cube",
                     "attributes": {"phase": "solid", "color": "white"}},
                    {"id": holder, "label": holder, "attributes": {"material": "metal"}},
                ],
                "edges": [
                    {"source": holder, "target": "ice", "relation": "supports", "attributes": {}},
                ],
            }
        if "light" in description or "beam" in description or "laser" in description:
            return {
                "nodes": [
                    {"id": "beam", "label": "light beam",
                     "attributes": {"direction": "straight", "brightness": "bright"}},
                    {"id": "water", "label": "water surface",
                     "attributes": {"phase": "liquid"}},
                ],
                "edges": [
                    {"source": "beam", "target": "water", "relation": "illuminates", "attributes": {}},
                ],
            }
        if "spring" in description:
            return {
                "nodes": [
                    {"id": "spring", "label": "coil spring",
                     "attributes": {"state": "relaxed", "material": "steel"}},
                    {"id": "hand", "label": "hand", "attributes": {}},
                ],
                "edges": [
                    {"source": "hand", "target": "spring", "relation": "touches", "attributes": {}},
                ],
            }
        return {
            "nodes": [{"id": "obj_1", "label": "object", "attributes": {}}],
            "edges": [],
        }

    def _task_graph_residual(self, body: dict) -> dict:
        return {"entries": []}

    def _task_revise_narrative(self, body: dict) -> dict:
        prev = body.get("prev_text", "")
        changes = [str(c) for c in body.get("changes", [])]
        if not changes:
            return {"text": prev}
        joined = ", and ".join(changes)
        text = f"{prev} Then {joined}." if prev else f"{joined}."
        return {"text": text}

    def _task_reinfer_values(self, body: dict) -> dict:
        values = []
        for violation in body.get("violations", []):
            prev = violation.get("prev_value")
            nxt = violation.get("next_value")
            prev_prev = violation.get("prev_prev_value")
            observed = float(violation.get("observed", 0.0))
            if prev is not None and nxt is not None:
                value = (float(prev) + float(nxt)) / 2.0
            elif prev is not None and prev_prev is not None:
                value = float(prev) + 0.5 * (float(prev) - float(prev_prev))
            elif prev is not None:
                value = float(prev)
            else:
                value = observed
            entry = {
                "t_index": int(violation["t_index"]),
                "object_id": str(violation.get("object_id", "")),
                "symbol": str(violation["symbol"]),
                "value": value,
            }
            if violation.get("unit") is not None:
                entry["unit"] = str(violation["unit"])
            values.append(entry)
        return {"values": values}

    def _task_propose_operator(self, body: dict) -> dict:
        target = body.get("target_node", "obj_1")
        delta = float(body.get("delta", 0.0))
        changes = body.get("changes", [])
        kind = "recolor"
        instruction_bits: List[str] = []
        for change in changes:
            attribute = str(change.get("attribute", ""))
            new = str(change.get("new", ""))
            old = str(change.get("old", ""))
            if attribute == "color":
                kind = "recolor"
                instruction_bits.append(f"shift {target} color from {old} to {new}")
                break
            if attribute == "phase" or attribute == "integrity":
                kind = "mask_inpaint"
                instruction_bits.append(f"repaint {target} as {new}")
                break
            if attribute in ("position", "depth", "height"):
                kind = "drag"
                instruction_bits.append(f"move {target} to {new}")
                break
            if attribute in ("size", "length", "extent", "state"):
                kind = "resize"
                instruction_bits.append(f"deform {target} toward {new}")
                break
            if attribute in ("brightness", "illumination", "direction"):
                kind = "relight"
                instruction_bits.append(f"relight {target} toward {new}")
                break
        if not instruction_bits:
            for change in changes:
                instruction_bits.append(
                    f"update {change.get('attribute', 'appearance')} of {target}"
                )
        if not instruction_bits:
            instruction_bits.append(f"refresh appearance of {target}")
        region = body.get("region_hint") or {"x": 0.25, "y": 0.25, "w": 0.5, "h": 0.5}
        return {
            "kind": kind,
            "target_node": str(target),
            "region": {k: float(region[k]) for k in ("x", "y", "w", "h")},
            "magnitude": delta,
            "duration_s": float(body.get("span_hint", 2.0)),
            "instruction": "; ".join(instruction_bits),
        }


class MockTextEncoder(TextEncoderBackend):
    """Seeded hash-to-vector encoder; distinct texts map to distinct vectors."""

    def __init__(self, dim: int = 16, seed: int = 0, call_log: Optional[CallLog] = None):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self._dim = dim
        self.seed = seed
        self.call_log = call_log

    @property
    def dim(self) -> int:
        return self._dim

    def encode_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("encode_text requires nonempty text")
        if self.call_log is not None:
            self.call_log.record(self.kind, content_key({"text": text}))
        rng = _rng(self.seed, "text", text)
        return rng.standard_normal(self._dim)


class MockImageEditor(ImageEditBackend):
    """Parametric edit transforms so oracles can verify direction and size.

    recolor: hue shift by magnitude * max_shift (toward `target_hue` without
    overshoot when the operator names one); mask_inpaint: blend the region
    toward a fill color; drag: integer-pixel roll along the operator vector;
    resize: center-anchored affine scale; relight: brightness gain.
    Magnitude zero returns the input bytes unchanged.
    """

    def __init__(
        self,
        max_shift: float = 0.25,
        max_drag_frac: float = 0.25,
        max_zoom: float = 0.5,
        max_relight: float = 0.6,
        fill_rgb=(128, 128, 128),
        call_log: Optional[CallLog] = None,
    ):
        self.max_shift = max_shift
        self.max_drag_frac = max_drag_frac
        self.max_zoom = max_zoom
        self.max_relight = max_relight
        self.fill_rgb = tuple(fill_rgb)
        self.call_log = call_log

    def edit_image(
        self,
        image: np.ndarray,
        cue_overlay: Optional[np.ndarray],
        instruction: str,
        operator: Optional[dict] = None,
    ) -> np.ndarray:
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
        if self.call_log is not None:
            self.call_log.record(
                self.kind,
                content_key({"image": image, "instruction": instruction, "operator": operator}),
            )
        if operator is None:
            return image.copy()
        magnitude = float(operator.get("magnitude", 0.0))
        if magnitude == 0.0:
            return image.copy()
        kind = operator.get("kind", "recolor")
        handler = {
            "recolor": self._recolor,
            "mask_inpaint": self._mask_inpaint,
            "drag": self._drag,
            "resize": self._resize,
            "relight": self._relight,
        }.get(kind)
        if handler is None:
            raise BackendError(f"mock editor does not implement operator kind {kind!r}")
        return handler(image, operator, magnitude)

    def _region_slice(self, image: np.ndarray, operator: dict):
        height, width = image.shape[:2]
        region = operator.get("region", {"x": 0.0, "y": 0.0, "w": 1.0, "h": 1.0})
        x0 = int(round(region["x"] * width))
        y0 = int(round(region["y"] * height))
        x1 = int(round((region["x"] + region["w"]) * width))
        y1 = int(round((region["y"] + region["h"]) * height))
        x0, x1 = max(0, x0), min(width, max(x1, x0 + 1))
        y0, y1 = max(0, y0), min(height, max(y1, y0 + 1))
        return slice(y0, y1), slice(x0, x1)

    def _recolor(self, image: np.ndarray, operator: dict, magnitude: float) -> np.ndarray:
        out = image.copy()
        rows, cols = self._region_slice(image, operator)
        patch = out[rows, cols].astype(np.float64) / 255.0
        hsv = rgb_to_hsv(patch)
        step = magnitude * self.max_shift
        target = operator.get("target_hue")
        if target is None:
            hsv[..., 0] = (hsv[..., 0] + step) % 1.0
        else:
            # Move along the shorter arc, never past the target hue.
            diff = (float(target) - hsv[..., 0] + 0.5) % 1.0 - 0.5
            move = np.clip(diff, -step, step)
            hsv[..., 0] = (hsv[..., 0] + move) % 1.0
        rgb = hsv_to_rgb(hsv)
        out[rows, cols] = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
        return out

    def _mask_inpaint(self, image: np.ndarray, operator: dict, magnitude: float) -> np.ndarray:
        out = image.copy()
        rows, cols = self._region_slice(image, operator)
        fill = np.array(operator.get("fill_rgb", self.fill_rgb), dtype=np.float64)
        patch = out[rows, cols].astype(np.float64)
        blended = (1.0 - magnitude) * patch + magnitude * fill
        out[rows, cols] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
        return out

    def _drag(self, image: np.ndarray, operator: dict, magnitude: float) -> np.ndarray:
        height, width = image.shape[:2]
        vec = operator.get("vector", {"dx": 0.0, "dy": 1.0})
        shift_x = int(round(magnitude * self.max_drag_frac * float(vec.get("dx", 0.0)) * width))
        shift_y = int(round(magnitude * self.max_drag_frac * float(vec.get("dy", 0.0)) * height))
        if shift_x == 0 and shift_y == 0:
            return image.copy()
        return np.roll(np.roll(image, shift_y, axis=0), shift_x, axis=1)

    def _resize(self, image: np.ndarray, operator: dict, magnitude: float) -> np.ndarray:
        height, width = image.shape[:2]
        direction = float(operator.get("grow", 1.0))
        scale = 1.0 + direction * magnitude * self.max_zoom
        if scale <= 0:
            scale = 0.05
        cx, cy = width / 2.0, height / 2.0
        # PIL affine maps output coords to input coords.
        matrix = (1.0 / scale, 0.0, cx * (1.0 - 1.0 / scale), 0.0, 1.0 / scale, cy * (1.0 - 1.0 / scale))
        pil = Image.fromarray(image, mode="RGB")
        warped = pil.transform((width, height), Image.AFFINE, matrix, resample=Image.NEAREST)
        return np.asarray(warped, dtype=np.uint8).copy()

    def _relight(self, image: np.ndarray, operator: dict, magnitude: float) -> np.ndarray:
        direction = float(operator.get("gain", 1.0))
        factor = 1.0 + direction * magnitude * self.max_relight
        out = np.clip(np.rint(image.astype(np.float64) * factor), 0, 255).astype(np.uint8)
        return out


class MockLatentEncoder(LatentEncoderBackend):
    """Blockwise mean-pool encoder; linear by construction so interpolation
    oracles are exact."""

    def __init__(self, dim: int = 64, call_log: Optional[CallLog] = None):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self._dim = dim
        self.call_log = call_log

    @property
    def dim(self) -> int:
        return self._dim

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        if self.call_log is not None:
            self.call_log.record(self.kind, content_key({"image": np.asarray(image)}))
        flat = np.asarray(image, dtype=np.float64).ravel()
        if flat.size < self._dim:
            flat = np.concatenate([flat, np.zeros(self._dim - flat.size)])
        blocks = np.array_split(flat, self._dim)
        return np.array([block.mean() for block in blocks], dtype=np.float64)


class MockDenoiser(DenoiserBackend):
    """Manifest-only stub: records exactly what it received, renders nothing."""

    def __init__(self, call_log: Optional[CallLog] = None):
        self.call_log = call_log

    def denoise(self, schedule, embedding) -> dict:
        if self.call_log is not None:
            self.call_log.record(
                self.kind,
                content_key({"frames": int(schedule.frame_count), "seed": int(schedule.seed)}),
            )
        return {
            "handle": "mock://denoise-stub",
            "frame_count": int(schedule.frame_count),
            "latent_dim": int(schedule.dim),
            "sigma": float(schedule.noise_sigma),
            "seed": int(schedule.seed),
            "embedding_len": int(len(embedding.concatenated)),
        }


def mock_suite(
    seed: int = 0,
    text_dim: int = 16,
    latent_dim: int = 64,
    fixtures: Sequence[dict] = (),
) -> BackendSuite:
    """Build the all-mock backend suite sharing one call log."""
    log = CallLog()
    descriptors = (
        BackendDescriptor(kind="reasoning"),
        BackendDescriptor(kind="text_encoder", dims=text_dim),
        BackendDescriptor(kind="image_editor"),
        BackendDescriptor(kind="latent_encoder", dims=latent_dim),
        BackendDescriptor(kind="denoiser"),
    )
    return BackendSuite(
        reasoning=MockReasoner(seed=seed, fixtures=fixtures, call_log=log),
        text_encoder=MockTextEncoder(dim=text_dim, seed=seed, call_log=log),
        image_editor=MockImageEditor(call_log=log),
        latent_encoder=MockLatentEncoder(dim=latent_dim, call_log=log),
        denoiser=MockDenoiser(call_log=log),
        call_log=log,
        descriptors=descriptors,
    )
