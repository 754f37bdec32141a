"""Abstract backend contracts shared by mock and HTTP implementations.

Five roles: reasoning, text encoding, image editing, latent encoding and
denoising. Every call is content-hashed so responses can be cached and the
run manifest can log calls by key without storing payloads.
"""

from __future__ import annotations

import hashlib
import json
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import SchemaError

BACKEND_KINDS = ("reasoning", "text_encoder", "image_editor", "latent_encoder", "denoiser")


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    endpoint: str = "mock"
    model_id: str = "mock"
    dims: Optional[int] = None
    timeout: float = 30.0
    max_retries: int = 3

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.dims is not None and self.dims <= 0:
            raise ValueError(f"dims must be positive, got {self.dims}")


def _canonical(obj):
    """Reduce a payload to JSON-serializable form; bulky binary data by digest."""
    if isinstance(obj, np.ndarray):
        return {
            "__array__": hashlib.sha256(np.ascontiguousarray(obj).tobytes()).hexdigest(),
            "shape": list(obj.shape),
            "dtype": str(obj.dtype),
        }
    if isinstance(obj, bytes):
        return {"__bytes__": hashlib.sha256(obj).hexdigest(), "len": len(obj)}
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def content_key(payload) -> str:
    """Idempotency key: sha256 of the canonical JSON encoding of the payload."""
    blob = json.dumps(_canonical(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class CallLog:
    """Thread-safe append-only log of (backend kind, idempotency key)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: List[Tuple[str, str]] = []

    def record(self, kind: str, key: str) -> None:
        with self._lock:
            self._entries.append((kind, key))

    def snapshot(self) -> List[Tuple[str, str]]:
        with self._lock:
            return list(self._entries)

    def count(self, kind: Optional[str] = None) -> int:
        with self._lock:
            if kind is None:
                return len(self._entries)
            return sum(1 for k, _ in self._entries if k == kind)


class IdempotencyCache:
    """Content-keyed response cache, safe under concurrent access."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries = {}

    def get_or_call(self, key: str, producer: Callable[[], object]) -> object:
        with self._lock:
            if key in self._entries:
                return self._entries[key]
        value = producer()
        with self._lock:
            self._entries.setdefault(key, value)
            return self._entries[key]

    def __contains__(self, key: str) -> bool:
        with self._lock:
            return key in self._entries

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class ReasoningBackend(ABC):
    """Structured-output reasoning: payload in, schema-validated JSON out."""

    kind = "reasoning"

    @abstractmethod
    def reason(self, payload: dict, schema: dict) -> dict:
        """Run one reasoning task. `schema` must be nonempty."""

    @staticmethod
    def _require_schema(schema: dict) -> None:
        if not schema:
            raise SchemaError("reason() requires a nonempty output schema")


class TextEncoderBackend(ABC):
    kind = "text_encoder"

    @property
    @abstractmethod
    def dim(self) -> int:
        """Declared embedding dimension."""

    @abstractmethod
    def encode_text(self, text: str) -> np.ndarray:
        """Encode nonempty text to a vector of length `dim`."""


class ImageEditBackend(ABC):
    kind = "image_editor"

    @abstractmethod
    def edit_image(
        self,
        image: np.ndarray,
        cue_overlay: Optional[np.ndarray],
        instruction: str,
        operator: Optional[dict] = None,
    ) -> np.ndarray:
        """Produce a same-shape edited image; `operator` carries the parametric cue."""


class LatentEncoderBackend(ABC):
    kind = "latent_encoder"

    @property
    @abstractmethod
    def dim(self) -> int:
        """Declared latent dimension."""

    @abstractmethod
    def encode_image(self, image: np.ndarray) -> np.ndarray:
        """Encode an image to a latent vector of length `dim`."""


class DenoiserBackend(ABC):
    kind = "denoiser"

    @abstractmethod
    def denoise(self, schedule, embedding) -> dict:
        """Consume a latent schedule plus prompt embedding; return a video handle."""


@dataclass
class BackendSuite:
    """The five backend roles bundled with a shared call log."""

    reasoning: ReasoningBackend
    text_encoder: TextEncoderBackend
    image_editor: ImageEditBackend
    latent_encoder: LatentEncoderBackend
    denoiser: DenoiserBackend
    call_log: CallLog = field(default_factory=CallLog)
    descriptors: Sequence[BackendDescriptor] = ()

    def descriptor_for(self, kind: str) -> Optional[BackendDescriptor]:
        for desc in self.descriptors:
            if desc.kind == kind:
                return desc
        return None
