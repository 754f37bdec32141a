"""HTTP-bound backends speaking the shim wire protocol.

JSON over HTTP: POST /v1/reason, /v1/encode-text, /v1/edit-image (images as
base64 PNG), /v1/encode-image, /v1/denoise (schedule as base64 CCLS), plus a
GET /v1/capabilities handshake. Every response is `{ok, payload|error}`.
Identical payloads hit the idempotency cache instead of the network.
"""

from __future__ import annotations

import base64
import io
import random
import time
from typing import Optional

import numpy as np
import requests
from PIL import Image

from ..errors import BackendError, DimensionMismatchError, ImageShapeError
from .base import (
    BackendDescriptor,
    BackendSuite,
    CallLog,
    DenoiserBackend,
    IdempotencyCache,
    ImageEditBackend,
    LatentEncoderBackend,
    ReasoningBackend,
    TextEncoderBackend,
    content_key,
)
from .schemas import validate_payload

BACKOFF_BASE_S = 0.5


def png_encode(image: np.ndarray) -> str:
    buffer = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(buffer, format="PNG")
    return base64.b64encode(buffer.getvalue()).decode("ascii")


def png_decode(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    with Image.open(io.BytesIO(raw)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


class HttpTransport:
    """Retrying POST/GET against one shim endpoint with a bearer token."""

    def __init__(
        self,
        base_url: str,
        token: str = "",
        timeout: float = 30.0,
        max_retries: int = 3,
        sleeper=time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout
        self.max_retries = max_retries
        self._sleep = sleeper
        self._jitter = random.Random(0)
        self.session = requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _unwrap(self, response: requests.Response) -> dict:
        body = response.json()
        if not isinstance(body, dict) or "ok" not in body:
            raise BackendError(f"malformed shim response from {response.url}", code="protocol")
        if not body["ok"]:
            error = body.get("error") or {}
            raise BackendError(
                str(error.get("message", "shim error")),
                code=str(error.get("code", "remote")),
            )
        return body.get("payload", {})

    def post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        last_exc: Optional[Exception] = None
        for attempt in range(1, self.max_retries + 1):
            try:
                response = self.session.post(
                    url, json=payload, headers=self._headers(), timeout=self.timeout
                )
                if response.status_code >= 500:
                    raise requests.RequestException(f"server error {response.status_code}")
                if response.status_code >= 400:
                    # Client errors are not retryable; surface the shim's code.
                    try:
                        return self._unwrap(response)
                    except ValueError:
                        raise BackendError(
                            f"HTTP {response.status_code} from {url}",
                            attempts=attempt,
                            code="client",
                        )
                return self._unwrap(response)
            except (requests.RequestException, ValueError) as exc:
                last_exc = exc
                if attempt < self.max_retries:
                    delay = BACKOFF_BASE_S * (2 ** (attempt - 1))
                    self._sleep(delay * (1.0 + 0.1 * self._jitter.random()))
        raise BackendError(
            f"POST {url} failed after {self.max_retries} attempts: {last_exc}",
            attempts=self.max_retries,
        )

    def get(self, path: str) -> dict:
        url = f"{self.base_url}{path}"
        try:
            response = self.session.get(url, headers=self._headers(), timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendError(f"GET {url} failed: {exc}")
        return self._unwrap(response)

    def capabilities(self) -> dict:
        return self.get("/v1/capabilities")


class HttpReasoner(ReasoningBackend):
    def __init__(self, transport: HttpTransport, cache: IdempotencyCache, call_log: Optional[CallLog] = None):
        self.transport = transport
        self.cache = cache
        self.call_log = call_log

    def reason(self, payload: dict, schema: dict) -> dict:
        self._require_schema(schema)
        key = content_key({"op": "reason", "payload": payload})
        if self.call_log is not None:
            self.call_log.record(self.kind, key)
        result = self.cache.get_or_call(
            key, lambda: self.transport.post("/v1/reason", payload)
        )
        validate_payload(result, schema)
        return result


class HttpTextEncoder(TextEncoderBackend):
    def __init__(
        self,
        transport: HttpTransport,
        cache: IdempotencyCache,
        dim: Optional[int] = None,
        call_log: Optional[CallLog] = None,
    ):
        self.transport = transport
        self.cache = cache
        self._dim = dim
        self.call_log = call_log

    @property
    def dim(self) -> int:
        if self._dim is None:
            caps = self.transport.capabilities()
            self._dim = int(caps.get("dims", {}).get("text_encoder", 0))
            if self._dim <= 0:
                raise BackendError("shim did not declare a text encoder dim", code="handshake")
        return self._dim

    def encode_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("encode_text requires nonempty text")
        key = content_key({"op": "encode-text", "text": text})
        if self.call_log is not None:
            self.call_log.record(self.kind, key)
        payload = self.cache.get_or_call(
            key, lambda: self.transport.post("/v1/encode-text", {"text": text})
        )
        vector = np.asarray(payload.get("vector", []), dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DimensionMismatchError(
                f"text encoder declared dim {self.dim}, returned {vector.shape}"
            )
        return vector


class HttpImageEditor(ImageEditBackend):
    def __init__(self, transport: HttpTransport, cache: IdempotencyCache, call_log: Optional[CallLog] = None):
        self.transport = transport
        self.cache = cache
        self.call_log = call_log

    def edit_image(
        self,
        image: np.ndarray,
        cue_overlay: Optional[np.ndarray],
        instruction: str,
        operator: Optional[dict] = None,
    ) -> np.ndarray:
        request = {
            "image": png_encode(image),
            "instruction": instruction,
            "operator": operator or {},
        }
        if cue_overlay is not None:
            request["overlay"] = png_encode(cue_overlay)
        key = content_key({"op": "edit-image", "request": request})
        if self.call_log is not None:
            self.call_log.record(self.kind, key)
        payload = self.cache.get_or_call(
            key, lambda: self.transport.post("/v1/edit-image", request)
        )
        edited = png_decode(payload["image"])
        if edited.shape != image.shape:
            raise ImageShapeError(
                f"edit backend returned shape {edited.shape}, expected {image.shape}"
            )
        return edited


class HttpLatentEncoder(LatentEncoderBackend):
    def __init__(
        self,
        transport: HttpTransport,
        cache: IdempotencyCache,
        dim: Optional[int] = None,
        call_log: Optional[CallLog] = None,
    ):
        self.transport = transport
        self.cache = cache
        self._dim = dim
        self.call_log = call_log

    @property
    def dim(self) -> int:
        if self._dim is None:
            caps = self.transport.capabilities()
            self._dim = int(caps.get("dims", {}).get("latent_encoder", 0))
            if self._dim <= 0:
                raise BackendError("shim did not declare a latent encoder dim", code="handshake")
        return self._dim

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        key = content_key({"op": "encode-image", "image": np.asarray(image)})
        if self.call_log is not None:
            self.call_log.record(self.kind, key)
        payload = self.cache.get_or_call(
            key,
            lambda: self.transport.post("/v1/encode-image", {"image": png_encode(image)}),
        )
        vector = np.asarray(payload.get("vector", []), dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DimensionMismatchError(
                f"latent encoder declared dim {self.dim}, returned {vector.shape}"
            )
        return vector


class HttpDenoiser(DenoiserBackend):
    def __init__(self, transport: HttpTransport, cache: IdempotencyCache, call_log: Optional[CallLog] = None):
        self.transport = transport
        self.cache = cache
        self.call_log = call_log

    def denoise(self, schedule, embedding) -> dict:
        request = {
            "schedule": base64.b64encode(schedule.to_bytes()).decode("ascii"),
            "embedding": {
                "positive": [float(x) for x in embedding.positive_vec],
                "negative": [float(x) for x in embedding.negative_vec],
            },
        }
        key = content_key({"op": "denoise", "request": request})
        if self.call_log is not None:
            self.call_log.record(self.kind, key)
        return self.cache.get_or_call(
            key, lambda: self.transport.post("/v1/denoise", request)
        )


def http_suite(
    base_url: str,
    token: str = "",
    timeout: float = 30.0,
    max_retries: int = 3,
) -> BackendSuite:
    """Build the HTTP backend suite from one shim endpoint."""
    transport = HttpTransport(base_url, token=token, timeout=timeout, max_retries=max_retries)
    cache = IdempotencyCache()
    log = CallLog()
    caps = transport.capabilities()
    dims = caps.get("dims", {})
    model_ids = caps.get("model_ids", {})

    def descriptor(kind: str) -> BackendDescriptor:
        return BackendDescriptor(
            kind=kind,
            endpoint=base_url,
            model_id=str(model_ids.get(kind, "unknown")),
            dims=int(dims[kind]) if kind in dims else None,
            timeout=timeout,
            max_retries=max_retries,
        )

    return BackendSuite(
        reasoning=HttpReasoner(transport, cache, call_log=log),
        text_encoder=HttpTextEncoder(
            transport, cache, dim=int(dims["text_encoder"]) if "text_encoder" in dims else None, call_log=log
        ),
        image_editor=HttpImageEditor(transport, cache, call_log=log),
        latent_encoder=HttpLatentEncoder(
            transport, cache, dim=int(dims["latent_encoder"]) if "latent_encoder" in dims else None, call_log=log
        ),
        denoiser=HttpDenoiser(transport, cache, call_log=log),
        call_log=log,
        descriptors=tuple(descriptor(k) for k in ("reasoning", "text_encoder", "image_editor", "latent_encoder", "denoiser")),
    )
