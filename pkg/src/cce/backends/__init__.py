"""Backend contracts, deterministic mocks, and the HTTP shim client."""

from .base import (
    BACKEND_KINDS,
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
from .http import (
    HttpDenoiser,
    HttpImageEditor,
    HttpLatentEncoder,
    HttpReasoner,
    HttpTextEncoder,
    HttpTransport,
    http_suite,
    png_decode,
    png_encode,
)
from .mock import (
    COLOR_HUES,
    MockDenoiser,
    MockImageEditor,
    MockLatentEncoder,
    MockReasoner,
    MockTextEncoder,
    mock_suite,
)
from .schemas import (
    FORMULA_NAMES_SCHEMA,
    GRAPH_RESIDUAL_SCHEMA,
    INIT_GRAPH_SCHEMA,
    PROPOSE_BINDINGS_SCHEMA,
    PROPOSE_OPERATOR_SCHEMA,
    REASON_SCHEMAS,
    REINFER_VALUES_SCHEMA,
    REVISE_NARRATIVE_SCHEMA,
    validate_payload,
)

__all__ = [
    "BACKEND_KINDS",
    "BackendDescriptor",
    "BackendSuite",
    "CallLog",
    "COLOR_HUES",
    "DenoiserBackend",
    "FORMULA_NAMES_SCHEMA",
    "GRAPH_RESIDUAL_SCHEMA",
    "HttpDenoiser",
    "HttpImageEditor",
    "HttpLatentEncoder",
    "HttpReasoner",
    "HttpTextEncoder",
    "HttpTransport",
    "IdempotencyCache",
    "ImageEditBackend",
    "INIT_GRAPH_SCHEMA",
    "LatentEncoderBackend",
    "MockDenoiser",
    "MockImageEditor",
    "MockLatentEncoder",
    "MockReasoner",
    "MockTextEncoder",
    "PROPOSE_BINDINGS_SCHEMA",
    "PROPOSE_OPERATOR_SCHEMA",
    "REASON_SCHEMAS",
    "REINFER_VALUES_SCHEMA",
    "REVISE_NARRATIVE_SCHEMA",
    "ReasoningBackend",
    "TextEncoderBackend",
    "content_key",
    "http_suite",
    "mock_suite",
    "png_decode",
    "png_encode",
    "validate_payload",
]
