"""Backend contracts: content keys, mocks, schema registry, HTTP transport."""

import base64
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from matplotlib.colors import rgb_to_hsv

from cce.backends.base import (
    BACKEND_KINDS,
    BackendDescriptor,
    CallLog,
    IdempotencyCache,
    content_key,
)
from cce.backends.http import (
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
from cce.backends.mock import (
    MockDenoiser,
    MockImageEditor,
    MockLatentEncoder,
    MockReasoner,
    MockTextEncoder,
    mock_suite,
)
from cce.backends.schemas import (
    INIT_GRAPH_SCHEMA,
    REASON_SCHEMAS,
    validate_payload,
)
from cce.errors import (
    BackendError,
    DimensionMismatchError,
    ImageShapeError,
    SchemaError,
)
from cce.imaging import hue_to_rgb

from conftest import REPO_ROOT


class TestContentKey:
    def test_dict_order_irrelevant(self):
        assert content_key({"a": 1, "b": 2}) == content_key({"b": 2, "a": 1})

    def test_lists_and_tuples_equivalent(self):
        assert content_key({"xs": [1, 2]}) == content_key({"xs": (1, 2)})

    def test_numpy_scalars_match_python_scalars(self):
        assert content_key({"n": np.int64(3)}) == content_key({"n": 3})
        assert content_key({"x": np.float64(0.5)}) == content_key({"x": 0.5})

    def test_array_content_matters(self):
        a = np.arange(12, dtype=np.uint8).reshape(3, 4)
        b = a.copy()
        b[0, 0] ^= 1
        assert content_key({"img": a}) == content_key({"img": a.copy()})
        assert content_key({"img": a}) != content_key({"img": b})

    def test_array_shape_and_dtype_matter(self):
        a = np.zeros((2, 6), dtype=np.uint8)
        assert content_key({"img": a}) != content_key({"img": a.reshape(3, 4)})
        assert content_key({"img": a}) != content_key({"img": a.astype(np.uint16)})

    def test_bytes_hashed_by_content(self):
        assert content_key({"blob": b"abc"}) == content_key({"blob": b"abc"})
        assert content_key({"blob": b"abc"}) != content_key({"blob": b"abd"})


class TestCallLog:
    def test_records_in_order(self):
        log = CallLog()
        log.record("reasoning", "k1")
        log.record("text_encoder", "k2")
        assert log.snapshot() == [("reasoning", "k1"), ("text_encoder", "k2")]
        assert log.count() == 2
        assert log.count("reasoning") == 1
        assert log.count("denoiser") == 0

    def test_snapshot_is_a_copy(self):
        log = CallLog()
        log.record("reasoning", "k")
        snap = log.snapshot()
        snap.append(("x", "y"))
        assert log.count() == 1

    def test_concurrent_records_all_land(self):
        log = CallLog()

        def hammer(tag):
            for i in range(200):
                log.record(tag, str(i))

        threads = [threading.Thread(target=hammer, args=(f"t{j}",)) for j in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert log.count() == 1600


class TestIdempotencyCache:
    def test_producer_called_once_per_key(self):
        cache = IdempotencyCache()
        calls = []
        make = lambda: calls.append(1) or {"v": len(calls)}
        first = cache.get_or_call("k", make)
        second = cache.get_or_call("k", make)
        assert first is second
        assert calls == [1]
        assert "k" in cache
        assert len(cache) == 1

    def test_distinct_keys_call_producer(self):
        cache = IdempotencyCache()
        assert cache.get_or_call("a", lambda: 1) == 1
        assert cache.get_or_call("b", lambda: 2) == 2
        assert len(cache) == 2


class TestBackendDescriptor:
    def test_known_kinds_accepted(self):
        for kind in BACKEND_KINDS:
            assert BackendDescriptor(kind=kind).kind == kind

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            BackendDescriptor(kind="oracle")

    def test_nonpositive_dims_rejected(self):
        with pytest.raises(ValueError, match="dims"):
            BackendDescriptor(kind="text_encoder", dims=0)


class TestMockReasoner:
    SCHEMA = INIT_GRAPH_SCHEMA

    def payload(self, description="a glass ball above water"):
        return {"kind": "init_graph", "payload": {"description": description}}

    def test_deterministic(self):
        a = MockReasoner().reason(self.payload(), self.SCHEMA)
        b = MockReasoner().reason(self.payload(), self.SCHEMA)
        assert a == b

    def test_empty_schema_rejected(self):
        with pytest.raises(SchemaError, match="schema"):
            MockReasoner().reason(self.payload(), {})

    def test_unknown_task_kind_rejected(self):
        with pytest.raises(BackendError, match="task kind"):
            MockReasoner().reason({"kind": "divine", "payload": {}}, self.SCHEMA)

    def test_fixtures_matched_in_order(self):
        graph = {"nodes": [{"id": "n", "label": "n", "attributes": {}}], "edges": []}
        other = {"nodes": [{"id": "m", "label": "m", "attributes": {}}], "edges": []}
        reasoner = MockReasoner(
            fixtures=[
                {"kind": "init_graph", "contains": "water", "response": graph},
                {"kind": "init_graph", "response": other},
            ]
        )
        assert reasoner.reason(self.payload("ball and water"), self.SCHEMA) == graph
        assert reasoner.reason(self.payload("dry land"), self.SCHEMA) == other

    def test_fixture_kind_must_match(self):
        reasoner = MockReasoner(
            fixtures=[{"kind": "revise_narrative", "response": {"text": "x"}}]
        )
        # Falls through to the default init_graph handler.
        response = reasoner.reason(self.payload(), self.SCHEMA)
        assert {"nodes", "edges"} <= set(response)

    def test_fixture_response_still_schema_checked(self):
        reasoner = MockReasoner(
            fixtures=[{"kind": "init_graph", "response": {"nodes": "not-a-list"}}]
        )
        with pytest.raises(SchemaError, match="invalid at"):
            reasoner.reason(self.payload(), self.SCHEMA)

    def test_call_log_records_reasoning_kind(self):
        log = CallLog()
        MockReasoner(call_log=log).reason(self.payload(), self.SCHEMA)
        assert log.count("reasoning") == 1


class TestMockTextEncoder:
    def test_dim_and_shape(self):
        encoder = MockTextEncoder(dim=24)
        assert encoder.dim == 24
        assert encoder.encode_text("hello").shape == (24,)

    def test_deterministic_per_text(self):
        encoder = MockTextEncoder()
        np.testing.assert_array_equal(
            encoder.encode_text("melt"), MockTextEncoder().encode_text("melt")
        )

    def test_distinct_texts_differ(self):
        encoder = MockTextEncoder()
        assert not np.array_equal(encoder.encode_text("a"), encoder.encode_text("b"))

    def test_seed_changes_vectors(self):
        a = MockTextEncoder(seed=0).encode_text("x")
        b = MockTextEncoder(seed=1).encode_text("x")
        assert not np.array_equal(a, b)

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            MockTextEncoder().encode_text("")

    def test_nonpositive_dim_rejected(self):
        with pytest.raises(ValueError, match="dim"):
            MockTextEncoder(dim=0)


def red_fill(width=16, height=12) -> np.ndarray:
    return np.full((height, width, 3), hue_to_rgb(0.0), dtype=np.uint8)


def hue_of(image: np.ndarray) -> float:
    hsv = rgb_to_hsv(image.astype(np.float64) / 255.0)
    return float(hsv[..., 0].mean())


class TestMockImageEditor:
    def test_zero_magnitude_returns_untouched_copy(self):
        editor = MockImageEditor()
        image = red_fill()
        out = editor.edit_image(image, None, "x", operator={"kind": "recolor", "magnitude": 0.0})
        np.testing.assert_array_equal(out, image)
        out[:] = 0
        assert image.any()

    def test_missing_operator_is_a_noop(self):
        editor = MockImageEditor()
        image = red_fill()
        np.testing.assert_array_equal(editor.edit_image(image, None, "x"), image)

    def test_recolor_shifts_hue_by_scaled_magnitude(self):
        editor = MockImageEditor(max_shift=0.25)
        out = editor.edit_image(
            red_fill(), None, "x", operator={"kind": "recolor", "magnitude": 0.4}
        )
        assert hue_of(out) == pytest.approx(0.4 * 0.25, abs=0.005)

    def test_recolor_approaches_target_without_overshoot(self):
        editor = MockImageEditor(max_shift=0.25)
        blue = 2.0 / 3.0
        operator = {"kind": "recolor", "magnitude": 1.0, "target_hue": blue}
        image = red_fill()
        # Red to blue along the short arc is -1/3: one full-step edit covers
        # 0.25 of it, the second covers the remainder, the third holds still.
        first = editor.edit_image(image, None, "x", operator=operator)
        assert hue_of(first) == pytest.approx(0.75, abs=0.005)
        second = editor.edit_image(first, None, "x", operator=operator)
        assert hue_of(second) == pytest.approx(blue, abs=0.005)
        third = editor.edit_image(second, None, "x", operator=operator)
        assert hue_of(third) == pytest.approx(blue, abs=0.005)

    def test_recolor_confined_to_region(self):
        editor = MockImageEditor()
        image = red_fill(width=16, height=16)
        operator = {
            "kind": "recolor",
            "magnitude": 1.0,
            "region": {"x": 0.0, "y": 0.0, "w": 0.5, "h": 0.5},
        }
        out = editor.edit_image(image, None, "x", operator=operator)
        np.testing.assert_array_equal(out[8:, :], image[8:, :])
        np.testing.assert_array_equal(out[:, 8:], image[:, 8:])
        assert not np.array_equal(out[:8, :8], image[:8, :8])

    def test_mask_inpaint_full_magnitude_fills_exactly(self):
        editor = MockImageEditor()
        operator = {
            "kind": "mask_inpaint",
            "magnitude": 1.0,
            "fill_rgb": [10, 20, 30],
            "region": {"x": 0.0, "y": 0.0, "w": 1.0, "h": 1.0},
        }
        out = editor.edit_image(red_fill(), None, "x", operator=operator)
        assert (out == np.array([10, 20, 30], dtype=np.uint8)).all()

    def test_mask_inpaint_blends_halfway(self):
        editor = MockImageEditor()
        image = np.full((4, 4, 3), 100, dtype=np.uint8)
        operator = {"kind": "mask_inpaint", "magnitude": 0.5, "fill_rgb": [200, 200, 200]}
        out = editor.edit_image(image, None, "x", operator=operator)
        assert (out == 150).all()

    def test_drag_rolls_along_vector(self):
        editor = MockImageEditor(max_drag_frac=0.25)
        image = np.arange(16 * 16 * 3, dtype=np.uint8).reshape(16, 16, 3)
        operator = {"kind": "drag", "magnitude": 1.0, "vector": {"dx": 0.0, "dy": 1.0}}
        out = editor.edit_image(image, None, "x", operator=operator)
        np.testing.assert_array_equal(out, np.roll(image, 4, axis=0))

    def test_resize_grows_and_shrinks_center_content(self):
        editor = MockImageEditor()
        image = np.zeros((32, 32, 3), dtype=np.uint8)
        image[14:18, 14:18] = 255
        grow = {"kind": "resize", "magnitude": 1.0, "grow": 1.0}
        shrink = {"kind": "resize", "magnitude": 1.0, "grow": -1.0}
        base_count = (image == 255).sum()
        grown = (editor.edit_image(image, None, "x", operator=grow) == 255).sum()
        shrunk = (editor.edit_image(image, None, "x", operator=shrink) == 255).sum()
        assert grown > base_count > shrunk

    def test_relight_scales_brightness(self):
        editor = MockImageEditor(max_relight=0.6)
        image = np.full((4, 4, 3), 100, dtype=np.uint8)
        operator = {"kind": "relight", "magnitude": 0.5, "gain": 1.0}
        out = editor.edit_image(image, None, "x", operator=operator)
        assert (out == 130).all()

    def test_relight_clips_at_white(self):
        editor = MockImageEditor(max_relight=0.6)
        image = np.full((4, 4, 3), 220, dtype=np.uint8)
        out = editor.edit_image(
            image, None, "x", operator={"kind": "relight", "magnitude": 1.0, "gain": 1.0}
        )
        assert (out == 255).all()

    def test_unknown_operator_kind_rejected(self):
        with pytest.raises(BackendError, match="operator kind"):
            MockImageEditor().edit_image(
                red_fill(), None, "x", operator={"kind": "warp", "magnitude": 0.5}
            )

    def test_non_rgb_image_rejected(self):
        with pytest.raises(ValueError, match="HxWx3"):
            MockImageEditor().edit_image(
                np.zeros((4, 4), dtype=np.uint8), None, "x", operator=None
            )


class TestMockLatentEncoder:
    def test_zero_image_encodes_to_zero_vector(self):
        encoder = MockLatentEncoder(dim=8)
        latent = encoder.encode_image(np.zeros((4, 4, 3), dtype=np.uint8))
        np.testing.assert_array_equal(latent, np.zeros(8))

    def test_block_means_exact(self):
        encoder = MockLatentEncoder(dim=4)
        image = np.arange(8, dtype=np.uint8).reshape(2, 4, 1)
        np.testing.assert_allclose(
            encoder.encode_image(image), [0.5, 2.5, 4.5, 6.5]
        )

    def test_linear_in_pixel_values(self):
        rng = np.random.default_rng(7)
        encoder = MockLatentEncoder(dim=16)
        a = rng.integers(0, 128, size=(6, 5, 3)).astype(np.uint8)
        b = rng.integers(0, 128, size=(6, 5, 3)).astype(np.uint8)
        combined = encoder.encode_image(a + b)
        np.testing.assert_allclose(
            combined, encoder.encode_image(a) + encoder.encode_image(b), atol=1e-6
        )

    def test_distinct_images_produce_distinct_latents(self):
        encoder = MockLatentEncoder(dim=8)
        a = np.zeros((4, 4, 3), dtype=np.uint8)
        b = a.copy()
        b[0, 0, 0] = 200
        assert not np.array_equal(encoder.encode_image(a), encoder.encode_image(b))

    def test_small_images_zero_padded(self):
        encoder = MockLatentEncoder(dim=8)
        image = np.full((1, 2, 3), 60, dtype=np.uint8)  # six values
        latent = encoder.encode_image(image)
        np.testing.assert_array_equal(latent, [60, 60, 60, 60, 60, 60, 0, 0])


class TestMockDenoiser:
    def test_echoes_schedule_metadata(self):
        schedule = SimpleNamespace(frame_count=12, dim=6, noise_sigma=0.25, seed=99)
        embedding = SimpleNamespace(concatenated=np.zeros(32))
        result = MockDenoiser().denoise(schedule, embedding)
        assert result == {
            "handle": "mock://denoise-stub",
            "frame_count": 12,
            "latent_dim": 6,
            "sigma": 0.25,
            "seed": 99,
            "embedding_len": 32,
        }


class TestMockSuite:
    def test_one_call_log_shared_by_all_roles(self):
        suite = mock_suite(text_dim=8, latent_dim=8)
        suite.reasoning.reason(
            {"kind": "init_graph", "payload": {"description": "ice"}}, INIT_GRAPH_SCHEMA
        )
        suite.text_encoder.encode_text("hello")
        image = red_fill(width=4, height=4)
        suite.image_editor.edit_image(image, None, "x", operator=None)
        suite.latent_encoder.encode_image(image)
        suite.denoiser.denoise(
            SimpleNamespace(frame_count=1, dim=8, noise_sigma=0.0, seed=0),
            SimpleNamespace(concatenated=np.zeros(16)),
        )
        kinds = [kind for kind, _ in suite.call_log.snapshot()]
        assert kinds == [
            "reasoning",
            "text_encoder",
            "image_editor",
            "latent_encoder",
            "denoiser",
        ]

    def test_descriptors_cover_all_roles(self):
        suite = mock_suite()
        for kind in BACKEND_KINDS:
            assert suite.descriptor_for(kind) is not None
        assert suite.descriptor_for("text_encoder").dims == 16
        assert suite.descriptor_for("latent_encoder").dims == 64


class TestSchemaRegistry:
    def test_every_mock_task_has_a_registered_schema(self):
        handled = {
            name[len("_task_"):]
            for name in dir(MockReasoner)
            if name.startswith("_task_")
        }
        assert handled == set(REASON_SCHEMAS)

    def test_schemas_are_nonempty_objects(self):
        for kind, schema in REASON_SCHEMAS.items():
            assert schema, f"{kind} schema is empty"
            assert schema.get("type") == "object"
            assert schema.get("required"), f"{kind} schema requires nothing"

    def test_every_reason_call_site_uses_a_registered_kind(self):
        root = REPO_ROOT / "src" / "cce"
        pattern = re.compile(r'"kind": "(\w+)",\s*"payload"')
        used = set()
        for path in root.rglob("*.py"):
            used |= set(pattern.findall(path.read_text()))
        assert used == set(REASON_SCHEMAS)

    def test_empty_schema_always_rejected(self):
        with pytest.raises(SchemaError, match="empty schema"):
            validate_payload({"anything": 1}, {})

    def test_validation_errors_name_the_path(self):
        with pytest.raises(SchemaError, match="invalid at nodes"):
            validate_payload({"nodes": "wrong", "edges": []}, INIT_GRAPH_SCHEMA)


# --- HTTP transport against a scripted local server --------------------------------


class ShimStub:
    """Local HTTP server returning scripted (status, body) pairs in order."""

    def __init__(self):
        self.script = []
        self.requests = []
        self.url = ""
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *_args):
                pass

            def _serve(self):
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b""
                body = json.loads(raw) if raw else None
                stub.requests.append(
                    {
                        "method": self.command,
                        "path": self.path,
                        "headers": dict(self.headers),
                        "body": body,
                    }
                )
                if stub.script:
                    status, payload = stub.script.pop(0)
                else:
                    status, payload = 200, {"ok": True, "payload": {}}
                data = (
                    payload
                    if isinstance(payload, bytes)
                    else json.dumps(payload).encode("utf-8")
                )
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            do_GET = _serve
            do_POST = _serve

        self.handler = Handler


@pytest.fixture
def shim():
    stub = ShimStub()
    server = ThreadingHTTPServer(("127.0.0.1", 0), stub.handler)
    thread = threading.Thread(
        target=lambda: server.serve_forever(poll_interval=0.02), daemon=True
    )
    thread.start()
    stub.url = f"http://127.0.0.1:{server.server_port}"
    yield stub
    server.shutdown()
    thread.join(timeout=5)


def make_transport(shim, **kwargs):
    sleeps = []
    transport = HttpTransport(shim.url, sleeper=sleeps.append, **kwargs)
    transport.session.trust_env = False
    return transport, sleeps


def ok(payload: dict) -> dict:
    return {"ok": True, "payload": payload}


class TestHttpTransport:
    def test_post_unwraps_payload(self, shim):
        transport, sleeps = make_transport(shim)
        shim.script.append((200, ok({"answer": 42})))
        assert transport.post("/v1/reason", {"q": 1}) == {"answer": 42}
        assert sleeps == []
        assert shim.requests[0]["body"] == {"q": 1}
        assert shim.requests[0]["path"] == "/v1/reason"

    def test_server_errors_retried_with_backoff(self, shim):
        transport, sleeps = make_transport(shim)
        shim.script += [(500, {}), (503, {}), (200, ok({"fine": True}))]
        assert transport.post("/v1/reason", {}) == {"fine": True}
        assert len(shim.requests) == 3
        assert len(sleeps) == 2
        assert 0.5 <= sleeps[0] <= 0.55  # base delay plus bounded jitter
        assert 1.0 <= sleeps[1] <= 1.1

    def test_retries_exhausted_reports_attempts(self, shim):
        transport, sleeps = make_transport(shim, max_retries=3)
        shim.script += [(500, {})] * 3
        with pytest.raises(BackendError, match="after 3 attempts") as excinfo:
            transport.post("/v1/reason", {})
        assert excinfo.value.attempts == 3
        assert len(shim.requests) == 3
        assert len(sleeps) == 2

    def test_client_errors_not_retried(self, shim):
        transport, sleeps = make_transport(shim)
        shim.script.append(
            (400, {"ok": False, "error": {"code": "schema", "message": "bad field"}})
        )
        with pytest.raises(BackendError, match="bad field") as excinfo:
            transport.post("/v1/reason", {})
        assert excinfo.value.code == "schema"
        assert len(shim.requests) == 1
        assert sleeps == []

    def test_non_json_client_error_labelled(self, shim):
        transport, _ = make_transport(shim)
        shim.script.append((404, b"not found"))
        with pytest.raises(BackendError, match="HTTP 404") as excinfo:
            transport.post("/v1/reason", {})
        assert excinfo.value.code == "client"
        assert len(shim.requests) == 1

    def test_declared_failure_on_ok_status_raises(self, shim):
        transport, _ = make_transport(shim)
        shim.script.append(
            (200, {"ok": False, "error": {"code": "load_failure", "message": "cold"}})
        )
        with pytest.raises(BackendError, match="cold") as excinfo:
            transport.post("/v1/reason", {})
        assert excinfo.value.code == "load_failure"

    def test_envelope_without_ok_flag_is_protocol_error(self, shim):
        transport, sleeps = make_transport(shim)
        shim.script.append((200, {"payload": {}}))
        with pytest.raises(BackendError, match="malformed") as excinfo:
            transport.post("/v1/reason", {})
        assert excinfo.value.code == "protocol"
        assert len(shim.requests) == 1
        assert sleeps == []

    def test_unparseable_success_body_retried(self, shim):
        transport, _ = make_transport(shim)
        shim.script += [(200, b"garbage"), (200, ok({"x": 1}))]
        assert transport.post("/v1/reason", {}) == {"x": 1}
        assert len(shim.requests) == 2

    def test_bearer_token_header(self, shim):
        transport, _ = make_transport(shim, token="sekrit")
        shim.script.append((200, ok({})))
        transport.post("/v1/reason", {})
        assert shim.requests[0]["headers"].get("Authorization") == "Bearer sekrit"

    def test_no_token_no_auth_header(self, shim):
        transport, _ = make_transport(shim)
        shim.script.append((200, ok({})))
        transport.post("/v1/reason", {})
        assert "Authorization" not in shim.requests[0]["headers"]

    def test_capabilities_uses_get(self, shim):
        transport, _ = make_transport(shim)
        shim.script.append((200, ok({"kinds": ["reasoning"]})))
        assert transport.capabilities() == {"kinds": ["reasoning"]}
        assert shim.requests[0]["method"] == "GET"
        assert shim.requests[0]["path"] == "/v1/capabilities"


class TestHttpBackends:
    def test_reasoner_posts_and_validates(self, shim):
        transport, _ = make_transport(shim)
        graph = {"nodes": [{"id": "n", "label": "n", "attributes": {}}], "edges": []}
        shim.script.append((200, ok(graph)))
        reasoner = HttpReasoner(transport, IdempotencyCache())
        payload = {"kind": "init_graph", "payload": {"description": "x"}}
        assert reasoner.reason(payload, INIT_GRAPH_SCHEMA) == graph
        assert shim.requests[0]["body"] == payload

    def test_reasoner_schema_failure_surfaces(self, shim):
        transport, _ = make_transport(shim)
        shim.script.append((200, ok({"nodes": "junk"})))
        reasoner = HttpReasoner(transport, IdempotencyCache())
        with pytest.raises(SchemaError):
            reasoner.reason(
                {"kind": "init_graph", "payload": {}}, INIT_GRAPH_SCHEMA
            )

    def test_text_encoder_round_trip_and_cache(self, shim):
        transport, _ = make_transport(shim)
        log = CallLog()
        encoder = HttpTextEncoder(transport, IdempotencyCache(), dim=3, call_log=log)
        shim.script.append((200, ok({"vector": [1.0, 2.0, 3.0]})))
        first = encoder.encode_text("hello")
        second = encoder.encode_text("hello")
        np.testing.assert_array_equal(first, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(first, second)
        assert len(shim.requests) == 1  # idempotency cache absorbed the repeat
        assert log.count("text_encoder") == 2

    def test_text_encoder_wrong_length_rejected(self, shim):
        transport, _ = make_transport(shim)
        encoder = HttpTextEncoder(transport, IdempotencyCache(), dim=3)
        shim.script.append((200, ok({"vector": [1.0, 2.0]})))
        with pytest.raises(DimensionMismatchError, match="declared dim 3"):
            encoder.encode_text("hello")

    def test_text_encoder_dim_handshake(self, shim):
        transport, _ = make_transport(shim)
        encoder = HttpTextEncoder(transport, IdempotencyCache())
        shim.script.append((200, ok({"dims": {"text_encoder": 8}})))
        assert encoder.dim == 8
        assert shim.requests[0]["path"] == "/v1/capabilities"
        assert encoder.dim == 8  # cached, no second handshake
        assert len(shim.requests) == 1

    def test_text_encoder_missing_dim_handshake_fails(self, shim):
        transport, _ = make_transport(shim)
        encoder = HttpTextEncoder(transport, IdempotencyCache())
        shim.script.append((200, ok({"dims": {}})))
        with pytest.raises(BackendError, match="dim") as excinfo:
            encoder.dim
        assert excinfo.value.code == "handshake"

    def test_image_editor_round_trip(self, shim):
        transport, _ = make_transport(shim)
        editor = HttpImageEditor(transport, IdempotencyCache())
        image = red_fill(width=6, height=4)
        edited = np.flipud(image).copy()
        shim.script.append((200, ok({"image": png_encode(edited)})))
        out = editor.edit_image(image, None, "flip", operator={"kind": "recolor"})
        np.testing.assert_array_equal(out, edited)
        body = shim.requests[0]["body"]
        np.testing.assert_array_equal(png_decode(body["image"]), image)
        assert body["instruction"] == "flip"

    def test_image_editor_shape_change_rejected(self, shim):
        transport, _ = make_transport(shim)
        editor = HttpImageEditor(transport, IdempotencyCache())
        image = red_fill(width=6, height=4)
        wrong = np.zeros((2, 2, 3), dtype=np.uint8)
        shim.script.append((200, ok({"image": png_encode(wrong)})))
        with pytest.raises(ImageShapeError):
            editor.edit_image(image, None, "x")

    def test_latent_encoder_round_trip(self, shim):
        transport, _ = make_transport(shim)
        encoder = HttpLatentEncoder(transport, IdempotencyCache(), dim=2)
        shim.script.append((200, ok({"vector": [0.5, -0.5]})))
        latent = encoder.encode_image(red_fill(width=2, height=2))
        np.testing.assert_array_equal(latent, [0.5, -0.5])

    def test_denoiser_sends_schedule_bytes(self, shim):
        transport, _ = make_transport(shim)
        denoiser = HttpDenoiser(transport, IdempotencyCache())
        schedule = SimpleNamespace(to_bytes=lambda: b"CCLS-test-bytes")
        embedding = SimpleNamespace(
            positive_vec=np.array([1.0, 2.0]), negative_vec=np.array([3.0, 4.0])
        )
        shim.script.append((200, ok({"handle": "shim://video/1"})))
        result = denoiser.denoise(schedule, embedding)
        assert result == {"handle": "shim://video/1"}
        body = shim.requests[0]["body"]
        assert base64.b64decode(body["schedule"]) == b"CCLS-test-bytes"
        assert body["embedding"] == {"positive": [1.0, 2.0], "negative": [3.0, 4.0]}

    def test_http_suite_handshake_builds_descriptors(self, shim):
        shim.script.append(
            (
                200,
                ok(
                    {
                        "kinds": list(BACKEND_KINDS),
                        "dims": {"text_encoder": 8, "latent_encoder": 16},
                        "model_ids": {"reasoning": "stub-reasoner"},
                    }
                ),
            )
        )
        suite = http_suite(shim.url)
        assert len(shim.requests) == 1
        assert suite.descriptor_for("text_encoder").dims == 8
        assert suite.descriptor_for("latent_encoder").dims == 16
        assert suite.descriptor_for("reasoning").model_id == "stub-reasoner"
        assert suite.descriptor_for("denoiser").model_id == "unknown"
        # Declared dims reused without another handshake.
        assert suite.text_encoder.dim == 8
        assert suite.latent_encoder.dim == 16
        assert len(shim.requests) == 1
