"""Append-only manifest invariants: ordering, digests, and round trips."""

import json
import os

import pytest

from cce.errors import StageError
from cce.manifest import (
    MANIFEST_VERSION,
    STAGE_ORDER,
    RunManifest,
    section_digest,
)


def fresh() -> RunManifest:
    return RunManifest({"seed": 1, "input_description": "x"}, "cfg-digest")


def record_through(manifest: RunManifest, upto: str, sections=None) -> None:
    """Record empty sections for every stage up to and including `upto`."""
    sections = sections or {}
    for name in STAGE_ORDER[: STAGE_ORDER.index(upto) + 1]:
        manifest.record_stage(name, sections.get(name, {"stage": name}))


class TestSectionDigest:
    def test_key_order_irrelevant(self):
        assert section_digest({"a": 1, "b": [2, 3]}) == section_digest({"b": [2, 3], "a": 1})

    def test_values_matter(self):
        assert section_digest({"a": 1}) != section_digest({"a": 2})


class TestRecordStage:
    def test_stages_record_in_declared_order(self):
        manifest = fresh()
        record_through(manifest, "denoise")
        assert list(manifest.stages) == list(STAGE_ORDER)
        for name in STAGE_ORDER:
            assert manifest.has_stage(name)
            assert manifest.stage(name) == {"stage": name}

    def test_skipping_a_stage_rejected(self):
        manifest = fresh()
        manifest.record_stage("law", {})
        with pytest.raises(StageError, match="order is fixed"):
            manifest.record_stage("trajectory", {})

    def test_rewriting_a_stage_rejected(self):
        manifest = fresh()
        manifest.record_stage("law", {"v": 1})
        with pytest.raises(StageError, match="append-only"):
            manifest.record_stage("law", {"v": 2})

    def test_unknown_stage_rejected(self):
        with pytest.raises(StageError, match="unknown stage"):
            fresh().record_stage("render", {})

    def test_missing_stage_lookup_fails(self):
        with pytest.raises(StageError, match="not present"):
            fresh().stage("law")

    def test_timings_recorded_per_stage(self):
        manifest = fresh()
        manifest.record_stage("law", {}, elapsed_s=1.25)
        assert manifest.to_json()["timings"]["law"] == 1.25


class TestFinish:
    def test_finish_sets_status_and_call_log(self):
        manifest = fresh()
        manifest.finish(["k1", "k2"], status="complete")
        body = manifest.to_json()
        assert body["status"] == "complete"
        assert body["call_log"] == ["k1", "k2"]
        assert body["failed_stage"] is None

    def test_failed_runs_name_the_stage(self):
        manifest = fresh()
        manifest.finish([], status="failed", failed_stage="graph")
        body = manifest.to_json()
        assert body["status"] == "failed"
        assert body["failed_stage"] == "graph"


class TestCrossReferences:
    def test_untouched_manifest_passes(self):
        manifest = fresh()
        record_through(manifest, "denoise")
        manifest.validate_cross_references()

    def test_mutated_section_detected(self):
        manifest = fresh()
        section = {"events": []}
        manifest.record_stage("law", section)
        section["events"].append("sneaky")
        with pytest.raises(StageError, match="mutated"):
            manifest.validate_cross_references()

    def test_event_and_graph_counts_must_agree(self):
        manifest = fresh()
        record_through(
            manifest,
            "graph",
            sections={
                "trajectory": {"events": [1, 2, 3]},
                "graph": {"graphs": [1, 2]},
            },
        )
        with pytest.raises(StageError, match="scene graphs"):
            manifest.validate_cross_references()

    def test_event_and_narrative_counts_must_agree(self):
        manifest = fresh()
        record_through(
            manifest,
            "narrative",
            sections={
                "trajectory": {"events": [1, 2]},
                "graph": {"graphs": [1, 2]},
                "narrative": {"narratives": [1]},
            },
        )
        with pytest.raises(StageError, match="narratives"):
            manifest.validate_cross_references()


class TestSerialization:
    def test_dumps_deterministic_with_trailing_newline(self):
        a, b = fresh(), fresh()
        record_through(a, "law")
        record_through(b, "law")
        assert a.dumps() == b.dumps()
        assert a.dumps().endswith("\n")
        assert a.digest() == b.digest()

    def test_digest_tracks_content(self):
        a, b = fresh(), fresh()
        a.record_stage("law", {"law": "cooling"})
        b.record_stage("law", {"law": "buoyancy"})
        assert a.digest() != b.digest()

    def test_to_json_detached_from_internal_state(self):
        manifest = fresh()
        record_through(manifest, "law")
        body = manifest.to_json()
        body["stages"]["law"]["stage"] = "tampered"
        assert manifest.stage("law") == {"stage": "law"}

    def test_write_then_load_round_trips(self, tmp_path):
        manifest = fresh()
        record_through(manifest, "trajectory")
        manifest.finish(["k"], status="complete")
        path = str(tmp_path / "manifest.json")
        manifest.write(path)

        loaded = RunManifest.load(path)
        assert loaded.to_json() == manifest.to_json()
        assert loaded.digest() == manifest.digest()
        assert not os.path.exists(f"{path}.tmp")

    def test_load_rejects_other_versions(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"manifest_version": MANIFEST_VERSION + 1}))
        with pytest.raises(StageError, match="manifest_version"):
            RunManifest.load(str(path))

    def test_version_constant_recorded(self):
        assert fresh().to_json()["manifest_version"] == MANIFEST_VERSION == 1
