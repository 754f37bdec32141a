"""Append-only run manifests.

A manifest records every stage's outputs with digests so any stage can be
replayed and byte-compared. Stage timings inside the manifest are zeroed
under mock backends to keep manifests reproducible; wall-clock numbers go to
a sidecar file instead.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Dict, List, Optional

from .errors import StageError

MANIFEST_VERSION = 1

STAGE_ORDER = (
    "law",
    "grounding",
    "trajectory",
    "graph",
    "narrative",
    "keyframes",
    "package",
    "denoise",
)


def section_digest(section: dict) -> str:
    blob = json.dumps(section, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class RunManifest:
    """Accumulates stage sections in pipeline order; sections never mutate
    once recorded."""

    def __init__(self, config_json: dict, config_digest: str):
        self._body: Dict[str, object] = {
            "manifest_version": MANIFEST_VERSION,
            "config": config_json,
            "config_digest": config_digest,
            "stages": {},
            "stage_digests": {},
            "timings": {},
            "call_log": [],
            "status": "running",
            "failed_stage": None,
        }

    @property
    def stages(self) -> Dict[str, dict]:
        return self._body["stages"]  # type: ignore[return-value]

    def has_stage(self, name: str) -> bool:
        return name in self.stages

    def stage(self, name: str) -> dict:
        if name not in self.stages:
            raise StageError(f"stage {name!r} not present in manifest")
        return self.stages[name]

    def record_stage(self, name: str, section: dict, elapsed_s: float = 0.0) -> None:
        if name not in STAGE_ORDER:
            raise StageError(f"unknown stage {name!r}")
        if name in self.stages:
            raise StageError(f"stage {name!r} already recorded; manifests are append-only")
        recorded = set(self.stages)
        for earlier in STAGE_ORDER[: STAGE_ORDER.index(name)]:
            if earlier not in recorded:
                raise StageError(
                    f"stage {name!r} recorded before {earlier!r}; order is fixed"
                )
        self.stages[name] = section
        self._body["stage_digests"][name] = section_digest(section)
        self._body["timings"][name] = elapsed_s

    def finish(self, call_log_keys: List[str], status: str = "complete",
               failed_stage: Optional[str] = None) -> None:
        self._body["call_log"] = list(call_log_keys)
        self._body["status"] = status
        self._body["failed_stage"] = failed_stage

    def validate_cross_references(self) -> None:
        """Final consistency pass: every stage digest matches its section."""
        for name, section in self.stages.items():
            expected = self._body["stage_digests"][name]
            actual = section_digest(section)
            if actual != expected:
                raise StageError(f"stage {name!r} digest mismatch: section was mutated")
        chain = self.stages.get("trajectory", {}).get("events")
        graphs = self.stages.get("graph", {}).get("graphs")
        if chain is not None and graphs is not None and len(chain) != len(graphs):
            raise StageError(
                f"{len(chain)} events but {len(graphs)} scene graphs in manifest"
            )
        narratives = self.stages.get("narrative", {}).get("narratives")
        if chain is not None and narratives is not None and len(chain) != len(narratives):
            raise StageError(
                f"{len(chain)} events but {len(narratives)} narratives in manifest"
            )

    def to_json(self) -> dict:
        return json.loads(json.dumps(self._body))

    def dumps(self) -> str:
        return json.dumps(self._body, sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def write(self, path: str) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())
        os.replace(tmp, path)

    @staticmethod
    def load(path: str) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            body = json.load(fh)
        if body.get("manifest_version") != MANIFEST_VERSION:
            raise StageError(
                f"unsupported manifest_version {body.get('manifest_version')!r}"
            )
        manifest = RunManifest(body["config"], body["config_digest"])
        manifest._body = body
        return manifest
