import json
import os
import random
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pytest

from cce.config import RunConfig, build_config, load_config_file
from cce.dimension import DIMENSIONLESS, Quantity
from cce.formula import load_kb_files
from cce.pipeline import run
from cce.trajectory import ParameterTrajectory

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES_DIR = REPO_ROOT / "fixtures"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"

SCENARIOS = ("ball_sinking", "litmus", "ice_melting", "refraction", "spring")


@pytest.fixture(scope="session")
def kb():
    return load_kb_files()


def scenario_config(name: str, **overrides) -> RunConfig:
    values = load_config_file(str(FIXTURES_DIR / name / "config.cfg"))
    return build_config(values, overrides)


def make_traj(
    series: Dict[Tuple[str, str], List[float]], step: float = 1.0
) -> ParameterTrajectory:
    """Build a trajectory from plain dimensionless float series.

    Keys are (object_id, symbol); object_id "" goes into the derived track.
    """
    lengths = {len(vals) for vals in series.values()}
    assert len(lengths) == 1, "all series must have equal length"
    n = lengths.pop()
    object_ids = tuple(sorted({obj for obj, _ in series if obj}))
    samples = []
    derived = []
    for i in range(n):
        sample: Dict[str, Dict[str, Quantity]] = {obj: {} for obj in object_ids}
        derived_at: Dict[str, Quantity] = {}
        for (obj, sym), vals in series.items():
            q = Quantity(float(vals[i]), DIMENSIONLESS)
            if obj == "":
                derived_at[sym] = q
            else:
                sample[obj][sym] = q
        samples.append(sample)
        derived.append(derived_at)
    times = tuple(round(i * step, 12) for i in range(n))
    return ParameterTrajectory(
        object_ids=object_ids, times=times, samples=tuple(samples), derived=tuple(derived)
    )


def random_series_map(
    rng: random.Random,
    max_samples: int = 64,
    max_objects: int = 4,
    max_symbols: int = 6,
) -> Dict[Tuple[str, str], List[float]]:
    """Random multi-object series with occasional flats and repeated values so
    normalization corner cases (zero span, ties at the threshold) show up."""
    n = rng.randint(2, max_samples)
    n_objects = rng.randint(1, max_objects)
    series: Dict[Tuple[str, str], List[float]] = {}
    for o in range(n_objects):
        for s in range(rng.randint(1, max_symbols)):
            key = (f"obj{o}", f"s{s}")
            kind = rng.random()
            if kind < 0.15:
                series[key] = [rng.uniform(-5, 5)] * n
            elif kind < 0.5:
                base = rng.uniform(-5, 5)
                slope = rng.uniform(-2, 2)
                series[key] = [base + slope * i for i in range(n)]
            else:
                series[key] = [rng.uniform(-10, 10) for _ in range(n)]
    if rng.random() < 0.3:
        series[("", "d0")] = [rng.uniform(0, 1) for _ in range(n)]
    return series


def random_graph_chain(rng: random.Random):
    """A random base graph, event conditions, and conflict-free trigger rules.

    Returns (graph, conditions, rules). Rules write disjoint slots and use
    unique edge relations, so any subset may fire together without conflict.
    """
    from cce.events import PhysicalCondition
    from cce.rules import parse_rules
    from cce.scenegraph import ObjectNode, RelationEdge, SceneGraph

    n_nodes = rng.randint(2, 4)
    node_ids = [f"obj{i}" for i in range(n_nodes)]
    nodes = [
        ObjectNode.make(
            nid,
            f"object {i}",
            {"color": rng.choice(["red", "blue", "green"]), "state": "intact"},
        )
        for i, nid in enumerate(node_ids)
    ]
    edges = [
        RelationEdge.make(node_ids[i], node_ids[i + 1], f"near{i}")
        for i in range(n_nodes - 1)
        if rng.random() < 0.6
    ]
    graph = SceneGraph.make(nodes, edges, t_index=1)

    n_events = rng.randint(2, 6)
    walks = {nid: [rng.uniform(-2, 2)] for nid in node_ids}
    for nid in node_ids:
        for _ in range(n_events - 1):
            walks[nid].append(walks[nid][-1] + rng.uniform(-1.5, 1.5))
    conditions = []
    for t in range(n_events):
        conditions.append(
            PhysicalCondition(
                params={
                    nid: {"x": Quantity(walks[nid][t], DIMENSIONLESS)}
                    for nid in node_ids
                },
                derived={},
                t_index=t + 1,
                time_span=(float(t), float(t + 1)),
            )
        )

    lines = []
    for j, nid in enumerate(node_ids):
        kind = rng.random()
        threshold = rng.uniform(-2, 2)
        if kind < 0.3:
            lines.append(
                f"when {nid}.x crosses {threshold:.3f} "
                f"{rng.choice(['rising', 'falling'])} -> set {nid}.a{j} = hit"
            )
        elif kind < 0.55:
            comparator = rng.choice([">=", "<=", ">", "<"])
            lines.append(
                f"when {nid}.x {comparator} {threshold:.3f} "
                f"-> relabel {nid} to flagged object {j}"
            )
        elif kind < 0.8 and len(node_ids) >= 2:
            other = node_ids[(j + 1) % len(node_ids)]
            op = rng.choice(["add_edge", "remove_edge"])
            lines.append(
                f"when {nid}.x {rng.choice(['increases', 'decreases'])} "
                f"-> {op} {nid} touch{j} {other}"
            )
        else:
            lines.append(
                f"when {nid}.x changes_sign -> set {nid}.b{j} = flipped"
            )
    rules = parse_rules("\n".join(lines))
    return graph, conditions, rules


class ScenarioRun:
    """Cached result of one full mock pipeline run."""

    def __init__(self, manifest, path: str):
        self.manifest = manifest
        self.path = path
        with open(path, "rb") as fh:
            self.manifest_bytes = fh.read()
        self.run_dir = os.path.dirname(path)

    @property
    def body(self) -> dict:
        return json.loads(self.manifest_bytes)

    def stage(self, name: str) -> dict:
        return self.body["stages"][name]


@pytest.fixture(scope="session")
def scenario_runs(tmp_path_factory) -> Dict[str, ScenarioRun]:
    """One completed run per bundled scenario, shared across the session."""
    out_dir = tmp_path_factory.mktemp("scenario_runs")
    results: Dict[str, ScenarioRun] = {}
    for name in SCENARIOS:
        config = scenario_config(name)
        manifest, path = run(config, str(out_dir / name))
        results[name] = ScenarioRun(manifest, path)
    return results
