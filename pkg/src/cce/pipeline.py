"""End-to-end orchestration: description in, run manifest out.

Stage order is fixed: law classification, formula grounding, trajectory and
segmentation, scene-graph evolution, narrative revision, keyframes and latent
schedule, prompt package, optional denoise. Each stage records one manifest
section; a failure persists the partial manifest with the failing stage
marked. With mock backends and a fixed seed the manifest is byte-stable.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import narrative as narrative_mod
from .backends.base import BackendSuite
from .backends.mock import mock_suite
from .backends.schemas import PROPOSE_BINDINGS_SCHEMA
from .config import RunConfig
from .dimension import Quantity, quantity
from .errors import CceError, StageError
from .events import (
    DeltaNormalizer,
    PhysicalCondition,
    boundary_scores,
    chain_digest,
    detect_boundaries,
    reinfer_on_violation,
    segment,
    validate_continuity,
)
from .formula import (
    FallbackBudget,
    Formula,
    KnowledgeBase,
    PhysicalLaw,
    load_kb_files,
)
from .formula.kb import _cosine, _tokens, _trigrams
from .imaging import ImageCache, png_bytes
from .keyframes import EditOperator, TimeSpan, plan_operator, synthesize_keyframes
from .latents import LatentSchedule, build_schedule
from .manifest import STAGE_ORDER, RunManifest
from .rules import TriggerRule, derive_delta, load_rules
from .scenegraph import GraphDelta, SceneGraph, apply_delta, init_graph
from .trajectory import ParameterTrajectory, simulate_trajectory

logger = logging.getLogger(__name__)


_STOPWORDS = frozenset(
    "a an and as at by for in into it its of on or over the through to toward "
    "with".split()
)


def _content_tokens(text: str) -> set:
    """Lowercase word set minus stopwords, with plural/3rd-person s stripped."""
    out = set()
    for token in _tokens(text):
        if token in _STOPWORDS:
            continue
        if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
            token = token[:-1]
        out.add(token)
    return out


def classify_law(description: str, kb: KnowledgeBase):
    """Deterministic law selection: content-word overlap against the law's
    name, domain and description, with trigram similarity as a soft tiebreak."""
    query_tokens = _content_tokens(description)
    query_grams = _trigrams(description)
    best = None
    for law in sorted(kb.laws.values(), key=lambda l: l.id):
        text = f"{law.name} {law.domain} {law.description}"
        law_tokens = _content_tokens(text)
        overlap = (
            len(query_tokens & law_tokens) / len(query_tokens) if query_tokens else 0.0
        )
        score = overlap + 0.5 * _cosine(query_grams, _trigrams(text))
        if best is None or score > best[1]:
            best = (law, score)
    if best is None:
        raise StageError("knowledge base has no laws")
    return best


@dataclass
class RunState:
    """Mutable pipeline context; stages append, later stages read earlier fields."""

    config: RunConfig
    suite: BackendSuite
    kb: KnowledgeBase
    run_dir: str
    law: Optional[PhysicalLaw] = None
    formulas: List[Formula] = field(default_factory=list)
    trajectory: Optional[ParameterTrajectory] = None
    normalizer: Optional[DeltaNormalizer] = None
    chain: List[PhysicalCondition] = field(default_factory=list)
    graphs: List[SceneGraph] = field(default_factory=list)
    deltas: List[GraphDelta] = field(default_factory=list)
    narratives: List[narrative_mod.EventNarrative] = field(default_factory=list)
    operators: List[EditOperator] = field(default_factory=list)
    spans: List[TimeSpan] = field(default_factory=list)
    keyframes: list = field(default_factory=list)
    schedule: Optional[LatentSchedule] = None
    prompt_pair: Optional[narrative_mod.PromptPair] = None
    embedding: Optional[narrative_mod.PromptEmbedding] = None
    rules: List[TriggerRule] = field(default_factory=list)


def _load_fixtures(path: Optional[str]) -> List[dict]:
    if not path:
        return []
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise StageError(f"fixtures file {path} must hold a JSON array")
    return data


def build_suite(config: RunConfig) -> BackendSuite:
    if config.backends == "mock":
        return mock_suite(seed=config.seed, fixtures=_load_fixtures(config.fixtures_path))
    from .backends.http import http_suite

    return http_suite(
        config.backend_url,
        token=config.backend_token or "",
        max_retries=config.max_retries,
    )


# --- stages -------------------------------------------------------------------


def _stage_law(state: RunState) -> dict:
    law, score = classify_law(state.config.input_description, state.kb)
    state.law = law
    return {
        "law_id": law.id,
        "law_name": law.name,
        "domain": law.domain,
        "score": round(score, 12),
    }


def _stage_grounding(state: RunState) -> dict:
    config = state.config
    if not config.pfg:
        state.formulas = []
        return {"enabled": False, "formula_ids": [], "query_names": [], "fallback_rounds": 0}
    query_names = [config.input_description]
    budget = FallbackBudget(max_rounds=config.max_fallback_rounds)
    rounds = 0
    while True:
        result = state.kb.retrieve_topk(query_names, state.law, k=config.top_k)
        if not result.below_threshold:
            break
        candidates = state.kb.formulas_for_law(state.law)
        query_names = state.kb.retrieval_fallback(
            state.law, candidates, state.suite.reasoning, budget
        )
        rounds += 1
    state.formulas = list(result.formulas)
    return {
        "enabled": True,
        "query_names": query_names,
        "formula_ids": [f.id for f in state.formulas],
        "scores": [round(s, 12) for _, s in result.ranked],
        "fallback_rounds": rounds,
    }


def _propose_bindings(state: RunState, graph: SceneGraph) -> Dict[str, Dict[str, Quantity]]:
    """One reasoning call per object; values arrive in declared units and are
    rebuilt as SI quantities (the dimension check happens by construction)."""
    variables: Dict[str, dict] = {}
    for formula in state.formulas:
        for decl in formula.variables:
            if decl.symbol == "t" or decl.symbol in variables:
                continue
            entry = {"symbol": decl.symbol, "unit": decl.unit_label or str(decl.dimension)}
            if decl.default is not None:
                entry["default"] = float(decl.default.value)
            variables[decl.symbol] = entry
    ordered = [variables[s] for s in sorted(variables)]
    unit_of = {
        v["symbol"]: next(
            d.unit_label
            for f in state.formulas
            for d in f.variables
            if d.symbol == v["symbol"]
        )
        for v in ordered
    }
    initial: Dict[str, Dict[str, Quantity]] = {}
    for node_id in graph.node_ids():
        response = state.suite.reasoning.reason(
            {
                "kind": "propose_bindings",
                "payload": {
                    "description": state.config.input_description,
                    "object_id": node_id,
                    "label": graph.node(node_id).label,
                    "variables": ordered,
                },
            },
            PROPOSE_BINDINGS_SCHEMA,
        )
        bindings: Dict[str, Quantity] = {}
        for symbol, value in response["bindings"].items():
            if symbol not in unit_of:
                logger.warning("ignoring unrequested binding %s for %s", symbol, node_id)
                continue
            unit = unit_of[symbol] or "1"
            bindings[symbol] = quantity(float(value), unit)
        initial[node_id] = bindings
    return initial


def _constant_trajectory(object_ids, horizon: float, step: float) -> ParameterTrajectory:
    """Flat trajectory with no series: used when formula grounding is disabled."""
    n_steps = int(math.floor(horizon / step + 1e-9))
    times = tuple(round(i * step, 12) for i in range(n_steps + 1))
    return ParameterTrajectory(
        object_ids=tuple(sorted(object_ids)),
        times=times,
        samples=tuple({obj: {} for obj in object_ids} for _ in times),
        derived=tuple({} for _ in times),
    )


def _stage_trajectory(state: RunState) -> dict:
    config = state.config
    graph = init_graph(config.input_description, state.suite.reasoning)
    if state.formulas:
        initial = _propose_bindings(state, graph)
        traj = simulate_trajectory(
            state.formulas, initial, horizon=config.horizon, step=config.step
        )
    else:
        traj = _constant_trajectory(graph.node_ids(), config.horizon, config.step)
    state.trajectory = traj
    state.normalizer = DeltaNormalizer(traj)
    if config.ppd:
        scores = boundary_scores(traj)
        boundaries = detect_boundaries(traj, tau_p=config.tau_p, min_gap=config.min_gap)
    else:
        scores = []
        boundaries = []
    chain = segment(traj, boundaries, max_events=config.max_events,
                    scores=scores if scores else None)
    report = validate_continuity(chain, config.monotone_decls(), kappa=config.kappa)
    reinfer_applied = False
    if not report.accepted:
        chain = reinfer_on_violation(
            report,
            chain,
            state.suite.reasoning,
            config.monotone_decls(),
            kappa=config.kappa,
            max_retries=config.max_retries,
        )
        reinfer_applied = True
        final_report = validate_continuity(chain, config.monotone_decls(), kappa=config.kappa)
    else:
        final_report = report
    state.chain = list(chain)
    return {
        "object_ids": list(traj.object_ids),
        "horizon": config.horizon,
        "step": config.step,
        "trajectory": traj.to_json(),
        "trajectory_digest": traj.digest(),
        "scores": [round(s, 12) for s in scores],
        "boundaries": list(boundaries),
        "events": [c.to_json() for c in state.chain],
        "chain_digest": chain_digest(state.chain),
        "validation": {
            "initial_violations": [v.to_json() for v in report.violations],
            "reinfer_applied": reinfer_applied,
            "accepted": final_report.accepted,
        },
        "segmentation_enabled": bool(config.ppd),
    }


def _restore_trajectory(state: RunState, section: dict) -> None:
    state.trajectory = ParameterTrajectory.from_json(section["trajectory"])
    state.normalizer = DeltaNormalizer(state.trajectory)
    state.chain = [PhysicalCondition.from_json(e) for e in section["events"]]


def _stage_graph(state: RunState) -> dict:
    config = state.config
    state.rules = load_rules(config.rules_path) if config.rules_path else []
    graph = init_graph(config.input_description, state.suite.reasoning)
    graphs = [graph]
    deltas: List[GraphDelta] = []
    for cond in state.chain[1:]:
        prev_cond = state.chain[cond.t_index - 2]
        delta = derive_delta(
            graphs[-1], prev_cond, cond, state.rules, state.suite.reasoning
        )
        graphs.append(apply_delta(graphs[-1], delta))
        deltas.append(delta)
    state.graphs = graphs
    state.deltas = deltas
    return {
        "graphs": [g.to_json() for g in graphs],
        "graph_digests": [g.digest() for g in graphs],
        "deltas": [d.to_json() for d in deltas],
        "rules_path": config.rules_path,
    }


def _restore_graph(state: RunState, section: dict) -> None:
    state.graphs = [SceneGraph.from_json(g) for g in section["graphs"]]
    state.rules = load_rules(state.config.rules_path) if state.config.rules_path else []
    state.deltas = [_delta_from_json(d) for d in section["deltas"]]


def _delta_from_json(data: dict) -> GraphDelta:
    from .scenegraph import DeltaEntry, ObjectNode, Provenance, _attr_from_json

    entries = []
    for entry in data["entries"]:
        prov = Provenance(**entry["provenance"])
        added = entry.get("added_node")
        entries.append(
            DeltaEntry(
                entry=entry["entry"],
                provenance=prov,
                node=entry.get("node", ""),
                attribute=entry.get("attribute", ""),
                old=_attr_from_json(entry["old"]) if "old" in entry else None,
                new=_attr_from_json(entry["new"]) if "new" in entry else None,
                source=entry.get("source", ""),
                target=entry.get("target", ""),
                relation=entry.get("relation", ""),
                added_node=(
                    ObjectNode.make(
                        added["id"],
                        added["label"],
                        {k: _attr_from_json(v) for k, v in added.get("attributes", {}).items()},
                    )
                    if added
                    else None
                ),
            )
        )
    return GraphDelta(entries=tuple(entries))


def _stage_narrative(state: RunState) -> dict:
    config = state.config
    decls = config.monotone_decls()
    first = narrative_mod.EventNarrative(
        t_index=1, text=config.input_description, changed_spans=()
    )
    narratives = [first]
    for cond in state.chain[1:]:
        idx = cond.t_index - 1  # position in chain/graphs lists
        prev = (
            narratives[-1]
            if config.pnr
            else narrative_mod.EventNarrative(
                t_index=cond.t_index - 1, text=config.input_description
            )
        )
        narratives.append(
            narrative_mod.revise(
                prev,
                cond,
                state.deltas[idx - 1],
                state.suite.reasoning,
                state.graphs[idx],
                monotone_decls=decls,
            )
        )
    state.narratives = narratives
    return {
        "narratives": [n.to_json() for n in narratives],
        "progressive": bool(config.pnr),
        "forbidden_words": narrative_mod.forbidden_words(decls),
    }


def _restore_narrative(state: RunState, section: dict) -> None:
    state.narratives = [
        narrative_mod.EventNarrative(
            t_index=n["t_index"],
            text=n["text"],
            changed_spans=tuple(tuple(span) for span in n["changed_spans"]),
        )
        for n in section["narratives"]
    ]


def _stage_keyframes(state: RunState) -> dict:
    config = state.config
    section: dict = {"enabled": bool(config.iks)}
    if config.iks:
        operators: List[EditOperator] = []
        spans: List[TimeSpan] = []
        for cond in state.chain[1:]:
            idx = cond.t_index - 1
            operator, span = plan_operator(
                state.chain[idx - 1],
                state.graphs[idx - 1],
                cond,
                state.graphs[idx],
                state.suite.reasoning,
                state.normalizer,
                d_min=config.d_min,
                d_max=config.d_max,
            )
            operators.append(operator)
            spans.append(span)
        cache = ImageCache(
            os.path.join(config.cache_dir, "keyframes") if config.cache_dir else None
        )
        width, height = config.resolution
        keyframes = synthesize_keyframes(
            state.chain,
            operators,
            state.narratives[0].text,
            state.suite.image_editor,
            width=width,
            height=height,
            cache=cache,
        )
        schedule = build_schedule(
            keyframes,
            spans,
            state.suite.latent_encoder,
            sigma=config.sigma,
            seed=config.seed,
            rate=config.latent_rate,
            target_frames=config.target_latent_frames,
            mode=config.noise_mode,
        )
        state.operators = operators
        state.spans = spans
        state.keyframes = keyframes
        kf_dir = os.path.join(state.run_dir, "keyframes")
        os.makedirs(kf_dir, exist_ok=True)
        for frame in keyframes:
            path = os.path.join(kf_dir, f"{frame.image_ref}.png")
            if not os.path.exists(path):
                with open(path, "wb") as fh:
                    fh.write(png_bytes(frame.image))
        section.update(
            {
                "operators": [op.to_json() for op in operators],
                "spans": [span.d for span in spans],
                "keyframes": [frame.to_json() for frame in keyframes],
                "keyframe_files": [
                    os.path.join("keyframes", f"{frame.image_ref}.png")
                    for frame in keyframes
                ],
            }
        )
    else:
        dim = getattr(state.suite.latent_encoder, "dim", None)
        if dim is None:
            desc = state.suite.descriptor_for("latent_encoder")
            dim = desc.dims if desc else 64
        rng = np.random.Generator(np.random.PCG64(config.seed))
        multiplier = (
            config.sigma if config.noise_mode == "standard" else config.sigma**2
        )
        frames = multiplier * rng.standard_normal(
            (config.target_latent_frames, int(dim))
        )
        schedule = LatentSchedule(
            frames=frames,
            segment_pairs=tuple((0, 0) for _ in range(frames.shape[0])),
            noise_sigma=float(config.sigma),
            seed=config.seed,
            mode=config.noise_mode,
        )
        section.update({"operators": [], "spans": [], "keyframes": [], "keyframe_files": []})
    state.schedule = schedule
    ccls_name = "schedule.ccls"
    with open(os.path.join(state.run_dir, ccls_name), "wb") as fh:
        fh.write(schedule.to_bytes())
    section["schedule"] = schedule.to_json()
    section["schedule_file"] = ccls_name
    return section


def _stage_package(state: RunState) -> dict:
    config = state.config
    decls = config.monotone_decls()
    pair = narrative_mod.condense(
        state.narratives,
        limit=config.token_budget,
        forbidden=narrative_mod.forbidden_words(decls),
    )
    embedding = narrative_mod.embed_pair(pair, state.suite.text_encoder)
    state.prompt_pair = pair
    state.embedding = embedding
    concat = embedding.concatenated.astype("<f8")
    blob = concat.tobytes()
    import hashlib

    digest = hashlib.sha256(blob).hexdigest()
    emb_name = f"embedding_{digest[:16]}.bin"
    with open(os.path.join(state.run_dir, emb_name), "wb") as fh:
        fh.write(blob)
    return {
        "prompt_pair": pair.to_json(),
        "embedding": {
            "dim": int(concat.shape[0]),
            "digest": digest,
            "file": emb_name,
            "order": "positive_then_negative",
        },
        "tau_z_fraction": config.tau_z_fraction,
    }


def _stage_denoise(state: RunState) -> dict:
    if state.config.emit_package_only:
        return {"skipped": True}
    result = state.suite.denoiser.denoise(state.schedule, state.embedding)
    return {"skipped": False, "result": result}


_STAGE_FUNCS = {
    "law": _stage_law,
    "grounding": _stage_grounding,
    "trajectory": _stage_trajectory,
    "graph": _stage_graph,
    "narrative": _stage_narrative,
    "keyframes": _stage_keyframes,
    "package": _stage_package,
    "denoise": _stage_denoise,
}

_RESTORE_FUNCS = {
    "trajectory": _restore_trajectory,
    "graph": _restore_graph,
    "narrative": _restore_narrative,
}


def _restore_stage(state: RunState, name: str, section: dict) -> None:
    if name == "law":
        state.law = state.kb.law(section["law_id"])
    elif name == "grounding":
        missing = [fid for fid in section["formula_ids"] if fid not in state.kb.formulas]
        if missing:
            raise StageError(f"manifest references unknown formulas: {missing}")
        state.formulas = [state.kb.formulas[fid] for fid in section["formula_ids"]]
    elif name in _RESTORE_FUNCS:
        _RESTORE_FUNCS[name](state, section)
    # keyframes/package/denoise sections have no upstream consumers


def run(
    config: RunConfig,
    out_dir: str,
    suite: Optional[BackendSuite] = None,
    kb: Optional[KnowledgeBase] = None,
    resume: Optional[RunManifest] = None,
    from_stage: Optional[str] = None,
) -> Tuple[RunManifest, str]:
    """Execute the pipeline, writing manifest plus artifacts under out_dir.

    With `resume`/`from_stage`, sections before from_stage are reused verbatim
    from the old manifest (their objects restored into the run state) and only
    from_stage onward is recomputed.
    """
    config.validate()
    if kb is None:
        kb = load_kb_files()
        kb.match_threshold = config.tau_match
    if suite is None:
        suite = build_suite(config)
    run_dir = os.path.join(out_dir, f"run_{config.digest()[:16]}")
    os.makedirs(run_dir, exist_ok=True)
    state = RunState(config=config, suite=suite, kb=kb, run_dir=run_dir)
    manifest = RunManifest(config.to_json(), config.digest())
    manifest_path = os.path.join(run_dir, "manifest.json")

    if from_stage is not None:
        if from_stage not in STAGE_ORDER:
            raise StageError(f"unknown stage {from_stage!r}")
        if resume is None:
            raise StageError("from_stage requires a manifest to resume from")

    wall: Dict[str, float] = {}
    mock_mode = config.backends == "mock"
    start_index = 0
    if from_stage is not None:
        start_index = STAGE_ORDER.index(from_stage)
        for name in STAGE_ORDER[:start_index]:
            if not resume.has_stage(name):
                raise StageError(f"resume manifest lacks stage {name!r}")
            section = resume.stage(name)
            _restore_stage(state, name, section)
            manifest.record_stage(name, section)

    for name in STAGE_ORDER[start_index:]:
        func = _STAGE_FUNCS[name]
        begin = time.perf_counter()
        try:
            section = func(state)
        except Exception as exc:
            manifest.finish(
                [f"{kind}:{key}" for kind, key in suite.call_log.snapshot()],
                status="failed",
                failed_stage=name,
            )
            manifest.write(manifest_path)
            raise StageError(
                f"stage {name!r} failed: {exc}", stage=name, cause=exc
            ) from exc
        elapsed = time.perf_counter() - begin
        wall[name] = elapsed
        manifest.record_stage(name, section, elapsed_s=0.0 if mock_mode else elapsed)

    manifest.finish([f"{kind}:{key}" for kind, key in suite.call_log.snapshot()])
    manifest.validate_cross_references()
    manifest.write(manifest_path)
    with open(os.path.join(run_dir, "timings.json"), "w", encoding="utf-8") as fh:
        json.dump(wall, fh, indent=2, sort_keys=True)
    return manifest, manifest_path


def replay(
    manifest_path: str,
    from_stage: str,
    config: RunConfig,
    out_dir: Optional[str] = None,
    suite: Optional[BackendSuite] = None,
) -> Tuple[RunManifest, str]:
    """Re-run a manifest from a stage onward, reusing everything before it.

    The caller supplies the run configuration (the manifest only stores its
    digest); a mismatch means the inputs changed and the sections cannot be
    trusted, so that is an error rather than a silent recompute.
    """
    old = RunManifest.load(manifest_path)
    recorded = old.to_json()["config_digest"]
    if config.digest() != recorded:
        raise StageError(
            "config does not match the manifest being replayed "
            f"(digest {config.digest()[:12]} vs recorded {recorded[:12]})"
        )
    target = out_dir if out_dir is not None else os.path.dirname(os.path.dirname(manifest_path))
    return run(config, target, suite=suite, resume=old, from_stage=from_stage)
