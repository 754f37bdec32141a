"""Run reports: matplotlib figures plus tab-delimited tables from a manifest.

Everything here is read-only over a finished run directory; figures render
through the Agg backend so reports work headless.
"""

from __future__ import annotations

import os
from typing import Dict, List, Optional, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import StageError
from .imaging import mean_hue, png_to_array
from .latents import read_ccls
from .manifest import RunManifest

FIGURE_DPI = 110


def _series_table(traj_json: dict) -> Tuple[List[str], List[List[float]]]:
    """Flatten trajectory JSON into (column names, per-sample rows)."""
    times = traj_json["times"]
    columns: List[str] = []
    series: List[List[float]] = []
    for obj in sorted(traj_json["samples"][0]):
        for sym in sorted(traj_json["samples"][0][obj]):
            columns.append(f"{obj}.{sym}")
            series.append(
                [float(s[obj][sym]["value"]) for s in traj_json["samples"]]
            )
    for sym in sorted(traj_json["derived"][0]):
        columns.append(f"derived.{sym}")
        series.append([float(d[sym]["value"]) for d in traj_json["derived"]])
    rows = [[series[c][i] for c in range(len(columns))] for i in range(len(times))]
    return columns, rows


def _write_tsv(path: str, header: List[str], rows: List[List[object]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")


def _cell(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _fig_trajectory(traj_json: dict, boundaries: List[int], path: str) -> None:
    times = traj_json["times"]
    columns, rows = _series_table(traj_json)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for idx, name in enumerate(columns):
        values = [row[idx] for row in rows]
        lo, hi = min(values), max(values)
        if hi > lo:  # flat series clutter the plot without adding information
            ax.plot(times, values, label=name)
    for b in boundaries:
        ax.axvline(times[b], color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("value")
    ax.set_title("parameter trajectory")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def _fig_scores(traj_section: dict, tau_p: float, path: str) -> None:
    scores = traj_section["scores"]
    times = traj_section["trajectory"]["times"]
    fig, ax = plt.subplots(figsize=(8, 3.2))
    if scores:
        ax.bar(times[1:], scores, width=(times[1] - times[0]) * 0.8, color="#4878b0")
    ax.axhline(tau_p, color="firebrick", linestyle="--", linewidth=1, label="tau_p")
    for b in traj_section["boundaries"]:
        ax.axvline(times[b], color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("step score")
    ax.set_title("boundary scores")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def _fig_hues(hues: List[float], path: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(1, len(hues) + 1), hues, marker="o")
    ax.set_xticks(range(1, len(hues) + 1))
    ax.set_xlabel("keyframe")
    ax.set_ylabel("mean hue (unwrapped)")
    ax.set_title("keyframe hue trajectory")
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def _fig_schedule(frames: np.ndarray, junctions: List[int], path: str) -> None:
    fig, ax = plt.subplots(figsize=(8, 3.6))
    image = ax.imshow(frames.T, aspect="auto", origin="lower", cmap="viridis")
    for j in junctions:
        ax.axvline(j, color="white", linestyle=":", linewidth=0.8)
    ax.set_xlabel("latent frame")
    ax.set_ylabel("channel")
    ax.set_title("latent schedule")
    fig.colorbar(image, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def render_report(
    manifest: RunManifest, run_dir: str, out_dir: Optional[str] = None
) -> List[str]:
    """Write figures and TSV tables for a finished run; returns created paths."""
    body = manifest.to_json()
    target = out_dir or os.path.join(run_dir, "report")
    os.makedirs(target, exist_ok=True)
    created: List[str] = []

    def out(name: str) -> str:
        path = os.path.join(target, name)
        created.append(path)
        return path

    if not manifest.has_stage("trajectory"):
        raise StageError("report requires a manifest with a trajectory stage")
    traj_section = manifest.stage("trajectory")
    traj_json = traj_section["trajectory"]
    tau_p = body["config"]["tau_p"]

    columns, rows = _series_table(traj_json)
    _write_tsv(
        out("trajectory.tsv"),
        ["time"] + columns,
        [[t] + row for t, row in zip(traj_json["times"], rows)],
    )
    _fig_trajectory(traj_json, traj_section["boundaries"], out("trajectory.png"))

    times = traj_json["times"]
    score_rows = [
        [i, times[i], score, int(i in traj_section["boundaries"])]
        for i, score in enumerate(traj_section["scores"], start=1)
    ]
    _write_tsv(out("scores.tsv"), ["sample", "time", "score", "boundary"], score_rows)
    _fig_scores(traj_section, tau_p, out("scores.png"))

    event_rows = []
    for event in traj_section["events"]:
        event_rows.append(
            [event["t_index"], event["time_span"][0], event["time_span"][1]]
        )
    _write_tsv(out("events.tsv"), ["t_index", "t_start", "t_end"], event_rows)

    if manifest.has_stage("narrative"):
        narrative_rows = [
            [n["t_index"], len(n["changed_spans"]), n["text"]]
            for n in manifest.stage("narrative")["narratives"]
        ]
        _write_tsv(out("narratives.tsv"), ["t_index", "changed_spans", "text"], narrative_rows)

    if manifest.has_stage("keyframes"):
        section = manifest.stage("keyframes")
        files = section.get("keyframe_files", [])
        if files:
            hues = []
            for rel in files:
                with open(os.path.join(run_dir, rel), "rb") as fh:
                    hues.append(mean_hue(png_to_array(fh.read())))
            _fig_hues(hues, out("keyframe_hues.png"))
            _write_tsv(
                out("keyframe_hues.tsv"),
                ["keyframe", "mean_hue"],
                [[i + 1, h] for i, h in enumerate(hues)],
            )
        schedule_file = section.get("schedule_file")
        if schedule_file:
            with open(os.path.join(run_dir, schedule_file), "rb") as fh:
                frames, _meta = read_ccls(fh.read())
            pairs = section["schedule"]["segment_pairs"]
            junctions = [i for i, (lo, hi) in enumerate(pairs) if lo == hi]
            _fig_schedule(frames, junctions, out("schedule.png"))

    return created
