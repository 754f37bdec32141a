"""Command-line surface: argparse subcommands over the pipeline library.

Exit codes: 0 success, 1 usage or configuration problem, 2 stage failure.
Environment fallbacks: CCE_BACKEND_URL, CCE_TOKEN, CCE_CACHE_DIR apply when
neither flag nor config file sets the corresponding key.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional

from .config import RunConfig, build_config, coerce_value, load_config_file
from .errors import CceError, ConfigError
from .formula import load_kb_files
from .manifest import STAGE_ORDER, RunManifest
from .pipeline import replay, run

USAGE_EXIT = 1
STAGE_EXIT = 2

_ENV_KEYS = {
    "CCE_BACKEND_URL": "backend_url",
    "CCE_TOKEN": "backend_token",
    "CCE_CACHE_DIR": "cache_dir",
}

# CLI flags mirror config keys one-to-one; dest names are the config keys.
_VALUE_FLAGS = (
    ("--input", "input_description", "scene description to animate"),
    ("--seed", "seed", "deterministic run seed (required unless in config)"),
    ("--tau-p", "tau_p", "boundary detection threshold"),
    ("--tau-match", "tau_match", "formula retrieval threshold"),
    ("--kappa", "kappa", "continuity jump bound multiplier"),
    ("--min-gap", "min_gap", "minimum samples between boundaries"),
    ("--max-events", "max_events", "event count cap"),
    ("--max-retries", "max_retries", "re-inference retry budget"),
    ("--top-k", "top_k", "formulas retrieved per law"),
    ("--max-fallback-rounds", "max_fallback_rounds", "retrieval fallback budget"),
    ("--sigma", "sigma", "noise scale"),
    ("--tau-z-fraction", "tau_z_fraction", "keyframe prior strength"),
    ("--noise-mode", "noise_mode", "standard or paper_literal"),
    ("--token-budget", "token_budget", "condensed prompt budget"),
    ("--target-frames", "target_frames", "video frame target"),
    ("--temporal-compression", "temporal_compression", "frames per latent step"),
    ("--latent-rate", "latent_rate", "interior latents per second"),
    ("--resolution", "resolution", "WxH output resolution"),
    ("--horizon", "horizon", "simulation horizon seconds"),
    ("--step", "step", "simulation step seconds"),
    ("--d-min", "d_min", "minimum event duration"),
    ("--d-max", "d_max", "maximum event duration"),
    ("--backends", "backends", "mock or http"),
    ("--backend-url", "backend_url", "shim base URL for http mode"),
    ("--backend-token", "backend_token", "bearer token for http mode"),
    ("--cache-dir", "cache_dir", "keyframe cache directory"),
    ("--rules-path", "rules_path", "trigger rules file"),
    ("--fixtures-path", "fixtures_path", "mock backend fixtures JSON"),
    ("--monotone", "monotone", "sym:dir[,sym:dir...] declarations"),
    ("--pfg", "pfg", "formula grounding on/off"),
    ("--ppd", "ppd", "boundary detection on/off"),
    ("--pnr", "pnr", "progressive revision on/off"),
    ("--iks", "iks", "keyframe priors on/off"),
    ("--emit-package-only", "emit_package_only", "skip the denoiser on/off"),
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value config file")
    for flag, dest, help_text in _VALUE_FLAGS:
        parser.add_argument(flag, dest=dest, metavar="V", help=help_text)


def _collect_overrides(args: argparse.Namespace) -> Dict[str, object]:
    overrides: Dict[str, object] = {}
    for _flag, dest, _help in _VALUE_FLAGS:
        raw = getattr(args, dest, None)
        if raw is not None:
            overrides[dest] = coerce_value(dest, raw)
    return overrides


def _env_defaults() -> Dict[str, object]:
    values: Dict[str, object] = {}
    for env_key, config_key in _ENV_KEYS.items():
        value = os.environ.get(env_key)
        if value:
            values[config_key] = value
    return values


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    merged = _env_defaults()
    merged.update(file_values)
    return build_config(merged, _collect_overrides(args))


def _load_manifest(path: str) -> RunManifest:
    try:
        return RunManifest.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc


def _cmd_run(args: argparse.Namespace) -> int:
    if args.input_file:
        return _run_batch(args)
    config = _config_from_args(args)
    manifest, path = run(config, args.out_dir)
    if args.report:
        from .report import render_report

        render_report(manifest, os.path.dirname(path))
    print(path)
    return 0


def _run_batch(args: argparse.Namespace) -> int:
    if getattr(args, "input_description", None):
        raise ConfigError("--input and --input-file are mutually exclusive")
    with open(args.input_file, encoding="utf-8") as fh:
        descriptions = [
            line.strip()
            for line in fh
            if line.strip() and not line.lstrip().startswith("#")
        ]
    if not descriptions:
        raise ConfigError(f"no descriptions in {args.input_file}")
    file_values = load_config_file(args.config) if args.config else {}
    merged = _env_defaults()
    merged.update(file_values)
    overrides = _collect_overrides(args)

    def one(description: str):
        values = dict(overrides)
        values["input_description"] = description
        config = build_config(merged, values)
        return run(config, args.out_dir)

    failures: List[str] = []
    paths: List[Optional[str]] = [None] * len(descriptions)
    with ThreadPoolExecutor(max_workers=max(1, args.parallel)) as pool:
        futures = {pool.submit(one, d): i for i, d in enumerate(descriptions)}
        for future, index in futures.items():
            try:
                _manifest, path = future.result()
                paths[index] = path
            except Exception as exc:
                failures.append(f"line {index + 1}: {exc}")
    for path in paths:
        if path:
            print(path)
    for failure in failures:
        print(f"error: {failure}", file=sys.stderr)
    return STAGE_EXIT if failures else 0


def _cmd_validate_kb(args: argparse.Namespace) -> int:
    kb = load_kb_files(args.laws, args.formulas)
    print(f"kb ok: {len(kb.laws)} laws, {len(kb.formulas)} formulas")
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    manifest = _load_manifest(args.manifest)
    body = manifest.to_json()
    if args.stage:
        if not manifest.has_stage(args.stage):
            raise ConfigError(f"manifest has no stage {args.stage!r}")
        print(json.dumps(body["stages"][args.stage], indent=2, sort_keys=True))
        return 0
    summary = {
        "manifest_version": body["manifest_version"],
        "status": body["status"],
        "failed_stage": body["failed_stage"],
        "config_digest": body["config_digest"],
        "input_description": body["config"].get("input_description"),
        "stages": {
            name: body["stage_digests"][name]
            for name in STAGE_ORDER
            if name in body["stages"]
        },
        "backend_calls": len(body["call_log"]),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_export_prompts(args: argparse.Namespace) -> int:
    manifest = _load_manifest(args.manifest)
    if not manifest.has_stage("package"):
        raise ConfigError("manifest has no package stage to export")
    payload = {"prompt_pair": manifest.stage("package")["prompt_pair"]}
    if manifest.has_stage("narrative"):
        payload["narratives"] = manifest.stage("narrative")["narratives"]
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    _manifest, path = replay(
        args.manifest, args.from_stage, config, out_dir=args.out_dir
    )
    print(path)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    from .report import render_report

    manifest = _load_manifest(args.manifest)
    run_dir = os.path.dirname(os.path.abspath(args.manifest))
    for path in render_report(manifest, run_dir, args.out_dir):
        print(path)
    return 0


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cce", description="event-chain video planning pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", help="execute the pipeline and print the manifest path")
    _add_config_flags(p_run)
    p_run.add_argument("--out-dir", default="runs", help="parent directory for run artifacts")
    p_run.add_argument("--report", action="store_true", help="also render figures and tables")
    p_run.add_argument("--input-file", metavar="FILE", help="batch mode: one description per line")
    p_run.add_argument("--parallel", type=int, default=1, metavar="N", help="batch workers")
    p_run.set_defaults(func=_cmd_run)

    p_kb = sub.add_parser("validate-kb", help="parse and validate the knowledge base")
    p_kb.add_argument("--laws", default=None, help="laws JSON path (default: packaged)")
    p_kb.add_argument("--formulas", default=None, help="formula JSON path (default: packaged)")
    p_kb.set_defaults(func=_cmd_validate_kb)

    p_inspect = sub.add_parser("inspect", help="summarize a manifest or one stage")
    p_inspect.add_argument("manifest")
    p_inspect.add_argument("--stage", choices=STAGE_ORDER, default=None)
    p_inspect.set_defaults(func=_cmd_inspect)

    p_export = sub.add_parser("export-prompts", help="print the prompt package as JSON")
    p_export.add_argument("manifest")
    p_export.set_defaults(func=_cmd_export_prompts)

    p_replay = sub.add_parser("replay", help="recompute a manifest from a stage onward")
    p_replay.add_argument("manifest")
    p_replay.add_argument("--from-stage", required=True, choices=STAGE_ORDER)
    _add_config_flags(p_replay)
    p_replay.add_argument("--out-dir", default=None, help="write beside the manifest when omitted")
    p_replay.set_defaults(func=_cmd_replay)

    p_report = sub.add_parser("report", help="render figures and TSV tables for a run")
    p_report.add_argument("manifest")
    p_report.add_argument("--out-dir", default=None, help="default: <run dir>/report")
    p_report.set_defaults(func=_cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except CceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return STAGE_EXIT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return STAGE_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
