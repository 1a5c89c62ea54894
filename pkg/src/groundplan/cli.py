"""Command-line entry points: generate, evaluate, ablate.

Every command writes its outputs atomically and records a manifest (seed,
config snapshot, input hashes, backend identity) that fully determines a
stub-backend run. Exit codes: 0 ok, 2 input error, 3 backend error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import random
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .env_graph import load_environment
from .errors import BackendError, InputError, InvariantError
from .example_store import corpus_from_records, load_records
from .lm_gateway import GatewayConfig, make_backend
from .metrics import (
    EvalResult,
    aggregate_runs,
    evaluate_record,
    format_table,
    summarize,
)
from .planner import (
    BINDING_SAME_NAME_RANDOM,
    BINDING_SCORED,
    PlannerConfig,
    generate_plan,
)
from .script import load_registry, plan_to_text

ENV_BASE_URL = "GROUNDPLAN_BASE_URL"
ENV_API_KEY = "GROUNDPLAN_API_KEY"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BACKEND = 3
EXIT_INVARIANT = 4

BASELINE_OVERRIDES = {"w_s": 0.0, "w_o": 0.0, "w_om": 0.0, "w_od": 0.0, "pair_repeat_penalty": 0.0}

DEFAULT_ABLATION_ARMS = (
    {"name": "final", "overrides": {}, "mode": "ours"},
    {"name": "wo_scene_score", "overrides": {"w_s": 0.0}, "mode": "ours"},
    {
        "name": "wo_object_score",
        "overrides": {"w_o": 0.0, "w_om": 0.0, "w_od": 0.0, "pair_repeat_penalty": 0.0},
        "mode": "ours",
    },
    {"name": "baseline_scores", "overrides": dict(BASELINE_OVERRIDES), "mode": "baseline"},
)


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _json_dumps(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


# -- config loading -------------------------------------------------------------


def load_config(path: str | None) -> tuple[PlannerConfig, GatewayConfig]:
    """Config file with optional "planner" and "backend" sections."""
    if path is None:
        return PlannerConfig(), GatewayConfig()
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON: {exc}") from exc
    planner = PlannerConfig.from_dict(data.get("planner", {}))
    backend = GatewayConfig.from_dict(data.get("backend", {}))
    return planner, backend


_PLANNER_FLAGS = [
    ("--W_s", "w_s", float), ("--W_a", "w_a", float), ("--W_aM", "w_am", float),
    ("--W_o", "w_o", float), ("--W_oM", "w_om", float), ("--W_oD", "w_od", float),
    ("--k", "k", int), ("--N_e", "n_e", int), ("--cutoff", "cutoff", float),
    ("--action-repeat-penalty", "action_repeat_penalty", float),
    ("--pair-repeat-penalty", "pair_repeat_penalty", float),
    ("--max-steps", "max_steps", int), ("--temperature", "temperature", float),
    ("--binding-cap", "binding_cap", int),
]


def _add_planner_flags(parser: argparse.ArgumentParser) -> None:
    for flag, dest, kind in _PLANNER_FLAGS:
        parser.add_argument(flag, dest=f"cfg_{dest}", type=kind, default=None)


def _apply_overrides(config: PlannerConfig, args: argparse.Namespace) -> PlannerConfig:
    overrides = {}
    for _, dest, _ in _PLANNER_FLAGS:
        value = getattr(args, f"cfg_{dest}", None)
        if value is not None:
            overrides[dest] = value
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return replace(config, **overrides) if overrides else config


def _apply_backend_env(config: GatewayConfig, args: argparse.Namespace) -> GatewayConfig:
    overrides = {}
    if getattr(args, "backend", None):
        overrides["kind"] = args.backend
    if getattr(args, "cache_dir", None):
        overrides["cache_dir"] = args.cache_dir
    if os.environ.get(ENV_BASE_URL):
        overrides["base_url"] = os.environ[ENV_BASE_URL]
    if os.environ.get(ENV_API_KEY):
        overrides["api_key"] = os.environ[ENV_API_KEY]
    return replace(config, **overrides) if overrides else config


# -- manifest ---------------------------------------------------------------------


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict
    dataset_paths: dict
    backend_identity: str
    content_hash: str
    created_at: str

    @classmethod
    def build(cls, command, seed, planner_config, paths: dict, backend_identity) -> "RunManifest":
        digest = hashlib.sha256()
        digest.update(json.dumps(planner_config.to_dict(), sort_keys=True).encode())
        digest.update(str(seed).encode())
        digest.update(backend_identity.encode())
        for name in sorted(paths):
            value = paths[name]
            digest.update(name.encode())
            if value is not None:
                digest.update(_hash_file(Path(value)).encode())
        return cls(
            command=command,
            seed=seed,
            config=planner_config.to_dict(),
            dataset_paths={k: str(v) if v else None for k, v in paths.items()},
            backend_identity=backend_identity,
            content_hash=digest.hexdigest(),
            created_at=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# -- evaluation pipeline -----------------------------------------------------------


def _store_without_task(store, task: str):
    """Leave-one-out by task text, reproducing the unique-task split rule."""
    filtered = tuple(r for r in store if r.task != task)
    if not filtered:
        raise InputError(f"example store has no records outside task {task!r}")
    return filtered


def _backend_identity(gateway_config: GatewayConfig) -> str:
    if gateway_config.kind == "stub":
        return "stub"
    return (
        f"remote:{gateway_config.base_url}:{gateway_config.planning_model}:"
        f"{gateway_config.translation_model}"
    )


def _make_backend_for(store, gateway_config: GatewayConfig):
    return make_backend(gateway_config, corpus=corpus_from_records(store))


def _pick_run_records(records, run_seed: int):
    """One (plan, environment) record per task, chosen with the run seed."""
    by_task: dict[str, list] = {}
    for record in records:
        by_task.setdefault(record.task, []).append(record)
    rng = random.Random(run_seed)
    return [rng.choice(group) for _, group in sorted(by_task.items())]


def _evaluate_mode(
    records,
    store,
    planner_config: PlannerConfig,
    gateway_config: GatewayConfig,
    registry,
    mode: str,
    runs: int,
    subruns: int,
) -> dict:
    """Per-run record means for one mode ("ours" or "baseline")."""
    if mode == "baseline":
        planner_config = replace(planner_config, **BASELINE_OVERRIDES)
    run_rows = []
    run_means: list[EvalResult] = []
    for run_index in range(runs):
        run_seed = planner_config.seed + run_index
        run_config = replace(planner_config, seed=run_seed)
        chosen = _pick_run_records(records, run_seed)
        per_record: list[EvalResult] = []
        for record in chosen:
            loo_store = _store_without_task(store, record.task)
            backend = _make_backend_for(loo_store, gateway_config)
            if mode == "ours":
                plan, _ = generate_plan(
                    record.task, record.env_before, loo_store, run_config, backend,
                    registry, binding=BINDING_SCORED,
                )
                per_record.append(evaluate_record(plan, record))
            else:
                sub_results = []
                for sub in range(subruns):
                    plan, _ = generate_plan(
                        record.task, record.env_before, loo_store, run_config, backend,
                        registry, binding=BINDING_SAME_NAME_RANDOM,
                        binding_seed=run_seed * 1000 + sub,
                    )
                    sub_results.append(evaluate_record(plan, record))
                mean, _ = summarize(sub_results)
                per_record.append(mean)
        mean, stddev = summarize(per_record)
        run_means.append(mean)
        run_rows.append({"run": run_index, "seed": run_seed, "mean": mean.to_dict(), "stddev": stddev})
    overall_mean, overall_std = aggregate_runs(run_means)
    return {
        "runs": run_rows,
        "mean": overall_mean.to_dict(),
        "stddev": overall_std,
        "_mean_result": overall_mean,
        "_stddev_result": overall_std,
    }


def run_evaluation(
    dataset_split: str,
    examples: str | None,
    planner_config: PlannerConfig,
    gateway_config: GatewayConfig,
    modes: tuple[str, ...],
    runs: int,
    subruns: int,
    registry=None,
) -> tuple[dict, dict]:
    """Returns (report dict, table rows) for the requested modes."""
    registry = registry or load_registry()
    records = load_records(dataset_split, registry)
    if not records:
        raise InputError(f"{dataset_split}: no records")
    store = load_records(examples, registry) if examples else records
    report = {"dataset_split": str(dataset_split), "modes": {}}
    table_rows = {}
    for mode in modes:
        outcome = _evaluate_mode(
            records, store, planner_config, gateway_config, registry, mode, runs, subruns
        )
        table_rows[mode] = (outcome.pop("_mean_result"), outcome.pop("_stddev_result"))
        report["modes"][mode] = outcome
    return report, table_rows


# -- commands ----------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    planner_config, gateway_config = load_config(args.config)
    planner_config = _apply_overrides(planner_config, args)
    gateway_config = _apply_backend_env(gateway_config, args)
    registry = load_registry(args.registry)
    env = load_environment(args.env)
    store = load_records(args.examples, registry)
    backend = _make_backend_for(store, gateway_config)

    plan, session = generate_plan(
        args.task, env, store, planner_config, backend, registry,
        binding=BINDING_SAME_NAME_RANDOM if args.mode == "baseline" else BINDING_SCORED,
    )

    out = Path(args.out)
    manifest = RunManifest.build(
        "generate", planner_config.seed, planner_config,
        {"env": args.env, "examples": args.examples, "config": args.config},
        backend.identity,
    )
    write_atomic(out / "plan.txt", plan_to_text(plan))
    write_atomic(out / "session.json", _json_dumps(session.to_json_dict()))
    write_atomic(out / "manifest.json", _json_dumps(manifest.to_dict()))
    print(f"plan with {len(plan)} steps written to {out / 'plan.txt'}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    planner_config, gateway_config = load_config(args.config)
    planner_config = _apply_overrides(planner_config, args)
    gateway_config = _apply_backend_env(gateway_config, args)
    modes = ("ours", "baseline") if args.mode == "both" else (args.mode,)
    report, table_rows = run_evaluation(
        args.dataset_split, args.examples, planner_config, gateway_config,
        modes, args.runs, args.subruns,
    )
    table = format_table(table_rows)
    out = Path(args.out)
    manifest = RunManifest.build(
        "evaluate", planner_config.seed, planner_config,
        {"dataset_split": args.dataset_split, "examples": args.examples, "config": args.config},
        _backend_identity(gateway_config),
    )
    write_atomic(out / "report.json", _json_dumps(report))
    write_atomic(out / "table.txt", table)
    write_atomic(out / "manifest.json", _json_dumps(manifest.to_dict()))
    print(table, end="")
    return EXIT_OK


def _load_grid(path: str | None) -> list[dict]:
    if path is None:
        return [dict(arm) for arm in DEFAULT_ABLATION_ARMS]
    p = Path(path)
    if not p.exists():
        raise InputError(f"sweep grid not found: {p}")
    try:
        grid = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(grid, list) or not grid:
        raise InputError(f"{p}: sweep grid must be a nonempty JSON list")
    return grid


def cmd_ablate(args: argparse.Namespace) -> int:
    planner_config, gateway_config = load_config(args.config)
    planner_config = _apply_overrides(planner_config, args)
    gateway_config = _apply_backend_env(gateway_config, args)
    grid = _load_grid(args.sweep)

    rows = []
    table_rows = {}
    for arm in grid:
        name = arm.get("name") or "point"
        mode = arm.get("mode", "ours")
        if mode not in ("ours", "baseline"):
            raise InputError(f"ablation arm {name!r}: unknown mode {mode!r}")
        overrides = arm.get("overrides", {})
        normalized = {}
        for key, value in overrides.items():
            field = PlannerConfig._ALIASES.get(key, key)
            if field not in PlannerConfig.__dataclass_fields__:
                raise InputError(f"ablation arm {name!r}: unknown config key {key!r}")
            normalized[field] = value
        arm_config = replace(planner_config, **normalized)
        report, arm_table = run_evaluation(
            args.dataset_split, args.examples, arm_config, gateway_config,
            (mode,), args.runs, args.subruns,
        )
        mean, stddev = arm_table[mode]
        table_rows[name] = (mean, stddev)
        row = {"name": name, "mode": mode}
        row.update(arm_config.to_dict())
        row.update(
            {
                "executability_mean": mean.executability,
                "executability_std": stddev["executability"],
                "lcs_mean": mean.lcs,
                "lcs_std": stddev["lcs"],
                "final_correctness_mean": mean.final_correctness,
                "final_correctness_std": stddev["final_correctness"],
                "plan_length_mean": mean.plan_length,
                "plan_length_std": stddev["plan_length"],
            }
        )
        rows.append(row)

    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    out = Path(args.out)
    write_atomic(out / "grid.csv", buffer.getvalue())
    write_atomic(out / "table.txt", format_table(table_rows))
    print(format_table(table_rows), end="")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groundplan",
        description="Environment-aware task planning over household scene graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a grounded plan for one task")
    gen.add_argument("--task", required=True)
    gen.add_argument("--env", required=True, help="environment JSON file")
    gen.add_argument("--examples", required=True, help="example dataset (JSONL)")
    gen.add_argument("--config", default=None)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--mode", choices=("ours", "baseline"), default="ours")
    gen.add_argument("--registry", default=None)
    gen.add_argument("--backend", choices=("stub", "remote"), default=None)
    gen.add_argument("--cache-dir", default=None)
    _add_planner_flags(gen)
    gen.set_defaults(func=cmd_generate)

    ev = sub.add_parser("evaluate", help="run seeded evaluation over a dataset split")
    ev.add_argument("--dataset-split", required=True, help="JSONL of records to evaluate")
    ev.add_argument("--examples", default=None, help="example store JSONL (default: the split itself)")
    ev.add_argument("--runs", type=int, default=5)
    ev.add_argument("--subruns", type=int, default=3, help="baseline binding sub-runs per run")
    ev.add_argument("--config", default=None)
    ev.add_argument("--out", required=True)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--mode", choices=("ours", "baseline", "both"), default="both")
    ev.add_argument("--backend", choices=("stub", "remote"), default=None)
    ev.add_argument("--cache-dir", default=None)
    _add_planner_flags(ev)
    ev.set_defaults(func=cmd_evaluate)

    ab = sub.add_parser("ablate", help="sweep config arms and emit a grid CSV")
    ab.add_argument("--sweep", default=None, help="JSON list of {name, overrides, mode}")
    ab.add_argument("--dataset-split", required=True)
    ab.add_argument("--examples", default=None)
    ab.add_argument("--runs", type=int, default=5)
    ab.add_argument("--subruns", type=int, default=3)
    ab.add_argument("--config", default=None)
    ab.add_argument("--out", required=True)
    ab.add_argument("--seed", type=int, default=None)
    ab.add_argument("--backend", choices=("stub", "remote"), default=None)
    ab.add_argument("--cache-dir", default=None)
    _add_planner_flags(ab)
    ab.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except InvariantError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
