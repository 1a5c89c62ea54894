"""Example dataset handling and few-shot example selection.

Selection is two-stage: shortlist the N_e most task-similar records by
embedding cosine, then pick the one maximizing task similarity plus a
weighted scene similarity, so an example whose environment shares the
query's objects wins among near-ties.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .env_graph import EnvironmentGraph, env_similarity, environment_from_dict, environment_to_dict
from .errors import InputError
from .lm_gateway import Backend, CorpusPlan, cosine
from .script import Plan, TemplateRegistry, parse_script_line, render_nl, render_script_line


@dataclass(frozen=True)
class ExampleRecord:
    """One (task, plan, environment) unit of the example set."""

    task: str
    plan: Plan
    env_before: EnvironmentGraph
    env_after: EnvironmentGraph | None = None
    description: str | None = None

    def nl_steps(self) -> tuple[str, ...]:
        return tuple(render_nl(step) for step in self.plan.steps)


@dataclass(frozen=True)
class DatasetSplit:
    examples: tuple[ExampleRecord, ...]
    validation: tuple[ExampleRecord, ...]
    test: tuple[ExampleRecord, ...]

    def __post_init__(self):
        tasks = [
            {r.task for r in self.examples},
            {r.task for r in self.validation},
            {r.task for r in self.test},
        ]
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = tasks[i] & tasks[j]
                if overlap:
                    raise InputError(f"splits share tasks: {sorted(overlap)[:3]}")


def record_from_dict(data: dict, registry: TemplateRegistry, source: str = "<record>") -> ExampleRecord:
    try:
        task = str(data["task"]).strip()
    except KeyError:
        raise InputError(f"{source}: record missing 'task'") from None
    if not task:
        raise InputError(f"{source}: task must be nonempty")
    env_before = environment_from_dict(data.get("env_before", {}), source=f"{source}.env_before")
    steps = tuple(parse_script_line(line, registry) for line in data.get("plan", []))
    env_after = None
    if data.get("env_after") is not None:
        env_after = environment_from_dict(data["env_after"], source=f"{source}.env_after")
    return ExampleRecord(
        task=task,
        plan=Plan(steps, task),
        env_before=env_before,
        env_after=env_after,
        description=data.get("description"),
    )


def record_to_dict(record: ExampleRecord) -> dict:
    entry = {
        "task": record.task,
        "plan": [render_script_line(s) for s in record.plan.steps],
        "env_before": environment_to_dict(record.env_before),
    }
    if record.env_after is not None:
        entry["env_after"] = environment_to_dict(record.env_after)
    if record.description is not None:
        entry["description"] = record.description
    return entry


def load_records(path: str | Path, registry: TemplateRegistry) -> tuple[ExampleRecord, ...]:
    """Load a JSON-lines dataset; errors carry the 1-based line number."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"dataset file not found: {path}")
    records = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        records.append(record_from_dict(data, registry, source=f"{path}:{lineno}"))
    return tuple(records)


def save_records(records, path: str | Path) -> None:
    lines = [json.dumps(record_to_dict(r), sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def split_dataset(
    records, seed: int, fractions: tuple[float, float, float] = (0.6, 0.1, 0.3)
) -> DatasetSplit:
    """Seeded split keeping every record of a task in the same split."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InputError("split fractions must sum to 1")
    tasks = sorted({r.task for r in records})
    random.Random(seed).shuffle(tasks)
    n = len(tasks)
    n_examples = round(fractions[0] * n)
    n_validation = round(fractions[1] * n)
    chosen = {
        task: ("examples" if i < n_examples else "validation" if i < n_examples + n_validation else "test")
        for i, task in enumerate(tasks)
    }
    buckets: dict[str, list[ExampleRecord]] = {"examples": [], "validation": [], "test": []}
    for record in records:
        buckets[chosen[record.task]].append(record)
    return DatasetSplit(
        tuple(buckets["examples"]), tuple(buckets["validation"]), tuple(buckets["test"])
    )


def corpus_from_records(records) -> tuple[CorpusPlan, ...]:
    """Plan corpus for the stub backend: task plus NL step lines."""
    return tuple(CorpusPlan(r.task, r.nl_steps()) for r in records)


# -- selection ---------------------------------------------------------------


def task_similarity(t1: str, t2: str, backend: Backend) -> float:
    if not t1 or not t2:
        raise InputError("task_similarity requires nonempty texts")
    return cosine(backend.embed(t1), backend.embed(t2))


def select_example(
    query_task: str,
    query_env: EnvironmentGraph,
    store,
    n_e: int,
    w_s: float,
    backend: Backend,
) -> ExampleRecord:
    """Pick the record maximizing task similarity + w_s * scene similarity
    among the n_e most task-similar records. Ties keep dataset order."""
    store = tuple(store)
    if not store:
        raise InputError("example store is empty")
    if n_e < 1:
        raise InputError("n_e must be >= 1")
    sims = [(task_similarity(query_task, r.task, backend), i) for i, r in enumerate(store)]
    sims.sort(key=lambda pair: (-pair[0], pair[1]))
    shortlist = sims[:n_e]
    best_index = None
    best_score = None
    for sim, i in shortlist:
        score = sim + w_s * env_similarity(query_env, store[i].env_before)
        if best_score is None or score > best_score:
            best_score, best_index = score, i
    return store[best_index]


def build_prompts(example: ExampleRecord, query_task: str) -> tuple[str, str]:
    """Pr_a: example task + numbered NL steps + query task, one per line.
    Pr_o: the example plan's object names, first-appearance order, deduped."""
    lines = [prompts.task_line(example.task)]
    for i, text in enumerate(example.nl_steps(), start=1):
        lines.append(prompts.step_line(i, text))
    lines.append(prompts.task_line(query_task))
    pr_a = "\n".join(lines) + "\n"

    seen: list[str] = []
    for step in example.plan.steps:
        for name in step.object_names:
            if name not in seen:
                seen.append(name)
    return pr_a, ", ".join(seen)
