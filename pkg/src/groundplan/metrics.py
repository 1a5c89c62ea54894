"""Evaluation metrics: executability, LCS, final graph correctness.

LCS compares plans at the (verb, object names) level, ids ignored, so it
cannot reward disambiguation; final graph correctness compares what each
execution changed in the initial scene against the ground-truth changes,
which is exactly where disambiguation shows up.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .env_graph import EnvironmentGraph, graph_diff, iou
from .errors import InputError, IntegrityError
from .example_store import ExampleRecord
from .executor import executability, execute_plan, initial_agent_state
from .script import Plan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalResult:
    executability: float  # [0, 100]
    lcs: float  # [0, 1]
    final_correctness: float  # [0, 2]
    plan_length: float

    def __post_init__(self):
        if not (0 <= self.executability <= 100):
            raise InputError(f"executability out of range: {self.executability}")
        if not (0 <= self.lcs <= 1):
            raise InputError(f"lcs out of range: {self.lcs}")
        if not (0 <= self.final_correctness <= 2):
            raise InputError(f"final_correctness out of range: {self.final_correctness}")
        if self.plan_length < 0:
            raise InputError(f"plan_length out of range: {self.plan_length}")

    def to_dict(self) -> dict:
        return {
            "executability": self.executability,
            "lcs": self.lcs,
            "final_correctness": self.final_correctness,
            "final_correctness_pct": self.final_correctness / 2.0 * 100.0,
            "plan_length": self.plan_length,
        }


COLUMNS = ("executability", "lcs", "final_correctness", "plan_length")


def lcs_score(generated: Plan, ground_truth: Plan) -> float:
    """Longest common subsequence over (verb, names) tuples divided by the
    longer plan's length; two empty plans agree (1), one empty scores 0."""
    a = [step.signature() for step in generated.steps]
    b = [step.signature() for step in ground_truth.steps]
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    # classic DP over prefix lengths
    table = np.zeros((len(a) + 1, len(b) + 1), dtype=int)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i, j] = table[i - 1, j - 1] + 1
            else:
                table[i, j] = max(table[i - 1, j], table[i, j - 1])
    return float(table[len(a), len(b)]) / max(len(a), len(b))


def final_correctness(
    e_init: EnvironmentGraph, e_out: EnvironmentGraph, e_gt: EnvironmentGraph
) -> float:
    """IoU of changed-node sets plus IoU of changed-edge sets, where changes
    are measured against the same initial scene."""
    init_ids = {n.id for n in e_init.nodes}
    out_ids = {n.id for n in e_out.nodes}
    gt_ids = {n.id for n in e_gt.nodes}
    if out_ids != gt_ids or not init_ids <= out_ids:
        raise IntegrityError("id-space mismatch between initial, output, and ground-truth graphs")
    nodes_o, edges_o = graph_diff(e_init, e_out)
    nodes_g, edges_g = graph_diff(e_init, e_gt)
    return iou(nodes_o, nodes_g) + iou(edges_o, edges_g)


def evaluate_record(
    generated: Plan, record: ExampleRecord, reconstruct_missing: bool = True
) -> EvalResult | None:
    """Score one generated plan against a dataset record.

    A missing ground-truth final environment is reconstructed by executing
    the record's own plan; with reconstruction disabled the record is
    skipped (None) with a warning.
    """
    env_after = record.env_after
    if env_after is None:
        if not reconstruct_missing:
            log.warning("record %r lacks env_after; skipped", record.task)
            return None
        env_after = execute_plan(record.env_before, record.plan).final_env
    trace = execute_plan(record.env_before, generated)
    # diff against the executor's view of the initial scene (an agent node may
    # have been synthesized); identical on both sides by construction
    e_init, _ = initial_agent_state(record.env_before)
    return EvalResult(
        executability=executability(trace, generated),
        lcs=lcs_score(generated, record.plan),
        final_correctness=final_correctness(e_init, trace.final_env, env_after),
        plan_length=float(len(generated)),
    )


@dataclass(frozen=True)
class RunAggregate:
    """Mean and population standard deviation over a run's records."""

    per_record: tuple[EvalResult, ...]
    mean: EvalResult
    stddev: dict[str, float]
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "per_record": [r.to_dict() for r in self.per_record],
            "mean": self.mean.to_dict(),
            "stddev": dict(self.stddev),
            "skipped": self.skipped,
        }


def summarize(results) -> tuple[EvalResult, dict[str, float]]:
    """Column-wise mean and population standard deviation of EvalResults."""
    results = list(results)
    if not results:
        raise InputError("summarize needs at least one result")
    arrays = {c: np.array([getattr(r, c) for r in results], dtype=float) for c in COLUMNS}
    mean = EvalResult(**{c: float(arrays[c].mean()) for c in COLUMNS})
    stddev = {c: float(arrays[c].std()) for c in COLUMNS}  # population form
    return mean, stddev


def evaluate_run(pairs, reconstruct_missing: bool = True) -> RunAggregate:
    """Aggregate (generated plan, record) pairs into per-column mean/stddev."""
    pairs = list(pairs)
    if not pairs:
        raise InputError("evaluate_run needs at least one (plan, record) pair")
    results = []
    skipped = 0
    for generated, record in pairs:
        result = evaluate_record(generated, record, reconstruct_missing=reconstruct_missing)
        if result is None:
            skipped += 1
            continue
        results.append(result)
    if not results:
        raise InputError("all records were skipped (no ground-truth environments)")
    mean, stddev = summarize(results)
    return RunAggregate(tuple(results), mean, stddev, skipped)


def aggregate_runs(run_means: list[EvalResult]) -> tuple[EvalResult, dict[str, float]]:
    """Across-run mean and population stddev of the per-run means."""
    return summarize(run_means)


# -- report rendering -----------------------------------------------------------


def format_table(rows: dict[str, tuple[EvalResult, dict[str, float]]]) -> str:
    """Aligned text table: Method | Executability | LCS | Final Correctness.

    LCS is reported x100 and final correctness both on its raw [0,2] scale
    and as a percentage of 2.
    """
    header = (
        f"{'Method':<18} {'Executability':>15} {'LCS':>13} "
        f"{'Final Corr [0-2]':>18} {'Final Corr %':>14} {'Plan Len':>9}"
    )
    lines = [header, "-" * len(header)]
    for method, (mean, stddev) in rows.items():
        lines.append(
            f"{method:<18} "
            f"{mean.executability:>8.2f} ({stddev['executability']:.2f}) "
            f"{mean.lcs * 100:>6.2f} ({stddev['lcs'] * 100:.2f}) "
            f"{mean.final_correctness:>10.4f} ({stddev['final_correctness']:.4f}) "
            f"{mean.final_correctness / 2 * 100:>7.2f}% "
            f"{mean.plan_length:>9.2f}"
        )
    return "\n".join(lines) + "\n"
