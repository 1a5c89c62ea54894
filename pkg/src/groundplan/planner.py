"""Autoregressive plan generation with environment-aware candidate ranking.

Each step: sample k continuations from the planning LM, map every parseable
sample to its closest admissible action (embedding cosine), associate each
extracted object name with the closest scene category, enumerate node
bindings, and rank every grounded (action, objects) pair by a weighted sum of

    W_a*P_a + W_aM*P_aM + W_o*P_o + W_oM*P_oM + W_oD*P_oD + penalties

The best pair is appended to the plan and to both prompts; generation stops
when the best total falls below the cutoff, when most samples are null, or
at the step limit.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field, replace

import numpy as np

from . import prompts
from .env_graph import EnvironmentGraph, GraphNode
from .errors import InputError, InvariantError
from .example_store import ExampleRecord, build_prompts, select_example
from .lm_gateway import Backend, Sample, cosine
from .script import (
    ActionStep,
    Plan,
    TemplateRegistry,
    UnparseableStepError,
    extract_objects,
    normalize_nl,
    render_nl,
    render_script_line,
)

BINDING_SCORED = "scored"
BINDING_SAME_NAME_RANDOM = "same_name_random"
UNBOUND_ID = 0  # baseline sentinel: no same-name node exists; execution will fail


@dataclass(frozen=True)
class PlannerConfig:
    """All hyperparameters of the pipeline; defaults are desk-scale choices."""

    w_s: float = 0.5
    w_a: float = 1.0
    w_am: float = 3.0
    w_o: float = 1.0
    w_om: float = 3.0
    w_od: float = 1.0
    k: int = 10
    n_e: int = 10
    cutoff: float = 0.0
    action_repeat_penalty: float = 0.3
    pair_repeat_penalty: float = 0.5
    max_steps: int = 20
    temperature: float = 0.8
    seed: int = 0
    binding_cap: int = 64

    def __post_init__(self):
        for name in ("w_s", "w_a", "w_am", "w_o", "w_om", "w_od",
                     "action_repeat_penalty", "pair_repeat_penalty"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InputError(f"{name} must be finite and >= 0, got {value}")
        if not math.isfinite(self.cutoff) and self.cutoff < 0:
            raise InputError("cutoff must not be -inf")
        for name in ("k", "n_e", "max_steps", "binding_cap"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.temperature <= 0:
            raise InputError("temperature must be > 0")

    _ALIASES = {
        "W_s": "w_s", "W_a": "w_a", "W_aM": "w_am", "W_o": "w_o",
        "W_oM": "w_om", "W_oD": "w_od", "N_e": "n_e",
    }

    @classmethod
    def from_dict(cls, data: dict) -> "PlannerConfig":
        mapped = {}
        for key, value in data.items():
            name = cls._ALIASES.get(key, key.lower() if key in ("K",) else key)
            if name not in cls.__dataclass_fields__:
                raise InputError(f"unknown planner config key {key!r}")
            mapped[name] = value
        return cls(**mapped)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class ScoredCandidate:
    """A grounded (action, objects) pair with its component scores."""

    step: ActionStep
    p_a: float
    p_am: float
    p_o: float
    p_om: float
    p_od: float
    penalty: float
    total: float
    sample_index: int
    binding_index: int

    def validate(self, config: PlannerConfig) -> None:
        checks = [
            self.p_a <= 0,
            -1.0 <= self.p_am <= 1.0,
            self.p_o <= 0,
            -1.0 <= self.p_om <= 1.0,
            0.0 <= self.p_od <= 0.1,
            self.penalty <= 0,
        ]
        if not all(checks):
            raise InvariantError(f"candidate scores out of range: {self}")
        expected = candidate_total(
            config, self.p_a, self.p_am, self.p_o, self.p_om, self.p_od, self.penalty
        )
        if expected != self.total:
            raise InvariantError(f"total {self.total} != recomputed {expected}")

    def to_dict(self) -> dict:
        return {
            "step": render_script_line(self.step),
            "p_a": self.p_a,
            "p_am": self.p_am,
            "p_o": self.p_o,
            "p_om": self.p_om,
            "p_od": self.p_od,
            "penalty": self.penalty,
            "total": self.total,
        }


def candidate_total(
    config: PlannerConfig,
    p_a: float,
    p_am: float,
    p_o: float,
    p_om: float,
    p_od: float,
    penalty: float,
) -> float:
    return (
        config.w_a * p_a
        + config.w_am * p_am
        + config.w_o * p_o
        + config.w_om * p_om
        + config.w_od * p_od
        + penalty
    )


@dataclass
class StepLog:
    index: int
    null_count: int
    candidates: tuple[ScoredCandidate, ...]
    chosen: int | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "null_count": self.null_count,
            "candidates": [c.to_dict() for c in self.candidates],
            "chosen": self.chosen,
        }


@dataclass
class PlanSession:
    """Mutable state of one generation run plus its candidate logs."""

    query_task: str
    query_env: EnvironmentGraph
    config: PlannerConfig
    backend: Backend
    registry: TemplateRegistry
    example: ExampleRecord
    pr_a: str
    pr_o: str
    binding: str = BINDING_SCORED
    plan: Plan = field(default_factory=Plan)
    prev_nodes: tuple[GraphNode, ...] = ()
    step_logs: list[StepLog] = field(default_factory=list)
    termination: str | None = None
    name_bindings: dict[str, int] = field(default_factory=dict)
    binding_rng: random.Random = field(default_factory=random.Random)

    def to_json_dict(self) -> dict:
        return {
            "query_task": self.query_task,
            "example_task": self.example.task,
            "binding": self.binding,
            "config": self.config.to_dict(),
            "pr_a": self.pr_a,
            "pr_o": self.pr_o,
            "steps": [log.to_dict() for log in self.step_logs],
            "termination": self.termination,
            "plan": [render_script_line(s) for s in self.plan.steps],
        }


# -- component scores ----------------------------------------------------------


def match_action(
    sample_text: str, registry: TemplateRegistry, backend: Backend
) -> tuple[ActionStep, float] | None:
    """Map a raw sample to its closest admissible action.

    Candidate actions are the registry patterns of matching arity instantiated
    with the sample's own extracted noun phrases; the match score is the best
    embedding cosine against the sample. Returns None for null samples
    (empty or unparseable), which feed the termination rule.
    """
    if not sample_text.strip():
        return None
    try:
        _, names = extract_objects(sample_text, registry)
    except UnparseableStepError:
        return None
    sample_embedding = backend.embed(normalize_nl(sample_text))
    best_template = None
    best_sim = -2.0
    for template in registry.templates_of_arity(len(names)):
        rendering = template.nl_pattern.format(*names).lower()
        sim = cosine(sample_embedding, backend.embed(rendering))
        if sim > best_sim:
            best_template, best_sim = template, sim
    if best_template is None:
        return None
    return ActionStep(best_template, names), best_sim


def action_repetition_penalty(step: ActionStep, plan_so_far: Plan, per_repeat: float) -> float:
    """-per_repeat for every previous step with the same verb and names."""
    repeats = sum(1 for s in plan_so_far.steps if s.signature() == step.signature())
    return -per_repeat * repeats


def pair_repetition_penalty(step: ActionStep, plan_so_far: Plan, per_repeat: float) -> float:
    """-per_repeat for every previous identical (verb, node ids) pair."""
    if not step.is_grounded:
        raise InputError("pair_repetition_penalty requires a grounded step")
    repeats = sum(
        1
        for s in plan_so_far.steps
        if s.is_grounded
        and s.template.verb == step.template.verb
        and s.object_ids == step.object_ids
    )
    return -per_repeat * repeats


def disambiguation_score(candidate_node: GraphNode, prev_step_nodes) -> float:
    """exp(-d/10)/10 where d is the mean distance to the previous step's
    objects; 0 when positions are missing or there is no previous step."""
    prev_step_nodes = tuple(prev_step_nodes)
    if not prev_step_nodes or candidate_node.position is None:
        return 0.0
    if any(node.position is None for node in prev_step_nodes):
        return 0.0
    here = np.asarray(candidate_node.position)
    distances = [
        float(np.linalg.norm(here - np.asarray(node.position))) for node in prev_step_nodes
    ]
    d = float(np.mean(distances))
    return math.exp(-d / 10.0) / 10.0


def object_relevance(o_prime: str, pr_o: str, backend: Backend) -> float:
    """log(1/perplexity) of the matched name appended to the object prompt."""
    if not o_prime:
        raise InputError("object_relevance requires a nonempty name")
    return -math.log(backend.perplexity(pr_o, ", " + o_prime))


@dataclass(frozen=True)
class ObjectMatch:
    """Result of associating a step's names with scene categories."""

    matched_names: tuple[str, ...]
    per_name_scores: tuple[float, ...]
    p_om: float
    bindings: tuple[tuple[int, ...], ...]


def match_objects(
    step: ActionStep,
    env: EnvironmentGraph,
    backend: Backend,
    prev_nodes=(),
    cap: int = 64,
) -> ObjectMatch:
    """For each extracted name, the closest scene category by embedding
    cosine; bindings enumerate node combinations of the matched categories,
    nearest (by disambiguation score) first, capped."""
    if not env.nodes:
        raise InputError("cannot match objects in an empty environment")
    if step.template.arity == 0:
        return ObjectMatch((), (), 0.0, ((),))
    categories = env.categories()
    category_embeddings = {c: backend.embed(c) for c in categories}
    matched: list[str] = []
    scores: list[float] = []
    node_lists: list[list[int]] = []
    for name in step.object_names:
        name_embedding = backend.embed(name)
        best_category = None
        best_sim = -2.0
        for category in categories:
            sim = cosine(name_embedding, category_embeddings[category])
            if sim > best_sim:
                best_category, best_sim = category, sim
        matched.append(best_category)
        scores.append(best_sim)
        nodes = env.nodes_of_category(best_category)
        ordered = sorted(nodes, key=lambda n: (-disambiguation_score(n, prev_nodes), n.id))
        node_lists.append([n.id for n in ordered])
    bindings = tuple(
        tuple(combo) for combo in itertools.islice(itertools.product(*node_lists), cap)
    )
    return ObjectMatch(tuple(matched), tuple(scores), float(np.mean(scores)), bindings)


# -- ranking and the generation loop --------------------------------------------


def _baseline_binding(
    step: ActionStep, env: EnvironmentGraph, session: PlanSession
) -> tuple[int, ...]:
    # one random same-category node per distinct name, fixed for the whole plan
    ids = []
    for name in step.object_names:
        if name not in session.name_bindings:
            nodes = env.nodes_of_category(name)
            if nodes:
                session.name_bindings[name] = session.binding_rng.choice(
                    [n.id for n in nodes]
                )
            else:
                session.name_bindings[name] = UNBOUND_ID
        ids.append(session.name_bindings[name])
    return tuple(ids)


def rank_candidates(
    samples: list[Sample], session: PlanSession, config: PlannerConfig
) -> list[ScoredCandidate]:
    """Score every grounded candidate from the step's samples, sorted by
    descending total; ties keep (sample, binding) enumeration order.
    Null samples are excluded and counted in the step log."""
    env = session.query_env
    null_count = 0
    candidates: list[ScoredCandidate] = []
    for sample_index, sample in enumerate(samples):
        matched = match_action(sample.text, session.registry, session.backend)
        if matched is None:
            null_count += 1
            continue
        step_u, p_am = matched
        p_a = sample.mean_logprob

        if session.binding == BINDING_SAME_NAME_RANDOM:
            ids = _baseline_binding(step_u, env, session)
            grounded = [(0, ActionStep(step_u.template, step_u.object_names, ids), 0.0)]
            p_o = p_om = 0.0
        elif step_u.template.arity == 0:
            grounded = [(0, ActionStep(step_u.template, (), ()), 0.0)]
            p_o = p_om = 0.0
        else:
            om = match_objects(step_u, env, session.backend, session.prev_nodes, config.binding_cap)
            p_om = om.p_om
            p_o = float(
                np.mean(
                    [object_relevance(name, session.pr_o, session.backend) for name in om.matched_names]
                )
            )
            grounded = []
            for binding_index, ids in enumerate(om.bindings):
                step_g = ActionStep(step_u.template, om.matched_names, ids)
                p_od = float(
                    np.mean(
                        [
                            disambiguation_score(env.node(i), session.prev_nodes)
                            for i in ids
                        ]
                    )
                )
                grounded.append((binding_index, step_g, p_od))

        for binding_index, step_g, p_od in grounded:
            penalty = action_repetition_penalty(
                step_g, session.plan, config.action_repeat_penalty
            ) + pair_repetition_penalty(step_g, session.plan, config.pair_repeat_penalty)
            total = candidate_total(config, p_a, p_am, p_o, p_om, p_od, penalty)
            candidate = ScoredCandidate(
                step=step_g,
                p_a=p_a,
                p_am=p_am,
                p_o=p_o,
                p_om=p_om,
                p_od=p_od,
                penalty=penalty,
                total=total,
                sample_index=sample_index,
                binding_index=binding_index,
            )
            candidate.validate(config)
            candidates.append(candidate)

    candidates.sort(key=lambda c: -c.total)  # stable: ties keep build order
    session.step_logs.append(
        StepLog(index=len(session.step_logs) + 1, null_count=null_count, candidates=tuple(candidates))
    )
    return candidates


def start_session(
    query_task: str,
    query_env: EnvironmentGraph,
    store,
    config: PlannerConfig,
    backend: Backend,
    registry: TemplateRegistry,
    binding: str = BINDING_SCORED,
    binding_seed: int | None = None,
) -> PlanSession:
    if binding not in (BINDING_SCORED, BINDING_SAME_NAME_RANDOM):
        raise InputError(f"unknown binding mode {binding!r}")
    example = select_example(query_task, query_env, store, config.n_e, config.w_s, backend)
    pr_a, pr_o = build_prompts(example, query_task)
    return PlanSession(
        query_task=query_task,
        query_env=query_env,
        config=config,
        backend=backend,
        registry=registry,
        example=example,
        pr_a=pr_a,
        pr_o=pr_o,
        binding=binding,
        plan=Plan((), query_task),
        binding_rng=random.Random(config.seed if binding_seed is None else binding_seed),
    )


def generate_plan(
    query_task: str,
    query_env: EnvironmentGraph,
    store,
    config: PlannerConfig,
    backend: Backend,
    registry: TemplateRegistry,
    binding: str = BINDING_SCORED,
    binding_seed: int | None = None,
) -> tuple[Plan, PlanSession]:
    """Run the full loop; deterministic for a fixed seed under the stub backend."""
    session = start_session(
        query_task, query_env, store, config, backend, registry, binding, binding_seed
    )
    env = session.query_env
    for index in range(1, config.max_steps + 1):
        prompt = session.pr_a + prompts.step_cue(index)
        samples = backend.sample_continuations(
            prompt, config.k, stop="\n", temperature=config.temperature, seed=config.seed
        )
        candidates = rank_candidates(samples, session, config)
        log = session.step_logs[-1]
        if log.null_count > config.k / 2 or not candidates:
            session.termination = "null_majority"
            break
        best = candidates[0]
        if best.total < config.cutoff:
            session.termination = "cutoff"
            break
        log.chosen = 0
        session.plan = Plan(session.plan.steps + (best.step,), query_task)
        session.pr_a += prompts.step_line(index, render_nl(best.step)) + "\n"
        names = ", ".join(best.step.object_names)
        if names:
            session.pr_o = f"{session.pr_o}, {names}" if session.pr_o else names
        session.prev_nodes = tuple(
            env.node(i) for i in (best.step.object_ids or ()) if env.has_node(i)
        )
    else:
        session.termination = "max_steps"
    return session.plan, session
