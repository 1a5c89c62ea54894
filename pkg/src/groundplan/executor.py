"""Rule-driven symbolic execution of grounded plans.

Stands in for a full household simulator: each action template carries
precondition and effect rules (see the template registry); a step executes
only if every precondition holds, and then all effects apply atomically.
Failures are data, not exceptions, at the plan level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .env_graph import EnvironmentGraph, GraphNode
from .errors import InvariantError
from .script import ActionStep, ActionTemplate, Plan, Rule, render_script_line

AGENT_CATEGORY = "character"
CLOSE, HOLDS, ON, INSIDE = "CLOSE", "HOLDS", "ON", "INSIDE"
HAND_CAPACITY = 2


@dataclass(frozen=True)
class AgentState:
    """Where the agent is attending and what it holds (at most two objects)."""

    agent_node_id: int
    held: frozenset[int] = frozenset()
    close_to: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "held", frozenset(self.held))
        object.__setattr__(self, "close_to", frozenset(self.close_to))
        if len(self.held) > HAND_CAPACITY:
            raise InvariantError(f"agent cannot hold {len(self.held)} objects")


class StepFailure(Exception):
    """Raised by execute_step when a precondition or lookup fails."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


@dataclass(frozen=True)
class StepResult:
    step: ActionStep
    ok: bool
    failure_reason: str | None = None


@dataclass(frozen=True)
class ExecutionTrace:
    """Per-step outcomes up to and including the first failure."""

    step_results: tuple[StepResult, ...]
    final_env: EnvironmentGraph
    final_agent: AgentState

    @property
    def ok_count(self) -> int:
        return sum(1 for r in self.step_results if r.ok)


def initial_agent_state(env: EnvironmentGraph) -> tuple[EnvironmentGraph, AgentState]:
    """Locate the agent node (category "character"), synthesizing one with no
    CLOSE edges when the scene lacks it. Held/close sets are read off the graph."""
    characters = env.nodes_of_category(AGENT_CATEGORY)
    if characters:
        agent_id = characters[0].id
    else:
        agent_id = env.max_id() + 1
        env = env.with_node(GraphNode(id=agent_id, category=AGENT_CATEGORY))
    held = frozenset(e.to_id for e in env.edges_from(agent_id, HOLDS))
    close = frozenset(e.to_id for e in env.edges_from(agent_id, CLOSE))
    return env, AgentState(agent_id, held, close)


def _resolve(slot: str, agent: AgentState, step: ActionStep) -> int:
    if slot == "AGENT":
        return agent.agent_node_id
    index = {"OBJ0": 0, "OBJ1": 1}[slot]
    return step.object_ids[index]


def _check_precondition(
    rule: Rule, env: EnvironmentGraph, agent: AgentState, step: ActionStep
) -> None:
    kind, args = rule.kind, rule.args
    if kind == "require_free_hand":
        if len(agent.held) >= HAND_CAPACITY:
            raise StepFailure(rule.describe())
        return
    if kind in ("require_edge", "forbid_edge"):
        a, relation, b = args
        present = env.has_edge(_resolve(a, agent, step), relation, _resolve(b, agent, step))
        if present != (kind == "require_edge"):
            raise StepFailure(rule.describe())
        return
    if kind in ("require_state", "require_property"):
        node = env.node(_resolve(args[0], agent, step))
        pool = node.states if kind == "require_state" else node.properties
        if args[1] not in pool:
            raise StepFailure(rule.describe())
        return
    raise InvariantError(f"rule kind {kind} is not a precondition")


def _apply_effect(
    rule: Rule, env: EnvironmentGraph, agent: AgentState, step: ActionStep
) -> tuple[EnvironmentGraph, AgentState]:
    kind, args = rule.kind, rule.args
    agent_id = agent.agent_node_id

    if kind == "add_edge":
        a, relation, b = args
        return env.with_edge(_resolve(a, agent, step), relation, _resolve(b, agent, step)), agent
    if kind == "remove_edge":
        a, relation, b = args
        triple = (_resolve(a, agent, step), relation.upper(), _resolve(b, agent, step))
        return env.without_edges({triple}), agent
    if kind in ("set_state", "clear_state"):
        node = env.node(_resolve(args[0], agent, step))
        states = node.states | {args[1]} if kind == "set_state" else node.states - {args[1]}
        return env.with_node(GraphNode(node.id, node.category, states, node.properties, node.position)), agent
    if kind == "move_agent":
        target = _resolve(args[0], agent, step)
        # held objects travel with the agent; everything else stops being close
        stale = {
            e.triple()
            for e in env.edges_from(agent_id, CLOSE)
            if e.to_id not in agent.held and e.to_id != target
        }
        env = env.without_edges(stale).with_edge(agent_id, CLOSE, target)
        close = frozenset(e.to_id for e in env.edges_from(agent_id, CLOSE))
        return env, AgentState(agent_id, agent.held, close)
    if kind == "hold":
        target = _resolve(args[0], agent, step)
        if len(agent.held) >= HAND_CAPACITY:
            raise StepFailure("held-capacity exceeded")
        placement = {
            e.triple() for e in env.edges_from(target) if e.relation in (ON, INSIDE)
        }
        env = env.without_edges(placement).with_edge(agent_id, HOLDS, target)
        return env, AgentState(agent_id, agent.held | {target}, agent.close_to)
    if kind == "release":
        target = _resolve(args[0], agent, step)
        env = env.without_edges({(agent_id, HOLDS, target)})
        return env, AgentState(agent_id, agent.held - {target}, agent.close_to)
    raise InvariantError(f"rule kind {kind} is not an effect")


def execute_step(
    env: EnvironmentGraph, agent: AgentState, step: ActionStep
) -> tuple[EnvironmentGraph, AgentState]:
    """Run one grounded step; raises StepFailure naming the violated rule.

    Effects are applied to a working copy, so a failure leaves the inputs
    untouched (value semantics make this free).
    """
    if not step.is_grounded:
        raise StepFailure("step not grounded")
    for node_id in step.object_ids:
        if not env.has_node(node_id):
            raise StepFailure(f"missing node id {node_id}")
    for rule in step.template.preconditions:
        _check_precondition(rule, env, agent, step)
    for rule in step.template.effects:
        env, agent = _apply_effect(rule, env, agent, step)
    return env, agent


def execute_plan(env: EnvironmentGraph, plan: Plan) -> ExecutionTrace:
    """Fold execute_step over the plan, stopping at the first failure.

    The failing step appears in the trace with ok=False; later steps do not
    appear at all.
    """
    env, agent = initial_agent_state(env)
    results: list[StepResult] = []
    for step in plan.steps:
        try:
            env, agent = execute_step(env, agent, step)
        except StepFailure as failure:
            results.append(StepResult(step, False, failure.reason))
            break
        results.append(StepResult(step, True))
    return ExecutionTrace(tuple(results), env, agent)


def executability(trace: ExecutionTrace, plan: Plan) -> float:
    """Percentage of plan steps that executed; a null plan scores 0."""
    if len(plan) == 0:
        return 0.0
    return 100.0 * trace.ok_count / len(plan)


def effect_allowlist(
    step: ActionStep, agent_id: int
) -> tuple[set[int], set[tuple[int | None, str, int | None]]]:
    """Nodes and edge patterns a step's effects may touch (None = wildcard).

    Used by the frame-property check: any change outside this set is a bug.
    """
    nodes: set[int] = set()
    edges: set[tuple[int | None, str, int | None]] = set()

    def resolve(slot: str) -> int:
        if slot == "AGENT":
            return agent_id
        return step.object_ids[{"OBJ0": 0, "OBJ1": 1}[slot]]

    for rule in step.template.effects:
        kind, args = rule.kind, rule.args
        if kind in ("add_edge", "remove_edge"):
            edges.add((resolve(args[0]), args[1].upper(), resolve(args[2])))
        elif kind in ("set_state", "clear_state"):
            nodes.add(resolve(args[0]))
        elif kind == "move_agent":
            edges.add((agent_id, CLOSE, None))
        elif kind == "hold":
            target = resolve(args[0])
            edges.add((agent_id, HOLDS, target))
            edges.add((target, ON, None))
            edges.add((target, INSIDE, None))
        elif kind == "release":
            edges.add((agent_id, HOLDS, resolve(args[0])))
    return nodes, edges


def trace_to_jsonl(trace: ExecutionTrace) -> str:
    """One JSON record per step: {"step": script-line, "ok": bool, "reason": ...}."""
    lines = []
    for result in trace.step_results:
        lines.append(
            json.dumps(
                {
                    "step": render_script_line(result.step),
                    "ok": result.ok,
                    "reason": result.failure_reason,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")
