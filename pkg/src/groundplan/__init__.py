"""groundplan: environment-aware task planning over household scene graphs.

Generates low-level, object-associated action plans from high-level tasks by
ranking LM-sampled candidates with environment-aware scores, executes them
against a symbolic rule engine, and evaluates executability, LCS, and final
graph correctness.
"""

from .env_graph import (
    EnvironmentGraph,
    GraphEdge,
    GraphNode,
    env_similarity,
    graph_diff,
    iou,
    load_environment,
)
from .errors import BackendError, GroundPlanError, InputError, IntegrityError, ParseError
from .example_store import ExampleRecord, load_records, select_example, split_dataset
from .executor import ExecutionTrace, executability, execute_plan, execute_step
from .lm_gateway import GatewayConfig, RemoteBackend, StubBackend, cosine
from .metrics import EvalResult, evaluate_record, evaluate_run, final_correctness, lcs_score
from .planner import PlannerConfig, ScoredCandidate, generate_plan, rank_candidates
from .script import (
    ActionStep,
    ActionTemplate,
    Plan,
    load_registry,
    parse_script_line,
    render_nl,
    render_script_line,
)

__version__ = "0.1.0"

__all__ = [
    "ActionStep",
    "ActionTemplate",
    "BackendError",
    "EnvironmentGraph",
    "EvalResult",
    "ExampleRecord",
    "ExecutionTrace",
    "GatewayConfig",
    "GraphEdge",
    "GraphNode",
    "GroundPlanError",
    "InputError",
    "IntegrityError",
    "ParseError",
    "Plan",
    "PlannerConfig",
    "RemoteBackend",
    "ScoredCandidate",
    "StubBackend",
    "cosine",
    "env_similarity",
    "evaluate_record",
    "evaluate_run",
    "executability",
    "execute_plan",
    "execute_step",
    "final_correctness",
    "generate_plan",
    "graph_diff",
    "iou",
    "lcs_score",
    "load_environment",
    "load_records",
    "load_registry",
    "parse_script_line",
    "rank_candidates",
    "render_nl",
    "render_script_line",
    "select_example",
    "split_dataset",
]
