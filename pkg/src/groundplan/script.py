"""Action-step representations and the conversions between them.

Three forms exist for a step:

* agent schema: ``[PutBack] <glass> (2) <sink> (1)`` -- verb, object names,
  node ids; what the executor runs;
* canonical form: a verb template plus object names (ids optional);
* natural language: the template's pattern with slots filled, e.g.
  ``put glass on sink``; what the LM produces and consumes.

The template registry (a JSON data file) defines the admissible verbs, their
NL patterns, and the precondition/effect rules the executor interprets.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import GroundPlanError, InputError, ParseError

SLOT_NAMES = ("AGENT", "OBJ0", "OBJ1")

RULE_KINDS = frozenset(
    {
        "require_edge",
        "forbid_edge",
        "require_state",
        "require_property",
        "require_free_hand",
        "add_edge",
        "remove_edge",
        "set_state",
        "clear_state",
        "move_agent",
        "hold",
        "release",
    }
)

# args each kind expects, as a sequence of "slot" / "tag" markers
_RULE_SIGNATURES = {
    "require_edge": ("slot", "tag", "slot"),
    "forbid_edge": ("slot", "tag", "slot"),
    "require_state": ("slot", "tag"),
    "require_property": ("slot", "tag"),
    "require_free_hand": (),
    "add_edge": ("slot", "tag", "slot"),
    "remove_edge": ("slot", "tag", "slot"),
    "set_state": ("slot", "tag"),
    "clear_state": ("slot", "tag"),
    "move_agent": ("slot",),
    "hold": ("slot",),
    "release": ("slot",),
}


class UnknownVerbError(ParseError):
    pass


class ArityMismatchError(ParseError):
    pass


class MalformedLineError(ParseError):
    pass


class UnparseableStepError(ParseError):
    """NL text that matches no template pattern; the planner counts it as a
    null sample rather than failing."""


@dataclass(frozen=True)
class Rule:
    """One precondition or effect, interpreted by the executor."""

    kind: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if self.kind not in RULE_KINDS:
            raise InputError(f"unknown rule kind {self.kind!r}")
        signature = _RULE_SIGNATURES[self.kind]
        if len(self.args) != len(signature):
            raise InputError(
                f"rule {self.kind} expects {len(signature)} args, got {len(self.args)}"
            )
        for arg, role in zip(self.args, signature):
            if role == "slot" and arg not in SLOT_NAMES:
                raise InputError(f"rule {self.kind}: {arg!r} is not a slot reference")

    def describe(self) -> str:
        """Failure label: the kind plus any tag args, e.g. 'require_state closed'."""
        signature = _RULE_SIGNATURES[self.kind]
        tags = [a for a, role in zip(self.args, signature) if role == "tag"]
        return " ".join([self.kind, *tags])


@dataclass(frozen=True)
class ActionTemplate:
    verb: str
    arity: int
    nl_pattern: str
    preconditions: tuple[Rule, ...] = ()
    effects: tuple[Rule, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "preconditions", tuple(self.preconditions))
        object.__setattr__(self, "effects", tuple(self.effects))
        if self.arity not in (0, 1, 2):
            raise InputError(f"template {self.verb}: arity must be 0, 1, or 2")
        slots = re.findall(r"\{(\d+)\}", self.nl_pattern)
        if sorted(int(s) for s in slots) != list(range(self.arity)):
            raise InputError(
                f"template {self.verb}: nl_pattern slots {slots} do not match arity {self.arity}"
            )


@dataclass(frozen=True)
class ActionStep:
    """A step in canonical form; grounded once node ids are attached."""

    template: ActionTemplate
    object_names: tuple[str, ...] = ()
    object_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "object_names", tuple(self.object_names))
        if len(self.object_names) != self.template.arity:
            raise InputError(
                f"step {self.template.verb}: expected {self.template.arity} object names,"
                f" got {len(self.object_names)}"
            )
        if self.object_ids is not None:
            object.__setattr__(self, "object_ids", tuple(int(i) for i in self.object_ids))
            if len(self.object_ids) != self.template.arity:
                raise InputError(
                    f"step {self.template.verb}: expected {self.template.arity} object ids,"
                    f" got {len(self.object_ids)}"
                )

    @property
    def is_grounded(self) -> bool:
        return self.object_ids is not None

    def signature(self) -> tuple[str, tuple[str, ...]]:
        """Identity used by LCS and the action-repetition penalty (ids ignored)."""
        return (self.template.verb, self.object_names)


@dataclass(frozen=True)
class Plan:
    steps: tuple[ActionStep, ...] = ()
    task: str = ""

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)


def normalize_object_name(name: str) -> str:
    """Lowercase, trimmed, internal whitespace collapsed to underscores."""
    return re.sub(r"\s+", "_", name.strip().lower())


def normalize_nl(text: str) -> str:
    """Normalization applied before pattern matching and embedding."""
    text = text.strip().lower()
    text = re.sub(r"[.!?,;]+$", "", text)
    return re.sub(r"\s+", " ", text)


class TemplateRegistry:
    """Immutable registry of admissible actions, ordered as in the data file.

    NL patterns are compiled once; ``extract_objects`` tries them longest
    literal skeleton first, then registry order, so parsing is deterministic.
    """

    def __init__(self, templates: list[ActionTemplate] | tuple[ActionTemplate, ...]):
        self.templates: tuple[ActionTemplate, ...] = tuple(templates)
        self._by_verb: dict[str, ActionTemplate] = {}
        for template in self.templates:
            key = template.verb.lower()
            if key in self._by_verb:
                raise InputError(f"duplicate verb {template.verb!r} in registry")
            self._by_verb[key] = template
        self._matchers = self._compile_matchers()

    def __iter__(self):
        return iter(self.templates)

    def __len__(self) -> int:
        return len(self.templates)

    def get(self, verb: str) -> ActionTemplate:
        template = self._by_verb.get(verb.lower())
        if template is None:
            raise UnknownVerbError(f"unknown verb {verb!r}")
        return template

    def has(self, verb: str) -> bool:
        return verb.lower() in self._by_verb

    def templates_of_arity(self, arity: int) -> tuple[ActionTemplate, ...]:
        return tuple(t for t in self.templates if t.arity == arity)

    def _compile_matchers(self):
        matchers = []
        for index, template in enumerate(self.templates):
            parts = re.split(r"\{(\d+)\}", template.nl_pattern)
            literal_len = sum(len(p) for p in parts[::2])
            pieces = []
            slot_count = len(parts) // 2
            seen_slots = 0
            for i, part in enumerate(parts):
                if i % 2 == 0:
                    pieces.append(re.escape(part))
                else:
                    seen_slots += 1
                    greedy = ".+" if seen_slots == slot_count else ".+?"
                    pieces.append(f"(?P<s{part}>{greedy})")
            pattern = re.compile("".join(pieces))
            matchers.append((-literal_len, index, pattern, template))
        matchers.sort(key=lambda m: (m[0], m[1]))
        return tuple(matchers)

    def match_nl(self, text: str) -> tuple[ActionTemplate, tuple[str, ...]] | None:
        normalized = normalize_nl(text)
        if not normalized:
            return None
        for _, _, pattern, template in self._matchers:
            m = pattern.fullmatch(normalized)
            if m is None:
                continue
            names = tuple(
                normalize_object_name(m.group(f"s{i}")) for i in range(template.arity)
            )
            if all(names):
                return template, names
        return None


def load_registry(path: str | Path | None = None) -> TemplateRegistry:
    """Load the template registry; defaults to the packaged data file."""
    if path is None:
        raw = resources.files("groundplan.data").joinpath("templates.json").read_text("utf-8")
        source = "groundplan/data/templates.json"
    else:
        path = Path(path)
        if not path.exists():
            raise InputError(f"template registry not found: {path}")
        raw = path.read_text(encoding="utf-8")
        source = str(path)
    try:
        entries = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}: invalid JSON: {exc}") from exc
    templates = []
    for i, entry in enumerate(entries):
        try:
            templates.append(
                ActionTemplate(
                    verb=entry["verb"],
                    arity=int(entry["arity"]),
                    nl_pattern=entry["nl_pattern"],
                    preconditions=tuple(
                        Rule(r["kind"], tuple(r.get("args", []))) for r in entry.get("preconditions", [])
                    ),
                    effects=tuple(
                        Rule(r["kind"], tuple(r.get("args", []))) for r in entry.get("effects", [])
                    ),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{source}: templates[{i}]: {exc}") from exc
    return TemplateRegistry(templates)


# -- agent-schema lines ------------------------------------------------------

_ARG_RE = re.compile(r"<(?P<name>[^<>()]+)>\s*\((?P<id>\d+)\)")


def parse_script_line(line: str, registry: TemplateRegistry) -> ActionStep:
    """Parse one agent-schema line like ``[PutBack] <glass> (2) <sink> (1)``."""
    if not line.strip():
        raise MalformedLineError("empty script line")
    pos = 0
    while pos < len(line) and line[pos].isspace():
        pos += 1
    if pos >= len(line) or line[pos] != "[":
        raise MalformedLineError("expected '[' to open the verb", column=pos)
    close = line.find("]", pos)
    if close < 0:
        raise MalformedLineError("unterminated verb bracket", column=pos)
    verb = line[pos + 1 : close].strip()
    if not verb:
        raise MalformedLineError("empty verb", column=pos + 1)
    try:
        template = registry.get(verb)
    except UnknownVerbError:
        raise UnknownVerbError(f"unknown verb {verb!r}", column=pos + 1) from None

    names: list[str] = []
    ids: list[int] = []
    cursor = close + 1
    while cursor < len(line):
        if line[cursor].isspace():
            cursor += 1
            continue
        m = _ARG_RE.match(line, cursor)
        if m is None:
            raise MalformedLineError(
                f"malformed object argument near {line[cursor:cursor + 12]!r}", column=cursor
            )
        names.append(normalize_object_name(m.group("name")))
        ids.append(int(m.group("id")))
        cursor = m.end()
    if len(names) != template.arity:
        raise ArityMismatchError(
            f"verb {template.verb} takes {template.arity} objects, got {len(names)}",
            column=close + 1,
        )
    return ActionStep(template, tuple(names), tuple(ids))


def render_script_line(step: ActionStep) -> str:
    """Inverse of parse_script_line; requires a grounded step."""
    if not step.is_grounded:
        raise GroundPlanError(f"cannot render ungrounded step {step.template.verb}")
    parts = [f"[{step.template.verb}]"]
    for name, node_id in zip(step.object_names, step.object_ids):
        parts.append(f"<{name}> ({node_id})")
    return " ".join(parts)


def render_nl(step: ActionStep) -> str:
    """Natural-language form of a step, lowercase."""
    return step.template.nl_pattern.format(*step.object_names).lower()


def extract_objects(nl_step: str, registry: TemplateRegistry) -> tuple[ActionTemplate, tuple[str, ...]]:
    """Recover (template, object names) from NL text, or raise
    UnparseableStepError when no pattern matches."""
    matched = registry.match_nl(nl_step)
    if matched is None:
        raise UnparseableStepError(f"no action pattern matches {nl_step!r}")
    return matched


# -- plan files --------------------------------------------------------------

_TASK_HEADER = "# task: "


def plan_to_text(plan: Plan) -> str:
    lines = [f"{_TASK_HEADER}{plan.task}"]
    lines.extend(render_script_line(step) for step in plan.steps)
    return "\n".join(lines) + "\n"


def plan_from_text(text: str, registry: TemplateRegistry) -> Plan:
    task = ""
    steps = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith(_TASK_HEADER):
                task = line[len(_TASK_HEADER):].strip()
            continue
        steps.append(parse_script_line(line, registry))
    return Plan(tuple(steps), task)


def save_plan(plan: Plan, path: str | Path) -> None:
    Path(path).write_text(plan_to_text(plan), encoding="utf-8")


def load_plan(path: str | Path, registry: TemplateRegistry) -> Plan:
    path = Path(path)
    if not path.exists():
        raise InputError(f"plan file not found: {path}")
    return plan_from_text(path.read_text(encoding="utf-8"), registry)
