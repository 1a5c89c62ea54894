"""Prompt layout shared by the example store, the planner, and the stub LM.

The layout lives in one data file so the Huang-et-al style formatting
("Task:" headers, numbered "Step n:" lines) can be swapped without touching
code.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

_LAYOUT = json.loads(
    resources.files("groundplan.data").joinpath("prompt_layout.json").read_text("utf-8")
)

_TASK_PREFIX = _LAYOUT["task_line"].format(task="\x00").split("\x00")[0]
_STEP_RE = re.compile(
    re.escape(_LAYOUT["step_line"]).replace(r"\{index\}", r"(\d+)").replace(r"\{text\}", r"(.*)")
)
_CUE_RE = re.compile(re.escape(_LAYOUT["step_cue"]).replace(r"\{index\}", r"(\d+)") + r"\s*")


def task_line(task: str) -> str:
    return _LAYOUT["task_line"].format(task=task)


def step_line(index: int, text: str) -> str:
    return _LAYOUT["step_line"].format(index=index, text=text)


def step_cue(index: int) -> str:
    return _LAYOUT["step_cue"].format(index=index)


@dataclass(frozen=True)
class PromptTail:
    """The portion of a plan prompt after its last task header."""

    query_task: str
    step_texts: tuple[str, ...]


def parse_prompt_tail(prompt: str) -> PromptTail:
    """Find the last task line and the step texts that follow it.

    A trailing bare cue ("Step 3:") marks where the next step should be
    generated and contributes no text.
    """
    query_task = ""
    steps: list[str] = []
    for raw in prompt.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith(_TASK_PREFIX):
            query_task = line[len(_TASK_PREFIX):].strip()
            steps = []
            continue
        m = _STEP_RE.fullmatch(line)
        if m and m.group(2).strip():
            steps.append(m.group(2).strip())
    return PromptTail(query_task, tuple(steps))
