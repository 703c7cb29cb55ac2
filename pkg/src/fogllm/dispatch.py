"""Trust-aware dispatch of tasks to platforms, and multi-stage pipelines.

A policy maps each task class to a minimum trust tier and capability. The
dispatcher picks, among qualifying platforms, the most trusted one, then the
most capable, then the one earliest in the fallback chain. It never silently
runs a task below its minimum trust tier unless the policy explicitly allows
downgrades.

Pipelines chain tasks so that sensitive raw input is only ever seen by the
first stage; later, possibly less trusted, stages receive only the previous
stage's output.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import NoQualifiedPlatform, PipelineError, UnknownTaskClass
from .runtime import ModelSchema, PlatformDescriptor, PlatformKind, Runner
from .toolcalling import ToolRegistry, run_turn

log = logging.getLogger(__name__)

SLOT = "{input}"


@dataclass(frozen=True)
class DispatchRule:
    task_class: str
    min_trust_tier: int = 1
    min_capability: int = 0


@dataclass
class DispatchPolicy:
    rules: list[DispatchRule]
    fallback_chain: list[PlatformKind] = field(
        default_factory=lambda: [PlatformKind.LOCAL, PlatformKind.FOG, PlatformKind.CLOUD]
    )
    allow_downgrade: bool = False

    def __post_init__(self):
        self.fallback_chain = [PlatformKind(k) for k in self.fallback_chain]
        classes = [r.task_class for r in self.rules]
        if len(set(classes)) != len(classes):
            raise ValueError("dispatch rules overlap: duplicate task_class")
        if len(set(self.fallback_chain)) != len(self.fallback_chain):
            raise ValueError("fallback_chain entries must be unique")

    def rule(self, task_class: str) -> DispatchRule:
        for r in self.rules:
            if r.task_class == task_class:
                return r
        raise UnknownTaskClass(f"no dispatch rule for task class {task_class!r}")

    @classmethod
    def from_dict(cls, data: dict) -> DispatchPolicy:
        return cls(
            rules=[
                DispatchRule(r["task_class"], int(r.get("min_trust", r.get("min_trust_tier", 1))), int(r.get("min_capability", 0)))
                for r in data.get("rules", [])
            ],
            fallback_chain=data.get("fallback_chain", ["local", "fog", "cloud"]),
            allow_downgrade=bool(data.get("allow_downgrade", False)),
        )

    @classmethod
    def load(cls, path: str | Path) -> DispatchPolicy:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _fallback_rank(policy: DispatchPolicy, kind: PlatformKind) -> int:
    try:
        return policy.fallback_chain.index(kind)
    except ValueError:
        return len(policy.fallback_chain)


def dispatch(policy: DispatchPolicy, task_class: str, inventory: Sequence[PlatformDescriptor]) -> PlatformDescriptor:
    rule = policy.rule(task_class)
    qualified = [
        d for d in inventory
        if d.trust_tier >= rule.min_trust_tier and d.capability_score >= rule.min_capability
    ]
    if qualified:
        best = qualified[0]
        for d in qualified[1:]:
            if (d.trust_tier, d.capability_score, -_fallback_rank(policy, d.kind)) > (
                best.trust_tier, best.capability_score, -_fallback_rank(policy, best.kind)
            ):
                best = d
        return best
    if policy.allow_downgrade:
        for kind in policy.fallback_chain:
            capable = [d for d in inventory if d.kind is kind and d.capability_score >= rule.min_capability]
            if capable:
                chosen = max(capable, key=lambda d: d.capability_score)
                log.warning("task %r downgraded to %s (trust %d < %d)", task_class, kind.value,
                            chosen.trust_tier, rule.min_trust_tier)
                return chosen
    raise NoQualifiedPlatform(
        f"no platform meets trust >= {rule.min_trust_tier} and capability >= {rule.min_capability} "
        f"for task {task_class!r}"
    )


# -- pipelines --------------------------------------------------------------

@dataclass(frozen=True)
class PipelineStage:
    task_class: str
    prompt_template: str
    output_feeds_next: bool = True
    schema: ModelSchema | None = None

    def __post_init__(self):
        if self.prompt_template.count(SLOT) != 1:
            raise ValueError(f"prompt_template must contain exactly one {SLOT} slot")

    def render(self, text: str) -> str:
        return self.prompt_template.replace(SLOT, text)


@dataclass(frozen=True)
class StageRecord:
    stage_index: int
    task_class: str
    platform: PlatformDescriptor
    prompt: str
    output: str


@dataclass
class PipelineResult:
    output: str
    transcript: list[StageRecord]


def _check_stages(stages: Sequence[PipelineStage]) -> None:
    # the last stage's output_feeds_next is ignored: nothing follows it
    if not stages:
        raise ValueError("pipeline needs at least one stage")
    for i in range(1, len(stages)):
        if not any(s.output_feeds_next for s in stages[:i]):
            raise ValueError(f"stage {i} has no upstream stage feeding it")


def run_pipeline(
    stages: Sequence[PipelineStage],
    policy: DispatchPolicy,
    runner: Runner,
    input_text: str,
    *,
    schema: ModelSchema,
    registry: ToolRegistry | None = None,
) -> PipelineResult:
    """Run stages in order, each on the platform its task class dispatches to.

    Only the first stage sees ``input_text``. Every later stage's slot is
    filled with the output of the most recent stage marked
    ``output_feeds_next``.
    """
    _check_stages(stages)
    registry = registry or ToolRegistry()
    transcript: list[StageRecord] = []
    upstream: str | None = None
    output = ""
    for i, stage in enumerate(stages):
        try:
            platform = dispatch(policy, stage.task_class, runner.inventory)
            prompt = stage.render(input_text if i == 0 else upstream)
            session = runner.create_session(stage.schema or schema, platform=platform)
            output = run_turn(session, registry, prompt).content
        except Exception as exc:
            raise PipelineError(i, exc) from exc
        transcript.append(StageRecord(i, stage.task_class, platform, prompt, output))
        if stage.output_feeds_next:
            upstream = output
    return PipelineResult(output, transcript)
