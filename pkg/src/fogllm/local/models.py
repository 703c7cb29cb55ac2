"""Declarative table of model families with first-class local support.

Other GGUF files still load; the table only supplies defaults such as the
prompt format.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..runtime import PromptFormat


@dataclass(frozen=True)
class SupportedModel:
    name: str
    variations: tuple[str, ...]
    vendor: str
    prompt_format: PromptFormat = PromptFormat.CHAT_MARKERS
    note: str = ""


SUPPORTED_MODELS: tuple[SupportedModel, ...] = (
    SupportedModel("Llama2", ("7B", "13B", "70B"), "Meta Platforms", note="Instruct and Chat"),
    SupportedModel("Gemma", ("2B", "7B"), "Google"),
    SupportedModel("Phi-2", ("3B",), "Microsoft"),
)


def _norm(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def list_supported_models() -> tuple[SupportedModel, ...]:
    return SUPPORTED_MODELS


def lookup(name: str) -> SupportedModel | None:
    """Find a family by name; ``"llama2:7b"`` style ids match on the family part. None if unknown."""
    family = _norm(name.split(":", 1)[0])
    for model in SUPPORTED_MODELS:
        if _norm(model.name) == family:
            return model
    return None
