"""Layered LLM execution across local, fog and cloud platforms.

The core objects are :class:`ModelSchema` (what to run),
:class:`InferenceSession` (a running conversation), :class:`Runner` (which
platforms exist) and :class:`Platform` (where inference happens).
"""

from .dispatch import DispatchPolicy, DispatchRule, PipelineStage, dispatch, run_pipeline
from .errors import FogLLMError
from .messages import ChatContext, Message, Role, ToolCall
from .runtime import (
    InferenceSession,
    LayerHint,
    ModelSchema,
    Platform,
    PlatformDescriptor,
    PlatformKind,
    Runner,
    make_schema,
)
from .toolcalling import ToolRegistry, run_turn, tool
from .wire import ChatRequest, StreamChunk

__version__ = "0.1.0"

__all__ = [
    "ChatContext",
    "ChatRequest",
    "DispatchPolicy",
    "DispatchRule",
    "FogLLMError",
    "InferenceSession",
    "LayerHint",
    "Message",
    "ModelSchema",
    "PipelineStage",
    "Platform",
    "PlatformDescriptor",
    "PlatformKind",
    "Role",
    "Runner",
    "StreamChunk",
    "ToolCall",
    "ToolRegistry",
    "dispatch",
    "make_schema",
    "run_pipeline",
    "run_turn",
    "tool",
]
