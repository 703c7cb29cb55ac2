"""Schema, session, runner and platform: the uniform interface to every layer.

A :class:`ModelSchema` is an immutable blueprint. The :class:`Runner` holds
the platforms a system can execute on and binds each new
:class:`InferenceSession` to exactly one of them. A session owns the chat
context and drives generation; the platform does the actual work.
"""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, Mapping, Sequence

from .errors import (
    BackendError,
    BudgetTooSmall,
    ConcurrentGeneration,
    NoPlatformAvailable,
    RangeError,
    SessionStateError,
)
from .messages import ChatContext, Message, Role
from .wire import ChatRequest, StreamAccumulator, StreamChunk, ToolSpec


class PromptFormat(str, Enum):
    CHAT_MARKERS = "chat-markers"
    RAW = "raw"


class PlatformKind(str, Enum):
    LOCAL = "local"
    FOG = "fog"
    CLOUD = "cloud"


class LayerHint(str, Enum):
    LOCAL = "local"
    FOG = "fog"
    CLOUD = "cloud"
    AUTO = "auto"


# Ordinal trust ranking; nearer to the data means more trusted.
TRUST_TIERS = {PlatformKind.LOCAL: 3, PlatformKind.FOG: 2, PlatformKind.CLOUD: 1}


@dataclass(frozen=True)
class ModelSchema:
    model_id: str
    temperature: float = 1.0
    max_output_tokens: int = 512
    context_window: int = 4096
    prompt_format: PromptFormat = PromptFormat.CHAT_MARKERS
    layer_hint: LayerHint | None = None

    def __post_init__(self):
        if not isinstance(self.model_id, str) or not self.model_id:
            raise RangeError("model_id must be a non-empty string")
        t = self.temperature
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not 0.0 <= t <= 2.0:
            raise RangeError(f"temperature {t!r} outside [0, 2]")
        for name in ("max_output_tokens", "context_window"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise RangeError(f"{name} must be a positive integer, got {v!r}")
        if self.context_window < self.max_output_tokens:
            raise RangeError("context_window must be >= max_output_tokens")
        object.__setattr__(self, "temperature", float(t))
        object.__setattr__(self, "prompt_format", PromptFormat(self.prompt_format))
        if self.layer_hint is not None:
            object.__setattr__(self, "layer_hint", LayerHint(self.layer_hint))


def make_schema(
    model_id: str,
    sampling_params: Mapping | None = None,
    context_window: int = 4096,
    layer_hint: LayerHint | str | None = None,
    prompt_format: PromptFormat | str = PromptFormat.CHAT_MARKERS,
) -> ModelSchema:
    params = dict(sampling_params or {})
    unknown = set(params) - {"temperature", "max_output_tokens"}
    if unknown:
        raise RangeError(f"unknown sampling parameters: {sorted(unknown)}")
    default_max = 512
    if isinstance(context_window, int) and 0 < context_window < default_max:
        default_max = context_window
    return ModelSchema(
        model_id=model_id,
        temperature=params.get("temperature", 1.0),
        max_output_tokens=params.get("max_output_tokens", default_max),
        context_window=context_window,
        prompt_format=prompt_format,
        layer_hint=layer_hint,
    )


@dataclass(frozen=True)
class PlatformDescriptor:
    kind: PlatformKind
    capability_score: int = 0
    endpoint: str | None = None
    trust_tier: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", PlatformKind(self.kind))
        if self.capability_score < 0:
            raise RangeError("capability_score must be non-negative")
        object.__setattr__(self, "trust_tier", TRUST_TIERS[self.kind])

    @property
    def key(self) -> tuple[PlatformKind, str | None]:
        return (self.kind, self.endpoint)


class Platform(ABC):
    """One execution layer instance. Implementations guard their own shared resources."""

    descriptor: PlatformDescriptor

    @abstractmethod
    def stream(self, request: ChatRequest) -> Iterator[StreamChunk]:
        """Run one completion and yield wire chunks as they are produced."""

    def prepare(self) -> None:
        """Resolve endpoints or load models ahead of the first request. Optional."""


# -- context trimming -------------------------------------------------------

TokenCounter = Callable[[Message], int]


def word_count(message: Message) -> int:
    n = len(message.content.split())
    for call in message.tool_calls:
        n += 1 + len(call.arguments.split())
    return n


def context_trim(context: ChatContext, window_budget: int, token_counter: TokenCounter = word_count) -> ChatContext:
    """Drop whole messages oldest-first until the context fits ``window_budget``.

    The pinned prefix is always kept. Tool results whose originating
    assistant message was dropped are dropped with it.
    """
    entries = context.entries
    p = context.pinned_prefix_len
    if p > len(entries):
        raise ValueError("pinned_prefix_len exceeds number of entries")
    costs = [token_counter(m) for m in entries]
    pinned_cost = sum(costs[:p])
    if pinned_cost > window_budget:
        raise BudgetTooSmall(f"pinned prefix needs {pinned_cost} tokens, budget is {window_budget}")
    if sum(costs) <= window_budget:
        return context.copy()
    used = pinned_cost
    start = len(entries)
    while start > p and used + costs[start - 1] <= window_budget:
        start -= 1
        used += costs[start]
    while start < len(entries) and entries[start].role is Role.TOOL:
        start += 1
    return ChatContext(entries[:p] + entries[start:], p)


def render_prompt(messages: Sequence[Message], prompt_format: PromptFormat) -> str:
    """Flatten a chat into one prompt string for runtimes that take raw text."""
    if prompt_format is PromptFormat.RAW:
        return "\n".join(m.content for m in messages)
    parts = [f"<|{m.role.value}|>\n{m.content}\n" for m in messages]
    parts.append("<|assistant|>\n")
    return "".join(parts)


# -- sessions ---------------------------------------------------------------

class SessionState(str, Enum):
    IDLE = "idle"
    GENERATING = "generating"
    ERROR = "error"


class Generation:
    """A generation in flight. Iterate to receive text deltas as they stream.

    Once exhausted, :attr:`message` holds the assistant message appended to
    the session context and :attr:`finish_reason` the reason the model
    stopped.
    """

    def __init__(self, session: InferenceSession, chunks: Iterator[StreamChunk]):
        self._session = session
        self._chunks = chunks
        self._acc = StreamAccumulator()
        self.deltas: list[str] = []
        self.message: Message | None = None
        self.finish_reason: str | None = None
        self._closed = False

    def __iter__(self):
        return self

    def __next__(self) -> str:
        if self._closed:
            raise StopIteration
        while True:
            try:
                chunk = next(self._chunks)
                text = self._acc.add(chunk)
            except StopIteration:
                self._finish()
                raise
            except BackendError as exc:
                self._fail(exc)
                raise
            except Exception as exc:
                self._fail(exc)
                raise BackendError(str(exc)) from exc
            if text:
                self.deltas.append(text)
                return text

    def _finish(self) -> None:
        self._closed = True
        if self._acc.finish_reason is None:
            # some servers omit finish_reason on the last chunk
            self._acc.finish_reason = "tool_calls" if self._acc._calls else "stop"
        try:
            message = self._acc.message()
        except Exception as exc:
            self._fail(exc)
            raise BackendError(str(exc)) from exc
        self.message = message
        self.finish_reason = self._acc.finish_reason
        self._session._complete(message)

    def _fail(self, exc: BaseException) -> None:
        self._closed = True
        self._session._fail(str(exc) or type(exc).__name__)

    def run(self, on_delta: Callable[[str], None] | None = None) -> Message:
        for text in self:
            if on_delta is not None:
                on_delta(text)
        return self.message

    def close(self) -> None:
        """Abandon the generation; the session returns to idle without an assistant message."""
        if self._closed:
            return
        self._closed = True
        close = getattr(self._chunks, "close", None)
        if close is not None:
            close()
        self._session._cancel()


class InferenceSession:
    """The model in execution: chat context plus generation state.

    A session is bound to one platform for its whole lifetime. At most one
    generation may be in flight; a failed generation leaves the session in
    the error state until :meth:`reset` is called.
    """

    def __init__(
        self,
        schema: ModelSchema,
        platform: Platform,
        context: ChatContext | None = None,
        *,
        token_counter: TokenCounter = word_count,
        trim: bool = True,
    ):
        self.schema = schema
        self.platform = platform
        self.context = context if context is not None else ChatContext()
        self.token_counter = token_counter
        self.trim = trim
        self.state = SessionState.IDLE
        self.error_detail: str | None = None
        self._lock = threading.Lock()

    @property
    def bound_platform(self) -> PlatformDescriptor:
        return self.platform.descriptor

    def build_request(self, tools: Sequence[ToolSpec] | None = None, extra: Message | None = None) -> ChatRequest:
        ctx = self.context
        if extra is not None:
            ctx = ctx.copy()
            ctx.append(extra)
        if self.trim:
            budget = self.schema.context_window - self.schema.max_output_tokens
            ctx = context_trim(ctx, budget, self.token_counter)
        return ChatRequest(
            model=self.schema.model_id,
            messages=list(ctx.entries),
            temperature=self.schema.temperature,
            stream=True,
            tools=list(tools) if tools else None,
            max_tokens=self.schema.max_output_tokens,
        )

    def stream(self, user_message: str | Message | None = None, *, tools: Sequence[ToolSpec] | None = None) -> Generation:
        if isinstance(user_message, str):
            user_message = Message.user(user_message)
        with self._lock:
            if self.state is SessionState.GENERATING:
                raise ConcurrentGeneration("a generation is already in flight for this session")
            if self.state is SessionState.ERROR:
                raise SessionStateError(f"session is in error state: {self.error_detail}")
            request = self.build_request(tools, user_message)
            if user_message is not None:
                self.context.append(user_message)
            self.state = SessionState.GENERATING
        try:
            chunks = iter(self.platform.stream(request))
        except Exception as exc:
            self._fail(str(exc))
            if isinstance(exc, (BackendError, NoPlatformAvailable)):
                raise
            raise BackendError(str(exc)) from exc
        return Generation(self, chunks)

    def generate(
        self,
        user_message: str | Message | None = None,
        *,
        tools: Sequence[ToolSpec] | None = None,
        on_delta: Callable[[str], None] | None = None,
    ) -> Message:
        return self.stream(user_message, tools=tools).run(on_delta)

    def append_tool_result(self, call_id: str, content: str) -> None:
        with self._lock:
            if self.state is SessionState.GENERATING:
                raise ConcurrentGeneration("cannot modify context during a generation")
            self.context.append(Message.tool(call_id, content))

    def reset(self) -> None:
        with self._lock:
            if self.state is SessionState.GENERATING:
                raise ConcurrentGeneration("cannot reset during a generation")
            self.state = SessionState.IDLE
            self.error_detail = None

    def _complete(self, message: Message) -> None:
        with self._lock:
            self.context.append(message)
            self.state = SessionState.IDLE

    def _fail(self, detail: str) -> None:
        with self._lock:
            self.state = SessionState.ERROR
            self.error_detail = detail

    def _cancel(self) -> None:
        with self._lock:
            if self.state is SessionState.GENERATING:
                self.state = SessionState.IDLE


# -- runner -----------------------------------------------------------------

def select_platform(
    hint: LayerHint | None,
    inventory: Sequence[PlatformDescriptor],
    min_capability: int = 0,
) -> PlatformDescriptor:
    """Pick a platform for a layer hint: forced kind, or the most trusted capable one."""
    hint = LayerHint(hint) if hint is not None else LayerHint.AUTO
    candidates = [d for d in inventory if d.capability_score >= min_capability]
    if hint is not LayerHint.AUTO:
        candidates = [d for d in candidates if d.kind.value == hint.value]
    if not candidates:
        raise NoPlatformAvailable(f"no platform satisfies layer hint {hint.value!r}")
    best = candidates[0]
    for d in candidates[1:]:
        if (d.trust_tier, d.capability_score) > (best.trust_tier, best.capability_score):
            best = d
    return best


class Runner:
    """Central dispatcher holding every platform the system can run on."""

    def __init__(self, platforms: Sequence[Platform] = (), *, min_capability: int = 0):
        self._platforms: dict[tuple, Platform] = {}
        self._lock = threading.Lock()
        self.min_capability = min_capability
        for p in platforms:
            self.register(p)

    def register(self, platform: Platform) -> Runner:
        with self._lock:
            # same (kind, endpoint) replaces in place, keeping registration order
            self._platforms[platform.descriptor.key] = platform
        return self

    def unregister(self, descriptor: PlatformDescriptor) -> None:
        with self._lock:
            self._platforms.pop(descriptor.key, None)

    @property
    def inventory(self) -> list[PlatformDescriptor]:
        with self._lock:
            return [p.descriptor for p in self._platforms.values()]

    def platform_for(self, descriptor: PlatformDescriptor) -> Platform:
        with self._lock:
            try:
                return self._platforms[descriptor.key]
            except KeyError:
                raise NoPlatformAvailable(f"platform {descriptor.key} is not registered") from None

    def create_session(
        self,
        schema: ModelSchema,
        *,
        platform: PlatformDescriptor | None = None,
        context: ChatContext | None = None,
        **session_kwargs,
    ) -> InferenceSession:
        if platform is None:
            platform = select_platform(schema.layer_hint, self.inventory, self.min_capability)
        return InferenceSession(schema, self.platform_for(platform), context, **session_kwargs)
