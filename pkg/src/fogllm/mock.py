"""Deterministic stand-ins for real model runtimes.

:class:`SeededMock` produces a reply that is a pure function of
``(seed, request)`` and paces it at a configurable token rate, which is what
makes timing measurements against a mock meaningful. :class:`ScriptedPlatform`
replays hand-written turns and is used to drive the session and tool loops.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Sequence

from .errors import BackendError
from .runtime import Platform, PlatformDescriptor, PlatformKind
from .wire import ChatRequest, StreamChunk, ToolCallDelta, request_to_wire

VOCABULARY = (
    "sleep", "rest", "steps", "heart", "rate", "trend", "week", "average", "hours",
    "improve", "routine", "evening", "morning", "light", "screen", "caffeine",
    "record", "summary", "daily", "stable", "slightly", "higher", "lower", "than",
    "usual", "consider", "keeping", "consistent", "bedtime", "and", "the", "your",
    "data", "shows", "about", "seven", "minutes", "exercise", "walk", "more",
    "water", "note", "pattern", "during", "weekend", "overall", "good", "quality",
)


@dataclass(frozen=True)
class MockConfig:
    seed: int = 0
    tokens_per_second: float | None = None  # None: no pacing
    first_token_delay_ms: float = 0.0
    reply_tokens: int = 24

    def __post_init__(self):
        if self.tokens_per_second is not None and self.tokens_per_second <= 0:
            raise ValueError("tokens_per_second must be positive")
        if self.reply_tokens < 0 or self.first_token_delay_ms < 0:
            raise ValueError("reply_tokens and first_token_delay_ms must be non-negative")


class SeededMock:
    """Seeded word generator speaking the chat-completions chunk format."""

    def __init__(self, config: MockConfig | None = None, **kwargs):
        self.config = config or MockConfig(**kwargs)
        self.invocations = 0
        self._lock = threading.Lock()

    def digest(self, request: ChatRequest) -> bytes:
        wire = request_to_wire(replace(request, stream=False))
        key = json.dumps([self.config.seed, wire], sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(key.encode("utf-8")).digest()

    def words(self, request: ChatRequest) -> list[str]:
        return self.words_for_digest(self.digest(request))

    def words_for_text(self, text: str) -> list[str]:
        key = f"{self.config.seed}\x00{text}".encode("utf-8")
        return self.words_for_digest(hashlib.sha256(key).digest())

    def words_for_digest(self, digest: bytes) -> list[str]:
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        return [rng.choice(VOCABULARY) for _ in range(self.config.reply_tokens)]

    def chunks(self, request: ChatRequest) -> list[StreamChunk]:
        with self._lock:
            self.invocations += 1
        digest = self.digest(request)
        envelope = dict(id="chatcmpl-" + digest.hex()[:24], model=request.model, created=0)
        words = self.words(request)
        finish = "stop"
        if request.max_tokens is not None and len(words) > request.max_tokens:
            words, finish = words[: request.max_tokens], "length"
        out = []
        for i, w in enumerate(words):
            out.append(StreamChunk(
                delta_content=w if i == 0 else " " + w,
                role="assistant" if i == 0 else None,
                **envelope,
            ))
        if not out:
            out.append(StreamChunk(role="assistant", **envelope))
        out.append(StreamChunk(finish_reason=finish, **envelope))
        return out

    def schedule(self, n_tokens: int) -> list[float]:
        """Offsets in seconds (from request start) at which each content chunk is released."""
        delay = self.config.first_token_delay_ms / 1000.0
        rate = self.config.tokens_per_second
        if rate is None:
            return [delay] * n_tokens
        return [delay + i / rate for i in range(n_tokens)]

    def paced(self, request: ChatRequest) -> Iterator[StreamChunk]:
        """Blocking stream honouring the configured pacing."""
        start = time.monotonic()
        chunks = self.chunks(request)
        offsets = self.schedule(len(chunks) - 1)
        for chunk, offset in zip(chunks, offsets + [offsets[-1] if offsets else 0.0]):
            wait = start + offset - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            yield chunk


class MockPlatform(Platform):
    """A platform served in-process by a :class:`SeededMock`."""

    def __init__(self, kind: PlatformKind | str, mock: SeededMock | None = None, *, capability_score: int = 0,
                 endpoint: str | None = None):
        self.descriptor = PlatformDescriptor(PlatformKind(kind), capability_score, endpoint)
        self.mock = mock or SeededMock()
        self.requests: list[ChatRequest] = []

    def stream(self, request: ChatRequest) -> Iterator[StreamChunk]:
        self.requests.append(request)
        return self.mock.paced(request)


# -- scripted turns ---------------------------------------------------------

def text_turn(*deltas: str, finish_reason: str = "stop") -> list[StreamChunk]:
    chunks = [StreamChunk(delta_content=d) for d in deltas]
    chunks.append(StreamChunk(finish_reason=finish_reason))
    return chunks


def tool_turn(*calls: tuple[str, dict], id_prefix: str = "call_", fragments: int = 3) -> list[StreamChunk]:
    """Chunks requesting ``calls``; each call's JSON arguments arrive in ``fragments`` pieces."""
    chunks = []
    for index, (name, args) in enumerate(calls):
        text = json.dumps(args, separators=(",", ":"))
        step = max(1, -(-len(text) // fragments))
        pieces = [text[i:i + step] for i in range(0, len(text), step)] or [""]
        chunks.append(StreamChunk(delta_tool_calls=(ToolCallDelta(index, f"{id_prefix}{index}", name, pieces[0]),)))
        for piece in pieces[1:]:
            chunks.append(StreamChunk(delta_tool_calls=(ToolCallDelta(index, arguments=piece),)))
    chunks.append(StreamChunk(finish_reason="tool_calls"))
    return chunks


class ScriptedPlatform(Platform):
    """Replays one scripted turn per request; records every request it sees.

    A turn is a list of chunks, or an exception instance which is raised
    mid-stream after any preceding chunks. ``repeat_last`` keeps replaying the
    final turn once the script runs out.
    """

    def __init__(
        self,
        turns: Sequence[Iterable[StreamChunk] | BaseException],
        kind: PlatformKind | str = PlatformKind.LOCAL,
        *,
        capability_score: int = 0,
        endpoint: str | None = None,
        repeat_last: bool = False,
        delay_s: float = 0.0,
    ):
        self.descriptor = PlatformDescriptor(PlatformKind(kind), capability_score, endpoint)
        self.turns = [t if isinstance(t, BaseException) else list(t) for t in turns]
        self.repeat_last = repeat_last
        self.delay_s = delay_s
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def stream(self, request: ChatRequest) -> Iterator[StreamChunk]:
        with self._lock:
            index = len(self.requests)
            self.requests.append(request)
        if index >= len(self.turns):
            if not self.repeat_last or not self.turns:
                raise BackendError(f"script exhausted after {len(self.turns)} turns")
            index = len(self.turns) - 1
        return self._replay(self.turns[index])

    def _replay(self, turn) -> Iterator[StreamChunk]:
        if isinstance(turn, BaseException):
            raise turn
        for chunk in turn:
            if self.delay_s:
                time.sleep(self.delay_s)
            yield chunk
