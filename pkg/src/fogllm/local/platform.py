"""The local (on-device) platform: catalog + serialized gate + runtime backend."""

from __future__ import annotations

import threading
import time
from abc import ABC, abstractmethod
from typing import Iterator

from ..errors import BackendError
from ..mock import MockConfig, SeededMock
from ..runtime import Platform, PlatformDescriptor, PlatformKind, PromptFormat, render_prompt
from ..wire import ChatRequest, StreamChunk
from .catalog import ModelCatalog
from .gate import LocalGate, LocalJob
from .models import lookup


class LocalBackend(ABC):
    """In-process model runtime. Called only while holding the gate."""

    @abstractmethod
    def generate(self, request: ChatRequest, prompt: str) -> Iterator[StreamChunk]:
        ...


class MockLocalBackend(LocalBackend):
    """Deterministic stand-in for an on-device runtime: words seeded by the rendered prompt."""

    def __init__(self, config: MockConfig | None = None, **kwargs):
        self.mock = SeededMock(config or MockConfig(**kwargs))
        self.invocations = 0
        self._lock = threading.Lock()

    def generate(self, request: ChatRequest, prompt: str) -> Iterator[StreamChunk]:
        with self._lock:
            self.invocations += 1
        words = self.mock.words_for_text(prompt)
        finish = "stop"
        if request.max_tokens is not None and len(words) > request.max_tokens:
            words, finish = words[: request.max_tokens], "length"
        offsets = self.mock.schedule(len(words))
        start = time.monotonic()
        for i, (word, offset) in enumerate(zip(words, offsets)):
            wait = start + offset - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            yield StreamChunk(delta_content=word if i == 0 else " " + word,
                              role="assistant" if i == 0 else None, model=request.model)
        yield StreamChunk(finish_reason=finish, model=request.model)


class LocalStream:
    """Iterator over one gated job. The gate is held from the first ``next`` until exhaustion or close."""

    def __init__(self, gate: LocalGate, job: LocalJob, run):
        self._gate = gate
        self.job = job
        self._run = run
        self._inner: Iterator[StreamChunk] | None = None
        self._done = False

    def __iter__(self):
        return self

    def __next__(self) -> StreamChunk:
        if self._done:
            raise StopIteration
        if self._inner is None:
            self._gate.wait_turn(self.job)
            try:
                self._inner = iter(self._run())
            except BaseException:
                self._finish()
                raise
        try:
            return next(self._inner)
        except BaseException:
            self._finish()
            raise

    def _finish(self) -> None:
        if self._done:
            return
        self._done = True
        if self._inner is not None:
            close = getattr(self._inner, "close", None)
            if close is not None:
                close()
        if self.job.start_time is None:
            self._gate.abandon(self.job)
        else:
            self._gate.release(self.job)

    def close(self) -> None:
        self._finish()

    def __del__(self):
        try:
            self._finish()
        except Exception:
            pass


def submit(gate: LocalGate, backend: LocalBackend, request: ChatRequest,
           prompt_format: PromptFormat = PromptFormat.CHAT_MARKERS) -> LocalStream:
    """Queue ``request``; the returned stream blocks on first use until the job's turn."""
    job = gate.enqueue(request)
    prompt = render_prompt(request.messages, prompt_format)
    return LocalStream(gate, job, lambda: backend.generate(request, prompt))


class LocalPlatform(Platform):
    """Highest-trust platform: inference never leaves the device."""

    def __init__(
        self,
        backend: LocalBackend | None = None,
        *,
        catalog: ModelCatalog | None = None,
        gate: LocalGate | None = None,
        capability_score: int = 1,
        endpoint: str | None = None,
    ):
        self.descriptor = PlatformDescriptor(PlatformKind.LOCAL, capability_score, endpoint)
        self.backend = backend or MockLocalBackend()
        self.catalog = catalog
        self.gate = gate or LocalGate()

    def prepare(self) -> None:
        if self.catalog is not None:
            good, quarantined = self.catalog.verify()
            if quarantined:
                raise BackendError(f"quarantined corrupt models: {', '.join(quarantined)}")

    def stream(self, request: ChatRequest) -> LocalStream:
        if self.catalog is not None:
            self.catalog.require(request.model)
        family = lookup(request.model)
        fmt = family.prompt_format if family else PromptFormat.CHAT_MARKERS
        return submit(self.gate, self.backend, request, fmt)
