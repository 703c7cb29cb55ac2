"""Inference backends a fog node can serve from.

Both backends count their invocations; the server only reaches a backend
after authorization succeeds, so the counter doubles as an audit of
auth-before-work.
"""

from __future__ import annotations

import asyncio
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import replace
from typing import AsyncIterator

import aiohttp

from ..errors import BackendError, BackendUnavailable
from ..mock import MockConfig, SeededMock
from ..wire import (
    ChatCompletion,
    ChatRequest,
    SSEParser,
    StreamAccumulator,
    StreamChunk,
    decode_completion,
    encode_request,
)
from .config import MockBackendConfig, ProxyBackendConfig


class Busy(BackendError):
    """Too many requests in flight; maps to HTTP 429."""


class NodeBackend(ABC):
    def __init__(self):
        self.invocations = 0
        self.requests: list[ChatRequest] = []
        self._count_lock = threading.Lock()

    def _count(self, request: ChatRequest) -> None:
        with self._count_lock:
            self.invocations += 1
            self.requests.append(request)

    @abstractmethod
    def stream(self, request: ChatRequest) -> AsyncIterator[StreamChunk]:
        ...

    async def complete(self, request: ChatRequest) -> ChatCompletion:
        acc = StreamAccumulator()
        meta = None
        async for chunk in self.stream(request):
            acc.add(chunk)
            meta = meta or chunk
        return ChatCompletion(
            message=acc.message(),
            finish_reason=acc.finish_reason,
            id=meta.id if meta else "",
            model=meta.model if meta else request.model,
            created=meta.created if meta else 0,
        )

    async def healthy(self) -> bool:
        return True

    async def close(self) -> None:
        pass


class MockBackend(NodeBackend):
    """Seeded mock; output is a pure function of (seed, request), paced in real time."""

    def __init__(self, config: MockBackendConfig | None = None):
        super().__init__()
        config = config or MockBackendConfig()
        self.mock = SeededMock(MockConfig(
            seed=config.seed,
            tokens_per_second=config.tokens_per_second,
            first_token_delay_ms=config.first_token_delay_ms,
            reply_tokens=config.reply_tokens,
        ))

    async def stream(self, request: ChatRequest) -> AsyncIterator[StreamChunk]:
        self._count(request)
        start = time.monotonic()
        chunks = self.mock.chunks(request)
        offsets = self.mock.schedule(len(chunks) - 1)
        offsets.append(offsets[-1] if offsets else 0.0)
        for chunk, offset in zip(chunks, offsets):
            wait = start + offset - time.monotonic()
            if wait > 0:
                await asyncio.sleep(wait)
            yield chunk


class ProxyBackend(NodeBackend):
    """Forwards to any server speaking the chat-completions shape (Ollama, vLLM, OpenAI...)."""

    def __init__(self, config: ProxyBackendConfig):
        super().__init__()
        self.config = config
        self.base_url = config.base_url.rstrip("/")
        self._in_flight = 0
        self._session: aiohttp.ClientSession | None = None

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        return headers

    def _client(self) -> aiohttp.ClientSession:
        if self._session is None or self._session.closed:
            self._session = aiohttp.ClientSession(timeout=aiohttp.ClientTimeout(total=self.config.timeout_s))
        return self._session

    def _enter(self) -> None:
        if self._in_flight >= self.config.max_in_flight:
            raise Busy(f"{self._in_flight} requests in flight (limit {self.config.max_in_flight})")
        self._in_flight += 1

    async def stream(self, request: ChatRequest) -> AsyncIterator[StreamChunk]:
        self._enter()
        try:
            self._count(request)
            request = replace(request, stream=True)
            try:
                resp = await self._client().post(
                    f"{self.base_url}/chat/completions", data=encode_request(request), headers=self._headers()
                )
            except (aiohttp.ClientError, asyncio.TimeoutError, OSError) as exc:
                raise BackendUnavailable(f"upstream unreachable: {exc}") from None
            async with resp:
                if resp.status != 200:
                    text = await resp.text()
                    raise BackendUnavailable(f"upstream answered {resp.status}: {text[:200]}")
                parser = SSEParser()
                async for piece in resp.content.iter_any():
                    for chunk in parser.feed(piece):
                        yield chunk
                    if parser.done:
                        break
                parser.close()
        finally:
            self._in_flight -= 1

    async def complete(self, request: ChatRequest) -> ChatCompletion:
        self._enter()
        try:
            self._count(request)
            request = replace(request, stream=False)
            try:
                async with self._client().post(
                    f"{self.base_url}/chat/completions", data=encode_request(request), headers=self._headers()
                ) as resp:
                    body = await resp.read()
                    if resp.status != 200:
                        raise BackendUnavailable(f"upstream answered {resp.status}: {body[:200]!r}")
            except (aiohttp.ClientError, asyncio.TimeoutError, OSError) as exc:
                raise BackendUnavailable(f"upstream unreachable: {exc}") from None
            return decode_completion(body)
        finally:
            self._in_flight -= 1

    async def healthy(self) -> bool:
        try:
            async with self._client().get(
                f"{self.base_url}/models", headers=self._headers(), timeout=aiohttp.ClientTimeout(total=2)
            ) as resp:
                return resp.status < 500
        except (aiohttp.ClientError, asyncio.TimeoutError, OSError):
            return False

    async def close(self) -> None:
        if self._session is not None:
            await self._session.close()


def make_backend(config: MockBackendConfig | ProxyBackendConfig) -> NodeBackend:
    if isinstance(config, ProxyBackendConfig):
        return ProxyBackend(config)
    return MockBackend(config)
