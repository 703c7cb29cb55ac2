"""Remote platforms: anything reachable over the chat-completions HTTP API.

:class:`CloudPlatform` talks to a fixed base URL with an API key.
:class:`FogPlatform` finds its node through discovery, pins the fog CA and
authenticates with a bearer JWT.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterator

import httpx

from .certs import client_context
from .discovery import Discovery
from .dnssd import FogNodeRecord
from .errors import AuthError, BackendError, BackendUnavailable
from .runtime import Platform, PlatformDescriptor, PlatformKind
from .wire import ChatRequest, SSEParser, StreamChunk, encode_request

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 120.0


def _raise_for_status(resp: httpx.Response) -> None:
    if resp.status_code == 200:
        return
    body = resp.read().decode("utf-8", "replace")[:300]
    detail = f"{resp.request.url} answered {resp.status_code}: {body}"
    if resp.status_code in (401, 403):
        raise AuthError(detail, resp.status_code)
    if resp.status_code in (429, 502, 503, 504):
        raise BackendUnavailable(detail)
    raise BackendError(detail)


class OpenAIClient:
    """Minimal streaming client for ``POST {base_url}/chat/completions``."""

    def __init__(self, base_url: str, *, token: str | Callable[[], str] | None = None,
                 verify: bool | object = True, timeout: float = DEFAULT_TIMEOUT_S):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.verify = verify
        self.timeout = timeout

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json", "Accept": "text/event-stream"}
        token = self.token() if callable(self.token) else self.token
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def stream(self, request: ChatRequest) -> Iterator[StreamChunk]:
        body = encode_request(request)
        url = f"{self.base_url}/chat/completions"
        try:
            with httpx.Client(verify=self.verify, timeout=self.timeout) as client:
                with client.stream("POST", url, content=body, headers=self._headers()) as resp:
                    _raise_for_status(resp)
                    parser = SSEParser()
                    for piece in resp.iter_raw():
                        yield from parser.feed(piece)
                        if parser.done:
                            return
                    parser.close()
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"{url}: {exc}") from None


class CloudPlatform(Platform):
    """A remote chat-completions service (lowest trust tier)."""

    def __init__(self, base_url: str, api_key: str | None = None, *, capability_score: int = 3,
                 verify: bool | object = True, timeout: float = DEFAULT_TIMEOUT_S):
        self.descriptor = PlatformDescriptor(PlatformKind.CLOUD, capability_score, base_url)
        self.client = OpenAIClient(base_url, token=api_key, verify=verify, timeout=timeout)

    def stream(self, request: ChatRequest) -> Iterator[StreamChunk]:
        return self.client.stream(request)


class FogPlatform(Platform):
    """The nearest fog node found by discovery.

    The node is chosen lazily (or in :meth:`prepare`) and re-chosen when the
    discovery cache expires. Connection failures invalidate the cache so the
    next request browses again.
    """

    def __init__(
        self,
        discovery: Discovery,
        token: str | Callable[[], str],
        *,
        ca_file=None,
        capability_score: int = 2,
        endpoint: str | None = "fog",
        scheme: str = "https",
        timeout: float = DEFAULT_TIMEOUT_S,
    ):
        self.descriptor = PlatformDescriptor(PlatformKind.FOG, capability_score, endpoint)
        self.discovery = discovery
        self.token = token
        self.scheme = scheme
        self.verify = client_context(ca_file) if scheme == "https" else False
        self.timeout = timeout
        self.node: FogNodeRecord | None = None

    def prepare(self) -> FogNodeRecord:
        self.node = self.discovery.best()
        log.info("fog node selected: %s (%.1f ms)", self.node.instance_name, self.node.proximity_rtt)
        return self.node

    def stream(self, request: ChatRequest) -> Iterator[StreamChunk]:
        node = self.prepare()
        client = OpenAIClient(node.base_url(self.scheme) + "/v1", token=self.token,
                              verify=self.verify, timeout=self.timeout)
        return self._guarded(client.stream(request))

    def _guarded(self, chunks: Iterator[StreamChunk]) -> Iterator[StreamChunk]:
        try:
            yield from chunks
        except BackendUnavailable:
            self.discovery.invalidate()
            raise
