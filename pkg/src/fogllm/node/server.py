"""HTTP(S) front of a fog node.

Routes:

* ``POST /v1/chat/completions`` (bearer token required)
* ``GET /v1/models`` (bearer token required)
* ``GET /health`` (open)

Authorization always happens before the request body is read or the
backend touched.
"""

from __future__ import annotations

import asyncio
import json
import logging
import signal
import ssl
import threading
import time
from typing import Sequence

from aiohttp import web

from ..auth import SCOPE_INFER, SCOPE_LIST, TokenVerifier, authorize
from ..certs import server_context
from ..dnssd import txt_record
from ..errors import FogLLMError, Forbidden, ParseError, Unauthorized, ValidationError
from ..wire import DONE_EVENT, decode_request, encode_completion, encode_sse_event
from .backends import Busy, NodeBackend, ProxyBackend, make_backend
from .config import NodeConfig

log = logging.getLogger(__name__)

BACKEND_KEY = web.AppKey("backend", NodeBackend)


def _error(status: int, message: str, kind: str, headers: dict | None = None) -> web.Response:
    body = json.dumps({"error": {"message": message, "type": kind, "code": status}})
    return web.Response(status=status, text=body, content_type="application/json", headers=headers)


def create_app(
    backend: NodeBackend,
    *,
    verifier: TokenVerifier | None,
    models: Sequence[str],
    clock=time.time,
) -> web.Application:
    """Build the node application. ``verifier=None`` disables auth (cloud stubs only)."""
    started = time.monotonic()
    models = list(models)

    def check(request: web.Request, scope: str) -> web.Response | None:
        if verifier is None:
            return None
        try:
            authorize(request.headers, verifier, now=clock(), required_scope=scope)
        except Unauthorized as exc:
            return _error(401, str(exc), "unauthorized", {"WWW-Authenticate": "Bearer"})
        except Forbidden as exc:
            return _error(403, str(exc), "forbidden")
        return None

    async def chat(request: web.Request) -> web.StreamResponse:
        denied = check(request, SCOPE_INFER)
        if denied is not None:
            return denied
        try:
            req = decode_request(await request.read())
        except (ParseError, ValidationError) as exc:
            return _error(400, str(exc), "invalid_request_error")
        if models and req.model not in models:
            return _error(404, f"model {req.model!r} is not served here", "model_not_found")

        if not req.stream:
            try:
                completion = await backend.complete(req)
            except Busy as exc:
                return _error(429, str(exc), "rate_limited")
            except FogLLMError as exc:
                return _error(502, str(exc), "backend_unavailable")
            return web.Response(body=encode_completion(completion), content_type="application/json")

        chunks = backend.stream(req)
        try:
            first = await chunks.__anext__()
        except StopAsyncIteration:
            first = None
        except Busy as exc:
            return _error(429, str(exc), "rate_limited")
        except FogLLMError as exc:
            return _error(502, str(exc), "backend_unavailable")

        resp = web.StreamResponse(headers={"Content-Type": "text/event-stream", "Cache-Control": "no-cache"})
        await resp.prepare(request)
        try:
            if first is not None:
                await resp.write(encode_sse_event(first))
                async for chunk in chunks:
                    await resp.write(encode_sse_event(chunk))
            await resp.write(DONE_EVENT)
        except FogLLMError as exc:
            # headers are gone; report in-band and end without [DONE]
            log.warning("backend failed mid-stream: %s", exc)
            payload = json.dumps({"error": {"message": str(exc), "type": "backend_unavailable", "code": 502}})
            await resp.write(f"data: {payload}\n\n".encode())
        finally:
            await chunks.aclose()
        await resp.write_eof()
        return resp

    async def list_models(request: web.Request) -> web.Response:
        denied = check(request, SCOPE_LIST) if verifier is not None else None
        if denied is not None and denied.status == 403:
            # inference scope also grants listing
            denied = check(request, SCOPE_INFER)
        if denied is not None:
            return denied
        data = [{"id": m, "object": "model", "owned_by": "fogllm"} for m in models]
        return web.json_response({"object": "list", "data": data})

    async def health(request: web.Request) -> web.Response:
        status = "ok" if await backend.healthy() else "degraded"
        return web.json_response({
            "status": status,
            "models": models,
            "uptime_s": round(time.monotonic() - started, 3),
        })

    async def on_cleanup(app):
        await backend.close()

    app = web.Application()
    app[BACKEND_KEY] = backend
    app.router.add_post("/v1/chat/completions", chat)
    app.router.add_get("/v1/models", list_models)
    app.router.add_get("/health", health)
    app.on_cleanup.append(on_cleanup)
    return app


class NodeServer:
    """Runs an application on a private event loop in a background thread."""

    def __init__(self, app: web.Application, host: str = "127.0.0.1", port: int = 0,
                 ssl_context: ssl.SSLContext | None = None):
        self.app = app
        self.host = host
        self.port = port
        self.ssl_context = ssl_context
        self._loop: asyncio.AbstractEventLoop | None = None
        self._runner: web.AppRunner | None = None
        self._thread: threading.Thread | None = None

    @property
    def backend(self) -> NodeBackend:
        return self.app[BACKEND_KEY]

    @property
    def scheme(self) -> str:
        return "https" if self.ssl_context is not None else "http"

    @property
    def url(self) -> str:
        host = self.host if self.host not in ("0.0.0.0", "") else "127.0.0.1"
        return f"{self.scheme}://{host}:{self.port}"

    async def _start(self):
        self._runner = web.AppRunner(self.app, access_log=None, handle_signals=False)
        await self._runner.setup()
        site = web.TCPSite(self._runner, self.host, self.port, ssl_context=self.ssl_context)
        await site.start()
        self.port = site._server.sockets[0].getsockname()[1]

    def start(self) -> NodeServer:
        self._loop = asyncio.new_event_loop()
        started = threading.Event()
        failure: list[BaseException] = []

        def run():
            asyncio.set_event_loop(self._loop)
            try:
                self._loop.run_until_complete(self._start())
            except BaseException as exc:
                failure.append(exc)
                started.set()
                return
            started.set()
            self._loop.run_forever()

        self._thread = threading.Thread(target=run, name=f"node-{self.port}", daemon=True)
        self._thread.start()
        started.wait()
        if failure:
            raise failure[0]
        return self

    def stop(self) -> None:
        if self._loop is None:
            return
        fut = asyncio.run_coroutine_threadsafe(self._runner.cleanup(), self._loop)
        try:
            fut.result(timeout=10)
        finally:
            self._loop.call_soon_threadsafe(self._loop.stop)
            self._thread.join(timeout=10)
            self._loop.close()
            self._loop = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def build_node(config: NodeConfig, clock=time.time) -> tuple[web.Application, ssl.SSLContext]:
    verifier = TokenVerifier(
        config.jwt_verification_key,
        audience=config.jwt_audience,
        issuer=config.jwt_issuer,
        algorithms=config.jwt_algorithms,
    )
    app = create_app(make_backend(config.backend), verifier=verifier, models=config.advertised_models, clock=clock)
    return app, server_context(config.cert_chain, config.private_key)


def advertise(config: NodeConfig, link, port: int | None = None, addresses: Sequence[str] | None = None) -> str:
    """Register the node on a DNS-SD link; returns the (possibly renamed) instance name."""
    addrs = list(addresses or config.advertise_addresses or _local_addresses(config.host))
    return link.register(
        config.instance_name,
        addrs,
        port or config.port,
        txt_record(config.advertised_models, config.trust_tier_label),
    )


def _local_addresses(host: str) -> list[str]:
    if host not in ("0.0.0.0", "", "::"):
        return [host]
    import socket

    try:
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
            s.connect(("192.0.2.1", 9))  # no packets are sent for UDP connect
            return [s.getsockname()[0]]
    except OSError:
        return ["127.0.0.1"]


def serve(config: NodeConfig, *, advertise_on=None, stop: threading.Event | None = None) -> None:
    """Run a node until SIGINT/SIGTERM (or ``stop`` is set).

    The node is advertised over mDNS, on ``advertise_on`` when given, or not
    at all when ``advertise_on`` is False. It is deregistered on shutdown.
    """
    app, ctx = build_node(config)
    server = NodeServer(app, config.host, config.port, ctx).start()
    link = None
    name = None
    try:
        if advertise_on is not False:
            if advertise_on is None:
                from ..dnssd import MdnsLink

                link = MdnsLink()
            else:
                link = advertise_on
            name = advertise(config, link, server.port)
        log.info("fog node %r serving %s on %s", name or config.instance_name, config.advertised_models, server.url)
        if isinstance(server.backend, ProxyBackend):
            log.info("proxying to %s", server.backend.base_url)
        if stop is None:
            stop = threading.Event()
            for sig in (signal.SIGINT, signal.SIGTERM):
                signal.signal(sig, lambda *_: stop.set())
        stop.wait()
    finally:
        if link is not None:
            if name is not None:
                link.unregister(name)
            if advertise_on is None:
                link.close()
        server.stop()


__all__ = ["NodeServer", "advertise", "build_node", "create_app", "serve"]
