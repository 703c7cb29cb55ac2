import json
import socket
import ssl
import threading
import time

import httpx
import pytest

from fogllm.auth import SCOPE_INFER, SCOPE_LIST, TokenVerifier
from fogllm.certs import client_context, server_context
from fogllm.dnssd import SimulatedLink
from fogllm.errors import BackendError, BackendUnavailable, ConfigError
from fogllm.messages import Message
from fogllm.node import (
    MockBackend,
    MockBackendConfig,
    NodeBackend,
    NodeServer,
    ProxyBackend,
    ProxyBackendConfig,
    config_from_dict,
    create_app,
)
from fogllm.node.server import advertise, serve
from fogllm.platforms import OpenAIClient
from fogllm.wire import ChatRequest, StreamChunk, encode_request, parse_sse_stream

from oracles import hs256_encode

KEY = "node-test-key-" * 3
MODEL = "llama2:7b"


def body(stream=False, model=MODEL, text="How much did I sleep?"):
    return encode_request(ChatRequest(model, [Message.user(text)], stream=stream))


def token(**over):
    payload = {"iss": "t", "aud": "fogllm", "exp": int(time.time()) + 300, "scope": SCOPE_INFER}
    payload.update(over)
    return hs256_encode({k: v for k, v in payload.items() if v is not None}, KEY)


@pytest.fixture
def node(certs):
    backend = MockBackend(MockBackendConfig(seed=1))
    app = create_app(backend, verifier=TokenVerifier(KEY), models=[MODEL])
    with NodeServer(app, "127.0.0.1", 0, server_context(certs.cert_chain, certs.private_key)) as server:
        yield server


@pytest.fixture
def client(certs):
    with httpx.Client(verify=client_context(certs.ca_cert), timeout=10) as c:
        yield c


def post(client, node, data, tok=None):
    headers = {"Authorization": f"Bearer {tok}"} if tok else {}
    return client.post(node.url + "/v1/chat/completions", content=data, headers=headers)


AUTH_MATRIX = [
    ("missing", None, 401),
    ("malformed", "abc.def", 401),
    ("bad-signature", hs256_encode({"aud": "fogllm", "exp": int(time.time()) + 300, "scope": SCOPE_INFER}, "wrong" * 8), 401),
    ("expired", "EXPIRED", 401),
    ("wrong-audience", "AUDIENCE", 403),
    ("wrong-scope", "SCOPE", 403),
]


@pytest.mark.parametrize("name, tok, status", AUTH_MATRIX, ids=[m[0] for m in AUTH_MATRIX])
def test_rejections_do_no_backend_work(node, client, name, tok, status):
    tok = {"EXPIRED": token(exp=int(time.time()) - 1), "AUDIENCE": token(aud="x"), "SCOPE": token(scope=SCOPE_LIST)}.get(tok, tok)
    resp = post(client, node, body(), tok)
    assert resp.status_code == status
    assert resp.json()["error"]["code"] == status
    if status == 401:
        assert resp.headers["WWW-Authenticate"] == "Bearer"
    assert node.backend.invocations == 0


def test_valid_token_reaches_backend(node, client):
    resp = post(client, node, body(), token())
    assert resp.status_code == 200
    assert node.backend.invocations == 1
    assert resp.json()["choices"][0]["message"]["content"]


def test_mock_is_deterministic(node, client):
    a = post(client, node, body(stream=True), token()).content
    b = post(client, node, body(stream=True), token()).content
    assert a == b and a.endswith(b"data: [DONE]\n\n")
    c = post(client, node, body(stream=True, text="something else"), token()).content
    assert c != a


def test_bad_request_and_unknown_model(node, client):
    assert post(client, node, b"{not json", token()).status_code == 400
    assert post(client, node, b'{"model":"m","messages":[]}', token()).status_code == 400
    assert post(client, node, body(model="gemma:2b"), token()).status_code == 404
    assert node.backend.invocations == 0


def test_models_endpoint(node, client):
    assert client.get(node.url + "/v1/models").status_code == 401
    resp = client.get(node.url + "/v1/models", headers={"Authorization": f"Bearer {token(scope=SCOPE_LIST)}"})
    assert [m["id"] for m in resp.json()["data"]] == [MODEL]


def test_health_open_and_uptime_monotone(node, client):
    first = client.get(node.url + "/health").json()
    time.sleep(0.02)
    second = client.get(node.url + "/health").json()
    assert first["status"] == "ok" and first["models"] == [MODEL]
    assert second["uptime_s"] >= first["uptime_s"]


def test_streaming_pacing_within_band(certs, client):
    backend = MockBackend(MockBackendConfig(seed=1, tokens_per_second=6, reply_tokens=12))
    app = create_app(backend, verifier=TokenVerifier(KEY), models=[MODEL])
    with NodeServer(app, "127.0.0.1", 0, server_context(certs.cert_chain, certs.private_key)) as server:
        start = time.perf_counter()
        chunks = list(parse_sse_stream([post(client, server, body(stream=True), token()).content]))
        elapsed = time.perf_counter() - start
    assert sum(1 for c in chunks if c.delta_content) == 12
    assert 0.8 * 12 / 6 <= elapsed <= 1.2 * 12 / 6


def test_tls_only(node, certs):
    host, port = "127.0.0.1", node.port
    with socket.create_connection((host, port), timeout=5) as s:
        s.sendall(b"GET /health HTTP/1.1\r\nHost: x\r\n\r\n")
        try:
            reply = s.recv(1024)
        except (ConnectionResetError, socket.timeout):
            reply = b""
    assert not reply.startswith(b"HTTP/")
    with pytest.raises(httpx.HTTPError):
        httpx.get(f"http://{host}:{port}/health", timeout=5)
    with pytest.raises(httpx.ConnectError):
        httpx.get(node.url + "/health", verify=ssl.create_default_context(), timeout=5)
    assert httpx.get(node.url + "/health", verify=client_context(certs.ca_cert), timeout=5).status_code == 200


class FailingBackend(NodeBackend):
    async def stream(self, request):
        self._count(request)
        yield StreamChunk(delta_content="partial")
        raise BackendUnavailable("model crashed")


def test_mid_stream_failure_reported_in_band(certs, client):
    app = create_app(FailingBackend(), verifier=None, models=[MODEL])
    with NodeServer(app, "127.0.0.1", 0) as server:
        with httpx.Client() as plain:
            data = plain.post(server.url + "/v1/chat/completions", content=body(stream=True)).content
    assert b'"partial"' in data and b"model crashed" in data and not data.endswith(b"[DONE]\n\n")
    with pytest.raises(BackendError, match="model crashed"):
        list(parse_sse_stream([data]))


# -- proxy backend ----------------------------------------------------------

@pytest.fixture
def upstream():
    backend = MockBackend(MockBackendConfig(seed=5, tokens_per_second=40, reply_tokens=8))
    with NodeServer(create_app(backend, verifier=None, models=[MODEL]), "127.0.0.1", 0) as server:
        yield server


def proxy_node(certs, base_url, **kw):
    backend = ProxyBackend(ProxyBackendConfig(base_url, **kw))
    app = create_app(backend, verifier=TokenVerifier(KEY), models=[MODEL])
    return NodeServer(app, "127.0.0.1", 0, server_context(certs.cert_chain, certs.private_key))


def test_proxy_passthrough_matches_upstream(certs, client, upstream):
    direct = list(OpenAIClient(upstream.url + "/v1").stream(ChatRequest(MODEL, [Message.user("hi")], stream=True)))
    with proxy_node(certs, upstream.url + "/v1") as node:
        data = post(client, node, encode_request(ChatRequest(MODEL, [Message.user("hi")], stream=True)), token()).content
        whole = post(client, node, body(), token()).json()
        health = client.get(node.url + "/health").json()
    assert list(parse_sse_stream([data])) == direct
    assert whole["choices"][0]["message"]["content"]
    assert health["status"] == "ok"


def test_proxy_target_down(certs, client):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        dead = s.getsockname()[1]
    with proxy_node(certs, f"http://127.0.0.1:{dead}/v1", timeout_s=2) as node:
        assert post(client, node, body(stream=True), token()).status_code == 502
        assert post(client, node, body(), token()).status_code == 502
        assert client.get(node.url + "/health").json()["status"] == "degraded"
        fog = OpenAIClient(node.url + "/v1", token=token(), verify=client_context(certs.ca_cert))
        with pytest.raises(BackendUnavailable):
            list(fog.stream(ChatRequest(MODEL, [Message.user("hi")], stream=True)))


def test_proxy_in_flight_limit(certs, client):
    slow = MockBackend(MockBackendConfig(seed=1, tokens_per_second=10, reply_tokens=10))
    with NodeServer(create_app(slow, verifier=None, models=[MODEL]), "127.0.0.1", 0) as up:
        with proxy_node(certs, up.url + "/v1", max_in_flight=2) as node:
            results = []

            def long_request():
                with httpx.Client(verify=client_context(certs.ca_cert), timeout=10) as c:
                    results.append(post(c, node, body(stream=True), token()).status_code)

            threads = [threading.Thread(target=long_request) for _ in range(2)]
            for t in threads:
                t.start()
            time.sleep(0.3)
            assert post(client, node, body(stream=True), token()).status_code == 429
            for t in threads:
                t.join()
    assert results == [200, 200]


# -- advertisement and config -------------------------------------------------

def node_config(certs, **over):
    data = {
        "instance_name": "Exam Room 3",
        "port": 8443,
        "cert_chain": str(certs.cert_chain),
        "private_key": str(certs.private_key),
        "jwt_verification_key": KEY,
        "backend": {"type": "mock", "seed": 1},
        "advertised_models": [MODEL],
        "host": "127.0.0.1",
    }
    data.update(over)
    return config_from_dict(data, env={})


def test_advertise_txt_and_collision(certs):
    link = SimulatedLink()
    config = node_config(certs)
    first = advertise(config, link)
    second = advertise(config, link)
    assert (first, second) == ("Exam Room 3", "Exam Room 3 (2)")
    record = link.browse()[0]
    assert record.txt == {"api": "v1", "models": "llama2:7b", "tier": "fog"}


def test_serve_deregisters_on_shutdown(certs):
    link = SimulatedLink()
    stop = threading.Event()
    config = node_config(certs, port=_free_port())
    thread = threading.Thread(target=serve, args=(config,), kwargs={"advertise_on": link, "stop": stop})
    thread.start()
    try:
        deadline = time.time() + 5
        while not link.browse() and time.time() < deadline:
            time.sleep(0.02)
        (record,) = link.browse()
        assert httpx.get(record.base_url() + "/health", verify=client_context(certs.ca_cert)).status_code == 200
    finally:
        stop.set()
        thread.join(10)
    assert link.browse() == []


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_config_validation_and_env(certs):
    with pytest.raises(ConfigError):
        node_config(certs, port=0)
    with pytest.raises(ConfigError):
        node_config(certs, port=70000)
    with pytest.raises(ConfigError):
        node_config(certs, advertised_models=[])
    with pytest.raises(ConfigError):
        node_config(certs, backend={"type": "gpu"})
    data = json.loads(json.dumps({
        "instance_name": "n", "port": 1, "cert_chain": "c.pem", "private_key": "k.pem", "jwt_verification_key": "x",
        "backend": {"type": "proxy", "base_url": "http://h/v1"}, "advertised_models": ["m"],
    }))
    cfg = config_from_dict(data, env={"FOGLLM_JWT_KEY": "from-env", "FOGLLM_PROXY_API_KEY": "up"})
    assert cfg.jwt_verification_key == "from-env" and cfg.backend.api_key == "up" and cfg.backend.max_in_flight == 4
