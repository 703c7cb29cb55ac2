"""In-process network harness: simulated DNS-SD link, TLS fog nodes, cloud stub, local mock.

Topology document::

    {
      "nodes": [
        {"name": "Exam Room 3", "rtt_ms": 5, "models": ["llama2:7b"],
         "seed": 1, "tokens_per_second": 6, "first_token_delay_ms": 100,
         "reply_tokens": 30, "capability": 2}
      ],
      "local": {"capability": 1, "seed": 0},
      "cloud_stub": {"models": ["gpt-4"], "capability": 3}
    }

Each fog node is a real HTTPS server on 127.0.0.1 with an ephemeral port,
a certificate from a throwaway CA and JWT auth. Only the DNS-SD link and the
RTTs are simulated. The cloud stub is plain HTTP without auth and records
every request it receives.
"""

from __future__ import annotations

import json
import logging
import secrets
import shutil
import tempfile
from dataclasses import dataclass, field
from numbers import Real
from pathlib import Path
from typing import Mapping

from .auth import SCOPE_INFER, TokenVerifier, mint_token
from .certs import bootstrap, server_context
from .discovery import Discovery
from .dnssd import SimulatedLink, txt_record
from .errors import TopologyError
from .local import LocalPlatform, MockLocalBackend
from .mock import MockConfig
from .node.backends import MockBackend
from .node.config import MockBackendConfig
from .node.server import NodeServer, create_app
from .platforms import CloudPlatform, FogPlatform
from .runtime import Runner

log = logging.getLogger(__name__)

_MOCK_KEYS = {"seed", "tokens_per_second", "first_token_delay_ms", "reply_tokens"}
_NODE_KEYS = {"name", "rtt_ms", "models", "capability", "probe_ms", "reachable", "tier"} | _MOCK_KEYS
_LOCAL_KEYS = {"capability"} | _MOCK_KEYS
_CLOUD_KEYS = {"models", "capability"} | _MOCK_KEYS


@dataclass(frozen=True)
class NodeSpec:
    name: str
    rtt_ms: float
    models: list[str]
    mock: MockBackendConfig
    capability: int = 2
    probe_ms: list[float] | None = None
    reachable: bool = True
    tier: str = "fog"


@dataclass(frozen=True)
class Topology:
    nodes: list[NodeSpec]
    local: dict | None = None
    cloud_stub: dict | None = None
    jwt_key: str | None = None


def _mock_config(data: Mapping, where: str) -> MockBackendConfig:
    try:
        cfg = MockBackendConfig(**{k: data[k] for k in _MOCK_KEYS if k in data})
        MockConfig(**vars(cfg))  # range checks
    except (TypeError, ValueError) as exc:
        raise TopologyError(where, str(exc)) from None
    return cfg


def _number(value, node: str, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, Real) or value < 0:
        raise TopologyError(node, f"{key} must be a non-negative number, got {value!r}")
    return float(value)


def parse_topology(data: Mapping) -> Topology:
    if not isinstance(data, Mapping):
        raise TopologyError("<topology>", "document must be a JSON object")
    unknown = set(data) - {"nodes", "local", "cloud_stub", "jwt_key"}
    if unknown:
        raise TopologyError("<topology>", f"unknown keys {sorted(unknown)}")
    nodes, seen = [], set()
    for i, raw in enumerate(data.get("nodes", [])):
        name = raw.get("name") if isinstance(raw, Mapping) else None
        if not isinstance(name, str) or not name:
            raise TopologyError(f"<nodes[{i}]>", "name must be a non-empty string")
        if name in seen:
            raise TopologyError(name, "duplicate node name")
        seen.add(name)
        extra = set(raw) - _NODE_KEYS
        if extra:
            raise TopologyError(name, f"unknown keys {sorted(extra)}")
        models = raw.get("models")
        if not isinstance(models, list) or not models or not all(isinstance(m, str) and m for m in models):
            raise TopologyError(name, "models must be a non-empty list of strings")
        probe_ms = raw.get("probe_ms")
        if probe_ms is not None:
            probe_ms = [_number(v, name, "probe_ms") for v in probe_ms] or None
        nodes.append(NodeSpec(
            name=name,
            rtt_ms=_number(raw.get("rtt_ms", 1.0), name, "rtt_ms"),
            models=list(models),
            mock=_mock_config(raw, name),
            capability=int(raw.get("capability", 2)),
            probe_ms=probe_ms,
            reachable=bool(raw.get("reachable", True)),
            tier=str(raw.get("tier", "fog")),
        ))
    for section, keys in (("local", _LOCAL_KEYS), ("cloud_stub", _CLOUD_KEYS)):
        value = data.get(section)
        if value is not None:
            if not isinstance(value, Mapping):
                raise TopologyError(f"<{section}>", "must be an object")
            extra = set(value) - keys
            if extra:
                raise TopologyError(f"<{section}>", f"unknown keys {sorted(extra)}")
            _mock_config(value, f"<{section}>")
    return Topology(nodes, data.get("local"), data.get("cloud_stub"), data.get("jwt_key"))


def load_topology(path: str | Path) -> Topology:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise TopologyError("<topology>", f"{path}: {exc}") from None
    return parse_topology(data)


@dataclass
class Simnet:
    """A running harness. Use as a context manager or call :meth:`close`."""

    topology: Topology
    link: SimulatedLink
    jwt_key: str
    ca_file: Path
    nodes: dict[str, NodeServer] = field(default_factory=dict)
    cloud: NodeServer | None = None
    local: LocalPlatform | None = None
    _tmpdir: Path | None = None

    @property
    def cloud_requests(self) -> list:
        return self.cloud.backend.requests if self.cloud is not None else []

    def mint_token(self, ttl_s: float = 3600, scopes=(SCOPE_INFER,), **kwargs) -> str:
        return mint_token(self.jwt_key, ttl_s=ttl_s, scopes=scopes, **kwargs)

    def discovery(self, ttl: float = 30.0) -> Discovery:
        # the simulated link doubles as the prober so RTTs follow the topology
        return Discovery(self.link, self.link, browse_timeout=0.0, ttl=ttl)

    def fog_platform(self, token: str | None = None, capability_score: int | None = None) -> FogPlatform:
        if capability_score is None:
            capability_score = max((n.capability for n in self.topology.nodes), default=2)
        return FogPlatform(self.discovery(), token or self.mint_token(), ca_file=self.ca_file,
                           capability_score=capability_score)

    def cloud_platform(self, api_key: str | None = None) -> CloudPlatform:
        if self.cloud is None:
            raise TopologyError("<cloud_stub>", "topology has no cloud stub")
        capability = int((self.topology.cloud_stub or {}).get("capability", 3))
        return CloudPlatform(self.cloud.url + "/v1", api_key, capability_score=capability)

    def runner(self, token: str | None = None) -> Runner:
        runner = Runner()
        if self.local is not None:
            runner.register(self.local)
        if self.nodes:
            runner.register(self.fog_platform(token))
        if self.cloud is not None:
            runner.register(self.cloud_platform())
        return runner

    def node(self, name: str) -> NodeServer:
        return self.nodes[name]

    def close(self) -> None:
        self.link.close()
        for server in list(self.nodes.values()) + ([self.cloud] if self.cloud else []):
            try:
                server.stop()
            except Exception as exc:  # keep tearing down the rest
                log.warning("simnet teardown: %s", exc)
        self.nodes.clear()
        self.cloud = None
        if self._tmpdir is not None:
            shutil.rmtree(self._tmpdir, ignore_errors=True)
            self._tmpdir = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def simnet_up(topology: Topology | Mapping | str | Path, *, jwt_key: str | None = None) -> Simnet:
    """Start every endpoint declared by ``topology`` and advertise the fog nodes."""
    if isinstance(topology, (str, Path)):
        topology = load_topology(topology)
    elif not isinstance(topology, Topology):
        topology = parse_topology(topology)
    key = jwt_key or topology.jwt_key or secrets.token_hex(32)
    tmpdir = Path(tempfile.mkdtemp(prefix="fogllm-simnet-"))
    certs = bootstrap(tmpdir, hostnames=["localhost"], ips=["127.0.0.1"])
    net = Simnet(topology, SimulatedLink(), key, certs.ca_cert, _tmpdir=tmpdir)
    try:
        verifier = TokenVerifier(key)
        for spec in topology.nodes:
            app = create_app(MockBackend(spec.mock), verifier=verifier, models=spec.models)
            server = NodeServer(app, "127.0.0.1", 0, server_context(certs.cert_chain, certs.private_key)).start()
            net.nodes[spec.name] = server
            net.link.register(spec.name, ["127.0.0.1"], server.port, txt_record(spec.models, spec.tier),
                              rtt_ms=spec.rtt_ms, probe_ms=spec.probe_ms, reachable=spec.reachable)
        if topology.cloud_stub is not None:
            stub = dict(topology.cloud_stub)
            app = create_app(MockBackend(_mock_config(stub, "<cloud_stub>")), verifier=None,
                             models=stub.get("models", []))
            net.cloud = NodeServer(app, "127.0.0.1", 0).start()
        if topology.local is not None:
            local = dict(topology.local)
            cfg = _mock_config(local, "<local>")
            net.local = LocalPlatform(MockLocalBackend(MockConfig(**vars(cfg))),
                                      capability_score=int(local.get("capability", 1)))
    except BaseException:
        net.close()
        raise
    return net
