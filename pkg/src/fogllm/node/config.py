"""Fog node configuration: one JSON document mirroring :class:`NodeConfig`.

Example::

    {
      "instance_name": "Exam Room 3",
      "port": 8443,
      "cert_chain": "certs/node.pem",
      "private_key": "certs/node.key",
      "jwt_verification_key": "change-me",
      "backend": {"type": "mock", "seed": 1, "tokens_per_second": 6},
      "advertised_models": ["llama2:7b"],
      "trust_tier_label": "fog"
    }

``FOGLLM_JWT_KEY`` overrides ``jwt_verification_key`` and
``FOGLLM_PROXY_API_KEY`` supplies the proxy backend's upstream key.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from ..auth import DEFAULT_AUDIENCE
from ..errors import ConfigError


@dataclass(frozen=True)
class MockBackendConfig:
    seed: int = 0
    tokens_per_second: float | None = None
    first_token_delay_ms: float = 0.0
    reply_tokens: int = 24


@dataclass(frozen=True)
class ProxyBackendConfig:
    base_url: str
    api_key: str | None = None
    max_in_flight: int = 4
    timeout_s: float = 120.0


@dataclass(frozen=True)
class NodeConfig:
    instance_name: str
    port: int
    cert_chain: str
    private_key: str
    jwt_verification_key: str
    backend: MockBackendConfig | ProxyBackendConfig
    advertised_models: list[str]
    trust_tier_label: str = "fog"
    host: str = "0.0.0.0"
    advertise_addresses: list[str] = field(default_factory=list)
    jwt_audience: str = DEFAULT_AUDIENCE
    jwt_issuer: str | None = None
    jwt_algorithms: list[str] = field(default_factory=lambda: ["HS256"])

    def __post_init__(self):
        if not self.instance_name:
            raise ConfigError("instance_name must not be empty")
        if isinstance(self.port, bool) or not isinstance(self.port, int) or not 1 <= self.port <= 65535:
            raise ConfigError(f"port {self.port!r} outside [1, 65535]")
        if not self.advertised_models:
            raise ConfigError("advertised_models must not be empty")
        if not self.jwt_verification_key:
            raise ConfigError("jwt_verification_key must be set (or FOGLLM_JWT_KEY)")


def _backend_from_dict(data: Mapping, env: Mapping[str, str]):
    data = dict(data)
    kind = data.pop("type", None)
    if kind == "mock":
        cls = MockBackendConfig
    elif kind == "proxy":
        cls = ProxyBackendConfig
        if env.get("FOGLLM_PROXY_API_KEY"):
            data["api_key"] = env["FOGLLM_PROXY_API_KEY"]
        if "base_url" not in data:
            raise ConfigError("proxy backend needs base_url")
    else:
        raise ConfigError(f"backend.type must be 'mock' or 'proxy', got {kind!r}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown backend keys: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: Mapping, env: Mapping[str, str] | None = None, base_dir: Path | None = None) -> NodeConfig:
    env = os.environ if env is None else env
    data = dict(data)
    if env.get("FOGLLM_JWT_KEY"):
        data["jwt_verification_key"] = env["FOGLLM_JWT_KEY"]
    if "backend" not in data:
        raise ConfigError("backend is required")
    data["backend"] = _backend_from_dict(data["backend"], env)
    if base_dir is not None:
        for key in ("cert_chain", "private_key"):
            if key in data and not Path(data[key]).is_absolute():
                data[key] = str(base_dir / data[key])
    known = {f.name for f in fields(NodeConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return NodeConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> NodeConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, env, base_dir=path.parent)
