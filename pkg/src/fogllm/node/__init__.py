"""Fog node daemon: TLS HTTP front, JWT auth and pluggable backends."""

from .backends import Busy, MockBackend, NodeBackend, ProxyBackend, make_backend
from .config import MockBackendConfig, NodeConfig, ProxyBackendConfig, config_from_dict, load_config
from .server import NodeServer, advertise, build_node, create_app, serve

__all__ = [
    "Busy",
    "MockBackend",
    "MockBackendConfig",
    "NodeBackend",
    "NodeConfig",
    "NodeServer",
    "ProxyBackend",
    "ProxyBackendConfig",
    "advertise",
    "build_node",
    "config_from_dict",
    "create_app",
    "load_config",
    "make_backend",
    "serve",
]
