"""Client-side fog discovery: browse, resolve, probe proximity, select.

Proximity is the round-trip time of a fresh request to the node's
``/health`` endpoint; a lower RTT means a nearer node. Each node is probed
three times and the median kept, which damps scheduling jitter.
"""

from __future__ import annotations

import logging
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Protocol, Sequence

import httpx

from .certs import client_context
from .dnssd import FogNodeRecord, MdnsLink, SimulatedLink
from .errors import NoNodesDiscovered, Unreachable

log = logging.getLogger(__name__)

PROBES = 3
DEFAULT_CACHE_TTL_S = 30.0


class Link(Protocol):
    def browse(self, timeout: float) -> list[FogNodeRecord]: ...


class Prober(Protocol):
    def probe(self, record: FogNodeRecord) -> float: ...


class HealthProber:
    """Times ``GET /health`` over a new TLS connection per probe."""

    def __init__(self, ca_file=None, timeout: float = 2.0, scheme: str = "https"):
        self.verify = client_context(ca_file) if scheme == "https" else False
        self.timeout = timeout
        self.scheme = scheme

    def probe(self, record: FogNodeRecord) -> float:
        url = record.base_url(self.scheme) + "/health"
        start = time.perf_counter()
        try:
            with httpx.Client(verify=self.verify, timeout=self.timeout) as client:
                resp = client.get(url)
        except httpx.HTTPError as exc:
            raise Unreachable(f"{record.instance_name}: {exc}") from None
        elapsed = (time.perf_counter() - start) * 1000.0
        if resp.status_code != 200:
            raise Unreachable(f"{record.instance_name}: /health answered {resp.status_code}")
        return elapsed


def browse_and_resolve(link: Link, timeout: float = 1.0) -> list[FogNodeRecord]:
    records = link.browse(timeout)
    seen = {}
    for r in records:
        if r.addresses:
            seen.setdefault(r.instance_name, r)
    return [seen[k] for k in sorted(seen)]


def measure_proximity(record: FogNodeRecord, prober: Prober, probes: int = PROBES) -> FogNodeRecord:
    samples = [prober.probe(record) for _ in range(probes)]
    return record.with_rtt(statistics.median(samples))


def measure_all(records: Sequence[FogNodeRecord], prober: Prober) -> list[FogNodeRecord]:
    """Probe every record concurrently; unreachable ones are dropped."""
    if not records:
        return []

    def attempt(r):
        try:
            return measure_proximity(r, prober)
        except Unreachable as exc:
            log.info("excluding %s: %s", r.instance_name, exc)
            return None

    with ThreadPoolExecutor(max_workers=min(8, len(records))) as pool:
        measured = list(pool.map(attempt, records))
    return sorted((r for r in measured if r is not None), key=lambda r: r.instance_name)


def select_node(records: Sequence[FogNodeRecord]) -> FogNodeRecord:
    """Nearest node: minimum RTT, ties to the lexicographically smallest name."""
    candidates = [r for r in records if r.proximity_rtt is not None]
    if not candidates:
        raise NoNodesDiscovered("no fog node with a proximity measurement")
    return min(candidates, key=lambda r: (r.proximity_rtt, r.instance_name))


class Discovery:
    """Browse + probe with a TTL cache in front."""

    def __init__(
        self,
        link: Link,
        prober: Prober,
        *,
        browse_timeout: float = 1.0,
        ttl: float = DEFAULT_CACHE_TTL_S,
        clock=time.monotonic,
    ):
        self.link = link
        self.prober = prober
        self.browse_timeout = browse_timeout
        self.ttl = ttl
        self._clock = clock
        self._cached: list[FogNodeRecord] | None = None
        self._stamp = 0.0
        self._lock = threading.Lock()

    def nodes(self, refresh: bool = False) -> list[FogNodeRecord]:
        with self._lock:
            fresh = self._cached is not None and self._clock() - self._stamp < self.ttl
            if fresh and not refresh:
                return list(self._cached)
            records = measure_all(browse_and_resolve(self.link, self.browse_timeout), self.prober)
            self._cached, self._stamp = records, self._clock()
            return list(records)

    def best(self) -> FogNodeRecord:
        return select_node(self.nodes())

    def invalidate(self) -> None:
        with self._lock:
            self._cached = None


class StaticLink:
    """A fixed list of nodes, for deployments that configure fog nodes by address."""

    def __init__(self, records: Sequence[FogNodeRecord]):
        self.records = list(records)

    def browse(self, timeout: float = 0.0) -> list[FogNodeRecord]:
        return list(self.records)


__all__ = [
    "Discovery",
    "FogNodeRecord",
    "HealthProber",
    "MdnsLink",
    "SimulatedLink",
    "StaticLink",
    "browse_and_resolve",
    "measure_all",
    "measure_proximity",
    "select_node",
]
