"""DNS-SD service registration and browsing for ``_fogllm._tcp``.

Two links implement the same surface (``register``, ``unregister``,
``browse``): :class:`MdnsLink` speaks real multicast DNS through zeroconf,
:class:`SimulatedLink` is an in-process stand-in that also simulates
per-node round-trip times for proximity probing.

Name collisions are resolved the DNS-SD way: the second ``Node`` becomes
``Node (2)``, the third ``Node (3)`` and so on.
"""

from __future__ import annotations

import ipaddress
import itertools
import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .errors import AdvertiseFailed, Unreachable

log = logging.getLogger(__name__)

SERVICE_TYPE = "_fogllm._tcp.local."
API_VERSION = "v1"


@dataclass(frozen=True)
class FogNodeRecord:
    instance_name: str
    addresses: tuple[str, ...]
    port: int
    txt: Mapping[str, str] = field(default_factory=dict)
    proximity_rtt: float | None = None  # milliseconds, set by probing

    @property
    def models(self) -> list[str]:
        raw = self.txt.get("models", "")
        return [m for m in raw.split(",") if m]

    @property
    def tier(self) -> str | None:
        return self.txt.get("tier")

    def base_url(self, scheme: str = "https") -> str:
        host = self.addresses[0]
        if ":" in host:
            host = f"[{host}]"
        return f"{scheme}://{host}:{self.port}"

    def with_rtt(self, rtt_ms: float) -> FogNodeRecord:
        return replace(self, proximity_rtt=rtt_ms)


def txt_record(models: Sequence[str], tier: str) -> dict[str, str]:
    return {"api": API_VERSION, "models": ",".join(models), "tier": tier}


def collision_names(instance_name: str):
    yield instance_name
    for n in itertools.count(2):
        yield f"{instance_name} ({n})"


# -- simulated link ---------------------------------------------------------

@dataclass
class _SimEntry:
    record: FogNodeRecord
    probe_ms: list[float]
    reachable: bool = True
    cursor: int = 0


class SimulatedLink:
    """In-process link. RTTs are simulated; no packets leave the process."""

    def __init__(self):
        self._entries: dict[str, _SimEntry] = {}
        self._lock = threading.Lock()
        self.extra_delay_ms = 0.0

    def register(
        self,
        instance_name: str,
        addresses: Sequence[str],
        port: int,
        txt: Mapping[str, str],
        *,
        rtt_ms: float = 1.0,
        probe_ms: Sequence[float] | None = None,
        reachable: bool = True,
    ) -> str:
        if not addresses:
            raise AdvertiseFailed("at least one address is required")
        with self._lock:
            name = next(n for n in collision_names(instance_name) if n not in self._entries)
            record = FogNodeRecord(name, tuple(addresses), port, dict(txt))
            self._entries[name] = _SimEntry(record, list(probe_ms) if probe_ms else [rtt_ms], reachable)
        return name

    def unregister(self, name: str) -> None:
        with self._lock:
            self._entries.pop(name, None)

    def set_reachable(self, name: str, reachable: bool) -> None:
        with self._lock:
            self._entries[name].reachable = reachable

    def set_probe_ms(self, name: str, probe_ms: Sequence[float]) -> None:
        with self._lock:
            entry = self._entries[name]
            entry.probe_ms, entry.cursor = list(probe_ms), 0

    def browse(self, timeout: float = 0.0) -> list[FogNodeRecord]:
        """Records still registered when the browse window closes."""
        if timeout > 0:
            time.sleep(timeout)
        with self._lock:
            return sorted((e.record for e in self._entries.values()), key=lambda r: r.instance_name)

    def probe(self, record: FogNodeRecord) -> float:
        with self._lock:
            entry = self._entries.get(record.instance_name)
            if entry is None or not entry.reachable:
                raise Unreachable(f"{record.instance_name} does not answer")
            ms = entry.probe_ms[entry.cursor % len(entry.probe_ms)]
            entry.cursor += 1
            return ms + self.extra_delay_ms

    def close(self) -> None:
        with self._lock:
            self._entries.clear()


# -- multicast DNS ----------------------------------------------------------

def _instance_from_fqdn(fqdn: str) -> str:
    suffix = "." + SERVICE_TYPE
    return fqdn[: -len(suffix)] if fqdn.endswith(suffix) else fqdn


class MdnsLink:
    """Real mDNS/DNS-SD via zeroconf.

    ``interfaces`` defaults to every interface; tests restrict it to
    ``["127.0.0.1"]`` to stay on loopback.
    """

    def __init__(self, interfaces: Sequence[str] | None = None, *, ipv4_only: bool = True):
        from zeroconf import InterfaceChoice, IPVersion, Zeroconf

        self._zc = Zeroconf(
            interfaces=list(interfaces) if interfaces else InterfaceChoice.All,
            ip_version=IPVersion.V4Only if ipv4_only else IPVersion.All,
        )
        self._registered: dict[str, object] = {}
        self._lock = threading.Lock()

    def register(self, instance_name: str, addresses: Sequence[str], port: int, txt: Mapping[str, str],
                 *, host: str | None = None, **_ignored) -> str:
        from zeroconf import NonUniqueNameException, ServiceInfo

        packed = [ipaddress.ip_address(a).packed for a in addresses]
        server = host or f"{socket.gethostname().split('.')[0]}.local."
        for name in collision_names(instance_name):
            info = ServiceInfo(
                SERVICE_TYPE,
                f"{name}.{SERVICE_TYPE}",
                addresses=packed,
                port=port,
                properties=dict(txt),
                server=server,
            )
            try:
                self._zc.register_service(info, allow_name_change=False)
            except NonUniqueNameException:
                log.info("instance name %r taken, trying next", name)
                continue
            except Exception as exc:
                raise AdvertiseFailed(str(exc)) from exc
            with self._lock:
                self._registered[name] = info
            return name
        raise AssertionError("unreachable")

    def unregister(self, name: str) -> None:
        with self._lock:
            info = self._registered.pop(name, None)
        if info is not None:
            self._zc.unregister_service(info)

    def browse(self, timeout: float = 1.0) -> list[FogNodeRecord]:
        from zeroconf import ServiceBrowser, ServiceStateChange

        present: dict[str, bool] = {}
        lock = threading.Lock()

        def on_change(zeroconf, service_type, name, state_change):
            with lock:
                present[name] = state_change is not ServiceStateChange.Removed

        browser = ServiceBrowser(self._zc, SERVICE_TYPE, handlers=[on_change])
        try:
            time.sleep(timeout)
        finally:
            browser.cancel()
        with lock:
            names = sorted(n for n, alive in present.items() if alive)
        if not names:
            return []
        with ThreadPoolExecutor(max_workers=min(8, len(names))) as pool:
            records = list(pool.map(self._resolve, names))
        return sorted((r for r in records if r is not None), key=lambda r: r.instance_name)

    def _resolve(self, fqdn: str) -> FogNodeRecord | None:
        info = self._zc.get_service_info(SERVICE_TYPE, fqdn, timeout=1500)
        if info is None or not info.parsed_addresses():
            return None
        txt = {
            k.decode("utf-8", "replace"): (v or b"").decode("utf-8", "replace")
            for k, v in info.properties.items()
        }
        return FogNodeRecord(_instance_from_fqdn(fqdn), tuple(info.parsed_addresses()), info.port, txt)

    def close(self) -> None:
        with self._lock:
            infos = list(self._registered.values())
            self._registered.clear()
        for info in infos:
            try:
                self._zc.unregister_service(info)
            except Exception:  # shutting down anyway
                log.debug("unregister failed", exc_info=True)
        self._zc.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
