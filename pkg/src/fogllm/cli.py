"""Command-line entry points: ``fogctl`` (client/operator) and ``fognode`` (daemon).

Exit codes: 0 ok, 1 other error, 2 no platform available, 3 authentication
failure, 4 benchmark run failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import ExitStack
from pathlib import Path

from . import auth
from .bench import DEFAULT_RUNS, format_report, run_bench
from .dispatch import DispatchPolicy, dispatch
from .errors import AuthError, BenchFailed, FogLLMError, NoPlatformAvailable
from .local import LocalPlatform, ModelCatalog, list_supported_models
from .runtime import LayerHint, PlatformKind, Runner, make_schema, select_platform

log = logging.getLogger("fogctl")

EXIT_OK, EXIT_ERROR, EXIT_NO_PLATFORM, EXIT_AUTH, EXIT_BENCH = 0, 1, 2, 3, 4
DEFAULT_LOCAL_MODEL = "llama2:7b"
DEFAULT_CLOUD_MODEL = "gpt-4o-mini"


def _catalog_root(args) -> Path:
    return Path(args.root or os.environ.get("FOGLLM_HOME") or Path.home() / ".fogllm")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False)


# -- environment wiring -----------------------------------------------------

class Environment:
    """Platforms and discovery for one CLI invocation, real or simulated."""

    def __init__(self, args, stack: ExitStack, simnet=None):
        self.args = args
        self.simnet = simnet
        if simnet is None and getattr(args, "simnet", None):
            from .simnet import simnet_up

            self.simnet = stack.enter_context(simnet_up(args.simnet, jwt_key=os.environ.get("FOGLLM_JWT_KEY")))
        self._stack = stack

    def token(self) -> str | None:
        token = os.environ.get("FOGLLM_TOKEN")
        if token:
            return token
        if self.simnet is not None:
            return self.simnet.mint_token()
        return None

    def ca_file(self):
        if self.simnet is not None:
            return self.simnet.ca_file
        return self.args.ca or os.environ.get("FOGLLM_CA")

    def link(self, timeout_s: float):
        if self.simnet is not None:
            return self.simnet.link
        from .dnssd import MdnsLink

        return self._stack.enter_context(MdnsLink())

    def discovery(self, timeout_s: float = 1.0):
        from .discovery import Discovery, HealthProber

        if self.simnet is not None:
            return self.simnet.discovery()
        return Discovery(self.link(timeout_s), HealthProber(self.ca_file()), browse_timeout=timeout_s)

    def runner(self) -> Runner:
        if self.simnet is not None:
            runner = self.simnet.runner(self.token())
            if self.simnet.local is None:
                runner.register(LocalPlatform())
            return runner
        from .platforms import CloudPlatform, FogPlatform

        runner = Runner([LocalPlatform()])
        token = self.token()
        if token:
            runner.register(FogPlatform(self.discovery(), token, ca_file=self.ca_file()))
        base = os.environ.get("OPENAI_API_BASE")
        if base:
            runner.register(CloudPlatform(base, os.environ.get("OPENAI_API_KEY")))
        return runner

    def default_model(self, platform) -> str:
        if self.args.model:
            return self.args.model
        kind = platform.descriptor.kind
        if kind is PlatformKind.FOG:
            return platform.prepare().models[0]
        if kind is PlatformKind.CLOUD:
            if self.simnet is not None and self.simnet.topology.cloud_stub:
                return self.simnet.topology.cloud_stub.get("models", [DEFAULT_CLOUD_MODEL])[0]
            return os.environ.get("OPENAI_MODEL", DEFAULT_CLOUD_MODEL)
        return DEFAULT_LOCAL_MODEL


# -- commands ---------------------------------------------------------------

def cmd_discover(args, env: Environment) -> int:
    from .discovery import browse_and_resolve, measure_all

    timeout_s = args.timeout / 1000.0
    if env.simnet is not None:
        records = measure_all(browse_and_resolve(env.simnet.link, 0.0), env.simnet.link)
    else:
        from .discovery import HealthProber

        records = measure_all(browse_and_resolve(env.link(timeout_s), timeout_s), HealthProber(env.ca_file()))
    records.sort(key=lambda r: (r.proximity_rtt, r.instance_name))
    if args.json:
        rows = [
            {
                "instance": r.instance_name,
                "addresses": list(r.addresses),
                "port": r.port,
                "rtt_ms": round(r.proximity_rtt, 3),
                "models": r.models,
                "tier": r.tier,
            }
            for r in records
        ]
        print(_dump({"count": len(rows), "nodes": rows}))
        return EXIT_OK
    print(f"{'INSTANCE':<24} {'ADDRESS':<16} {'PORT':>5} {'RTT_MS':>8}  MODELS")
    for r in records:
        print(f"{r.instance_name:<24} {r.addresses[0]:<16} {r.port:>5} {r.proximity_rtt:>8.1f}  {','.join(r.models)}")
    print(f"{len(records)} nodes")
    return EXIT_OK


def _choose(args, runner: Runner):
    inventory = runner.inventory
    if args.layer == "auto" and args.policy:
        return dispatch(DispatchPolicy.load(args.policy), args.task, inventory)
    return select_platform(LayerHint(args.layer), inventory)


def cmd_chat(args, env: Environment) -> int:
    runner = env.runner()
    descriptor = _choose(args, runner)
    platform = runner.platform_for(descriptor)
    schema = make_schema(env.default_model(platform), {"temperature": args.temperature})
    session = runner.create_session(schema, platform=descriptor)
    if args.json:
        message = session.generate(args.message)
        print(_dump({"platform": descriptor.kind.value, "model": schema.model_id, "content": message.content}))
        return EXIT_OK

    def emit(text):
        sys.stdout.write(text)
        sys.stdout.flush()

    session.generate(args.message, on_delta=emit)
    print()
    print(f"platform: {descriptor.kind.value}")
    return EXIT_OK


def cmd_token_mint(args, env: Environment) -> int:
    key = args.key or os.environ.get("FOGLLM_JWT_KEY")
    if not key:
        print("fogctl: --key or FOGLLM_JWT_KEY is required", file=sys.stderr)
        return EXIT_ERROR
    scopes = args.scope or [auth.SCOPE_INFER]
    token = auth.mint_token(key, ttl_s=args.ttl, scopes=scopes, audience=args.audience, issuer=args.issuer)
    if args.json:
        print(_dump({"token": token, "expires_at": int(time.time() + args.ttl), "scopes": scopes}))
    else:
        print(token)
    return EXIT_OK


def cmd_bench(args, env: Environment) -> int:
    runner = env.runner()
    descriptor = select_platform(LayerHint(args.platform), runner.inventory)
    platform = runner.platform_for(descriptor)
    model = env.default_model(platform)
    try:
        report = run_bench(platform, model, args.prompt, args.runs, max_tokens=args.max_tokens)
    except BenchFailed as exc:
        print(f"fogctl: {exc}", file=sys.stderr)
        return EXIT_BENCH
    print(_dump(report.to_json()) if args.json else format_report(report))
    return EXIT_OK


def cmd_model_download(args, env: Environment) -> int:
    catalog = ModelCatalog(_catalog_root(args))
    entry = catalog.download(args.model_id, args.url, args.sha256)
    print(_dump(_entry_json(entry)) if args.json else f"{entry.model_id} {entry.checksum} {entry.path}")
    return EXIT_OK


def _entry_json(entry) -> dict:
    return {
        "model_id": entry.model_id,
        "path": str(entry.path),
        "size_bytes": entry.size_bytes,
        "checksum": entry.checksum,
        "format_version": entry.format_version,
    }


def cmd_model_list(args, env: Environment) -> int:
    if args.supported:
        rows = [{"name": m.name, "variations": list(m.variations), "vendor": m.vendor} for m in list_supported_models()]
        if args.json:
            print(_dump({"supported": rows}))
        else:
            for r in rows:
                print(f"{r['name']:<8} {', '.join(r['variations']):<14} {r['vendor']}")
        return EXIT_OK
    entries = ModelCatalog(_catalog_root(args)).list()
    if args.json:
        print(_dump({"count": len(entries), "models": [_entry_json(e) for e in entries]}))
    else:
        for e in entries:
            print(f"{e.model_id:<24} {e.size_bytes:>12} {e.checksum[:16]}  v{e.format_version}")
        print(f"{len(entries)} models")
    return EXIT_OK


def cmd_model_verify(args, env: Environment) -> int:
    good, quarantined = ModelCatalog(_catalog_root(args)).verify()
    if args.json:
        print(_dump({"ok": [e.model_id for e in good], "quarantined": quarantined}))
    else:
        for e in good:
            print(f"ok          {e.model_id}")
        for name in quarantined:
            print(f"quarantined {name}")
    return EXIT_OK if not quarantined else EXIT_ERROR


def cmd_certs_bootstrap(args, env: Environment) -> int:
    from .certs import bootstrap

    paths = bootstrap(args.out, hostnames=args.host or ["localhost"], ips=args.ip or ["127.0.0.1", "::1"],
                      days=args.days)
    result = {"ca": str(paths.ca_cert), "cert_chain": str(paths.cert_chain), "private_key": str(paths.private_key)}
    print(_dump(result) if args.json else "\n".join(f"{k:<12} {v}" for k, v in result.items()))
    return EXIT_OK


def cmd_simnet_up(args, env: Environment) -> int:
    from .simnet import simnet_up

    with simnet_up(args.topology, jwt_key=os.environ.get("FOGLLM_JWT_KEY")) as net:
        info = {
            "ca": str(net.ca_file),
            "token": net.mint_token(),
            "nodes": {name: server.url for name, server in net.nodes.items()},
            "cloud_stub": net.cloud.url if net.cloud else None,
        }
        print(_dump(info) if args.json else "\n".join(f"{k}: {v}" for k, v in info.items()), flush=True)
        if args.duration is not None:
            time.sleep(args.duration)
            return EXIT_OK
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass
    return EXIT_OK


# -- parsers ----------------------------------------------------------------

def build_fogctl_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fogctl", description="Discover, query and benchmark LLM platforms.")
    parser.add_argument("--simnet", metavar="TOPOLOGY", help="run against an in-process simulated network")
    parser.add_argument("--ca", help="CA certificate pinned for fog nodes (default: $FOGLLM_CA)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("discover", help="list fog nodes on the local network")
    p.add_argument("--timeout", type=float, default=1000.0, help="browse window in ms")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("chat", help="send one message and stream the reply")
    p.add_argument("--layer", choices=[h.value for h in LayerHint], default="auto")
    p.add_argument("--policy", help="dispatch policy JSON (used with --layer auto)")
    p.add_argument("--task", default="chat", help="task class looked up in the policy")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    p.add_argument("message")
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("token", help="JWT utilities")
    tsub = p.add_subparsers(dest="token_command", required=True)
    m = tsub.add_parser("mint", help="mint a development token")
    m.add_argument("--key", help="HMAC key (default: $FOGLLM_JWT_KEY)")
    m.add_argument("--ttl", type=float, default=3600.0, help="lifetime in seconds")
    m.add_argument("--scope", action="append", help="repeatable; default llm:infer")
    m.add_argument("--audience", default=auth.DEFAULT_AUDIENCE)
    m.add_argument("--issuer", default=auth.DEFAULT_ISSUER)
    m.add_argument("--json", action="store_true")
    m.set_defaults(func=cmd_token_mint)

    p = sub.add_parser("bench", help="measure time to first token and tokens per second")
    p.add_argument("--platform", choices=[k.value for k in PlatformKind], required=True)
    p.add_argument("--runs", type=int, default=DEFAULT_RUNS)
    p.add_argument("--prompt", default="How much did I sleep last week?")
    p.add_argument("--model")
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("model", help="manage the local model catalog")
    msub = p.add_subparsers(dest="model_command", required=True)
    d = msub.add_parser("download")
    d.add_argument("model_id")
    d.add_argument("url")
    d.add_argument("--sha256", required=True)
    d.set_defaults(func=cmd_model_download)
    ls = msub.add_parser("list")
    ls.add_argument("--supported", action="store_true", help="show natively supported model families")
    ls.set_defaults(func=cmd_model_list)
    v = msub.add_parser("verify")
    v.set_defaults(func=cmd_model_verify)
    for q in (d, ls, v):
        q.add_argument("--root", help="catalog root (default: $FOGLLM_HOME or ~/.fogllm)")
        q.add_argument("--json", action="store_true")

    p = sub.add_parser("certs", help="TLS material for fog nodes")
    csub = p.add_subparsers(dest="certs_command", required=True)
    b = csub.add_parser("bootstrap", help="create a private CA and a node certificate")
    b.add_argument("--out", required=True)
    b.add_argument("--host", action="append")
    b.add_argument("--ip", action="append")
    b.add_argument("--days", type=int, default=365)
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_certs_bootstrap)

    p = sub.add_parser("simnet", help="simulated network harness")
    ssub = p.add_subparsers(dest="simnet_command", required=True)
    u = ssub.add_parser("up", help="start a topology and print its endpoints")
    u.add_argument("topology")
    u.add_argument("--duration", type=float, help="seconds to stay up (default: until interrupted)")
    u.add_argument("--json", action="store_true")
    u.set_defaults(func=cmd_simnet_up)
    return parser


def _exit_code(exc: BaseException) -> int:
    seen = set()
    while exc is not None and id(exc) not in seen:
        seen.add(id(exc))
        if isinstance(exc, AuthError):
            return EXIT_AUTH
        if isinstance(exc, NoPlatformAvailable):
            return EXIT_NO_PLATFORM
        exc = exc.__cause__ or getattr(exc, "cause", None)
    return EXIT_ERROR


def fogctl_main(argv=None, *, simnet=None) -> int:
    """Run ``fogctl``. ``simnet`` lets callers reuse an already running harness."""
    args = build_fogctl_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with ExitStack() as stack:
            return args.func(args, Environment(args, stack, simnet))
    except (FogLLMError, OSError, ValueError) as exc:
        print(f"fogctl: {exc}", file=sys.stderr)
        return _exit_code(exc)


def build_fognode_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fognode", description="Serve LLM inference to the local network.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("serve")
    p.add_argument("--config", required=True, help="node configuration JSON")
    p.add_argument("--no-advertise", action="store_true", help="skip DNS-SD registration")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def fognode_main(argv=None) -> int:
    from .node import load_config, serve

    args = build_fognode_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        serve(config, advertise_on=False if args.no_advertise else None)
    except (FogLLMError, OSError) as exc:
        print(f"fognode: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def main() -> None:  # pragma: no cover
    sys.exit(fogctl_main())


if __name__ == "__main__":  # pragma: no cover
    main()
