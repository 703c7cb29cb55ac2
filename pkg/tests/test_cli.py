import json
import time

import pytest

from fogllm.cli import EXIT_AUTH, EXIT_BENCH, EXIT_NO_PLATFORM, EXIT_OK, fogctl_main
from fogllm.dispatch import DispatchPolicy, dispatch
from fogllm.errors import TopologyError
from fogllm.simnet import load_topology, simnet_up

from oracles import gguf_bytes, hs256_decode_unverified, hs256_encode

TOPOLOGY = {
    "nodes": [
        {"name": "Exam Room 3", "rtt_ms": 4, "models": ["llama2:7b"], "seed": 1, "tokens_per_second": 400},
        {"name": "Front Desk", "rtt_ms": 11, "models": ["gemma:7b"], "seed": 2, "tokens_per_second": 400},
    ],
    "local": {"capability": 1, "seed": 0},
    "cloud_stub": {"models": ["gpt-4o-mini"], "capability": 3, "seed": 3},
}
POLICY = {
    "rules": [{"task_class": "summarize", "min_trust": 3}, {"task_class": "chat", "min_trust": 1, "min_capability": 3}],
}


@pytest.fixture(scope="module")
def net():
    with simnet_up(TOPOLOGY, jwt_key="k" * 32) as net:
        yield net


def run(capsys, argv, net=None):
    code = fogctl_main(argv, simnet=net)
    out, err = capsys.readouterr()
    return code, out, err


def test_discover_table_and_json(capsys, net):
    code, out, _ = run(capsys, ["discover"], net)
    lines = out.splitlines()
    assert code == EXIT_OK and lines[-1] == "2 nodes"
    assert lines[1].startswith("Exam Room 3") and lines[2].startswith("Front Desk")
    code, out, _ = run(capsys, ["discover", "--json"], net)
    data = json.loads(out)
    assert data["count"] == 2
    assert [n["instance"] for n in data["nodes"]] == ["Exam Room 3", "Front Desk"]
    assert data["nodes"][0]["rtt_ms"] == 4 and data["nodes"][1]["models"] == ["gemma:7b"]


def test_discover_is_deterministic(capsys, net):
    outputs = {run(capsys, ["discover", "--json"], net)[1] for _ in range(3)}
    assert len(outputs) == 1


def test_discover_empty(capsys):
    with simnet_up({"nodes": []}) as empty:
        code, out, _ = run(capsys, ["discover"], empty)
    assert code == EXIT_OK and out.splitlines()[-1] == "0 nodes"


def test_chat_on_fog_picks_nearest_node(capsys, net):
    before = net.node("Exam Room 3").backend.invocations
    code, out, _ = run(capsys, ["chat", "--layer", "fog", "How did I sleep?"], net)
    assert code == EXIT_OK and out.rstrip().endswith("platform: fog")
    assert net.node("Exam Room 3").backend.invocations == before + 1
    assert net.node("Front Desk").backend.invocations == 0


def test_chat_auto_follows_dispatch(capsys, net, tmp_path):
    policy_path = tmp_path / "policy.json"
    policy_path.write_text(json.dumps(POLICY))
    expected = dispatch(DispatchPolicy.from_dict(POLICY), "chat", net.runner().inventory).kind.value
    code, out, _ = run(capsys, ["chat", "--layer", "auto", "--policy", str(policy_path), "--json", "hello"], net)
    reply = json.loads(out)
    assert code == EXIT_OK and reply["platform"] == expected == "cloud"
    assert reply["model"] == "gpt-4o-mini" and reply["content"]
    code, out, _ = run(capsys, ["chat", "--layer", "auto", "--policy", str(policy_path), "--task", "summarize",
                                "--json", "hello"], net)
    assert json.loads(out)["platform"] == "local"


def test_expired_token_exits_with_auth_code(capsys, net, monkeypatch):
    expired = hs256_encode({"aud": "fogllm", "exp": int(time.time()) - 10, "scope": "llm:infer"}, net.jwt_key)
    monkeypatch.setenv("FOGLLM_TOKEN", expired)
    code, _, err = run(capsys, ["chat", "--layer", "fog", "hi"], net)
    assert code == EXIT_AUTH and "401" in err


def test_no_platform_exit_code(capsys):
    with simnet_up({"nodes": []}) as empty:
        code, _, err = run(capsys, ["chat", "--layer", "cloud", "hi"], empty)
    assert code == EXIT_NO_PLATFORM and err


def test_token_mint(capsys, monkeypatch):
    monkeypatch.setenv("FOGLLM_JWT_KEY", "m" * 32)
    code, out, _ = run(capsys, ["token", "mint", "--ttl", "60", "--scope", "llm:list", "--json"])
    data = json.loads(out)
    claims = hs256_decode_unverified(data["token"])
    assert code == EXIT_OK and claims["scope"] == "llm:list" and claims["aud"] == "fogllm"
    assert abs(claims["exp"] - time.time() - 60) < 5
    monkeypatch.delenv("FOGLLM_JWT_KEY")
    assert run(capsys, ["token", "mint"])[0] != EXIT_OK


def test_bench_single_run_json(capsys, net):
    code, out, _ = run(capsys, ["bench", "--platform", "fog", "--runs", "1", "--json"], net)
    report = json.loads(out)
    assert code == EXIT_OK
    assert set(report) >= {"platform_kind", "model_id", "runs", "prompt", "ttft_ms_mean", "ttft_ms_stddev",
                           "tokens_per_second_mean", "tokens_per_second_stddev"}
    assert report["platform_kind"] == "fog" and report["runs"] == 1
    assert report["ttft_ms_stddev"] == 0 and report["tokens_per_second_stddev"] == 0
    assert report["tokens_per_second_mean"] > 0


def test_bench_failure_exit_codes(capsys, net):
    code, _, err = run(capsys, ["bench", "--platform", "fog", "--runs", "1", "--model", "mistral:7b"], net)
    assert code == EXIT_BENCH and "404" in err
    net.link.set_reachable("Exam Room 3", False)
    net.link.set_reachable("Front Desk", False)
    try:
        code, _, err = run(capsys, ["bench", "--platform", "fog", "--runs", "1"], net)
    finally:
        net.link.set_reachable("Exam Room 3", True)
        net.link.set_reachable("Front Desk", True)
    assert code == EXIT_NO_PLATFORM and err


def test_model_list_and_verify(capsys, tmp_path):
    root = tmp_path / "home"
    code, out, _ = run(capsys, ["model", "list", "--root", str(root)])
    assert code == EXIT_OK and out.strip() == "0 models"
    src = tmp_path / "m.gguf"
    src.write_bytes(gguf_bytes(2))
    from fogllm.local import ModelCatalog

    ModelCatalog(root).add_file("phi-2", src)
    code, out, _ = run(capsys, ["model", "list", "--root", str(root), "--json"])
    assert json.loads(out)["models"][0]["model_id"] == "phi-2"
    assert run(capsys, ["model", "verify", "--root", str(root)])[0] == EXIT_OK
    (root / "models" / "phi-2" / "model.gguf").write_bytes(b"GGML")
    code, out, _ = run(capsys, ["model", "verify", "--root", str(root), "--json"])
    assert code != EXIT_OK and json.loads(out)["quarantined"] == ["phi-2"]
    code, out, _ = run(capsys, ["model", "list", "--supported"])
    assert "Llama2" in out and "Microsoft" in out


def test_certs_bootstrap(capsys, tmp_path):
    code, out, _ = run(capsys, ["certs", "bootstrap", "--out", str(tmp_path / "pki"), "--json"])
    paths = json.loads(out)
    assert code == EXIT_OK and all((tmp_path / "pki").joinpath(p).exists() for p in paths.values())


def test_topology_errors(tmp_path):
    with pytest.raises(TopologyError) as info:
        simnet_up({"nodes": [{"name": "a", "models": ["m"]}, {"name": "a", "models": ["m"]}]})
    assert info.value.node == "a"
    bad = tmp_path / "t.json"
    bad.write_text('{"nodes": [{"name": "a", "models": ["m"], "colour": "red"}]}')
    with pytest.raises(TopologyError):
        load_topology(bad)
    with pytest.raises(TopologyError):
        simnet_up({"nodes": [{"name": "a", "models": []}]})
    with pytest.raises(TopologyError):
        simnet_up({"nodes": [{"name": "a", "models": ["m"], "tokens_per_second": 0}]})


def test_shipped_topologies_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "topologies"
    assert len(load_topology(root / "clinic.json").nodes) == 2
    assert load_topology(root / "bench.json").nodes[0].mock.tokens_per_second == 6
    DispatchPolicy.load(root / "policy.json")
