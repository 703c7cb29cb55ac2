import itertools
import threading

import pytest
from hypothesis import given, settings, strategies as st

from fogllm.errors import BackendError, BudgetTooSmall, ConcurrentGeneration, NoPlatformAvailable, RangeError, SessionStateError
from fogllm.messages import ChatContext, Message, Role, ToolCall
from fogllm.mock import ScriptedPlatform, text_turn
from fogllm.runtime import (
    LayerHint,
    ModelSchema,
    PlatformDescriptor,
    PlatformKind,
    Runner,
    SessionState,
    context_trim,
    make_schema,
    select_platform,
)

from oracles import brute_suffix_trim


def test_make_schema_with_options():
    s = make_schema("llama2:7b", {"temperature": 0.7}, 4096, "auto")
    assert (s.model_id, s.temperature, s.context_window, s.layer_hint) == ("llama2:7b", 0.7, 4096, LayerHint.AUTO)
    with pytest.raises(Exception):
        s.temperature = 0.1


def test_schema_equality_and_range():
    assert make_schema("m") == make_schema("m")
    with pytest.raises(RangeError):
        make_schema("m", {"temperature": 2.5})
    with pytest.raises(RangeError):
        make_schema("m", {"max_output_tokens": 600}, context_window=500)
    with pytest.raises(RangeError):
        make_schema("m", context_window=0)


def test_trust_tiers_fixed_by_kind():
    assert [PlatformDescriptor(k).trust_tier for k in ("local", "fog", "cloud")] == [3, 2, 1]


def test_runner_register_and_replace():
    runner = Runner()
    for kind in ("local", "fog", "cloud"):
        runner.register(ScriptedPlatform([], kind, endpoint=f"{kind}-1"))
    assert len(runner.inventory) == 3
    runner.register(ScriptedPlatform([], "fog", endpoint="fog-1", capability_score=9))
    assert len(runner.inventory) == 3
    assert [d.capability_score for d in runner.inventory if d.kind is PlatformKind.FOG] == [9]


def test_empty_runner_has_no_platform():
    with pytest.raises(NoPlatformAvailable):
        Runner().create_session(make_schema("m"))


def test_forced_hint():
    runner = Runner([ScriptedPlatform([], "local"), ScriptedPlatform([], "cloud", capability_score=3)])
    assert runner.create_session(make_schema("m", layer_hint="local")).bound_platform.kind is PlatformKind.LOCAL
    with pytest.raises(NoPlatformAvailable):
        Runner([ScriptedPlatform([], "local")]).create_session(make_schema("m", layer_hint="fog"))


def test_auto_hint_matches_exhaustive_argmax():
    kinds = ["local", "fog", "cloud"]
    for inventory in itertools.product([(k, c) for k in kinds for c in range(3)], repeat=3):
        descs = [PlatformDescriptor(k, c, f"e{i}") for i, (k, c) in enumerate(inventory)]
        for min_cap in range(3):
            capable = [d for d in descs if d.capability_score >= min_cap]
            if not capable:
                with pytest.raises(NoPlatformAvailable):
                    select_platform(LayerHint.AUTO, descs, min_cap)
                continue
            top = max(d.trust_tier for d in capable)
            got = select_platform(LayerHint.AUTO, descs, min_cap)
            assert got.trust_tier == top
            assert got.capability_score == max(d.capability_score for d in capable if d.trust_tier == top)


def test_generate_concatenates_deltas():
    platform = ScriptedPlatform([text_turn("Hel", "lo")])
    session = Runner([platform]).create_session(make_schema("m"))
    seen = []
    msg = session.generate("hi", on_delta=seen.append)
    assert msg.content == "Hello" == "".join(seen)
    assert [m.role for m in session.context] == [Role.USER, Role.ASSISTANT]
    assert session.state is SessionState.IDLE


def test_empty_stream():
    session = Runner([ScriptedPlatform([text_turn()])]).create_session(make_schema("m"))
    gen = session.stream("hi")
    assert list(gen) == []
    assert gen.message.content == "" and gen.finish_reason == "stop"


def test_concurrent_generation_rejected():
    session = Runner([ScriptedPlatform([text_turn("a", "b")], repeat_last=True)]).create_session(make_schema("m"))
    gen = session.stream("hi")
    next(gen)
    with pytest.raises(ConcurrentGeneration):
        session.stream("again")
    list(gen)
    assert session.state is SessionState.IDLE


def test_backend_error_moves_to_error_until_reset():
    platform = ScriptedPlatform([RuntimeError("socket closed"), text_turn("ok")])
    session = Runner([platform]).create_session(make_schema("m"))
    with pytest.raises(BackendError):
        session.generate("hi")
    assert session.state is SessionState.ERROR
    with pytest.raises(SessionStateError):
        session.generate("hi")
    session.reset()
    assert session.state is SessionState.IDLE
    assert session.generate("again").content == "ok"


def test_schema_unchanged_by_operations():
    schema = make_schema("m", {"temperature": 0.3}, 64)
    before = repr(schema)
    session = Runner([ScriptedPlatform([text_turn("a")], repeat_last=True)]).create_session(schema)
    for _ in range(3):
        session.generate("q")
    assert repr(schema) == before


def test_request_honours_schema():
    platform = ScriptedPlatform([text_turn("a")])
    schema = make_schema("llama2:7b", {"temperature": 0.2, "max_output_tokens": 16}, 64)
    Runner([platform]).create_session(schema).generate("hi")
    (req,) = platform.requests
    assert (req.model, req.temperature, req.max_tokens, req.stream) == ("llama2:7b", 0.2, 16, True)


# -- trimming ---------------------------------------------------------------

def _ctx(costs, pinned, tool_at=()):
    entries = []
    for i, c in enumerate(costs):
        words = " ".join(["w"] * c)
        entries.append(Message.tool(f"c{i}", words) if i in tool_at else Message.user(words))
    return ChatContext(entries, pinned)


def test_trim_example_ten_by_hundred():
    ctx = _ctx([100] * 10, 1)
    trimmed = context_trim(ctx, 500)
    assert trimmed.entries == [ctx.entries[0]] + ctx.entries[6:]
    kept = [i for i, m in enumerate(ctx.entries) if any(m is t for t in trimmed.entries)]
    assert kept == brute_suffix_trim([100] * 10, 1, 500, [False] * 10)


def test_trim_identity_and_pinned_overflow():
    ctx = _ctx([3, 4, 5], 1)
    assert context_trim(ctx, 12).entries == ctx.entries
    with pytest.raises(BudgetTooSmall):
        context_trim(_ctx([600, 1], 1), 500)


@given(
    st.lists(st.integers(0, 20), min_size=1, max_size=12),
    st.integers(0, 3),
    st.integers(0, 120),
    st.sets(st.integers(0, 11)),
)
@settings(max_examples=300, deadline=None)
def test_trim_matches_suffix_oracle(costs, pinned, budget, tool_at):
    pinned = min(pinned, len(costs))
    tool_at = {i for i in tool_at if pinned <= i < len(costs)}
    ctx = _ctx(costs, pinned, tool_at)
    if sum(costs[:pinned]) > budget:
        with pytest.raises(BudgetTooSmall):
            context_trim(ctx, budget)
        return
    trimmed = context_trim(ctx, budget)
    expected = brute_suffix_trim(costs, pinned, budget, [i in tool_at for i in range(len(costs))])
    assert trimmed.entries == [ctx.entries[i] for i in expected]
    assert context_trim(trimmed, budget).entries == trimmed.entries  # idempotent


def test_trim_drops_orphaned_tool_results():
    call = ToolCall("c1", "f", "{}")
    entries = [
        Message.system("s"),
        Message.user("one two three four five"),
        Message.assistant("", [call]),
        Message.tool("c1", "result words here"),
        Message.assistant("final"),
    ]
    trimmed = context_trim(ChatContext(entries, 1), 5)
    assert all(m.role is not Role.TOOL for m in trimmed.entries)


def test_runner_concurrent_session_creation():
    runner = Runner([ScriptedPlatform([], "local"), ScriptedPlatform([], "cloud")])
    errors = []

    def work():
        try:
            for _ in range(50):
                runner.create_session(make_schema("m"))
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
