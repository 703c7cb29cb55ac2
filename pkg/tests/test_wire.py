import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from fogllm.errors import BackendError, ParseError, StreamProtocolError, TruncatedStream, ValidationError
from fogllm.messages import Message, ToolCall
from fogllm.wire import (
    ChatRequest,
    StreamAccumulator,
    StreamChunk,
    ToolCallDelta,
    ToolSpec,
    decode_request,
    encode_request,
    encode_sse_stream,
    parse_sse_stream,
)

from oracles import all_fragmentations
from strategies import chunk_sequences, requests

GOLDEN = Path(__file__).parent / "golden"

HEALTH_TOOL = ToolSpec(
    "get_health_data",
    "Fetch health data for the given categories",
    {
        "type": "object",
        "properties": {"categories": {"type": "array", "items": {"type": "string", "enum": ["sleep", "steps", "heart_rate"]}}},
        "required": ["categories"],
    },
)


def test_golden_basic_request():
    req = ChatRequest(
        "gpt-4-0125-preview",
        [Message.system("You are a helpful health assistant."), Message.user("How much did I sleep last week?")],
    )
    assert encode_request(req) == (GOLDEN / "request_basic.json").read_bytes()


def test_golden_request_with_tools():
    req = ChatRequest(
        "llama2:7b",
        [
            Message.user("How much did I sleep last week?"),
            Message.assistant("", [ToolCall("call_0", "get_health_data", '{"categories":["sleep"]}')]),
            Message.tool("call_0", '{"sleep_hours":[7.5,6.0]}'),
        ],
        temperature=0.7,
        stream=True,
        tools=[HEALTH_TOOL],
        max_tokens=256,
    )
    golden = (GOLDEN / "request_tools.json").read_bytes()
    assert encode_request(req) == golden
    assert decode_request(golden) == req


def test_golden_streams_round_trip():
    env = dict(id="chatcmpl-1", model="llama2:7b")
    chunks = [
        StreamChunk(delta_content="Hel", role="assistant", **env),
        StreamChunk(delta_content="lo", **env),
        StreamChunk(finish_reason="stop", **env),
    ]
    golden = (GOLDEN / "stream_basic.sse").read_bytes()
    assert b"".join(encode_sse_stream(chunks)) == golden
    assert list(parse_sse_stream([golden])) == chunks

    env = dict(id="chatcmpl-2", model="llama2:7b")
    calls = [
        StreamChunk(delta_tool_calls=(ToolCallDelta(0, "call_0", "get_health_data", '{"categ'),), **env),
        StreamChunk(delta_tool_calls=(ToolCallDelta(0, arguments='ories":["sleep"]}'),), **env),
        StreamChunk(finish_reason="tool_calls", **env),
    ]
    golden = (GOLDEN / "stream_tool_call.sse").read_bytes()
    assert b"".join(encode_sse_stream(calls)) == golden


def test_versioned_model_string_encoded():
    body = encode_request(ChatRequest("gpt-4-0125-preview", [Message.user("hi")]))
    assert b'"model":"gpt-4-0125-preview"' in body


def test_empty_messages_rejected():
    with pytest.raises(ValidationError) as err:
        encode_request(ChatRequest("m", []))
    assert err.value.field == "messages"


@pytest.mark.parametrize("name", ["", "has space", "x" * 65, "dots.not.ok"])
def test_illegal_tool_names_rejected(name):
    with pytest.raises(ValidationError):
        encode_request(ChatRequest("m", [Message.user("hi")], tools=[ToolSpec(name)]))


def test_decode_defaults():
    req = decode_request(b'{"model":"m","messages":[{"role":"user","content":"hi"}]}')
    assert req.temperature == 1.0 and req.stream is False and req.tools is None and req.max_tokens is None


def test_decode_malformed_json_reports_position():
    with pytest.raises(ParseError) as err:
        decode_request(b'{"model": "m", "messages": [}')
    assert err.value.position == 28


@given(requests, st.dictionaries(st.from_regex(r"\Ax_[a-z]{1,8}\Z"), st.integers() | st.text(max_size=5), max_size=3))
@settings(max_examples=100, deadline=None)
def test_unknown_keys_ignored(req, extra):
    obj = json.loads(encode_request(req))
    obj.update(extra)
    assert decode_request(json.dumps(obj)) == req


@given(requests)
@settings(max_examples=200, deadline=None)
def test_request_round_trip(req):
    assert decode_request(encode_request(req)) == req


@given(chunk_sequences())
@settings(max_examples=200, deadline=None)
def test_stream_round_trip(chunks):
    data = b"".join(encode_sse_stream(chunks))
    assert list(parse_sse_stream([data])) == chunks
    assert data.endswith(b"data: [DONE]\n\n")
    assert data.count(b"data: ") == len(chunks) + 1


def test_event_counts():
    two = [StreamChunk(delta_content="a"), StreamChunk(delta_content="b"), StreamChunk(finish_reason="stop")]
    assert b"".join(encode_sse_stream(two)).count(b"\n\n") == 4
    assert b"".join(encode_sse_stream([StreamChunk(finish_reason="stop")])).count(b"\n\n") == 2


def test_byte_at_a_time_equals_whole_buffer():
    chunks = [StreamChunk(delta_content="héllo wörld ✓"), StreamChunk(delta_content=" 😴"), StreamChunk(finish_reason="stop")]
    data = b"".join(encode_sse_stream(chunks))
    one_by_one = list(parse_sse_stream(data[i:i + 1] for i in range(len(data))))
    assert one_by_one == list(parse_sse_stream([data])) == chunks


@given(chunk_sequences(), st.randoms(use_true_random=False))
@settings(max_examples=50, deadline=None)
def test_fragmentation_invariance(chunks, rng):
    data = b"".join(encode_sse_stream(chunks))
    for pieces in all_fragmentations(data, rng, 5):
        assert list(parse_sse_stream(pieces)) == chunks


def test_truncated_stream():
    data = b"".join(encode_sse_stream([StreamChunk(delta_content="a"), StreamChunk(finish_reason="stop")]))
    with pytest.raises(TruncatedStream):
        list(parse_sse_stream([data[: -len(b"data: [DONE]\n\n")]]))


def test_line_without_data_prefix():
    with pytest.raises(StreamProtocolError):
        list(parse_sse_stream([b'{"choices":[]}\n\n']))


def test_comments_and_crlf_tolerated():
    data = b': keep-alive\r\ndata: {"choices":[{"index":0,"delta":{"content":"x"},"finish_reason":"stop"}]}\r\n\r\ndata: [DONE]\r\n\r\n'
    assert [c.delta_content for c in parse_sse_stream([data])] == ["x"]


def test_error_event_surfaces_as_backend_error():
    with pytest.raises(BackendError):
        list(parse_sse_stream([b'data: {"error":{"message":"boom"}}\n\n']))


def test_tool_arguments_split_across_three_chunks():
    args = {"categories": ["sleep", "steps"], "days": 7}
    text = json.dumps(args)
    thirds = [text[: len(text) // 3], text[len(text) // 3: 2 * len(text) // 3], text[2 * len(text) // 3:]]
    acc = StreamAccumulator()
    acc.add(StreamChunk(delta_tool_calls=(ToolCallDelta(0, "c0", "get_health_data", thirds[0]),)))
    acc.add(StreamChunk(delta_tool_calls=(ToolCallDelta(0, arguments=thirds[1]),)))
    acc.add(StreamChunk(delta_tool_calls=(ToolCallDelta(0, arguments=thirds[2]),)))
    acc.add(StreamChunk(finish_reason="tool_calls"))
    (call,) = acc.message().tool_calls
    assert json.loads(call.arguments) == args


def test_finish_reason_exactly_once():
    acc = StreamAccumulator()
    acc.add(StreamChunk(finish_reason="stop"))
    with pytest.raises(StreamProtocolError):
        acc.add(StreamChunk(finish_reason="stop"))


@given(chunk_sequences())
@settings(max_examples=100, deadline=None)
def test_streamed_tool_arguments_are_valid_json(chunks):
    acc = StreamAccumulator()
    for c in chunks:
        acc.add(c)
    for call in acc.message().tool_calls:
        json.loads(call.arguments)


def test_random_fragmentation_utf8_boundaries():
    rng = random.Random(7)
    chunks = [StreamChunk(delta_content="日本語のテキスト"), StreamChunk(finish_reason="stop")]
    data = b"".join(encode_sse_stream(chunks))
    for pieces in all_fragmentations(data, rng, 200):
        assert list(parse_sse_stream(pieces)) == chunks
