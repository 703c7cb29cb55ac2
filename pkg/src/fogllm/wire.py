"""Encoder/decoder for the OpenAI-style chat-completions wire format.

The same shapes are spoken by cloud services, fog nodes and the mock
backends. Encoding is strict and produces compact JSON with a fixed key
order (golden files depend on it); decoding ignores unknown keys so that
heterogeneous upstream servers interoperate.

Streaming uses server-sent events framed exactly as ``data: <json>\\n\\n`` and
terminated by ``data: [DONE]\\n\\n``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

from .errors import (
    BackendError,
    ParseError,
    StreamProtocolError,
    TruncatedStream,
    ValidationError,
)
from .messages import Message, Role, ToolCall

TOOL_NAME_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")
FINISH_REASONS = ("stop", "tool_calls", "length")

DONE_EVENT = b"data: [DONE]\n\n"


def _dumps(obj: Any) -> bytes:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str = ""
    parameters: dict = field(default_factory=lambda: {"type": "object", "properties": {}})


@dataclass
class ChatRequest:
    model: str
    messages: list[Message]
    temperature: float = 1.0
    stream: bool = False
    tools: list[ToolSpec] | None = None
    max_tokens: int | None = None

    def validate(self) -> None:
        if not isinstance(self.model, str) or not self.model:
            raise ValidationError("model", "must be a non-empty string")
        if not self.messages:
            raise ValidationError("messages", "must not be empty")
        for i, m in enumerate(self.messages):
            if not isinstance(m, Message):
                raise ValidationError(f"messages[{i}]", "not a Message")
        t = self.temperature
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not 0.0 <= t <= 2.0:
            raise ValidationError("temperature", "must be a number in [0, 2]")
        if not isinstance(self.stream, bool):
            raise ValidationError("stream", "must be a boolean")
        if self.max_tokens is not None and (
            isinstance(self.max_tokens, bool)
            or not isinstance(self.max_tokens, int)
            or self.max_tokens < 1
        ):
            raise ValidationError("max_tokens", "must be a positive integer")
        if self.tools is not None:
            for i, tool in enumerate(self.tools):
                if not isinstance(tool.name, str) or not TOOL_NAME_RE.match(tool.name):
                    raise ValidationError(f"tools[{i}].function.name", f"illegal tool name {tool.name!r}")
                if not isinstance(tool.parameters, dict):
                    raise ValidationError(f"tools[{i}].function.parameters", "must be an object")


# -- messages ---------------------------------------------------------------

def message_to_wire(m: Message) -> dict:
    out: dict[str, Any] = {"role": m.role.value}
    if m.tool_calls:
        out["content"] = m.content or None
        out["tool_calls"] = [
            {"id": c.id, "type": "function", "function": {"name": c.name, "arguments": c.arguments}}
            for c in m.tool_calls
        ]
    else:
        out["content"] = m.content
    if m.tool_call_id is not None:
        out["tool_call_id"] = m.tool_call_id
    return out


def _content_from_wire(raw: Any, where: str) -> str:
    if raw is None:
        return ""
    if isinstance(raw, str):
        return raw
    if isinstance(raw, list):
        # text-only content parts; images/audio are not supported
        parts = []
        for j, part in enumerate(raw):
            if not isinstance(part, dict) or part.get("type") != "text" or not isinstance(part.get("text"), str):
                raise ValidationError(f"{where}.content[{j}]", "only text content parts are supported")
            parts.append(part["text"])
        return "".join(parts)
    raise ValidationError(f"{where}.content", "must be a string")


def message_from_wire(obj: Any, where: str = "message") -> Message:
    if not isinstance(obj, dict):
        raise ValidationError(where, "must be an object")
    try:
        role = Role(obj.get("role"))
    except ValueError:
        raise ValidationError(f"{where}.role", f"unknown role {obj.get('role')!r}") from None
    content = _content_from_wire(obj.get("content"), where)
    calls = []
    raw_calls = obj.get("tool_calls")
    if raw_calls is not None:
        if not isinstance(raw_calls, list):
            raise ValidationError(f"{where}.tool_calls", "must be a list")
        for j, rc in enumerate(raw_calls):
            fn = rc.get("function") if isinstance(rc, dict) else None
            if not isinstance(fn, dict) or not isinstance(rc.get("id"), str) or not isinstance(fn.get("name"), str):
                raise ValidationError(f"{where}.tool_calls[{j}]", "malformed tool call")
            args = fn.get("arguments", "{}")
            if not isinstance(args, str):
                args = json.dumps(args, separators=(",", ":"))
            calls.append(ToolCall(rc["id"], fn["name"], args))
    call_id = obj.get("tool_call_id")
    if call_id is not None and not isinstance(call_id, str):
        raise ValidationError(f"{where}.tool_call_id", "must be a string")
    try:
        return Message(role, content, tuple(calls), call_id)
    except ValueError as exc:
        raise ValidationError(where, str(exc)) from None


# -- requests ---------------------------------------------------------------

def tool_spec_to_wire(tool: ToolSpec) -> dict:
    return {
        "type": "function",
        "function": {"name": tool.name, "description": tool.description, "parameters": tool.parameters},
    }


def request_to_wire(req: ChatRequest) -> dict:
    req.validate()
    out: dict[str, Any] = {
        "model": req.model,
        "messages": [message_to_wire(m) for m in req.messages],
        "temperature": req.temperature,
        "stream": req.stream,
    }
    if req.tools:
        out["tools"] = [tool_spec_to_wire(t) for t in req.tools]
    if req.max_tokens is not None:
        out["max_tokens"] = req.max_tokens
    return out


def encode_request(req: ChatRequest) -> bytes:
    return _dumps(request_to_wire(req))


def _loads(body: bytes | str) -> Any:
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.pos) from None
    except UnicodeDecodeError as exc:
        raise ParseError("invalid UTF-8", exc.start) from None


def decode_request(body: bytes | str) -> ChatRequest:
    obj = _loads(body)
    if not isinstance(obj, dict):
        raise ValidationError("$", "request body must be a JSON object")
    model = obj.get("model")
    if not isinstance(model, str) or not model:
        raise ValidationError("model", "must be a non-empty string")
    raw_messages = obj.get("messages")
    if not isinstance(raw_messages, list) or not raw_messages:
        raise ValidationError("messages", "must be a non-empty list")
    messages = [message_from_wire(m, f"messages[{i}]") for i, m in enumerate(raw_messages)]

    tools = None
    raw_tools = obj.get("tools")
    if raw_tools is not None:
        if not isinstance(raw_tools, list):
            raise ValidationError("tools", "must be a list")
        tools = []
        for i, rt in enumerate(raw_tools):
            if not isinstance(rt, dict) or rt.get("type", "function") != "function" or not isinstance(rt.get("function"), dict):
                raise ValidationError(f"tools[{i}]", "only function tools are supported")
            fn = rt["function"]
            tools.append(ToolSpec(
                name=fn.get("name"),
                description=fn.get("description", "") or "",
                parameters=fn.get("parameters", {"type": "object", "properties": {}}),
            ))
        tools = tools or None

    req = ChatRequest(
        model=model,
        messages=messages,
        temperature=obj.get("temperature", 1.0) if obj.get("temperature") is not None else 1.0,
        stream=obj.get("stream", False) if obj.get("stream") is not None else False,
        tools=tools,
        max_tokens=obj.get("max_tokens"),
    )
    if isinstance(req.temperature, int) and not isinstance(req.temperature, bool):
        req.temperature = float(req.temperature)
    req.validate()
    return req


# -- non-streamed responses -------------------------------------------------

@dataclass
class ChatCompletion:
    message: Message
    finish_reason: str = "stop"
    id: str = ""
    model: str = ""
    created: int = 0


def encode_completion(c: ChatCompletion) -> bytes:
    return _dumps({
        "id": c.id,
        "object": "chat.completion",
        "created": c.created,
        "model": c.model,
        "choices": [{"index": 0, "message": message_to_wire(c.message), "finish_reason": c.finish_reason}],
    })


def decode_completion(body: bytes | str) -> ChatCompletion:
    obj = _loads(body)
    if not isinstance(obj, dict):
        raise ValidationError("$", "response body must be a JSON object")
    if "error" in obj:
        raise BackendError(_error_message(obj["error"]))
    choices = obj.get("choices")
    if not isinstance(choices, list) or not choices:
        raise ValidationError("choices", "must be a non-empty list")
    choice = choices[0]
    return ChatCompletion(
        message=message_from_wire(choice.get("message"), "choices[0].message"),
        finish_reason=choice.get("finish_reason") or "stop",
        id=obj.get("id", "") or "",
        model=obj.get("model", "") or "",
        created=obj.get("created", 0) or 0,
    )


def _error_message(err: Any) -> str:
    if isinstance(err, dict):
        return str(err.get("message", err))
    return str(err)


# -- streamed responses -----------------------------------------------------

@dataclass(frozen=True)
class ToolCallDelta:
    """Fragment of a tool call; fragments sharing ``index`` concatenate."""

    index: int
    id: str | None = None
    name: str | None = None
    arguments: str | None = None


@dataclass(frozen=True)
class StreamChunk:
    delta_content: str | None = None
    delta_tool_calls: tuple[ToolCallDelta, ...] = ()
    finish_reason: str | None = None
    role: str | None = None
    id: str = ""
    model: str = ""
    created: int = 0

    def __post_init__(self):
        if not isinstance(self.delta_tool_calls, tuple):
            object.__setattr__(self, "delta_tool_calls", tuple(self.delta_tool_calls))
        if self.finish_reason is not None and self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"unknown finish_reason {self.finish_reason!r}")


def chunk_to_wire(chunk: StreamChunk) -> dict:
    delta: dict[str, Any] = {}
    if chunk.role is not None:
        delta["role"] = chunk.role
    if chunk.delta_content is not None:
        delta["content"] = chunk.delta_content
    if chunk.delta_tool_calls:
        calls = []
        for tc in chunk.delta_tool_calls:
            item: dict[str, Any] = {"index": tc.index}
            if tc.id is not None:
                item["id"] = tc.id
                item["type"] = "function"
            fn = {}
            if tc.name is not None:
                fn["name"] = tc.name
            if tc.arguments is not None:
                fn["arguments"] = tc.arguments
            if fn:
                item["function"] = fn
            calls.append(item)
        delta["tool_calls"] = calls
    return {
        "id": chunk.id,
        "object": "chat.completion.chunk",
        "created": chunk.created,
        "model": chunk.model,
        "choices": [{"index": 0, "delta": delta, "finish_reason": chunk.finish_reason}],
    }


def chunk_from_wire(obj: Any) -> StreamChunk:
    if not isinstance(obj, dict):
        raise StreamProtocolError("stream event payload is not a JSON object")
    if "error" in obj:
        raise BackendError(_error_message(obj["error"]))
    choices = obj.get("choices") or []
    if not isinstance(choices, list):
        raise StreamProtocolError("choices must be a list")
    envelope = dict(id=obj.get("id") or "", model=obj.get("model") or "", created=obj.get("created") or 0)
    if not choices:
        return StreamChunk(**envelope)
    choice = choices[0]
    delta = choice.get("delta") or {}
    calls = []
    for rc in delta.get("tool_calls") or ():
        fn = rc.get("function") or {}
        calls.append(ToolCallDelta(
            index=rc.get("index", 0),
            id=rc.get("id"),
            name=fn.get("name"),
            arguments=fn.get("arguments"),
        ))
    try:
        return StreamChunk(
            delta_content=delta.get("content"),
            delta_tool_calls=tuple(calls),
            finish_reason=choice.get("finish_reason"),
            role=delta.get("role"),
            **envelope,
        )
    except ValueError as exc:
        raise StreamProtocolError(str(exc)) from None


def encode_sse_event(chunk: StreamChunk) -> bytes:
    return b"data: " + _dumps(chunk_to_wire(chunk)) + b"\n\n"


def encode_sse_stream(chunks: Iterable[StreamChunk]) -> Iterator[bytes]:
    """Yield one SSE event per chunk followed by the ``[DONE]`` sentinel."""
    for chunk in chunks:
        yield encode_sse_event(chunk)
    yield DONE_EVENT


class SSEParser:
    """Incremental SSE decoder; feed it bytes exactly as they arrive.

    Input may be split anywhere, including inside a line or a multi-byte
    UTF-8 sequence, because decoding happens per complete event.
    """

    _IGNORED_FIELDS = (b"event", b"id", b"retry")

    def __init__(self):
        self._buf = bytearray()
        self._data: list[bytes] = []
        self._saw_field = False
        self.done = False

    def feed(self, data: bytes) -> list[StreamChunk]:
        if self.done:
            return []
        self._buf += data
        out = []
        while not self.done:
            nl = self._buf.find(b"\n")
            if nl < 0:
                break
            line = bytes(self._buf[:nl])
            del self._buf[: nl + 1]
            if line.endswith(b"\r"):
                line = line[:-1]
            chunk = self._line(line)
            if chunk is not None:
                out.append(chunk)
        return out

    def _line(self, line: bytes) -> StreamChunk | None:
        if not line:
            return self._dispatch()
        if line.startswith(b":"):
            return None
        name, sep, value = line.partition(b":")
        if name == b"data" and sep:
            self._data.append(value[1:] if value.startswith(b" ") else value)
        elif name in self._IGNORED_FIELDS:
            self._saw_field = True
        else:
            raise StreamProtocolError(f"event line without data: prefix: {line[:40]!r}")
        return None

    def _dispatch(self) -> StreamChunk | None:
        data, saw_field = self._data, self._saw_field
        self._data, self._saw_field = [], False
        if not data:
            if saw_field:
                raise StreamProtocolError("event carries no data field")
            return None
        payload = b"\n".join(data)
        if payload == b"[DONE]":
            self.done = True
            return None
        try:
            obj = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise StreamProtocolError(f"event payload is not JSON: {exc}") from None
        return chunk_from_wire(obj)

    def close(self) -> None:
        if not self.done:
            raise TruncatedStream("stream ended before [DONE]")


def parse_sse_stream(pieces: Iterable[bytes]) -> Iterator[StreamChunk]:
    parser = SSEParser()
    for piece in pieces:
        yield from parser.feed(piece)
        if parser.done:
            return
    parser.close()


class StreamAccumulator:
    """Folds streamed chunks into the final assistant message."""

    def __init__(self):
        self._text: list[str] = []
        self._calls: dict[int, dict] = {}
        self.finish_reason: str | None = None

    def add(self, chunk: StreamChunk) -> str:
        if self.finish_reason is not None and (
            chunk.finish_reason is not None or chunk.delta_content or chunk.delta_tool_calls
        ):
            raise StreamProtocolError("chunk received after finish_reason")
        text = chunk.delta_content or ""
        if text:
            self._text.append(text)
        for tc in chunk.delta_tool_calls:
            slot = self._calls.setdefault(tc.index, {"id": None, "name": None, "arguments": []})
            if tc.id is not None:
                slot["id"] = tc.id
            if tc.name is not None and slot["name"] is None:
                slot["name"] = tc.name
            if tc.arguments is not None:
                slot["arguments"].append(tc.arguments)
        if chunk.finish_reason is not None:
            self.finish_reason = chunk.finish_reason
        return text

    @property
    def content(self) -> str:
        return "".join(self._text)

    def tool_calls(self) -> tuple[ToolCall, ...]:
        calls = []
        for index in sorted(self._calls):
            slot = self._calls[index]
            if not slot["id"] or not slot["name"]:
                raise StreamProtocolError(f"tool call {index} is missing id or name")
            calls.append(ToolCall(slot["id"], slot["name"], "".join(slot["arguments"]) or "{}"))
        return tuple(calls)

    def message(self) -> Message:
        if self.finish_reason is None:
            raise StreamProtocolError("stream finished without a finish_reason")
        return Message.assistant(self.content, self.tool_calls())
