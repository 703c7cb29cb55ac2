"""Declarative function calling.

Tools are plain Python functions described by a small JSON-schema subset
(primitives, enums, arrays and one level of nested objects). The schema can
be written by hand or derived from type hints with :func:`tool`::

    registry = ToolRegistry()

    @registry.function(description="Fetch health data for the given categories")
    def get_health_data(categories: list[HealthCategory]) -> dict:
        ...

When the model answers with tool calls, :func:`execute_calls` runs them
concurrently and :func:`run_turn` feeds the results back into the session
until the model produces a final answer.
"""

from __future__ import annotations

import collections.abc
import dataclasses
import enum
import inspect
import json
import types
import typing
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Literal, Sequence

from .errors import ArgumentError, DuplicateTool, ToolLoopExceeded
from .messages import Message, ToolCall
from .runtime import InferenceSession
from .wire import TOOL_NAME_RE, ToolSpec

DEFAULT_MAX_ROUNDS = 8

_PRIMITIVES = {"string", "integer", "number", "boolean"}


def _check_schema(schema: Any, path: str, depth: int) -> None:
    if not isinstance(schema, dict):
        raise ValueError(f"{path}: schema must be an object")
    kind = schema.get("type")
    if "enum" in schema:
        values = schema["enum"]
        if not isinstance(values, list) or not values:
            raise ValueError(f"{path}: enum must be a non-empty list")
    if kind in _PRIMITIVES:
        return
    if kind == "array":
        _check_schema(schema.get("items", {"type": "string"}), f"{path}[]", depth)
        return
    if kind == "object":
        if depth > 1:
            raise ValueError(f"{path}: objects may nest only one level")
        props = schema.get("properties", {})
        for key in schema.get("required", []):
            if key not in props:
                raise ValueError(f"{path}: required property {key!r} is not declared")
        for key, sub in props.items():
            _check_schema(sub, f"{path}.{key}" if path else key, depth + 1)
        return
    if kind is None and "enum" in schema:
        return
    raise ValueError(f"{path or '$'}: unsupported schema type {kind!r}")


@dataclass(frozen=True)
class ToolDefinition:
    name: str
    description: str
    parameters: dict
    handler: Callable[..., Any]

    def __post_init__(self):
        if not TOOL_NAME_RE.match(self.name):
            raise ValueError(f"illegal tool name {self.name!r}")
        if self.parameters.get("type") != "object":
            raise ValueError("tool parameters must be an object schema")
        _check_schema(self.parameters, "", 0)

    @property
    def spec(self) -> ToolSpec:
        return ToolSpec(self.name, self.description, self.parameters)


# -- argument validation ----------------------------------------------------

def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _validate(schema: dict, value: Any, path: str) -> Any:
    if "enum" in schema and value not in schema["enum"]:
        raise ArgumentError(path, f"{value!r} is not one of {schema['enum']}")
    kind = schema.get("type")
    if kind == "string":
        if not isinstance(value, str):
            raise ArgumentError(path, "expected string")
    elif kind == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ArgumentError(path, "expected integer")
    elif kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ArgumentError(path, "expected number")
    elif kind == "boolean":
        if not isinstance(value, bool):
            raise ArgumentError(path, "expected boolean")
    elif kind == "array":
        if not isinstance(value, list):
            raise ArgumentError(path, "expected array")
        items = schema.get("items")
        if items is not None:
            value = [_validate(items, v, f"{path}[{i}]") for i, v in enumerate(value)]
    elif kind == "object":
        if not isinstance(value, dict):
            raise ArgumentError(path, "expected object")
        props = schema.get("properties", {})
        for key in schema.get("required", []):
            if key not in value:
                raise ArgumentError(_join(path, key), "required property missing")
        out = {}
        for key, v in value.items():
            if key in props:
                out[key] = _validate(props[key], v, _join(path, key))
            elif schema.get("additionalProperties", True) is False:
                raise ArgumentError(_join(path, key), "unexpected property")
            else:
                out[key] = v
        value = out
    return value


def validate_arguments(definition: ToolDefinition, arguments_json: str) -> dict:
    """Parse and check model-supplied arguments; absent optional fields stay absent."""
    try:
        args = json.loads(arguments_json) if arguments_json.strip() else {}
    except json.JSONDecodeError as exc:
        raise ArgumentError("", f"arguments are not valid JSON: {exc.msg}") from None
    return _validate(definition.parameters, args, "")


# -- declarative DSL --------------------------------------------------------

def _strip_annotated(tp):
    description = None
    if typing.get_origin(tp) is typing.Annotated:
        args = typing.get_args(tp)
        tp = args[0]
        description = next((a for a in args[1:] if isinstance(a, str)), None)
    return tp, description


def _unwrap_optional(tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def schema_for(tp, depth: int = 0) -> dict:
    """JSON schema for a Python type hint within the supported subset."""
    tp, description = _strip_annotated(tp)
    tp, _ = _unwrap_optional(tp)
    origin = typing.get_origin(tp)
    if tp is str:
        schema = {"type": "string"}
    elif tp is bool:
        schema = {"type": "boolean"}
    elif tp is int:
        schema = {"type": "integer"}
    elif tp is float:
        schema = {"type": "number"}
    elif inspect.isclass(tp) and issubclass(tp, enum.Enum):
        values = [m.value for m in tp]
        schema = {"type": "integer" if all(isinstance(v, int) for v in values) else "string", "enum": values}
    elif origin is Literal:
        values = list(typing.get_args(tp))
        schema = {"type": "integer" if all(isinstance(v, int) for v in values) else "string", "enum": values}
    elif origin in (list, collections.abc.Sequence) or tp is list:
        args = typing.get_args(tp)
        schema = {"type": "array", "items": schema_for(args[0], depth) if args else {"type": "string"}}
    elif dataclasses.is_dataclass(tp) or typing.is_typeddict(tp):
        if depth >= 1:
            raise TypeError(f"{tp!r}: objects may nest only one level")
        schema = _object_schema(_fields_of(tp), depth + 1)
    else:
        raise TypeError(f"unsupported parameter type {tp!r}")
    if description:
        schema["description"] = description
    return schema


def _fields_of(tp) -> list[tuple[str, Any, bool]]:
    hints = typing.get_type_hints(tp, include_extras=True)
    if dataclasses.is_dataclass(tp):
        out = []
        for f in dataclasses.fields(tp):
            has_default = f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING
            out.append((f.name, hints[f.name], not has_default and not _unwrap_optional(_strip_annotated(hints[f.name])[0])[1]))
        return out
    required = getattr(tp, "__required_keys__", set(hints))
    return [(name, hint, name in required) for name, hint in hints.items()]


def _object_schema(fields: list[tuple[str, Any, bool]], depth: int) -> dict:
    props = {name: schema_for(hint, depth) for name, hint, _ in fields}
    return {
        "type": "object",
        "properties": props,
        "required": [name for name, _, required in fields if required],
        "additionalProperties": False,
    }


def _converter(tp) -> Callable[[Any], Any]:
    """Map validated JSON back onto the annotated Python type (enums, nested records)."""
    tp, _ = _strip_annotated(tp)
    tp, _ = _unwrap_optional(tp)
    if inspect.isclass(tp) and issubclass(tp, enum.Enum):
        return tp
    if typing.get_origin(tp) in (list, collections.abc.Sequence):
        args = typing.get_args(tp)
        inner = _converter(args[0]) if args else (lambda v: v)
        return lambda v: [inner(x) for x in v]
    if dataclasses.is_dataclass(tp):
        convs = {name: _converter(hint) for name, hint, _ in _fields_of(tp)}
        return lambda v: tp(**{k: convs[k](x) for k, x in v.items()})
    return lambda v: v


def tool(fn: Callable | None = None, *, name: str | None = None, description: str | None = None):
    """Turn an annotated function into a :class:`ToolDefinition`.

    Parameters become schema properties; those without defaults are required.
    ``Annotated[T, "text"]`` attaches a description to a parameter.
    """

    def build(f: Callable) -> ToolDefinition:
        sig = inspect.signature(f)
        hints = typing.get_type_hints(f, include_extras=True)
        fields = []
        for pname, param in sig.parameters.items():
            if pname not in hints:
                raise TypeError(f"parameter {pname!r} of {f.__name__} needs a type annotation")
            optional = param.default is not inspect.Parameter.empty
            fields.append((pname, hints[pname], not optional))
        converters = {pname: _converter(hint) for pname, hint, _ in fields}

        def handler(**kwargs):
            return f(**{k: converters[k](v) for k, v in kwargs.items()})

        doc = inspect.getdoc(f) or ""
        return ToolDefinition(
            name=name or f.__name__,
            description=description if description is not None else doc.split("\n\n")[0],
            parameters=_object_schema(fields, 0),
            handler=handler,
        )

    return build(fn) if fn is not None else build


class ToolRegistry:
    def __init__(self, definitions: Sequence[ToolDefinition] = ()):
        self._tools: dict[str, ToolDefinition] = {}
        for d in definitions:
            self.add(d)

    def add(self, definition: ToolDefinition) -> ToolRegistry:
        if definition.name in self._tools:
            raise DuplicateTool(f"tool {definition.name!r} is already registered")
        self._tools[definition.name] = definition
        return self

    def function(self, fn: Callable | None = None, *, name: str | None = None, description: str | None = None):
        """Decorator form of :func:`tool` that also registers the result."""

        def register(f):
            self.add(tool(f, name=name, description=description))
            return f

        return register(fn) if fn is not None else register

    def get(self, name: str) -> ToolDefinition | None:
        return self._tools.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def __len__(self) -> int:
        return len(self._tools)

    def __iter__(self) -> Iterator[ToolDefinition]:
        return iter(self._tools.values())

    def specs(self) -> list[ToolSpec] | None:
        """Wire tool specs, or ``None`` for an empty registry so requests omit the field."""
        return [d.spec for d in self._tools.values()] or None


# -- execution --------------------------------------------------------------

class OutcomeStatus(str, enum.Enum):
    OK = "ok"
    HANDLER_ERROR = "handler_error"
    VALIDATION_ERROR = "validation_error"


@dataclass(frozen=True)
class ToolCallOutcome:
    call_id: str
    function_name: str
    result_text: str
    status: OutcomeStatus = OutcomeStatus.OK
    detail: str | None = None


def serialize_result(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, enum.Enum):
        value = value.value
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        value = dataclasses.asdict(value)
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)


def _failure(call: ToolCall, status: OutcomeStatus, detail: str) -> ToolCallOutcome:
    return ToolCallOutcome(call.id, call.name, f"Error: {detail}", status, detail)


def _run_one(definition: ToolDefinition, call: ToolCall, args: dict) -> ToolCallOutcome:
    try:
        result = definition.handler(**args)
        return ToolCallOutcome(call.id, call.name, serialize_result(result))
    except Exception as exc:
        return _failure(call, OutcomeStatus.HANDLER_ERROR, f"{type(exc).__name__}: {exc}")


def execute_calls(registry: ToolRegistry, calls: Sequence[ToolCall]) -> list[ToolCallOutcome]:
    """Run every requested call concurrently; outcomes follow request order."""
    outcomes: list[ToolCallOutcome | None] = [None] * len(calls)
    runnable = []
    for i, call in enumerate(calls):
        definition = registry.get(call.name)
        if definition is None:
            outcomes[i] = _failure(call, OutcomeStatus.VALIDATION_ERROR, f"unknown tool {call.name!r}")
            continue
        try:
            args = validate_arguments(definition, call.arguments)
        except ArgumentError as exc:
            outcomes[i] = _failure(call, OutcomeStatus.VALIDATION_ERROR, str(exc))
            continue
        runnable.append((i, definition, call, args))
    if runnable:
        with ThreadPoolExecutor(max_workers=len(runnable), thread_name_prefix="tool") as pool:
            futures = [(i, pool.submit(_run_one, d, c, a)) for i, d, c, a in runnable]
            for i, fut in futures:
                outcomes[i] = fut.result()
    return outcomes


def run_turn(
    session: InferenceSession,
    registry: ToolRegistry,
    user_message: str | Message | None,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    on_delta: Callable[[str], None] | None = None,
) -> Message:
    """Generate, execute any requested tools, feed results back, repeat until a final answer."""
    tools = registry.specs()
    message = session.generate(user_message, tools=tools, on_delta=on_delta)
    rounds = 0
    while message.tool_calls:
        if rounds >= max_rounds:
            raise ToolLoopExceeded(f"model still requesting tools after {max_rounds} rounds")
        rounds += 1
        for outcome in execute_calls(registry, message.tool_calls):
            session.append_tool_result(outcome.call_id, outcome.result_text)
        message = session.generate(None, tools=tools, on_delta=on_delta)
    return message
