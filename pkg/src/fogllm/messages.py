"""Chat message model shared by the runtime and the wire codec."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class ToolCall:
    """One function invocation requested by the model.

    ``arguments`` is kept as the raw JSON text the model produced; it is only
    parsed when the call is validated against a tool definition.
    """

    id: str
    name: str
    arguments: str = "{}"


@dataclass(frozen=True)
class Message:
    role: Role
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: str | None = None

    def __post_init__(self):
        if not isinstance(self.role, Role):
            object.__setattr__(self, "role", Role(self.role))
        if not isinstance(self.tool_calls, tuple):
            object.__setattr__(self, "tool_calls", tuple(self.tool_calls))
        if self.tool_calls and self.role is not Role.ASSISTANT:
            raise ValueError("tool_calls are only allowed on assistant messages")
        if (self.tool_call_id is not None) != (self.role is Role.TOOL):
            raise ValueError("tool_call_id must be set exactly on tool messages")

    @classmethod
    def system(cls, content: str) -> Message:
        return cls(Role.SYSTEM, content)

    @classmethod
    def user(cls, content: str) -> Message:
        return cls(Role.USER, content)

    @classmethod
    def assistant(cls, content: str = "", tool_calls=()) -> Message:
        return cls(Role.ASSISTANT, content, tuple(tool_calls))

    @classmethod
    def tool(cls, call_id: str, content: str) -> Message:
        return cls(Role.TOOL, content, tool_call_id=call_id)


@dataclass
class ChatContext:
    """Ordered chat history; the first ``pinned_prefix_len`` entries survive trimming."""

    entries: list[Message] = field(default_factory=list)
    pinned_prefix_len: int = 0

    def __post_init__(self):
        if self.pinned_prefix_len < 0:
            raise ValueError("pinned_prefix_len must be non-negative")

    def append(self, message: Message) -> None:
        self.entries.append(message)

    def copy(self) -> ChatContext:
        return ChatContext(list(self.entries), self.pinned_prefix_len)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, index):
        return self.entries[index]
