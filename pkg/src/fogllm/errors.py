"""Exception hierarchy shared by every layer."""

from __future__ import annotations


class FogLLMError(Exception):
    """Base class for all errors raised by this package."""


# runtime

class RangeError(FogLLMError, ValueError):
    pass


class NoPlatformAvailable(FogLLMError):
    pass


class ConcurrentGeneration(FogLLMError):
    pass


class BackendError(FogLLMError):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class BackendUnavailable(BackendError):
    """Upstream inference service could not be reached."""


class AuthError(BackendError):
    """The remote service rejected our credentials (HTTP 401/403)."""

    def __init__(self, detail: str, status: int = 401):
        super().__init__(detail)
        self.status = status


class BudgetTooSmall(FogLLMError):
    pass


class SessionStateError(FogLLMError):
    pass


# wire

class ValidationError(FogLLMError, ValueError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class ParseError(FogLLMError, ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at byte {position})")
        self.position = position


class StreamProtocolError(FogLLMError):
    pass


class TruncatedStream(StreamProtocolError):
    pass


# tool calling

class DuplicateTool(FogLLMError):
    pass


class ToolLoopExceeded(FogLLMError):
    pass


class ArgumentError(FogLLMError, ValueError):
    """Tool arguments did not match the declared schema."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}" if path else reason)
        self.path = path
        self.reason = reason


# fog node

class AdvertiseFailed(FogLLMError):
    pass


class Unauthorized(FogLLMError):
    status = 401


class Forbidden(FogLLMError):
    status = 403


class ConfigError(FogLLMError, ValueError):
    pass


# discovery / dispatch

class Unreachable(FogLLMError):
    pass


class NoNodesDiscovered(NoPlatformAvailable):
    pass


class NoQualifiedPlatform(NoPlatformAvailable):
    pass


class UnknownTaskClass(FogLLMError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class PipelineError(FogLLMError):
    def __init__(self, stage_index: int, cause: BaseException):
        super().__init__(f"stage {stage_index} failed: {cause}")
        self.stage_index = stage_index
        self.cause = cause


class TopologyError(FogLLMError, ValueError):
    def __init__(self, node: str, reason: str):
        super().__init__(f"node {node!r}: {reason}")
        self.node = node


class BenchFailed(FogLLMError):
    def __init__(self, run: int, cause: BaseException):
        super().__init__(f"bench run {run} failed: {cause}")
        self.run = run
        self.cause = cause


# local layer

class QueueFull(FogLLMError):
    pass


class ModelMissing(FogLLMError):
    pass


class ModelFileError(FogLLMError):
    pass


class BadMagic(ModelFileError):
    pass


class UnsupportedVersion(ModelFileError):
    pass


class ModelIOError(ModelFileError, OSError):
    pass


class ChecksumMismatch(FogLLMError):
    pass


class NetworkError(FogLLMError):
    pass
