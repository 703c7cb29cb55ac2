"""On-device layer: execution gate, model catalog and local runtime backends."""

from .catalog import ModelCatalog, download_model
from .gate import DEFAULT_QUEUE_DEPTH, LocalGate, LocalJob
from .gguf import ModelFile, read_header, validate_model_file
from .models import SUPPORTED_MODELS, SupportedModel, list_supported_models, lookup
from .platform import LocalBackend, LocalPlatform, LocalStream, MockLocalBackend, submit

__all__ = [
    "DEFAULT_QUEUE_DEPTH",
    "LocalBackend",
    "LocalGate",
    "LocalJob",
    "LocalPlatform",
    "LocalStream",
    "MockLocalBackend",
    "ModelCatalog",
    "ModelFile",
    "SUPPORTED_MODELS",
    "SupportedModel",
    "download_model",
    "list_supported_models",
    "lookup",
    "read_header",
    "submit",
    "validate_model_file",
]
