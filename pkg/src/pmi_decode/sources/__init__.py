"""Pluggable providers of next-token distributions.

Table models and traces are exact, enumerable stand-ins for real models;
the remote source speaks the HTTP protocol a serving bridge implements.
"""

from dataclasses import dataclass

from ..errors import ConfigError
from .base import (
    CachingSource,
    CountingSource,
    ModelSource,
    TokenEmbeddingSource,
)
from .table import TableModel, load_table_model, save_table_model
from .trace import (
    RecordingSource,
    TraceHeader,
    TraceRecord,
    TraceSource,
    load_trace,
    record_trace,
    write_trace,
)
from .remote import RemoteSource
from . import protocol

SOURCE_KINDS = ("table", "trace", "remote")


@dataclass(frozen=True)
class ModelSourceDescriptor:
    """How a run config names a source before it is opened."""

    kind: str
    uri: str
    supports_images: bool = False
    supports_embeddings: bool = False

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ConfigError(f"unknown source kind {self.kind!r}")
        if not self.uri:
            raise ConfigError("source uri must be non-empty")
        if self.kind == "remote" and not (
            self.uri.startswith("http://") or self.uri.startswith("https://")
        ):
            raise ConfigError(f"remote source needs an http(s) endpoint, got {self.uri!r}")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "uri": self.uri,
            "supports_images": self.supports_images,
            "supports_embeddings": self.supports_embeddings,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSourceDescriptor":
        return cls(
            kind=obj["kind"],
            uri=obj["uri"],
            supports_images=bool(obj.get("supports_images", False)),
            supports_embeddings=bool(obj.get("supports_embeddings", False)),
        )


__all__ = [
    "CachingSource",
    "CountingSource",
    "ModelSource",
    "ModelSourceDescriptor",
    "RecordingSource",
    "RemoteSource",
    "TableModel",
    "TokenEmbeddingSource",
    "TraceHeader",
    "TraceRecord",
    "TraceSource",
    "load_table_model",
    "load_trace",
    "protocol",
    "record_trace",
    "save_table_model",
    "write_trace",
]
