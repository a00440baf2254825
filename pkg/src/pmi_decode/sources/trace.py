"""Recorded, replayable logs of source queries.

A trace file is newline-delimited JSON: a header line carrying the
vocabulary hash (plus size and eos id), then one record per line. Replay is
keyed on the exact full context and image id, so a trace is faithful to the
run that produced it; unlisted queries are a hard miss, never a guess.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import ContextTokens, ImageContext, TokenDistribution, Vocabulary
from ..errors import ConfigError, SessionError, TraceMissError
from .base import ModelSource, _key

log = logging.getLogger(__name__)

HEADER_KIND = "trace-header"


@dataclass(frozen=True)
class TraceRecord:
    context: ContextTokens
    image_id: str | None
    distribution: TokenDistribution
    embedding: tuple[float, ...] | None = None

    def to_json(self) -> dict:
        return {
            "ctx": [int(t) for t in self.context],
            "image": self.image_id,
            "probs": self.distribution.to_list(),
            "embedding": None if self.embedding is None else list(self.embedding),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TraceRecord":
        emb = obj.get("embedding")
        return cls(
            context=tuple(int(t) for t in obj["ctx"]),
            image_id=obj.get("image"),
            distribution=TokenDistribution(obj["probs"]),
            embedding=None if emb is None else tuple(float(x) for x in emb),
        )


@dataclass(frozen=True)
class TraceHeader:
    vocab_hash: str
    vocab_size: int
    eos_id: int

    def to_json(self) -> dict:
        return {
            "kind": HEADER_KIND,
            "vocab_hash": self.vocab_hash,
            "vocab_size": self.vocab_size,
            "eos_id": self.eos_id,
        }


class TraceSource(ModelSource):
    """Replays recorded queries bit-exactly; anything else is a miss."""

    def __init__(self, header: TraceHeader, records: list[TraceRecord], label: str = "trace"):
        self.header = header
        self.label = label
        self._records: dict = {}
        for rec in records:
            key = (rec.context, rec.image_id)
            if key in self._records:
                raise ConfigError(
                    f"duplicate trace key context={rec.context!r} image={rec.image_id!r}"
                )
            if len(rec.distribution) != header.vocab_size:
                raise ConfigError(
                    f"trace record for context={rec.context!r} has "
                    f"{len(rec.distribution)} probs, header says {header.vocab_size}"
                )
            self._records[key] = rec

    @property
    def name(self) -> str:
        return self.label

    @property
    def vocab_size(self) -> int:
        return self.header.vocab_size

    @property
    def supports_images(self) -> bool:
        return any(image_id is not None for _, image_id in self._records)

    @property
    def supports_embeddings(self) -> bool:
        return any(rec.embedding is not None for rec in self._records.values())

    def _get(self, ctx: ContextTokens, image: ImageContext | None) -> TraceRecord:
        self._check_image_arg(image)
        key = _key(ctx, image)
        rec = self._records.get(key)
        if rec is None:
            raise TraceMissError(ctx, key[1])
        return rec

    def next_distribution(self, ctx, image=None):
        return self._checked(self._get(ctx, image).distribution)

    def next_with_embedding(self, ctx, image=None):
        rec = self._get(ctx, image)
        if rec.embedding is None:
            raise TraceMissError(ctx, rec.image_id)
        return self._checked(rec.distribution), np.asarray(rec.embedding, dtype=np.float64)


class RecordingSource(ModelSource):
    """Pass-through wrapper capturing every query for later replay.

    Duplicate (context, image) keys collapse to one record; a record carrying
    an embedding wins over one without.
    """

    def __init__(self, inner: ModelSource):
        self.inner = inner
        self.serial_only = inner.serial_only
        self._records: dict = {}

    @property
    def name(self) -> str:
        return self.inner.name

    @property
    def vocab_size(self) -> int:
        return self.inner.vocab_size

    @property
    def supports_images(self) -> bool:
        return self.inner.supports_images

    @property
    def supports_embeddings(self) -> bool:
        return self.inner.supports_embeddings

    def tokenize(self, text):
        return self.inner.tokenize(text)

    def _remember(self, ctx, image, dist, embedding):
        key = _key(ctx, image)
        rec = TraceRecord(
            context=tuple(int(t) for t in ctx),
            image_id=key[1],
            distribution=dist,
            embedding=None if embedding is None else tuple(float(x) for x in embedding),
        )
        prior = self._records.get(key)
        if prior is not None:
            if prior.embedding is not None and rec.embedding is None:
                log.warning("duplicate trace key %r collapsed (kept richer record)", key)
                return
            log.warning("duplicate trace key %r collapsed", key)
        self._records[key] = rec

    def next_distribution(self, ctx, image=None):
        dist = self.inner.next_distribution(ctx, image)
        self._remember(ctx, image, dist, None)
        return dist

    def next_with_embedding(self, ctx, image=None):
        dist, emb = self.inner.next_with_embedding(ctx, image)
        self._remember(ctx, image, dist, emb)
        return dist, emb

    def records(self) -> list[TraceRecord]:
        return list(self._records.values())


def record_trace(
    source: ModelSource, calls: list[tuple[ContextTokens, ImageContext | None]]
) -> list[TraceRecord]:
    """Query ``source`` for every (context, image) pair and keep the answers."""
    recorder = RecordingSource(source)
    for ctx, image in calls:
        recorder.next_distribution(tuple(ctx), image)
    return recorder.records()


def write_trace(path: str | Path, vocabulary: Vocabulary, records: list[TraceRecord]):
    header = TraceHeader(
        vocab_hash=vocabulary.content_hash(),
        vocab_size=vocabulary.size,
        eos_id=vocabulary.eos_id,
    )
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header.to_json(), sort_keys=True, separators=(",", ":")) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def load_trace(
    path: str | Path, vocabulary: Vocabulary | None = None, label: str | None = None
) -> TraceSource:
    """Parse a trace file; when a vocabulary is supplied its hash must match."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty trace file")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: header is not valid JSON: {err.msg}") from err
    if head.get("kind") != HEADER_KIND:
        raise ConfigError(f"{path}: first line is not a trace header")
    header = TraceHeader(
        vocab_hash=head["vocab_hash"],
        vocab_size=int(head["vocab_size"]),
        eos_id=int(head["eos_id"]),
    )
    if vocabulary is not None and vocabulary.content_hash() != header.vocab_hash:
        raise SessionError(
            f"{path}: trace was recorded against a different vocabulary "
            f"(hash {header.vocab_hash[:12]}..., expected "
            f"{vocabulary.content_hash()[:12]}...)"
        )
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(TraceRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"{path}: line {lineno} malformed: {err}") from err
    return TraceSource(header, records, label=label or path.stem)
