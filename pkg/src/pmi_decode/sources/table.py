"""Deterministic table-backed model source.

An exact, enumerable stand-in for real models: an n-gram-style lookup from
(context suffix, optional image id) to a stored distribution, with a default
row for everything unlisted. Longest-matching suffix wins; at equal suffix
length an entry for the queried image beats an image-agnostic one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..core import (
    ContextTokens,
    ImageContext,
    TokenDistribution,
    Vocabulary,
    validate_distribution,
)
from ..errors import ConfigError, UsageError
from .base import ModelSource

TableKey = tuple[ContextTokens, str | None]


@dataclass
class TableModel(ModelSource):
    vocabulary: Vocabulary
    order: int
    default: TokenDistribution
    entries: dict[TableKey, TokenDistribution] = field(default_factory=dict)
    label: str = "table"
    # None: infer from entries. True lets a table whose rows happen to be
    # image-agnostic still serve the image-conditioned role.
    images_ok: bool | None = None

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError(f"order must be >= 1, got {self.order}")
        self._validate_row((), None, self.default, where="default")
        for (ctx, image_id), dist in self.entries.items():
            self._validate_row(ctx, image_id, dist, where=f"entry {ctx!r}/{image_id!r}")

    def _validate_row(self, ctx, image_id, dist, where):
        if len(ctx) >= self.order:
            raise ConfigError(
                f"{where}: context suffix of length {len(ctx)} not allowed at order "
                f"{self.order}"
            )
        if any(not 0 <= t < self.vocabulary.size for t in ctx):
            raise ConfigError(f"{where}: token id outside vocabulary")
        report = validate_distribution(dist, expected_size=self.vocabulary.size)
        if report is not None:
            raise ConfigError(f"{where}: {report}")

    @property
    def name(self) -> str:
        return self.label

    @property
    def vocab_size(self) -> int:
        return self.vocabulary.size

    @property
    def supports_images(self) -> bool:
        if self.images_ok is not None:
            return self.images_ok
        return any(image_id is not None for _, image_id in self.entries)

    def next_distribution(
        self, ctx: ContextTokens, image: ImageContext | None = None
    ) -> TokenDistribution:
        self._check_image_arg(image)
        if any(not 0 <= t < self.vocabulary.size for t in ctx):
            raise UsageError(f"context {ctx!r} contains ids outside the vocabulary")
        image_id = None if image is None else image.id
        longest = min(len(ctx), self.order - 1)
        for length in range(longest, -1, -1):
            suffix = tuple(ctx[len(ctx) - length :])
            if image_id is not None:
                hit = self.entries.get((suffix, image_id))
                if hit is not None:
                    return self._checked(hit)
            hit = self.entries.get((suffix, None))
            if hit is not None:
                return self._checked(hit)
        return self._checked(self.default)

    def tokenize(self, text: str) -> ContextTokens:
        """Greedy longest-match over the vocabulary's token strings.

        Good enough for fixture vocabularies; real tokenization belongs to
        the serving side of a remote source.
        """
        by_token = {t: i for i, t in enumerate(self.vocabulary.tokens)}
        lengths = sorted({len(t) for t in by_token if t}, reverse=True)
        out: list[int] = []
        pos = 0
        while pos < len(text):
            for n in lengths:
                tok = text[pos : pos + n]
                if tok in by_token:
                    out.append(by_token[tok])
                    pos += n
                    break
            else:
                raise UsageError(
                    f"cannot tokenize {text[pos:pos + 10]!r} with table vocabulary"
                )
        return tuple(out)

    def to_json(self) -> dict:
        out = {
            "vocab": self.vocabulary.to_json(),
            "order": self.order,
            "default": self.default.to_list(),
            "entries": [
                {
                    "ctx": list(ctx),
                    "image": image_id,
                    "probs": dist.to_list(),
                }
                for (ctx, image_id), dist in sorted(
                    self.entries.items(), key=lambda kv: (kv[0][0], kv[0][1] or "")
                )
            ],
        }
        if self.images_ok is not None:
            out["supports_images"] = self.images_ok
        return out


def load_table_model(path: str | Path, label: str | None = None) -> TableModel:
    """Load and fully validate a table-model file; violations are rejected."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON at line {err.lineno}: {err.msg}") from err
    for field_name in ("vocab", "order", "default"):
        if field_name not in raw:
            raise ConfigError(f"{path}: missing required field {field_name!r}")
    vocab = Vocabulary.from_json(raw["vocab"])
    entries: dict[TableKey, TokenDistribution] = {}
    for i, row in enumerate(raw.get("entries", [])):
        try:
            key = (tuple(int(t) for t in row["ctx"]), row.get("image"))
            dist = TokenDistribution(row["probs"])
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"{path}: entries[{i}] malformed: {err}") from err
        if key in entries:
            raise ConfigError(
                f"{path}: entries[{i}] duplicates context key {key[0]!r}/{key[1]!r}"
            )
        entries[key] = dist
    images_ok = raw.get("supports_images")
    try:
        return TableModel(
            vocabulary=vocab,
            order=int(raw["order"]),
            default=TokenDistribution(raw["default"]),
            entries=entries,
            label=label or path.stem,
            images_ok=None if images_ok is None else bool(images_ok),
        )
    except ConfigError as err:
        raise ConfigError(f"{path}: {err}") from err


def save_table_model(model: TableModel, path: str | Path):
    Path(path).write_text(
        json.dumps(model.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
