"""Foundational types and distribution arithmetic shared by every module.

Score arithmetic elsewhere in the engine happens in log space; probabilities
are materialized only at module boundaries, and every probability is clamped
to a small positive floor before any logarithm is taken.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DimensionError

# Tolerance for "sums to 1" checks on probability vectors.
SUM_TOLERANCE = 1e-6

#: Token indices of the preceding context, oldest first.
ContextTokens = tuple[int, ...]


def as_context(ids) -> ContextTokens:
    """Coerce any iterable of token ids to the canonical tuple form."""
    return tuple(int(i) for i in ids)


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token strings plus the end-of-sequence index.

    Token indices are dense 0..size-1; strings must be unique.
    """

    tokens: tuple[str, ...]
    eos_id: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("vocabulary tokens must be unique")
        if not 0 <= self.eos_id < len(self.tokens):
            raise ConfigError(
                f"eos_id {self.eos_id} outside vocabulary of size {len(self.tokens)}"
            )

    @property
    def size(self) -> int:
        return len(self.tokens)

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "eos_id": self.eos_id}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(tokens=tuple(obj["tokens"]), eos_id=int(obj["eos_id"]))

    def content_hash(self) -> str:
        """Stable identity used in trace headers and remote session checks.

        Defined as the SHA-256 hex digest of the canonical JSON serialization
        ``{"eos_id": ..., "tokens": [...]}`` (sorted keys, compact separators,
        UTF-8, non-ASCII unescaped). Remote peers must derive their hash the
        same way.
        """
        payload = json.dumps(
            self.to_json(), sort_keys=True, separators=(",", ":"), ensure_ascii=False
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def render(self, ids) -> str:
        """Concatenate token strings, skipping the end-of-sequence token."""
        return "".join(self.tokens[i] for i in ids if i != self.eos_id)


class TokenDistribution:
    """Normalized next-token probability vector, the engine's common currency.

    The wrapped array is read-only. Construction does not validate, so that
    ``validate_distribution`` can diagnose deliberately broken inputs.
    """

    __slots__ = ("probs",)

    def __init__(self, probs):
        arr = np.asarray(probs, dtype=np.float64)
        if arr.ndim != 1:
            raise DimensionError(f"expected a 1-D vector, got shape {arr.shape}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __getitem__(self, idx):
        return self.probs[idx]

    def __repr__(self) -> str:
        return f"TokenDistribution({self.probs.tolist()!r})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenDistribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def to_list(self) -> list[float]:
        return self.probs.tolist()


def normalize(logits, size: int | None = None) -> TokenDistribution:
    """Softmax raw model outputs into a TokenDistribution.

    Max-shifted for overflow safety; when ``size`` is given the input length
    is checked against it. Also correct for renormalizing log-probabilities.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-D logit vector, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise DimensionError(f"expected {size} logits, got {arr.shape[0]}")
    if arr.shape[0] == 0:
        raise DimensionError("cannot normalize an empty logit vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logits contain a non-finite entry")
    shifted = arr - arr.max()
    exp = np.exp(shifted)
    return TokenDistribution(exp / exp.sum())


def validate_distribution(
    d: TokenDistribution, expected_size: int | None = None
) -> str | None:
    """Report the first violated distribution invariant, or None when valid.

    Diagnostic only: never raises. Checks length (when ``expected_size`` is
    given), entry domain, and the sum-to-one contract at ``SUM_TOLERANCE``.
    """
    probs = d.probs
    if expected_size is not None and probs.shape[0] != expected_size:
        return f"violation: length {probs.shape[0]} != vocabulary size {expected_size}"
    if probs.shape[0] == 0:
        return "violation: empty distribution"
    if not np.all(np.isfinite(probs)):
        return "violation: non-finite entry"
    if np.any(probs < 0):
        idx = int(np.argmax(probs < 0))
        return f"violation: negative entry {probs[idx]!r} at index {idx}"
    total = float(probs.sum())
    if abs(total - 1.0) > SUM_TOLERANCE:
        return f"violation: sum = {total!r}"
    return None


# Reserved proxy images carrying close to no visual information; the default
# pair over which the visual model's text-only marginal is estimated.
@dataclass(frozen=True)
class ImageContext:
    """Opaque handle to an image a visual source can condition on."""

    id: str
    kind: str = "file"

    _KINDS = ("file", "builtin-black", "builtin-white", "synthetic")

    def __post_init__(self):
        if not self.id:
            raise ConfigError("image id must be non-empty")
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown image kind {self.kind!r}")
        if self.kind == "builtin-black" and self.id != "black":
            raise ConfigError('builtin-black must carry the reserved id "black"')
        if self.kind == "builtin-white" and self.id != "white":
            raise ConfigError('builtin-white must carry the reserved id "white"')

    def to_json(self) -> dict:
        return {"id": self.id, "kind": self.kind}

    @classmethod
    def from_json(cls, obj) -> "ImageContext":
        if isinstance(obj, str):
            return image_from_id(obj)
        return cls(id=obj["id"], kind=obj.get("kind", "file"))


BLACK_IMAGE = ImageContext(id="black", kind="builtin-black")
WHITE_IMAGE = ImageContext(id="white", kind="builtin-white")


def image_from_id(image_id: str) -> ImageContext:
    """Build an ImageContext from a bare id, honoring the reserved builtins."""
    if image_id == "black":
        return BLACK_IMAGE
    if image_id == "white":
        return WHITE_IMAGE
    return ImageContext(id=image_id, kind="file")


STRATEGIES = ("greedy", "beam", "contrastive")
SCORERS = ("vlis", "naive_ensemble", "vlm_only", "text_only")


@dataclass(frozen=True)
class DecodeConfig:
    """Every knob a decode run depends on.

    ``language_temperature`` smooths (>1) or sharpens (<1) the text-only
    distribution before reweighting; ``fluency_threshold`` is the minimum raw
    text-only probability a token needs to stay selectable.
    """

    language_temperature: float = 1.0
    fluency_threshold: float = 0.001
    strategy: str = "greedy"
    beam_width: int = 5
    length_penalty: float = 0.0
    max_tokens: int = 32
    contrastive_penalty: float = 0.6
    contrastive_topk: int = 5
    marginal_images: tuple[ImageContext, ...] = (BLACK_IMAGE, WHITE_IMAGE)
    scorer: str = "vlis"
    prob_floor: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "marginal_images", tuple(self.marginal_images))
        self.validate()

    def validate(self):
        if not (self.language_temperature > 0 and math.isfinite(self.language_temperature)):
            raise ConfigError(
                f"language_temperature must be positive, got {self.language_temperature}"
            )
        if not 0 <= self.fluency_threshold < 1:
            raise ConfigError(
                f"fluency_threshold must lie in [0, 1), got {self.fluency_threshold}"
            )
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.scorer not in SCORERS:
            raise ConfigError(f"unknown scorer {self.scorer!r}")
        if self.beam_width < 1:
            raise ConfigError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.max_tokens < 0:
            raise ConfigError(f"max_tokens must be >= 0, got {self.max_tokens}")
        if not 0 <= self.contrastive_penalty <= 1:
            raise ConfigError(
                f"contrastive_penalty must lie in [0, 1], got {self.contrastive_penalty}"
            )
        if self.contrastive_topk < 1:
            raise ConfigError(
                f"contrastive_topk must be >= 1, got {self.contrastive_topk}"
            )
        if self.prob_floor <= 0:
            raise ConfigError(f"prob_floor must be positive, got {self.prob_floor}")
        if self.scorer == "vlis" and not self.marginal_images:
            raise ConfigError("marginal_images must be non-empty for the vlis scorer")

    def with_(self, **changes) -> "DecodeConfig":
        return replace(self, **changes)

    def to_json(self) -> dict:
        return {
            "language_temperature": self.language_temperature,
            "fluency_threshold": self.fluency_threshold,
            "strategy": self.strategy,
            "beam_width": self.beam_width,
            "length_penalty": self.length_penalty,
            "max_tokens": self.max_tokens,
            "contrastive_penalty": self.contrastive_penalty,
            "contrastive_topk": self.contrastive_topk,
            "marginal_images": [img.to_json() for img in self.marginal_images],
            "scorer": self.scorer,
            "prob_floor": self.prob_floor,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DecodeConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown decode config fields: {sorted(unknown)}")
        kwargs = dict(obj)
        if "marginal_images" in kwargs:
            kwargs["marginal_images"] = tuple(
                ImageContext.from_json(i) for i in kwargs["marginal_images"]
            )
        return cls(**kwargs)


@dataclass
class Hypothesis:
    """Beam-search state: a partial output plus its accumulated log score."""

    tokens: ContextTokens
    cum_log_score: float = 0.0
    finished: bool = False
