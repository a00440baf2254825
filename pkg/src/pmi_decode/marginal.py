"""Estimate a visual model's text-only marginal from a small proxy image set.

The marginal p(token | text) is approximated by the unweighted arithmetic
mean, in probability space, of the conditionals over a tiny set of images
carrying close to no visual information (black and white solids by default).
Alternative sets — single images, or random samples from a pool — exist for
the harness's ablation sweeps.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BLACK_IMAGE, WHITE_IMAGE, ContextTokens, ImageContext, TokenDistribution
from .errors import ConfigError, SourceError, UsageError
from .sources import ModelSource

SCHEMES = ("predefined", "random_sample")


@dataclass(frozen=True)
class MarginalSpec:
    """Which images stand in for "no visual information"."""

    images: tuple[ImageContext, ...] = (BLACK_IMAGE, WHITE_IMAGE)
    scheme: str = "predefined"
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        if not self.images:
            raise ConfigError("marginal image set must be non-empty")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown marginal scheme {self.scheme!r}")
        if self.scheme == "random_sample" and self.seed is None:
            raise ConfigError("random_sample marginal sets require a seed")

    def cache_key(self):
        return tuple(img.id for img in self.images)


def sample_image_pool(pool_dir: str | Path, count: int, seed: int) -> MarginalSpec:
    """Draw ``count`` distinct images from a directory, deterministically."""
    pool = sorted(p for p in Path(pool_dir).iterdir() if p.is_file())
    if count < 1:
        raise ConfigError(f"marginal image count must be >= 1, got {count}")
    if len(pool) < count:
        raise ConfigError(
            f"pool {pool_dir} holds {len(pool)} images, cannot sample {count}"
        )
    chosen = random.Random(seed).sample(pool, count)
    images = tuple(ImageContext(id=str(p), kind="file") for p in chosen)
    return MarginalSpec(images=images, scheme="random_sample", seed=seed)


def estimate_marginal(
    vlm_source: ModelSource, ctx: ContextTokens, spec: MarginalSpec
) -> TokenDistribution:
    """Mean of the per-image conditionals, taken in probability space.

    Equal weights 1/k; the estimate inherits validity from its terms (a mean
    of distributions is a distribution) and lies entry-wise inside their
    envelope.
    """
    if not vlm_source.supports_images:
        raise UsageError(
            f"marginal estimation needs an image-conditioned source, got "
            f"{vlm_source.name}"
        )
    total = np.zeros(vlm_source.vocab_size, dtype=np.float64)
    for image in spec.images:
        try:
            conditional = vlm_source.next_distribution(tuple(ctx), image)
        except SourceError as err:
            raise SourceError(f"marginal image {image.id!r}: {err}") from err
        total += conditional.probs
    return TokenDistribution(total / len(spec.images))


class MarginalCache:
    """Per-decode memo of marginal estimates, keyed by (context, image set).

    Beam hypotheses share prefixes; the underlying per-image queries are
    cached too, but this avoids even re-averaging them.
    """

    def __init__(self, vlm_source: ModelSource, spec: MarginalSpec):
        self.vlm_source = vlm_source
        self.spec = spec
        self._memo: dict = {}

    def get(self, ctx: ContextTokens) -> TokenDistribution:
        key = (tuple(ctx), self.spec.cache_key())
        hit = self._memo.get(key)
        if hit is None:
            hit = estimate_marginal(self.vlm_source, ctx, self.spec)
            self._memo[key] = hit
        return hit
