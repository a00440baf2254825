"""Model-source abstraction and the wrappers every decode relies on.

A source answers "next-token distribution given context (and optional
image)". Table and trace sources are pure functions of their inputs; remote
sources are expected to be deterministic but live over a wire. The caching
wrapper enforces the one-query-per-(context, image) cost contract inside a
single decode; the counting wrapper is how tests audit that contract.
"""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod

import numpy as np

from ..core import ContextTokens, ImageContext, TokenDistribution, validate_distribution
from ..errors import CapabilityError, InvariantViolation, UsageError


class ModelSource(ABC):
    """Anything that can answer next-token distributions.

    Implementations either tolerate concurrent read queries or set
    ``serial_only`` and rely on the engine to serialize access.
    """

    serial_only: bool = False

    @property
    @abstractmethod
    def name(self) -> str: ...

    @property
    @abstractmethod
    def vocab_size(self) -> int: ...

    @property
    @abstractmethod
    def supports_images(self) -> bool: ...

    @property
    def supports_embeddings(self) -> bool:
        return False

    @abstractmethod
    def next_distribution(
        self, ctx: ContextTokens, image: ImageContext | None = None
    ) -> TokenDistribution: ...

    def next_with_embedding(
        self, ctx: ContextTokens, image: ImageContext | None = None
    ) -> tuple[TokenDistribution, np.ndarray | None]:
        """Distribution plus, when supported, the context's final embedding."""
        if self.supports_embeddings:
            raise NotImplementedError(
                f"{self.name} declares embeddings but does not implement them"
            )
        raise CapabilityError(f"source {self.name} does not support embeddings")

    def tokenize(self, text: str) -> ContextTokens:
        raise CapabilityError(f"source {self.name} cannot tokenize text")

    def _check_image_arg(self, image: ImageContext | None):
        if image is not None and not self.supports_images:
            raise UsageError(
                f"source {self.name} is text-only but was queried with image "
                f"{image.id!r}"
            )

    def _checked(self, dist: TokenDistribution) -> TokenDistribution:
        report = validate_distribution(dist, expected_size=self.vocab_size)
        if report is not None:
            raise InvariantViolation(f"source {self.name} produced a bad distribution: {report}")
        return dist


class _Wrapper(ModelSource):
    """Delegating base for the decorator sources below."""

    def __init__(self, inner: ModelSource):
        self.inner = inner
        self.serial_only = inner.serial_only

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

    def next_distribution(self, ctx, image=None):
        return self.inner.next_distribution(ctx, image)

    def next_with_embedding(self, ctx, image=None):
        return self.inner.next_with_embedding(ctx, image)

    def tokenize(self, text):
        return self.inner.tokenize(text)


def _key(ctx: ContextTokens, image: ImageContext | None):
    return (tuple(int(t) for t in ctx), None if image is None else image.id)


class CachingSource(_Wrapper):
    """Memoizes (context, image) queries for the lifetime of one decode call.

    Beam hypotheses share prefixes; without this cache the per-token forward
    pass accounting would be violated by duplicate work. Safe under the same
    concurrency contract as its inner source.
    """

    def __init__(self, inner: ModelSource):
        super().__init__(inner)
        self._lock = threading.Lock()
        self._cache: dict = {}

    def next_distribution(self, ctx, image=None):
        dist, _ = self._lookup(ctx, image, want_embedding=False)
        return dist

    def next_with_embedding(self, ctx, image=None):
        if not self.supports_embeddings:
            return self.inner.next_with_embedding(ctx, image)  # raises CapabilityError
        return self._lookup(ctx, image, want_embedding=True)

    def _lookup(self, ctx, image, want_embedding):
        key = _key(ctx, image)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None and (not want_embedding or hit[1] is not None):
            return hit
        if want_embedding:
            entry = self.inner.next_with_embedding(ctx, image)
        else:
            entry = (self.inner.next_distribution(ctx, image), None)
        with self._lock:
            # Keep an embedding-carrying entry over a plain one.
            prior = self._cache.get(key)
            if prior is None or (entry[1] is not None and prior[1] is None):
                self._cache[key] = entry
            else:
                entry = prior
        return entry


class CountingSource(_Wrapper):
    """Counts how many queries actually reach the wrapped source."""

    def __init__(self, inner: ModelSource):
        super().__init__(inner)
        self._lock = threading.Lock()
        self.count = 0

    def reset(self):
        with self._lock:
            self.count = 0

    def _bump(self):
        with self._lock:
            self.count += 1

    def next_distribution(self, ctx, image=None):
        self._bump()
        return self.inner.next_distribution(ctx, image)

    def next_with_embedding(self, ctx, image=None):
        self._bump()
        return self.inner.next_with_embedding(ctx, image)


class TokenEmbeddingSource(_Wrapper):
    """Adds per-token embeddings to a distribution-only source.

    The embedding of a context is the vector registered for its last token;
    used to build synthetic fixtures for the contrastive decoder and to stand
    in for sources whose wire peers serve embeddings natively.
    """

    def __init__(self, inner: ModelSource, vectors: dict[int, np.ndarray]):
        super().__init__(inner)
        self._vectors = {
            int(k): np.asarray(v, dtype=np.float64) for k, v in vectors.items()
        }

    @property
    def supports_embeddings(self) -> bool:
        return True

    def next_with_embedding(self, ctx, image=None):
        dist = self.inner.next_distribution(ctx, image)
        if not ctx:
            raise UsageError("embedding of an empty context is undefined")
        last = int(ctx[-1])
        if last not in self._vectors:
            raise UsageError(f"no embedding registered for token {last}")
        return dist, self._vectors[last]
