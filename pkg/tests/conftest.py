"""Shared fixtures: tiny vocabularies and table-model builders."""

from __future__ import annotations

import numpy as np
import pytest

from pmi_decode import TableModel, TokenDistribution, Vocabulary


@pytest.fixture
def vocab3():
    return Vocabulary(tokens=("A", "B", "<eos>"), eos_id=2)


@pytest.fixture
def vocab2():
    return Vocabulary(tokens=("A", "<eos>"), eos_id=1)


def random_distribution(rng: np.random.Generator, size: int) -> TokenDistribution:
    """A strictly positive random distribution (Dirichlet-ish via gamma)."""
    raw = rng.gamma(shape=1.0, scale=1.0, size=size) + 1e-4
    return TokenDistribution(raw / raw.sum())


def all_suffixes(vocab_size: int, max_len: int) -> list[tuple[int, ...]]:
    """Every context suffix of length 0..max_len over a dense vocabulary."""
    out: list[tuple[int, ...]] = [()]
    frontier: list[tuple[int, ...]] = [()]
    for _ in range(max_len):
        frontier = [s + (t,) for s in frontier for t in range(vocab_size)]
        out.extend(frontier)
    return out


def random_table_model(
    rng: np.random.Generator,
    vocabulary: Vocabulary,
    order: int = 2,
    image_ids: tuple[str | None, ...] = (None,),
    label: str = "table",
    images_ok: bool | None = None,
) -> TableModel:
    """Table with a random row for every (suffix, image id) combination."""
    entries = {}
    for suffix in all_suffixes(vocabulary.size, order - 1):
        for image_id in image_ids:
            entries[(suffix, image_id)] = random_distribution(rng, vocabulary.size)
    return TableModel(
        vocabulary=vocabulary,
        order=order,
        default=random_distribution(rng, vocabulary.size),
        entries=entries,
        label=label,
        images_ok=images_ok,
    )
