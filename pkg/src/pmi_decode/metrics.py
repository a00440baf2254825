"""Desk-scale text-quality metrics: n-gram repetition and diversity.

rep_n is the fraction of repeated n-grams, 1 - |unique n-grams| / |total
n-grams|, over token ids (tokenizer-independent). Diversity is the product
of (1 - rep_n) for n = 2..4. Sequences shorter than n have no n-grams and
define rep_n = 0, which makes the empty sequence's diversity a vacuous 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import ContextTokens
from .errors import ConfigError


@dataclass(frozen=True)
class MetricsReport:
    rep_2: float
    rep_3: float
    rep_4: float
    diversity: float
    token_count: int

    def to_json(self) -> dict:
        return {
            "rep_2": self.rep_2,
            "rep_3": self.rep_3,
            "rep_4": self.rep_4,
            "diversity": self.diversity,
            "token_count": self.token_count,
        }


def rep_n(tokens: ContextTokens, n: int) -> float:
    """Fraction of n-grams that are repeats of an earlier one."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    tokens = tuple(tokens)
    total = len(tokens) - n + 1
    if total <= 0:
        return 0.0
    grams = {tokens[i : i + n] for i in range(total)}
    return 1.0 - len(grams) / total


def diversity(tokens: ContextTokens) -> float:
    """Product of (1 - rep_n) over n = 2..4."""
    out = 1.0
    for n in (2, 3, 4):
        out *= 1.0 - rep_n(tokens, n)
    return out


def metrics_report(tokens: ContextTokens) -> MetricsReport:
    tokens = tuple(tokens)
    reps = {n: rep_n(tokens, n) for n in (2, 3, 4)}
    div = (1.0 - reps[2]) * (1.0 - reps[3]) * (1.0 - reps[4])
    return MetricsReport(
        rep_2=reps[2],
        rep_3=reps[3],
        rep_4=reps[4],
        diversity=div,
        token_count=len(tokens),
    )
