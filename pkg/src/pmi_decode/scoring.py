"""Per-step token scoring.

Turns the three per-step distributions (text-only, image-conditional, and
image-marginal) into selection scores: temperature smoothing of the text-only
model, log importance weights from the visual model's conditional/marginal
ratio, and a fluency mask that bars tokens the text-only model finds too
unlikely. Baseline scorers (plain product ensemble, single model) share the
same output shape so decoders can treat them interchangeably.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DecodeConfig, TokenDistribution
from .errors import ConfigError, DimensionError

MASKED = -np.inf


@dataclass(frozen=True)
class StepScores:
    """Per-token log scores with the fluency mask applied.

    ``log_scores[i]`` is finite for every i in ``candidate_set`` and -inf
    elsewhere; ``components`` optionally carries the per-token breakdown the
    CLI's --explain output serializes.
    """

    log_scores: np.ndarray
    candidate_set: frozenset[int]
    components: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        arr = np.asarray(self.log_scores, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "log_scores", arr)
        object.__setattr__(self, "candidate_set", frozenset(self.candidate_set))

    @property
    def argmax(self) -> int:
        """Best-scoring token index; ties break to the lowest index."""
        return int(np.argmax(self.log_scores))

    def component_row(self, token: int) -> dict[str, float]:
        if not self.components:
            return {}
        return {k: float(v[token]) for k, v in self.components.items()}


def _floored_log(probs: np.ndarray, floor: float) -> np.ndarray:
    return np.log(np.maximum(probs, floor))


def _log_smooth(probs: np.ndarray, tau: float, floor: float) -> np.ndarray:
    """Log of p^(1/tau) renormalized to sum 1, computed stably in log space."""
    scaled = _floored_log(probs, floor) / tau
    shifted = scaled - scaled.max()
    return shifted - np.log(np.exp(shifted).sum())


def smooth(d: TokenDistribution, tau: float, floor: float = 1e-12) -> TokenDistribution:
    """Temperature-smooth a distribution: p^(1/tau), renormalized to sum 1.

    tau > 1 flattens, tau < 1 sharpens, tau = 1 leaves the distribution
    unchanged up to the probability floor.
    """
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    return TokenDistribution(np.exp(_log_smooth(d.probs, tau, floor)))


def pmi_weights(
    cond: TokenDistribution, marg: TokenDistribution, floor: float = 1e-12
) -> np.ndarray:
    """Log importance weights: log cond(x) - log marg(x), entry-wise.

    Both sides are clamped to ``floor`` before the log so the ratio stays
    finite even where the marginal vanishes.
    """
    if len(cond) != len(marg):
        raise DimensionError(
            f"conditional has {len(cond)} entries, marginal has {len(marg)}"
        )
    return _floored_log(cond.probs, floor) - _floored_log(marg.probs, floor)


def fluency_candidates(p_text: TokenDistribution, alpha: float) -> frozenset[int]:
    """Indices whose raw text-only probability is at least ``alpha``.

    The comparison is inclusive and always excludes exact zeros (so alpha = 0
    admits every token with positive probability). An empty result falls back
    to the text-only argmax so selection always has a candidate.
    """
    if not 0 <= alpha < 1:
        raise ConfigError(f"fluency threshold must lie in [0, 1), got {alpha}")
    probs = p_text.probs
    keep = np.nonzero((probs >= alpha) & (probs > 0))[0]
    if keep.size == 0:
        return frozenset({int(np.argmax(probs))})
    return frozenset(int(i) for i in keep)


def _masked(log_scores: np.ndarray, candidates: frozenset[int]) -> np.ndarray:
    out = np.full(log_scores.shape, MASKED)
    idx = np.fromiter(candidates, dtype=np.intp)
    out[idx] = log_scores[idx]
    return out


def vlis_step_scores(
    p_text: TokenDistribution,
    p_vl_cond: TokenDistribution,
    p_vl_marg: TokenDistribution,
    cfg: DecodeConfig,
    with_components: bool = False,
) -> StepScores:
    """Importance-sampled step scores.

    On the candidate set, log f = log smooth(p_text, tau) + (log cond - log
    marg); everything the fluency mask bars is -inf. The mask tests the raw
    (unsmoothed) text-only probabilities.
    """
    n = len(p_text)
    if len(p_vl_cond) != n or len(p_vl_marg) != n:
        raise DimensionError(
            f"distribution lengths differ: text={n} cond={len(p_vl_cond)} "
            f"marg={len(p_vl_marg)}"
        )
    log_text = _log_smooth(p_text.probs, cfg.language_temperature, cfg.prob_floor)
    pmi = pmi_weights(p_vl_cond, p_vl_marg, cfg.prob_floor)
    candidates = fluency_candidates(p_text, cfg.fluency_threshold)
    components = None
    if with_components:
        components = {
            "p_text": p_text.probs,
            "log_text_smoothed": log_text,
            "log_cond": _floored_log(p_vl_cond.probs, cfg.prob_floor),
            "log_marg": _floored_log(p_vl_marg.probs, cfg.prob_floor),
            "pmi": pmi,
        }
    return StepScores(
        log_scores=_masked(log_text + pmi, candidates),
        candidate_set=candidates,
        components=components,
    )


def naive_ensemble_step_scores(
    p_text: TokenDistribution,
    p_vl_cond: TokenDistribution,
    cfg: DecodeConfig,
    with_components: bool = False,
) -> StepScores:
    """Plain product-of-likelihoods baseline: log p_text + log cond.

    No marginal suppression and no temperature; the same fluency mask is
    applied as for the main scorer so the two stay comparable.
    """
    if len(p_vl_cond) != len(p_text):
        raise DimensionError(
            f"distribution lengths differ: text={len(p_text)} cond={len(p_vl_cond)}"
        )
    log_text = _floored_log(p_text.probs, cfg.prob_floor)
    log_cond = _floored_log(p_vl_cond.probs, cfg.prob_floor)
    candidates = fluency_candidates(p_text, cfg.fluency_threshold)
    components = None
    if with_components:
        components = {"p_text": p_text.probs, "log_text": log_text, "log_cond": log_cond}
    return StepScores(
        log_scores=_masked(log_text + log_cond, candidates),
        candidate_set=candidates,
        components=components,
    )


def single_model_step_scores(
    d: TokenDistribution, cfg: DecodeConfig, with_components: bool = False
) -> StepScores:
    """Log-likelihood of one model, fluency-masked against itself."""
    log_d = _floored_log(d.probs, cfg.prob_floor)
    candidates = fluency_candidates(d, cfg.fluency_threshold)
    components = {"p_text": d.probs, "log_text": log_d} if with_components else None
    return StepScores(
        log_scores=_masked(log_d, candidates),
        candidate_set=candidates,
        components=components,
    )
