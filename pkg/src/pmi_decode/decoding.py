"""Token-by-token generation strategies over per-step scores.

Greedy selection, beam search with power-law length normalization, and a
contrastive variant that trades score confidence against embedding
similarity to already-generated context. Every strategy consumes the same
StepScores surface, so swapping the scorer never changes the mechanics.

The text-only model and the visual model may be primed with different
prompts (the shipped task templates do exactly that); the generated suffix
is always shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ContextTokens,
    DecodeConfig,
    Hypothesis,
    ImageContext,
    Vocabulary,
    as_context,
)
from .errors import CapabilityError, ConfigError, UsageError
from .marginal import MarginalCache, MarginalSpec
from .scoring import (
    StepScores,
    naive_ensemble_step_scores,
    single_model_step_scores,
    vlis_step_scores,
)
from .sources import CachingSource, ModelSource


@dataclass(frozen=True)
class PromptPair:
    """Per-role prompts; the generated suffix is appended to both."""

    text: ContextTokens
    vlm: ContextTokens

    @classmethod
    def shared(cls, prompt) -> "PromptPair":
        ctx = as_context(prompt)
        return cls(text=ctx, vlm=ctx)


def _as_prompt_pair(prompt) -> PromptPair:
    if isinstance(prompt, PromptPair):
        return PromptPair(text=as_context(prompt.text), vlm=as_context(prompt.vlm))
    return PromptPair.shared(prompt)


@dataclass
class SourceBundle:
    """The sources a decode draws from, plus the vocabulary that binds them."""

    vocabulary: Vocabulary
    text: ModelSource
    vlm: ModelSource | None = None
    embedding_role: str = "text"

    def __post_init__(self):
        if self.text.vocab_size != self.vocabulary.size:
            raise UsageError(
                f"text source {self.text.name} has vocab size {self.text.vocab_size}, "
                f"vocabulary has {self.vocabulary.size}"
            )
        if self.vlm is not None and self.vlm.vocab_size != self.vocabulary.size:
            raise UsageError(
                f"visual source {self.vlm.name} has vocab size {self.vlm.vocab_size}, "
                f"vocabulary has {self.vocabulary.size}"
            )
        if self.embedding_role not in ("text", "vlm"):
            raise ConfigError(f"embedding_role must be 'text' or 'vlm', got {self.embedding_role!r}")

    def cached(self) -> "SourceBundle":
        """Fresh per-decode view with the mandatory response cache applied."""
        return SourceBundle(
            vocabulary=self.vocabulary,
            text=CachingSource(self.text),
            vlm=None if self.vlm is None else CachingSource(self.vlm),
            embedding_role=self.embedding_role,
        )

    @property
    def embedding_source(self) -> ModelSource:
        if self.embedding_role == "vlm":
            if self.vlm is None:
                raise UsageError("embedding_role is 'vlm' but the bundle has no visual source")
            return self.vlm
        return self.text


@dataclass
class DecodeResult:
    """One finished generation: the tokens, their rendering, and the audit trail."""

    tokens: ContextTokens
    text: str
    per_step: list[dict]
    final_score: float
    stop_reason: str
    finalists: list[dict] | None = None

    def to_json(self) -> dict:
        out = {
            "tokens": list(self.tokens),
            "text": self.text,
            "per_step": self.per_step,
            "final_score": self.final_score,
            "stop_reason": self.stop_reason,
        }
        if self.finalists is not None:
            out["finalists"] = self.finalists
        return out


class _StepScorer:
    """Binds a scorer name to a cached source bundle for one decode call."""

    def __init__(self, name: str, bundle: SourceBundle, cfg: DecodeConfig):
        if name not in ("vlis", "naive_ensemble", "vlm_only", "text_only"):
            raise ConfigError(f"unknown scorer {name!r}")
        self.name = name
        self.bundle = bundle
        self.cfg = cfg
        self.needs_vlm = name in ("vlis", "naive_ensemble", "vlm_only")
        if self.needs_vlm and bundle.vlm is None:
            raise UsageError(f"scorer {name!r} needs a visual source in the bundle")
        self._marginal = None
        if name == "vlis":
            if not bundle.vlm.supports_images:
                raise UsageError(
                    f"scorer 'vlis' needs an image-supporting visual source, "
                    f"{bundle.vlm.name} is text-only"
                )
            spec = MarginalSpec(images=cfg.marginal_images)
            self._marginal = MarginalCache(bundle.vlm, spec)

    def score(
        self,
        text_ctx: ContextTokens,
        vlm_ctx: ContextTokens,
        image: ImageContext | None,
        with_components: bool = False,
    ) -> StepScores:
        cfg = self.cfg
        if self.name == "text_only":
            return single_model_step_scores(
                self.bundle.text.next_distribution(text_ctx), cfg, with_components
            )
        if self.name == "vlm_only":
            return single_model_step_scores(
                self.bundle.vlm.next_distribution(vlm_ctx, image), cfg, with_components
            )
        p_text = self.bundle.text.next_distribution(text_ctx)
        p_cond = self.bundle.vlm.next_distribution(vlm_ctx, image)
        if self.name == "naive_ensemble":
            return naive_ensemble_step_scores(p_text, p_cond, cfg, with_components)
        p_marg = self._marginal.get(vlm_ctx)
        return vlis_step_scores(p_text, p_cond, p_marg, cfg, with_components)


def _prepare(scorer, sources: SourceBundle, prompt, cfg: DecodeConfig):
    cfg.validate()
    pair = _as_prompt_pair(prompt)
    bundle = sources.cached()
    engine = _StepScorer(scorer or cfg.scorer, bundle, cfg)
    if engine.name == "vlm_only":
        if not pair.vlm:
            raise UsageError("prompt for the visual role must be non-empty")
    elif not pair.text:
        raise UsageError("prompt for the text role must be non-empty")
    return pair, bundle, engine


def _step_summary(step: int, token: int, vocab: Vocabulary, scores: StepScores, explain: bool) -> dict:
    out = {
        "step": step,
        "token": int(token),
        "token_text": vocab.tokens[token],
        "log_score": float(scores.log_scores[token]),
        "candidates": len(scores.candidate_set),
    }
    if explain:
        out["components"] = scores.component_row(token)
    return out


def greedy_decode(
    scorer,
    sources: SourceBundle,
    prompt,
    image: ImageContext | None,
    cfg: DecodeConfig,
    explain: bool = False,
) -> DecodeResult:
    """Emit the best-scoring token at every step until eos or the length cap.

    Ties break to the lowest token index.
    """
    pair, bundle, engine = _prepare(scorer, sources, prompt, cfg)
    vocab = bundle.vocabulary
    eos = vocab.eos_id
    gen: list[int] = []
    per_step: list[dict] = []
    cum = 0.0
    stop_reason = "max_tokens"
    for step in range(cfg.max_tokens):
        suffix = tuple(gen)
        scores = engine.score(pair.text + suffix, pair.vlm + suffix, image, explain)
        token = scores.argmax
        cum += float(scores.log_scores[token])
        per_step.append(_step_summary(step, token, vocab, scores, explain))
        gen.append(token)
        if token == eos:
            stop_reason = "eos"
            break
    return DecodeResult(
        tokens=tuple(gen),
        text=vocab.render(gen),
        per_step=per_step,
        final_score=cum,
        stop_reason=stop_reason,
    )


def _ranking_score(cum: float, length: int, length_penalty: float) -> float:
    """Beam ranking: cumulative log score divided by length^penalty."""
    if length <= 0:
        return cum
    return cum / float(length) ** length_penalty


@dataclass
class _BeamHyp(Hypothesis):
    """Beam-search hypothesis plus its per-step audit trail.

    ``tokens`` holds only the generated suffix; prompts stay outside."""

    per_step: list[dict] = field(default_factory=list)


def beam_decode(
    scorer,
    sources: SourceBundle,
    prompt,
    image: ImageContext | None,
    cfg: DecodeConfig,
    explain: bool = False,
) -> DecodeResult:
    """Beam search accumulating per-step log scores.

    Each step keeps the globally best ``beam_width`` extensions; hypotheses
    that emit eos (or hit the length cap) are frozen into the finished pool
    and never expanded again. Finished hypotheses are ranked by
    cum_log_score / length^length_penalty. Width 1 reproduces greedy exactly.
    """
    pair, bundle, engine = _prepare(scorer, sources, prompt, cfg)
    vocab = bundle.vocabulary
    eos = vocab.eos_id
    if cfg.max_tokens == 0:
        return DecodeResult(
            tokens=(), text="", per_step=[], final_score=0.0, stop_reason="max_tokens"
        )
    beam: list[_BeamHyp] = [_BeamHyp(tokens=(), cum_log_score=0.0)]
    pool: list[tuple[_BeamHyp, str]] = []
    for step in range(cfg.max_tokens):
        proposals = []
        for h_idx, hyp in enumerate(beam):
            scores = engine.score(
                pair.text + hyp.tokens, pair.vlm + hyp.tokens, image, explain
            )
            for token in sorted(scores.candidate_set):
                total = hyp.cum_log_score + float(scores.log_scores[token])
                proposals.append((-total, h_idx, token, scores))
        proposals.sort(key=lambda p: p[:3])
        next_beam: list[_BeamHyp] = []
        for neg_total, h_idx, token, scores in proposals[: cfg.beam_width]:
            parent = beam[h_idx]
            child = _BeamHyp(
                tokens=parent.tokens + (token,),
                cum_log_score=-neg_total,
                per_step=parent.per_step
                + [_step_summary(step, token, vocab, scores, explain)],
            )
            if token == eos:
                child.finished = True
                pool.append((child, "eos"))
            elif len(child.tokens) >= cfg.max_tokens:
                child.finished = True
                pool.append((child, "max_tokens"))
            else:
                next_beam.append(child)
        beam = next_beam
        if not beam:
            break
    ranked = sorted(
        (
            (
                -_ranking_score(hyp.cum_log_score, len(hyp.tokens), cfg.length_penalty),
                idx,
            )
            for idx, (hyp, _) in enumerate(pool)
        ),
    )
    best_hyp, best_stop = pool[ranked[0][1]]
    finalists = [
        {
            "tokens": list(pool[idx][0].tokens),
            "text": vocab.render(pool[idx][0].tokens),
            "cum_log_score": pool[idx][0].cum_log_score,
            "ranking_score": -neg_rank,
        }
        for neg_rank, idx in ranked[: cfg.beam_width]
    ]
    return DecodeResult(
        tokens=best_hyp.tokens,
        text=vocab.render(best_hyp.tokens),
        per_step=best_hyp.per_step,
        final_score=_ranking_score(
            best_hyp.cum_log_score, len(best_hyp.tokens), cfg.length_penalty
        ),
        stop_reason=best_stop,
        finalists=finalists,
    )


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def contrastive_decode(
    scorer,
    sources: SourceBundle,
    prompt,
    image: ImageContext | None,
    cfg: DecodeConfig,
    explain: bool = False,
) -> DecodeResult:
    """Degeneracy-penalized selection over the step scorer's top candidates.

    Each step restricts to the ``contrastive_topk`` best tokens by step
    score, renormalizes their scores to probabilities, and picks the token
    maximizing (1 - penalty) * prob - penalty * max cosine similarity to any
    embedding of the already-consumed context. Embeddings come from the
    bundle's designated embedding source.
    """
    pair, bundle, engine = _prepare(scorer, sources, prompt, cfg)
    vocab = bundle.vocabulary
    eos = vocab.eos_id
    emb_source = bundle.embedding_source
    if not emb_source.supports_embeddings:
        raise CapabilityError(
            f"contrastive decoding needs embeddings, but source "
            f"{emb_source.name} does not provide them"
        )
    emb_prompt = pair.vlm if bundle.embedding_role == "vlm" else pair.text
    emb_image = image if bundle.embedding_role == "vlm" else None
    if not emb_prompt:
        raise UsageError("prompt for the embedding role must be non-empty")

    def embed(ctx: ContextTokens) -> np.ndarray:
        _, emb = emb_source.next_with_embedding(ctx, emb_image)
        return emb

    context_embs = [embed(emb_prompt[: i + 1]) for i in range(len(emb_prompt))]
    lam = cfg.contrastive_penalty
    gen: list[int] = []
    per_step: list[dict] = []
    cum = 0.0
    stop_reason = "max_tokens"
    for step in range(cfg.max_tokens):
        suffix = tuple(gen)
        scores = engine.score(pair.text + suffix, pair.vlm + suffix, image, explain)
        cands = sorted(
            scores.candidate_set, key=lambda t: (-scores.log_scores[t], t)
        )[: cfg.contrastive_topk]
        cand_logs = np.array([scores.log_scores[t] for t in cands])
        shifted = cand_logs - cand_logs.max()
        probs = np.exp(shifted)
        probs /= probs.sum()
        best_token = None
        best_key = None
        chosen_emb = None
        for rank, token in enumerate(cands):
            emb = embed(emb_prompt + suffix + (token,))
            sim = max(_cosine(emb, prev) for prev in context_embs)
            objective = (1.0 - lam) * float(probs[rank]) - lam * sim
            key = (-objective, token)
            if best_key is None or key < best_key:
                best_key = key
                best_token = token
                chosen_emb = emb
        summary = _step_summary(step, best_token, vocab, scores, explain)
        summary["contrastive_objective"] = -best_key[0]
        per_step.append(summary)
        cum += float(scores.log_scores[best_token])
        gen.append(best_token)
        context_embs.append(chosen_emb)
        if best_token == eos:
            stop_reason = "eos"
            break
    return DecodeResult(
        tokens=tuple(gen),
        text=vocab.render(gen),
        per_step=per_step,
        final_score=cum,
        stop_reason=stop_reason,
    )


_STRATEGIES = {
    "greedy": greedy_decode,
    "beam": beam_decode,
    "contrastive": contrastive_decode,
}


def decode(
    sources: SourceBundle,
    prompt,
    image: ImageContext | None,
    cfg: DecodeConfig,
    scorer: str | None = None,
    explain: bool = False,
) -> DecodeResult:
    """Dispatch on cfg.strategy; the scorer defaults to cfg.scorer."""
    return _STRATEGIES[cfg.strategy](scorer, sources, prompt, image, cfg, explain)
