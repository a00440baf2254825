"""Decoding strategies: greedy, beam, contrastive."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from pmi_decode import (
    CountingSource,
    DecodeConfig,
    ImageContext,
    PromptPair,
    SourceBundle,
    TableModel,
    TokenDistribution,
    TokenEmbeddingSource,
    Vocabulary,
    beam_decode,
    contrastive_decode,
    decode,
    greedy_decode,
    load_table_model,
)
from pmi_decode.decoding import _ranking_score
from pmi_decode.errors import CapabilityError, UsageError

from conftest import random_table_model
from oracles import (
    oracle_best_rollout,
    oracle_greedy_rollout,
    oracle_mean_distribution,
    oracle_step_scores,
)

FIXTURES = Path(__file__).parent / "fixtures"
IMG1 = ImageContext("img1", "synthetic")


@pytest.fixture
def golden_bundle():
    text = load_table_model(FIXTURES / "text_model.json", label="text")
    vlm = load_table_model(FIXTURES / "vlm_model.json", label="vlm")
    return SourceBundle(vocabulary=text.vocabulary, text=text, vlm=vlm)


def golden_cfg(**overrides):
    base = dict(language_temperature=1.0, fluency_threshold=0.001, max_tokens=4)
    base.update(overrides)
    return DecodeConfig(**base)


def oracle_table_lookup(model: TableModel, ctx, image_id):
    """Independent reimplementation of the suffix lookup for oracle rollouts."""
    ctx = tuple(ctx)
    for length in range(min(len(ctx), model.order - 1), -1, -1):
        suffix = ctx[len(ctx) - length :]
        if image_id is not None and (suffix, image_id) in model.entries:
            return model.entries[(suffix, image_id)].probs.tolist()
        if (suffix, None) in model.entries:
            return model.entries[(suffix, None)].probs.tolist()
    return model.default.probs.tolist()


def oracle_vlis_step_fn(text_model, vlm_model, prompt, image_id, cfg):
    def step_fn(gen):
        ctx = tuple(prompt) + tuple(gen)
        p_text = oracle_table_lookup(text_model, ctx, None)
        cond = oracle_table_lookup(vlm_model, ctx, image_id)
        marg = oracle_mean_distribution(
            [
                oracle_table_lookup(vlm_model, ctx, img.id)
                for img in cfg.marginal_images
            ]
        )
        return oracle_step_scores(
            p_text, cond, marg, cfg.language_temperature, cfg.fluency_threshold
        )

    return step_fn


class TestGreedy:
    def test_golden_fixture_transcripts(self, golden_bundle):
        cfg = golden_cfg()
        vlis = greedy_decode("vlis", golden_bundle, (0,), IMG1, cfg)
        text_only = greedy_decode("text_only", golden_bundle, (0,), IMG1, cfg)
        assert vlis.tokens == (1, 2)
        assert vlis.text == "B"
        assert vlis.stop_reason == "eos"
        assert text_only.tokens == (0, 0, 0, 0)
        assert text_only.text == "AAAA"
        assert text_only.stop_reason == "max_tokens"
        # The stored transcripts must match a stepwise brute-force rollout.
        step_fn = oracle_vlis_step_fn(
            golden_bundle.text, golden_bundle.vlm, (0,), "img1", cfg
        )
        assert oracle_greedy_rollout(step_fn, 2, cfg.max_tokens) == vlis.tokens

    def test_reduction_when_cond_equals_marg(self, vocab3):
        rng = np.random.default_rng(11)
        for trial in range(10):
            text = random_table_model(rng, vocab3, order=2, label="text")
            vlm = random_table_model(
                rng, vocab3, order=2, image_ids=(None,), label="vlm", images_ok=True
            )
            bundle = SourceBundle(vocabulary=vocab3, text=text, vlm=vlm)
            cfg = golden_cfg(max_tokens=6, language_temperature=float(rng.uniform(0.5, 2.0)))
            a = greedy_decode("vlis", bundle, (0,), IMG1, cfg)
            b = greedy_decode("text_only", bundle, (0,), IMG1, cfg)
            assert a.tokens == b.tokens
            assert a.text == b.text
            assert a.stop_reason == b.stop_reason

    def test_max_tokens_zero(self, golden_bundle):
        result = greedy_decode("vlis", golden_bundle, (0,), IMG1, golden_cfg(max_tokens=0))
        assert result.tokens == ()
        assert result.text == ""
        assert result.per_step == []
        assert result.stop_reason == "max_tokens"

    def test_empty_prompt_rejected(self, golden_bundle):
        with pytest.raises(UsageError):
            greedy_decode("vlis", golden_bundle, (), IMG1, golden_cfg())

    def test_determinism(self, golden_bundle):
        cfg = golden_cfg()
        a = greedy_decode("vlis", golden_bundle, (0,), IMG1, cfg, explain=True)
        b = greedy_decode("vlis", golden_bundle, (0,), IMG1, cfg, explain=True)
        assert json.dumps(a.to_json(), sort_keys=True) == json.dumps(
            b.to_json(), sort_keys=True
        )

    def test_cost_contract_default_marginals(self, golden_bundle):
        text = CountingSource(golden_bundle.text)
        vlm = CountingSource(golden_bundle.vlm)
        bundle = SourceBundle(vocabulary=golden_bundle.vocabulary, text=text, vlm=vlm)
        result = greedy_decode("vlis", bundle, (0,), IMG1, golden_cfg())
        emitted = len(result.tokens)
        assert emitted == 2
        assert vlm.count == 3 * emitted
        assert text.count == 1 * emitted

    def test_cost_contract_k_marginals(self, golden_bundle):
        for k, ids in [(1, ("black",)), (2, ("black", "white"))]:
            text = CountingSource(golden_bundle.text)
            vlm = CountingSource(golden_bundle.vlm)
            bundle = SourceBundle(vocabulary=golden_bundle.vocabulary, text=text, vlm=vlm)
            from pmi_decode import image_from_id

            cfg = golden_cfg(marginal_images=tuple(image_from_id(i) for i in ids))
            result = greedy_decode("vlis", bundle, (0,), IMG1, cfg)
            emitted = len(result.tokens)
            assert emitted > 0
            assert vlm.count == (k + 1) * emitted
            assert text.count == emitted

    def test_per_step_explain_components(self, golden_bundle):
        result = greedy_decode("vlis", golden_bundle, (0,), IMG1, golden_cfg(), explain=True)
        row = result.per_step[0]
        assert row["token"] == 1
        comp = row["components"]
        assert comp["p_text"] == pytest.approx(0.35)
        assert math.exp(comp["log_cond"]) == pytest.approx(0.6, abs=1e-12)
        assert math.exp(comp["log_marg"]) == pytest.approx(0.375, abs=1e-12)
        assert comp["pmi"] == pytest.approx(math.log(0.6 / 0.375), abs=1e-12)

    def test_scorer_needs_vlm(self, vocab3):
        rng = np.random.default_rng(0)
        text = random_table_model(rng, vocab3, order=1)
        bundle = SourceBundle(vocabulary=vocab3, text=text)
        with pytest.raises(UsageError):
            greedy_decode("vlis", bundle, (0,), None, golden_cfg())

    def test_scorer_swap_matches_text_only_bundle(self, golden_bundle, vocab3):
        cfg = golden_cfg(max_tokens=5)
        text_alone = SourceBundle(vocabulary=vocab3, text=golden_bundle.text)
        a = greedy_decode("text_only", golden_bundle, (0,), IMG1, cfg)
        b = greedy_decode("text_only", text_alone, (0,), None, cfg)
        assert a.to_json() == b.to_json()

    def test_split_prompts_per_role(self, golden_bundle):
        # The visual role sees its own priming context; generated tokens are
        # appended to both.
        cfg = golden_cfg(max_tokens=1)
        pair = PromptPair(text=(0,), vlm=(1,))
        result = greedy_decode("vlis", golden_bundle, pair, IMG1, cfg)
        p_text = [0.4, 0.35, 0.25]
        cond = [0.15, 0.3, 0.55]
        marg = oracle_mean_distribution([[0.4, 0.3, 0.3], [0.5, 0.2, 0.3]])
        want, _ = oracle_step_scores(p_text, cond, marg, 1.0, 0.001)
        assert result.tokens[0] == int(np.argmax(want))


class TestBeam:
    def test_ranking_score_arithmetic(self):
        assert _ranking_score(-2.0, 4, -1.0) == -8.0
        assert _ranking_score(-2.0, 4, 0.0) == -2.0
        assert _ranking_score(-2.0, 4, 1.0) == -0.5

    def test_width_one_equals_greedy(self, golden_bundle):
        for scorer in ("vlis", "naive_ensemble", "vlm_only", "text_only"):
            cfg = golden_cfg(beam_width=1, strategy="beam")
            greedy = greedy_decode(scorer, golden_bundle, (0,), IMG1, golden_cfg())
            beam = beam_decode(scorer, golden_bundle, (0,), IMG1, cfg)
            assert beam.tokens == greedy.tokens
            assert beam.text == greedy.text
            assert beam.stop_reason == greedy.stop_reason
            assert [s["log_score"] for s in beam.per_step] == [
                s["log_score"] for s in greedy.per_step
            ]

    def test_max_tokens_zero(self, golden_bundle):
        result = beam_decode("vlis", golden_bundle, (0,), IMG1, golden_cfg(max_tokens=0))
        assert result.tokens == ()
        assert result.stop_reason == "max_tokens"

    def test_saturating_beam_matches_exhaustive_enumeration(self, vocab2):
        rng = np.random.default_rng(23)
        checked = 0
        trial = 0
        while checked < 12:
            trial += 1
            assert trial < 200, "fixture generation kept producing ties"
            text = random_table_model(rng, vocab2, order=2, label="text")
            vlm = random_table_model(
                rng,
                vocab2,
                order=2,
                image_ids=("img1", "black", "white"),
                label="vlm",
            )
            max_tokens = int(rng.integers(1, 5))
            penalty = float(rng.choice([-2.0, -1.0, 0.0, 1.0]))
            cfg = golden_cfg(
                max_tokens=max_tokens,
                length_penalty=penalty,
                beam_width=2**max_tokens,
                strategy="beam",
            )
            step_fn = oracle_vlis_step_fn(text, vlm, (0,), "img1", cfg)
            want_tokens, want_rank = oracle_best_rollout(
                step_fn, 2, vocab2.eos_id, max_tokens, penalty
            )
            # Reject near-ties so "exact sequence match" is well-posed.
            from oracles import oracle_enumerate_rollouts

            leaves = oracle_enumerate_rollouts(step_fn, 2, vocab2.eos_id, max_tokens)
            ranks = sorted(
                (cum / len(toks) ** penalty for toks, cum in leaves), reverse=True
            )
            if len(ranks) > 1 and ranks[0] - ranks[1] < 1e-9:
                continue
            bundle = SourceBundle(vocabulary=vocab2, text=text, vlm=vlm)
            got = beam_decode("vlis", bundle, (0,), IMG1, cfg)
            assert got.tokens == want_tokens
            assert got.final_score == pytest.approx(want_rank, abs=1e-9)
            checked += 1

    def test_finalists_ranked_monotonically(self, golden_bundle):
        cfg = golden_cfg(beam_width=3, strategy="beam", max_tokens=3)
        result = beam_decode("vlis", golden_bundle, (0,), IMG1, cfg)
        scores = [f["ranking_score"] for f in result.finalists]
        assert scores == sorted(scores, reverse=True)
        assert result.final_score == scores[0]

    def test_negative_length_penalty_prefers_short(self, golden_bundle):
        # Length penalty < 0 multiplies the (negative) cumulative score by
        # length, so shorter finished hypotheses win ties of quality.
        cfg = golden_cfg(beam_width=3, strategy="beam", max_tokens=4, length_penalty=-1.0)
        short = beam_decode("vlis", golden_bundle, (0,), IMG1, cfg)
        cfg_long = golden_cfg(beam_width=3, strategy="beam", max_tokens=4, length_penalty=1.0)
        long_ = beam_decode("vlis", golden_bundle, (0,), IMG1, cfg_long)
        assert len(short.tokens) <= len(long_.tokens)


def embedding_vectors():
    return {0: [1.0, 0.0, 0.0], 1: [0.0, 1.0, 0.0], 2: [0.0, 0.0, 1.0]}


@pytest.fixture
def repeat_bundle(vocab3):
    """Text model that loves repeating token A; embeddings repeat with it."""
    text = TableModel(
        vocabulary=vocab3,
        order=2,
        default=TokenDistribution([0.6, 0.35, 0.05]),
        entries={
            ((), None): TokenDistribution([0.6, 0.35, 0.05]),
            ((0,), None): TokenDistribution([0.6, 0.35, 0.05]),
            ((1,), None): TokenDistribution([0.6, 0.35, 0.05]),
        },
        label="text",
    )
    source = TokenEmbeddingSource(text, embedding_vectors())
    return SourceBundle(vocabulary=vocab3, text=source)


class TestContrastive:
    def test_zero_penalty_equals_greedy(self, repeat_bundle):
        cfg = golden_cfg(
            max_tokens=5, contrastive_penalty=0.0, contrastive_topk=2, scorer="text_only"
        )
        greedy = greedy_decode("text_only", repeat_bundle, (0,), None, cfg)
        contrastive = contrastive_decode("text_only", repeat_bundle, (0,), None, cfg)
        assert contrastive.tokens == greedy.tokens

    def test_repetition_fixture_reduces_rep2(self, repeat_bundle):
        from pmi_decode import rep_n

        cfg = golden_cfg(
            max_tokens=6, contrastive_penalty=0.6, contrastive_topk=2, scorer="text_only"
        )
        greedy = greedy_decode("text_only", repeat_bundle, (0,), None, cfg)
        contrastive = contrastive_decode("text_only", repeat_bundle, (0,), None, cfg)
        assert greedy.tokens == (0,) * 6
        # Step 0: B's fresh embedding beats A's repeat penalty
        # (0.4*0.368 - 0 > 0.4*0.632 - 0.6). Afterwards both tokens sit in
        # the context at similarity 1, so confidence decides and A returns.
        assert contrastive.tokens == (1, 0, 0, 0, 0, 0)
        assert rep_n(contrastive.tokens, 2) == 0.6
        assert rep_n(greedy.tokens, 2) == 0.8
        assert rep_n(contrastive.tokens, 2) < rep_n(greedy.tokens, 2)

    def test_full_penalty_orthogonal_ties_break_by_index(self, vocab3):
        # Scores prefer eos, but with penalty 1 and all-fresh orthogonal
        # embeddings every candidate ties at similarity 0, so the lowest
        # index among the top-k wins.
        text = TableModel(
            vocabulary=vocab3,
            order=2,
            default=TokenDistribution([0.3, 0.04, 0.66]),
            entries={((1,), None): TokenDistribution([0.3, 0.04, 0.66])},
            label="text",
        )
        bundle = SourceBundle(
            vocabulary=vocab3, text=TokenEmbeddingSource(text, embedding_vectors())
        )
        cfg = golden_cfg(
            max_tokens=1,
            contrastive_penalty=1.0,
            contrastive_topk=2,
            fluency_threshold=0.1,
            scorer="text_only",
        )
        greedy = greedy_decode("text_only", bundle, (1,), None, cfg)
        assert greedy.tokens == (2,)
        contrastive = contrastive_decode("text_only", bundle, (1,), None, cfg)
        assert contrastive.tokens == (0,)

    def test_embeddings_required(self, golden_bundle):
        cfg = golden_cfg(scorer="vlis")
        with pytest.raises(CapabilityError) as exc:
            contrastive_decode("vlis", golden_bundle, (0,), IMG1, cfg)
        assert "text" in str(exc.value)


class TestDispatch:
    def test_strategy_dispatch(self, golden_bundle):
        cfg = golden_cfg(strategy="beam", beam_width=2)
        via_dispatch = decode(golden_bundle, (0,), IMG1, cfg)
        direct = beam_decode("vlis", golden_bundle, (0,), IMG1, cfg)
        assert via_dispatch.to_json() == direct.to_json()

    def test_result_serializes(self, golden_bundle):
        result = greedy_decode("vlis", golden_bundle, (0,), IMG1, golden_cfg())
        obj = result.to_json()
        assert obj["tokens"] == [1, 2]
        assert obj["text"] == "B"
        assert obj["stop_reason"] == "eos"
        assert len(obj["per_step"]) == 2
