"""Step-score arithmetic against the probability-space oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmi_decode import (
    DecodeConfig,
    TokenDistribution,
    fluency_candidates,
    naive_ensemble_step_scores,
    normalize,
    pmi_weights,
    single_model_step_scores,
    smooth,
    vlis_step_scores,
)
from pmi_decode.errors import ConfigError, DimensionError

from oracles import oracle_naive_scores, oracle_step_scores


def dist(*probs):
    return TokenDistribution(list(probs))


@st.composite
def distributions(draw, size=None):
    n = size if size is not None else draw(st.integers(min_value=2, max_value=16))
    raw = draw(
        st.lists(
            st.floats(min_value=1e-6, max_value=1.0, allow_nan=False),
            min_size=n,
            max_size=n,
        )
    )
    arr = np.asarray(raw)
    return TokenDistribution(arr / arr.sum())


@st.composite
def distribution_pairs(draw):
    n = draw(st.integers(min_value=2, max_value=16))
    return draw(distributions(size=n)), draw(distributions(size=n))


@st.composite
def distribution_triples(draw):
    n = draw(st.integers(min_value=2, max_value=16))
    return (
        draw(distributions(size=n)),
        draw(distributions(size=n)),
        draw(distributions(size=n)),
    )


def entropy(d):
    p = np.maximum(d.probs, 1e-300)
    return float(-(p * np.log(p)).sum())


class TestSmooth:
    def test_identity_temperature(self):
        d = dist(0.7, 0.2, 0.1)
        np.testing.assert_allclose(smooth(d, 1.0).probs, d.probs, atol=1e-9)

    def test_sharpening_squares(self):
        out = smooth(dist(0.7, 0.2, 0.1), 0.5)
        np.testing.assert_allclose(out.probs, [0.9074, 0.0741, 0.0185], atol=1e-4)

    def test_large_temperature_flattens_to_uniform(self):
        out = smooth(dist(0.7, 0.2, 0.1), 1e6)
        assert float(out.probs.max() - out.probs.min()) < 1e-3

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ConfigError):
            smooth(dist(0.5, 0.5), 0.0)
        with pytest.raises(ConfigError):
            smooth(dist(0.5, 0.5), -1.0)

    @given(distributions(), st.floats(min_value=0.1, max_value=10.0))
    @settings(max_examples=200)
    def test_output_is_distribution(self, d, tau):
        out = smooth(d, tau)
        assert abs(float(out.probs.sum()) - 1.0) < 1e-9
        assert np.all(out.probs >= 0)

    @given(
        distributions(),
        st.floats(min_value=0.1, max_value=5.0),
        st.floats(min_value=0.1, max_value=5.0),
    )
    @settings(max_examples=200)
    def test_temperature_orders_entropy(self, d, tau_a, tau_b):
        lo, hi = sorted((tau_a, tau_b))
        assert entropy(smooth(d, lo)) <= entropy(smooth(d, hi)) + 1e-12


class TestPmiWeights:
    def test_equal_distributions_give_zero(self):
        d = dist(0.2, 0.5, 0.3)
        np.testing.assert_allclose(pmi_weights(d, d), np.zeros(3), atol=1e-15)

    def test_direct_arithmetic(self):
        w = pmi_weights(dist(0.2, 0.5, 0.3), dist(0.4, 0.3, 0.3))
        np.testing.assert_allclose(
            w, [math.log(0.5), math.log(5 / 3), 0.0], atol=1e-9
        )

    def test_zero_marginal_clamped_to_floor(self):
        w = pmi_weights(dist(0.5, 0.5), TokenDistribution([1.0, 0.0]), floor=1e-12)
        assert np.all(np.isfinite(w))
        assert w[1] == pytest.approx(math.log(0.5) - math.log(1e-12))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            pmi_weights(dist(0.5, 0.5), dist(0.3, 0.3, 0.4))


class TestFluencyCandidates:
    def test_inclusive_threshold(self):
        cands = fluency_candidates(dist(0.9989, 0.001, 0.0001), alpha=0.001)
        assert cands == frozenset({0, 1})

    def test_alpha_zero_keeps_positive_support(self):
        cands = fluency_candidates(TokenDistribution([0.5, 0.5, 0.0]), alpha=0.0)
        assert cands == frozenset({0, 1})

    def test_uniform_4096_falls_back_to_argmax(self):
        uniform = TokenDistribution(np.full(4096, 1 / 4096))
        assert fluency_candidates(uniform, alpha=0.001) == frozenset({0})

    def test_alpha_domain(self):
        with pytest.raises(ConfigError):
            fluency_candidates(dist(0.5, 0.5), alpha=1.0)


class TestVlisStepScores:
    def test_worked_example(self):
        cfg = DecodeConfig(language_temperature=1.0, fluency_threshold=0.001)
        scores = vlis_step_scores(
            dist(0.7, 0.2, 0.1), dist(0.2, 0.5, 0.3), dist(0.4, 0.3, 0.3), cfg
        )
        np.testing.assert_allclose(
            np.exp(scores.log_scores), [0.35, 1 / 3, 0.1], atol=1e-9
        )
        assert scores.argmax == 0

    def test_equal_cond_marg_reduces_to_text(self):
        cfg = DecodeConfig(language_temperature=1.0)
        d = dist(0.7, 0.2, 0.1)
        vl = dist(0.3, 0.4, 0.3)
        scores = vlis_step_scores(d, vl, vl, cfg)
        assert scores.argmax == int(np.argmax(d.probs))

    def test_mask_locality(self):
        cfg = DecodeConfig(fluency_threshold=0.15)
        scores = vlis_step_scores(
            dist(0.7, 0.2, 0.1), dist(0.2, 0.5, 0.3), dist(0.4, 0.3, 0.3), cfg
        )
        assert scores.candidate_set == frozenset({0, 1})
        assert scores.log_scores[2] == -np.inf
        unmasked = vlis_step_scores(
            dist(0.7, 0.2, 0.1),
            dist(0.2, 0.5, 0.3),
            dist(0.4, 0.3, 0.3),
            DecodeConfig(fluency_threshold=0.001),
        )
        np.testing.assert_allclose(
            scores.log_scores[:2], unmasked.log_scores[:2], atol=1e-12
        )

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            vlis_step_scores(
                dist(0.5, 0.5), dist(0.3, 0.3, 0.4), dist(0.3, 0.3, 0.4), DecodeConfig()
            )

    @given(
        distribution_triples(),
        st.floats(min_value=0.25, max_value=4.0),
        st.sampled_from([0.0, 1e-4, 1e-3, 1e-2, 0.2]),
    )
    @settings(max_examples=300, deadline=None)
    def test_matches_probability_space_oracle(self, triple, tau, alpha):
        p_text, cond, marg = triple
        cfg = DecodeConfig(language_temperature=tau, fluency_threshold=alpha)
        got = vlis_step_scores(p_text, cond, marg, cfg)
        want_scores, want_cands = oracle_step_scores(
            p_text.probs.tolist(), cond.probs.tolist(), marg.probs.tolist(), tau, alpha
        )
        assert got.candidate_set == frozenset(want_cands)
        for i, want in enumerate(want_scores):
            if math.isinf(want):
                assert got.log_scores[i] == -np.inf
            else:
                assert got.log_scores[i] == pytest.approx(want, abs=1e-9)

    @given(distribution_triples(), st.floats(min_value=0.25, max_value=4.0))
    @settings(max_examples=200, deadline=None)
    def test_importance_identity_estimator_vs_score(self, triple, tau):
        # The single-sample estimator form (smoothed text likelihood times the
        # conditional/marginal ratio, in probability space) must agree with
        # the log-space score path.
        p_text, cond, marg = triple
        cfg = DecodeConfig(language_temperature=tau, fluency_threshold=0.0)
        got = vlis_step_scores(p_text, cond, marg, cfg)
        smoothed = smooth(p_text, tau)
        for i in got.candidate_set:
            estimator = smoothed.probs[i] * (
                max(cond.probs[i], 1e-12) / max(marg.probs[i], 1e-12)
            )
            assert math.log(estimator) == pytest.approx(
                float(got.log_scores[i]), abs=1e-9
            )

    @given(distribution_triples(), st.floats(min_value=0.25, max_value=4.0))
    @settings(max_examples=200, deadline=None)
    def test_mask_soundness(self, triple, tau):
        p_text, cond, marg = triple
        alpha = 1e-3
        cfg = DecodeConfig(language_temperature=tau, fluency_threshold=alpha)
        got = vlis_step_scores(p_text, cond, marg, cfg)
        fallback = len(got.candidate_set) == 1 and all(
            p < alpha for p in p_text.probs
        )
        if not fallback:
            for i in got.candidate_set:
                assert p_text.probs[i] >= alpha

    @given(distribution_triples())
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_conditional(self, triple):
        p_text, cond, marg = triple
        cfg = DecodeConfig(fluency_threshold=0.0)
        base = vlis_step_scores(p_text, cond, marg, cfg)
        bumped_probs = cond.probs.copy()
        bumped_probs[0] = min(1.0, bumped_probs[0] * 1.5)
        bumped = vlis_step_scores(p_text, TokenDistribution(bumped_probs), marg, cfg)
        if 0 in base.candidate_set:
            assert bumped.log_scores[0] >= base.log_scores[0] - 1e-12

    @given(distribution_triples(), st.floats(min_value=-20, max_value=20))
    @settings(max_examples=150, deadline=None)
    def test_logit_shift_robustness(self, triple, shift):
        p_text, cond, marg = triple
        cfg = DecodeConfig()
        base = vlis_step_scores(p_text, cond, marg, cfg)
        logits = np.log(p_text.probs)
        shifted_text = normalize(logits + shift)
        again = vlis_step_scores(shifted_text, cond, marg, cfg)
        assert base.candidate_set == again.candidate_set
        for i in base.candidate_set:
            assert float(again.log_scores[i]) == pytest.approx(
                float(base.log_scores[i]), abs=1e-9
            )


class TestNaiveEnsemble:
    def test_worked_example(self):
        cfg = DecodeConfig(fluency_threshold=0.001)
        scores = naive_ensemble_step_scores(dist(0.7, 0.2, 0.1), dist(0.2, 0.5, 0.3), cfg)
        np.testing.assert_allclose(
            np.exp(scores.log_scores), [0.14, 0.10, 0.03], atol=1e-9
        )
        assert scores.argmax == 0

    def test_uniform_conditional_keeps_text_argmax(self):
        cfg = DecodeConfig()
        p_text = dist(0.1, 0.6, 0.3)
        scores = naive_ensemble_step_scores(p_text, dist(1 / 3, 1 / 3, 1 / 3), cfg)
        assert scores.argmax == 1

    def test_component_contrast_with_vlis(self):
        # Same worked example as the importance-weighted scorer: both pick
        # token 0, but the weighted scorer keeps token 1 far closer to the
        # winner (relative weight 0.333/0.35 vs 0.10/0.14).
        cfg = DecodeConfig(language_temperature=1.0, fluency_threshold=0.001)
        p_text, cond, marg = dist(0.7, 0.2, 0.1), dist(0.2, 0.5, 0.3), dist(0.4, 0.3, 0.3)
        weighted = vlis_step_scores(p_text, cond, marg, cfg)
        naive = naive_ensemble_step_scores(p_text, cond, cfg)
        assert weighted.argmax == naive.argmax == 0
        weighted_margin = math.exp(weighted.log_scores[1] - weighted.log_scores[0])
        naive_margin = math.exp(naive.log_scores[1] - naive.log_scores[0])
        assert weighted_margin == pytest.approx((1 / 3) / 0.35, abs=1e-9)
        assert naive_margin == pytest.approx(0.10 / 0.14, abs=1e-9)
        assert weighted_margin > naive_margin

    @given(distribution_pairs(), st.sampled_from([0.0, 1e-3, 1e-2]))
    @settings(max_examples=200, deadline=None)
    def test_matches_oracle(self, pair, alpha):
        p_text, cond = pair
        cfg = DecodeConfig(fluency_threshold=alpha)
        got = naive_ensemble_step_scores(p_text, cond, cfg)
        want_scores, want_cands = oracle_naive_scores(
            p_text.probs.tolist(), cond.probs.tolist(), alpha
        )
        assert got.candidate_set == frozenset(want_cands)
        for i in want_cands:
            assert float(got.log_scores[i]) == pytest.approx(want_scores[i], abs=1e-9)


class TestSingleModel:
    def test_tie_breaks_to_lowest_index(self):
        scores = single_model_step_scores(dist(0.5, 0.5), DecodeConfig())
        assert len(scores.candidate_set) == 2
        assert scores.argmax == 0

    def test_one_hot_single_candidate(self):
        scores = single_model_step_scores(TokenDistribution([0.0, 1.0, 0.0]), DecodeConfig())
        assert scores.candidate_set == frozenset({1})
        assert scores.argmax == 1

    @given(distributions())
    @settings(max_examples=200)
    def test_argmax_matches_distribution(self, d):
        # Sub-ulp probability gaps can collapse to the same value in log
        # space; the distribution argmax must still attain the top log score,
        # and exact log ties break to the lowest index.
        scores = single_model_step_scores(d, DecodeConfig())
        top = scores.log_scores.max()
        assert scores.log_scores[int(np.argmax(d.probs))] == top
        assert scores.argmax == int(np.nonzero(scores.log_scores == top)[0][0])
