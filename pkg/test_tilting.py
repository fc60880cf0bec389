"""
Tests for tilted kernels, likelihood-ratio weights and the importance-sampling estimators.
"""

import math
from collections import Counter

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import chisquare

from backend.empirical import (OffspringMeasure, PairMeasure, offspring_measure,
                               offspring_measure_from_csv, pair_measure_tilde)
from backend.model import kernels_equal, load_kernel_spec, mean_matrix
from backend.rate import minimize_rate_ball
from backend.tilting import (ZERO_TILT, AlwaysEvent, BallEvent, EstimatePartial, TiltedKernel,
                             TiltFunction, decay_point, decay_value, estimate_conditional_prob,
                             estimate_decay_rate, estimate_prob, gibbs_tilt, log_rn_weight,
                             pair_gibbs_tilt, tilt_from_document, tilt_to_document, tilted_model, u_g)
from backend.trees import size_probabilities
from shared.errors import DomainError
from shared.types import TiltDocument


def tree_log_prob(tree, Q, mu) -> float:
    total = math.log(mu[tree.types[0]])
    for v, c in enumerate(tree.configs()):
        total += math.log(Q.prob(c, tree.types[v]))
    return total


def relative_error(report) -> float:
    return report.stderr / report.estimate if report.hits else math.inf


class TestTiltFunction:
    def test_lookup(self, ab):
        g = TiltFunction(values={(0, ab.config("a")): 1.5}, default=0.2, linear=[[0.1, 0.3], [0.0, 0.0]])
        assert g(0, ab.config("a")) == 1.5
        assert g(0, ab.config("b", "b")) == pytest.approx(0.8)
        assert g(1, ab.config("a", "b")) == pytest.approx(0.2)
        assert g.bound == math.inf

    def test_bound_without_linear_part(self, ab):
        g = TiltFunction(values={(0, ab.config()): -3.0}, default=1.0)
        assert g.bound == 3.0
        assert not g.is_zero
        assert ZERO_TILT.is_zero

    def test_rejects_non_finite(self):
        with pytest.raises(DomainError):
            TiltFunction(default=math.inf)

    def test_document_form(self, ab):
        g = TiltFunction(values={(1, ab.config("a", "a")): 0.25}, default=-1.0)
        doc = tilt_to_document(g, ab)
        assert doc.values[0].children == ["a", "a"]
        assert tilt_from_document(doc, ab) == g

    def test_non_constant_linear_has_no_document(self, ab):
        with pytest.raises(DomainError):
            tilt_to_document(TiltFunction(linear=[[0.1, 0.0], [0.0, 0.0]]), ab)


class TestNormalizer:
    def test_constant(self, chain_kernel):
        assert_allclose(u_g(TiltFunction.constant(0.7), chain_kernel), [0.7, 0.7])

    def test_config_tilt(self, binary_kernel):
        alphabet = binary_kernel.alphabet
        g = TiltFunction(values={(0, alphabet.config("a", "a")): math.log(2)})
        assert u_g(g, binary_kernel)[0] == pytest.approx(math.log(1.5))

    def test_size_tilt(self, chain_kernel):
        theta = -0.3
        U = u_g(TiltFunction.size_tilt(theta, 2), chain_kernel)
        assert_allclose(U, chain_kernel.count_law.log_mgf(theta), rtol=1e-12)


class TestTiltedModel:
    def test_zero_tilt_is_identity(self, chain_kernel):
        Q, mu = tilted_model(chain_kernel, [0.5, 0.5], ZERO_TILT)
        assert Q is chain_kernel
        assert_allclose(mu, [0.5, 0.5])

    def test_constant_tilt_changes_nothing(self, two_type_kernel):
        Q, mu = tilted_model(two_type_kernel, [0.6, 0.4], TiltFunction.constant(0.7))
        assert kernels_equal(Q, two_type_kernel)
        assert_allclose(mu, [0.6, 0.4])

    def test_size_tilt_tilts_the_count_law(self, chain_kernel):
        g = TiltFunction.size_tilt(-0.3, 2)
        Q, _ = tilted_model(chain_kernel, [0.5, 0.5], g)
        assert Q.count_law == chain_kernel.count_law.tilt(-0.3)
        generic = TiltedKernel(chain_kernel, g)
        for c in (chain_kernel.alphabet.config(), chain_kernel.alphabet.config("a", "b", "b")):
            assert generic.prob(c, 1) == pytest.approx(Q.prob(c, 1), rel=1e-12)

    def test_root_law(self, two_type_kernel, ab):
        g = TiltFunction(values={(0, ab.config("a", "b")): 1.0})
        U = u_g(g, two_type_kernel)
        _, mu = tilted_model(two_type_kernel, [0.6, 0.4], g)
        expected = np.array([0.6, 0.4]) * np.exp(U)
        assert_allclose(mu, expected / expected.sum())

    def test_gibbs_tilt_reaches_the_center(self, kernels_dir):
        Q, mu = load_kernel_spec(kernels_dir / "binary_demo.json")
        center = offspring_measure_from_csv((kernels_dir / "binary_demo_center.csv").read_text(), Q.alphabet)
        g = gibbs_tilt(center, Q)
        tilted, _ = tilted_model(Q, mu, g)
        for (a, c), w in center:
            assert tilted.prob(c, a) == pytest.approx(w, rel=1e-12)

    def test_gibbs_tilt_matches_stored_tilt(self, kernels_dir):
        Q, _ = load_kernel_spec(kernels_dir / "binary_demo.json")
        center = offspring_measure_from_csv((kernels_dir / "binary_demo_center.csv").read_text(), Q.alphabet)
        stored = TiltDocument.model_validate_json((kernels_dir / "binary_demo_tilt.json").read_text())
        loaded, computed = tilt_from_document(stored, Q.alphabet), gibbs_tilt(center, Q)
        assert loaded.default == computed.default
        for (a, c), w in center:
            assert loaded(a, c) == pytest.approx(computed(a, c), abs=1e-12)


class TestTiltedKernel:
    @pytest.fixture
    def tilted(self, table_chain_kernel, ab):
        g = TiltFunction(values={(0, ab.config("a", "b")): 1.0, (1, ab.config()): -0.5},
                         default=0.2, linear=[[0.3, -0.1], [0.0, 0.4]])
        return TiltedKernel(table_chain_kernel, g)

    def test_laws_are_normalized(self, tilted):
        for a in range(2):
            assert math.fsum(q for _, q in tilted.law(a)) == pytest.approx(1.0, abs=1e-12)

    def test_matches_explicit_reweighting(self, tilted, table_chain_kernel):
        explicit, _ = tilted_model(table_chain_kernel.to_explicit(), [0.5, 0.5], tilted.g)
        assert kernels_equal(tilted, explicit)
        assert_allclose(mean_matrix(tilted).entries, mean_matrix(explicit).entries, atol=1e-12)

    def test_linear_mgf(self, tilted):
        lam = np.array([0.2, -0.4])
        direct = math.fsum(q * math.exp(lam[list(c.children)].sum()) for c, q in tilted.law(0))
        assert tilted.linear_mgf(0, lam) == pytest.approx(direct, rel=1e-12)

    def test_sampling_frequencies(self, tilted):
        rng = np.random.default_rng(21)
        for a in range(2):
            draws = Counter(tilted.sample(a, rng) for _ in range(4000))
            law = dict(tilted.law(a))
            keys = sorted(law, key=lambda c: c.children)
            observed = [draws.get(c, 0) for c in keys]
            assert sum(observed) == 4000
            expected = [law[c] * 4000 for c in keys]
            assert chisquare(observed, expected).pvalue > 1e-3


class TestWeights:
    def test_weight_is_the_likelihood_ratio(self, cherry, two_type_kernel, ab):
        mu = np.array([0.6, 0.4])
        g = TiltFunction(values={(0, ab.config("a", "b")): 0.7}, default=-0.2)
        tilted, mu_tilted = tilted_model(two_type_kernel, mu, g)
        expected = tree_log_prob(cherry, tilted, mu_tilted) - tree_log_prob(cherry, two_type_kernel, mu)
        assert log_rn_weight(cherry, g, two_type_kernel, mu) == pytest.approx(expected, abs=1e-12)

    def test_zero_tilt(self, cherry, two_type_kernel):
        assert log_rn_weight(cherry, ZERO_TILT, two_type_kernel, [0.6, 0.4]) == pytest.approx(0.0, abs=1e-15)

    def test_size_tilt_weight(self, cherry, chain_kernel):
        theta = -0.3
        g = TiltFunction.size_tilt(theta, 2)
        tilted, mu_tilted = tilted_model(chain_kernel, [0.5, 0.5], g)
        expected = tree_log_prob(cherry, tilted, mu_tilted) - tree_log_prob(cherry, chain_kernel, [0.5, 0.5])
        assert log_rn_weight(cherry, g, chain_kernel, [0.5, 0.5]) == pytest.approx(expected, abs=1e-12)


class TestEvents:
    def test_ball_membership(self, cherry, ab):
        nu = offspring_measure(cherry)
        varpi = pair_measure_tilde(cherry)
        assert BallEvent("offspring", nu, 0.0)(varpi, nu)
        assert BallEvent("pair", varpi, 0.1)(varpi, nu)
        far = PairMeasure(ab, [[0.0, 0.0], [0.0, 1.0]])
        assert not BallEvent("pair", far, 0.5)(varpi, nu)
        assert AlwaysEvent()(varpi, nu)

    def test_bad_ball(self, cherry):
        with pytest.raises(DomainError):
            BallEvent("edges", offspring_measure(cherry), 0.1)
        with pytest.raises(DomainError):
            BallEvent("offspring", offspring_measure(cherry), -1.0)

    def test_pair_ball_tilt_matches_child_means(self, chain_kernel):
        center = PairMeasure(chain_kernel.alphabet, [[0.3, 0.2], [0.1, 0.4]])
        g = BallEvent("pair", center, 0.1).suggested_tilt(chain_kernel)
        tilted, _ = tilted_model(chain_kernel, [0.5, 0.5], g)
        marginal = center.entries.sum(axis=0)
        target = center.entries / marginal[:, None]
        assert_allclose(mean_matrix(tilted).entries, target.T, atol=1e-8)

    def test_pair_ball_tilt_is_zero_at_the_typical_pair(self, chain_kernel):
        pi = np.array([2 / 3, 1 / 3])
        center = PairMeasure(chain_kernel.alphabet, pi[:, None] * chain_kernel.transition)
        g = pair_gibbs_tilt(center, chain_kernel)
        assert_allclose(g.linear, 0.0, atol=1e-9)

    def test_offspring_ball_uses_gibbs(self, binary_kernel):
        alphabet = binary_kernel.alphabet
        center = OffspringMeasure(alphabet, {(0, alphabet.config()): 0.6,
                                             (0, alphabet.config("a", "a")): 0.4})
        g = BallEvent("offspring", center, 0.1).suggested_tilt(binary_kernel)
        assert g(0, alphabet.config()) == pytest.approx(math.log(1.2))


class TestEstimators:
    def test_partial_merge(self):
        first = EstimatePartial(samples=2, hits=1, size_hits=1, sum_x=0.5, sum_xx=0.25, sum_y=0.5, sum_yy=0.25)
        merged = first.merge(EstimatePartial(samples=2, hits=1, size_hits=2, sum_x=1.5, sum_xx=2.25,
                                             sum_y=2.0, sum_yy=2.5))
        assert (merged.samples, merged.hits, merged.size_hits) == (4, 2, 3)
        assert merged.joint()[0] == pytest.approx(0.5)
        assert merged.ess() == pytest.approx(4.0 / 2.5)

    @pytest.mark.parametrize("g", [
        ZERO_TILT,
        TiltFunction.constant(0.7),
        TiltFunction.constant(-0.4),
    ])
    def test_size_probability_unbiased(self, binary_kernel, g):
        exact = size_probabilities(binary_kernel, [1.0], 5)[5]
        report = estimate_prob(binary_kernel, [1.0], 5, AlwaysEvent(), 4000, g, np.random.default_rng(8))
        assert report.hits > 0
        assert abs(report.estimate - exact) <= 4 * report.stderr

    def test_config_tilt_unbiased(self, binary_kernel):
        alphabet = binary_kernel.alphabet
        g = TiltFunction(values={(0, alphabet.config("a", "a")): 0.4})
        exact = size_probabilities(binary_kernel, [1.0], 7)[7]
        report = estimate_prob(binary_kernel, [1.0], 7, AlwaysEvent(), 4000, g, np.random.default_rng(9))
        assert report.tilted
        assert abs(report.estimate - exact) <= 4 * report.stderr
        assert report.effective_sample_size <= report.samples

    def test_conditional_of_sure_event(self, binary_kernel):
        report = estimate_conditional_prob(binary_kernel, [1.0], 5, AlwaysEvent(), 500, None,
                                           np.random.default_rng(1))
        assert report.estimate == pytest.approx(1.0)
        assert report.stderr == pytest.approx(0.0, abs=1e-9)

    def test_decay_points(self, binary_kernel):
        points = estimate_decay_rate(binary_kernel, [1.0], AlwaysEvent(), [3, 5], 2000, None,
                                     np.random.default_rng(2))
        assert [p.n for p in points] == [3, 5]
        for p in points:
            assert p.finite
            assert p.decay == pytest.approx(decay_value(p.n, p.estimate))

    def test_zero_estimate(self):
        assert decay_value(5, 0.0) == math.inf
        point = decay_point(5, 0.0, 0.0, False)
        assert not point.finite
        assert point.decay is None
        assert point.unreliable

    def test_rare_event_tilting_pays_off(self, kernels_dir):
        Q, mu = load_kernel_spec(kernels_dir / "binary_demo.json")
        center = offspring_measure_from_csv((kernels_dir / "binary_demo_center.csv").read_text(), Q.alphabet)
        event = BallEvent("offspring", center, 0.1)
        plain = estimate_prob(Q, mu, 30, event, 6000, None, np.random.default_rng(2024))
        tilted = estimate_prob(Q, mu, 30, event, 6000, event.suggested_tilt(Q), np.random.default_rng(2024))
        assert tilted.hits > 0
        assert 5 * relative_error(tilted) <= relative_error(plain)

    def test_three_sigma_coverage(self, binary_kernel):
        exact = size_probabilities(binary_kernel, [1.0], 5)[5]
        rng = np.random.default_rng(31)
        covered = 0
        for _ in range(50):
            report = estimate_prob(binary_kernel, [1.0], 5, AlwaysEvent(), 400, None, rng)
            covered += abs(report.estimate - exact) <= 3 * report.stderr
        assert covered >= 47


class TestDecayRate:
    N = 30

    @pytest.fixture
    def demo(self, kernels_dir):
        Q, mu = load_kernel_spec(kernels_dir / "binary_demo.json")
        atypical = offspring_measure_from_csv((kernels_dir / "binary_demo_center.csv").read_text(), Q.alphabet)
        alphabet = Q.alphabet
        typical = OffspringMeasure(alphabet, {(0, alphabet.config()): 0.25, (0, alphabet.config("a")): 0.5,
                                              (0, alphabet.config("a", "a")): 0.25})
        return Q, mu, typical, atypical

    def test_typical_ball_decays_slower(self, demo):
        Q, mu, typical, atypical = demo
        near = BallEvent("offspring", typical, 0.1)
        far = BallEvent("offspring", atypical, 0.1)
        near_points = estimate_decay_rate(Q, mu, near, [20, self.N], 20_000, None, np.random.default_rng(6))
        far_points = estimate_decay_rate(Q, mu, far, [20, self.N], 20_000, far.suggested_tilt(Q),
                                         np.random.default_rng(6))
        for close, distant in zip(near_points, far_points):
            assert close.finite and distant.finite
            assert close.decay < distant.decay

    def test_conditional_decay_brackets_the_ball_rate(self, demo):
        # P{ball | |T| = n} decays like exp(-n inf J) up to a slack from lattice effects at finite n
        Q, mu, _, atypical = demo
        far = BallEvent("offspring", atypical, 0.1)
        point, = estimate_decay_rate(Q, mu, far, [self.N], 20_000, far.suggested_tilt(Q),
                                     np.random.default_rng(12))
        size_decay = -math.log(size_probabilities(Q, mu, self.N)[self.N]) / self.N
        conditional_decay = point.decay - size_decay
        ball = minimize_rate_ball(PairMeasure(Q.alphabet, [[1.0]]), atypical, 0.1, Q, 2)
        assert ball.rate == pytest.approx(0.1927, abs=5e-3)
        assert ball.rate - 0.02 <= conditional_decay <= ball.rate + 0.15
