"""
Tests for typed trees, the size-conditioned samplers and exact enumeration.
"""

import math
from collections import Counter

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import chisquare

from backend.laws import TableLaw
from backend.model import single_type_kernel
from backend import trees
from backend.trees import (Exhausted, Overflow, TypedTree, enumerate_trees, sample_conditioned,
                           sample_conditioned_many, sample_markov_indexed, sample_markov_indexed_many,
                           sample_size_conditioned, sample_size_conditioned_many, sample_tree,
                           size_probabilities, tree_from_text, tree_to_text)
from shared.errors import DomainError, ResourceBudgetError


def catalan(m: int) -> int:
    return math.comb(2 * m, m) // (m + 1)


def chi_square_pvalue(samples, probabilities):
    """Goodness of fit of sampled keys against exact (unnormalized) probabilities."""
    total = sum(probabilities.values())
    counts = Counter(samples)
    keys = sorted(probabilities)
    observed = np.array([counts.get(k, 0) for k in keys], dtype=float)
    expected = np.array([probabilities[k] / total for k in keys]) * len(samples)
    assert sum(counts.values()) == observed.sum()
    return chisquare(observed, expected).pvalue


class TestTypedTree:
    def test_cherry(self, cherry, ab):
        cherry.validate()
        assert cherry.size == 3
        assert cherry.config(0) == ab.config("a", "b")
        assert cherry.children(0) == (1, 2)
        assert list(cherry.edges()) == [(0, 0), (0, 1)]
        assert cherry.key() == ((0, 2), (0, 0), (1, 0))

    def test_bad_child_counts(self, ab):
        with pytest.raises(DomainError):
            TypedTree(ab, (0, 0), (2, 0), (-1, 0)).validate()

    def test_not_preorder(self, ab):
        # vertex 2 must hang off vertex 1, which still has an open slot
        with pytest.raises(DomainError, match="depth-first"):
            TypedTree(ab, (0, 0, 0), (1, 1, 0), (-1, 0, 0)).validate()

    def test_text_form(self, cherry, ab):
        text = tree_to_text(cherry)
        assert text.splitlines()[0] == "0,,a,2"
        assert tree_from_text(text, ab) == cherry

    def test_text_rejects_gaps(self, ab):
        with pytest.raises(DomainError):
            tree_from_text("0,,a,1\n2,0,b,0\n", ab)


class TestSampleTree:
    def test_overflow(self, rng):
        Q = single_type_kernel(TableLaw((0.0, 0.0, 1.0)))
        result = sample_tree(Q, [1.0], rng, max_vertices=10)
        assert isinstance(result, Overflow)
        assert result.max_vertices == 10
        assert result.vertices > 10

    def test_valid_trees(self, two_type_kernel, rng):
        for _ in range(50):
            tree = sample_tree(two_type_kernel, [0.6, 0.4], rng, max_vertices=200)
            if isinstance(tree, TypedTree):
                tree.validate()


class TestSampleConditioned:
    def test_uniform_over_plane_trees(self, geometric_kernel):
        # geometric(1/2) gives every plane tree of size n the same weight
        rng = np.random.default_rng(7)
        samples = []
        for _ in range(1000):
            report = sample_conditioned(geometric_kernel, [1.0], 4, rng)
            assert report.tree.size == 4
            samples.append(report.tree.key())
        assert len(set(samples)) == catalan(3)
        probabilities = {t.key(): p for t, p in enumerate_trees(geometric_kernel, [1.0], 4)}
        assert chi_square_pvalue(samples, probabilities) > 1e-3

    def test_attempt_count(self, binary_kernel, rng):
        report = sample_conditioned(binary_kernel, [1.0], 1, rng)
        assert report.attempts >= 1
        assert report.tree.size == 1

    def test_impossible_size_exhausts(self, rng):
        # only odd sizes occur under a 0-or-2 offspring law
        Q = single_type_kernel(TableLaw((0.5, 0.0, 0.5)))
        assert sample_conditioned(Q, [1.0], 4, rng, retry_budget=50) == Exhausted(50, 4)

    def test_zero_budget_draws_nothing(self, geometric_kernel, rng):
        assert sample_conditioned(geometric_kernel, [1.0], 3, rng, retry_budget=0) == Exhausted(0, 3)

    def test_size_must_be_positive(self, geometric_kernel, rng):
        with pytest.raises(DomainError):
            sample_conditioned(geometric_kernel, [1.0], 0, rng)


class TestMarkovIndexed:
    def test_matches_enumeration(self, chain_kernel):
        rng = np.random.default_rng(11)
        mu = np.array([0.5, 0.5])
        b_counts = []
        for _ in range(3000):
            report = sample_size_conditioned(chain_kernel, mu, 3, rng)
            report.tree.validate()
            b_counts.append(sum(report.tree.types))
        exact = Counter()
        for tree, p in enumerate_trees(chain_kernel, mu, 3):
            exact[sum(tree.types)] += p
        assert chi_square_pvalue(b_counts, dict(exact)) > 1e-3

    def test_agrees_with_plain_rejection(self, chain_kernel):
        mu = np.array([0.5, 0.5])
        rng = np.random.default_rng(3)
        batched = [sample_size_conditioned(chain_kernel, mu, 4, rng).tree.types[0] for _ in range(1500)]
        plain = [sample_conditioned(chain_kernel, mu, 4, rng).tree.types[0] for _ in range(1500)]
        assert abs(np.mean(batched) - np.mean(plain)) < 0.06

    def test_exhausted(self, rng):
        result = sample_markov_indexed(TableLaw((0.5, 0.0, 0.5)), [[1.0]], [1.0], 4, rng,
                                       retry_budget=50)
        assert isinstance(result, Exhausted)
        assert result.attempts == 50

    def test_zero_budget_draws_nothing(self, chain_kernel, rng):
        result = sample_markov_indexed(chain_kernel.count_law, chain_kernel.transition, [0.5, 0.5], 3, rng,
                                       retry_budget=0)
        assert result == Exhausted(0, 3)

    def test_default_labels(self, rng):
        report = sample_markov_indexed(TableLaw((0.5, 0.5)), [[0.5, 0.5], [0.5, 0.5]],
                                       [1.0, 0.0], 3, rng)
        assert list(report.tree.alphabet) == ["t0", "t1"]
        assert report.tree.types[0] == 0


class TestBatchedSamplers:
    def test_conditioned_many_matches_enumeration(self, two_type_kernel):
        mu = [0.6, 0.4]
        drawn = sample_conditioned_many(two_type_kernel, mu, 5, 20_000, np.random.default_rng(17))
        assert len(drawn) == 20_000
        for tree in drawn[:50]:
            tree.validate()
            assert tree.size == 5
        probabilities = {t.key(): p for t, p in enumerate_trees(two_type_kernel, mu, 5)}
        assert chi_square_pvalue([t.key() for t in drawn], probabilities) > 1e-3

    def test_conditioned_many_on_a_factored_kernel(self, chain_kernel):
        mu = [0.5, 0.5]
        drawn = sample_conditioned_many(chain_kernel, mu, 3, 20_000, np.random.default_rng(23))
        probabilities = {t.key(): p for t, p in enumerate_trees(chain_kernel, mu, 3)}
        assert chi_square_pvalue([t.key() for t in drawn], probabilities) > 1e-3

    def test_markov_many_matches_enumeration(self, chain_kernel):
        mu = [0.5, 0.5]
        drawn = sample_markov_indexed_many(chain_kernel.count_law, chain_kernel.transition, mu, 3, 20_000,
                                           np.random.default_rng(29), alphabet=chain_kernel.alphabet)
        assert all(t.alphabet == chain_kernel.alphabet for t in drawn[:10])
        probabilities = {t.key(): p for t, p in enumerate_trees(chain_kernel, mu, 3)}
        assert chi_square_pvalue([t.key() for t in drawn], probabilities) > 1e-3

    def test_single_vertex(self, binary_kernel, rng):
        drawn = sample_conditioned_many(binary_kernel, [1.0], 1, 40, rng)
        assert [t.key() for t in drawn] == [((0, 0),)] * 40

    def test_same_seed_same_trees(self, two_type_kernel):
        first = sample_size_conditioned_many(two_type_kernel, [0.6, 0.4], 7, 200, np.random.default_rng(5))
        second = sample_size_conditioned_many(two_type_kernel, [0.6, 0.4], 7, 200, np.random.default_rng(5))
        assert [t.key() for t in first] == [t.key() for t in second]

    def test_nothing_requested(self, chain_kernel, rng):
        assert sample_conditioned_many(chain_kernel, [0.5, 0.5], 4, 0, rng) == []

    def test_exhausted(self, rng):
        # odd sizes only; the budget is per requested tree
        Q = single_type_kernel(TableLaw((0.5, 0.0, 0.5)))
        assert sample_conditioned_many(Q, [1.0], 4, 3, rng, retry_budget=10) == Exhausted(30, 4)
        assert sample_markov_indexed_many(Q.count_law, Q.transition, [1.0], 4, 3, rng,
                                          retry_budget=10) == Exhausted(30, 4)

    def test_zero_budget(self, chain_kernel, rng):
        assert sample_conditioned_many(chain_kernel, [0.5, 0.5], 4, 5, rng, retry_budget=0) == Exhausted(0, 4)


class TestShapeBatches:
    def test_rows_capped_by_cells(self, monkeypatch):
        monkeypatch.setattr(trees, "SHAPE_CELLS", 1_000)
        assert trees._batch_rows(65_536, 40, 10 ** 9) == 25
        assert trees._batch_rows(256, 2, 10 ** 9) == 256
        assert trees._batch_rows(256, 2, 7) == 7
        assert trees._batch_rows(256, 5_000, 10 ** 9) == 1

    def test_default_cap_at_large_n(self):
        rows = trees._batch_rows(trees.SHAPE_BATCH_MAX, 2_000, 10 ** 9)
        assert rows * 2_000 <= trees.SHAPE_CELLS

    def test_small_cap_still_samples(self, monkeypatch, geometric_kernel):
        seen = []
        real = trees._batch_rows

        def spy(batch, n, remaining):
            rows = real(batch, n, remaining)
            seen.append(rows * n)
            return rows

        monkeypatch.setattr(trees, "SHAPE_CELLS", 120)
        monkeypatch.setattr(trees, "_batch_rows", spy)
        report = sample_size_conditioned(geometric_kernel, [1.0], 30, np.random.default_rng(4))
        report.tree.validate()
        assert report.tree.size == 30
        assert seen and max(seen) <= 120


class TestEnumeration:
    def test_geometric_trees_equally_likely(self, geometric_kernel):
        trees = enumerate_trees(geometric_kernel, [1.0], 4)
        assert len(trees) == catalan(3)
        for tree, p in trees:
            tree.validate()
            assert p == pytest.approx(2.0 ** -7)

    def test_size_probabilities_catalan(self, geometric_kernel):
        probs = size_probabilities(geometric_kernel, [1.0], 10)
        expected = [0.0] + [catalan(n - 1) / 2.0 ** (2 * n - 1) for n in range(1, 11)]
        assert_allclose(probs, expected, rtol=1e-10)

    def test_size_probabilities_match_enumeration(self, two_type_kernel):
        mu = [0.6, 0.4]
        probs = size_probabilities(two_type_kernel, mu, 5)
        for n in range(1, 6):
            assert sum(p for _, p in enumerate_trees(two_type_kernel, mu, n)) == pytest.approx(probs[n], rel=1e-12)

    def test_factored_and_explicit_agree(self, table_chain_kernel):
        mu = [0.3, 0.7]
        assert_allclose(size_probabilities(table_chain_kernel, mu, 7),
                        size_probabilities(table_chain_kernel.to_explicit(), mu, 7), atol=1e-12)

    def test_budget(self, geometric_kernel):
        with pytest.raises(ResourceBudgetError):
            enumerate_trees(geometric_kernel, [1.0], 6, budget=10)
