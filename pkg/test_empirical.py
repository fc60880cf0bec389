"""
Tests for empirical offspring and pair measures.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from backend.empirical import (OFFSPRING_HEADER, OffspringMeasure, PairMeasure, check_consistency,
                               consistency_defect, induced_pair, is_shift_invariant, mass_upto,
                               nu_first, offspring_measure, offspring_measure_from_csv,
                               offspring_measure_to_csv, pair_first, pair_measure, pair_measure_from_csv,
                               pair_measure_tilde, pair_measure_to_csv, pair_second,
                               product_with_kernel, repair_consistency, truncate_measure,
                               truncation_pair, tv_distance)
from backend.model import EMPTY_CONFIG
from backend.trees import TypedTree, sample_size_conditioned
from shared.errors import DomainError
from shared.types import ConsistencyClass


class TestMeasuresOfATree:
    def test_offspring_measure(self, cherry, ab):
        nu = offspring_measure(cherry)
        assert nu.get(0, ab.config("a", "b")) == pytest.approx(1 / 3)
        assert nu.get(0, EMPTY_CONFIG) == pytest.approx(1 / 3)
        assert nu.get(1, EMPTY_CONFIG) == pytest.approx(1 / 3)
        assert nu.mass == pytest.approx(1.0)
        assert nu.first_moment == pytest.approx(2 / 3)

    def test_pair_measures(self, cherry):
        assert_allclose(pair_measure_tilde(cherry).entries, [[1 / 3, 1 / 3], [0.0, 0.0]])
        assert_allclose(pair_measure(cherry).entries, [[0.5, 0.5], [0.0, 0.0]])

    def test_single_vertex(self, ab):
        leaf = TypedTree(ab, (1,), (0,), (-1,))
        with pytest.raises(DomainError):
            pair_measure(leaf)
        assert pair_measure_tilde(leaf).mass == 0.0

    def test_tilde_pair_is_consistent(self, cherry):
        nu = offspring_measure(cherry)
        assert check_consistency(pair_measure_tilde(cherry), nu) is ConsistencyClass.CONSISTENT

    def test_pair_marginals(self, cherry):
        varpi = pair_measure_tilde(cherry)
        assert_allclose(pair_first(varpi), [2 / 3, 0.0])
        assert_allclose(pair_second(varpi), [1 / 3, 1 / 3])

    def test_marginal_gap_is_the_root(self, cherry):
        gap = nu_first(offspring_measure(cherry)) - pair_second(pair_measure_tilde(cherry))
        assert_allclose(gap, [1 / 3, 0.0], atol=1e-15)

    def test_identities_on_sampled_trees(self, chain_kernel, rng):
        for n in (5, 17, 40):
            tree = sample_size_conditioned(chain_kernel, [0.5, 0.5], n, rng).tree
            nu = offspring_measure(tree)
            varpi = pair_measure_tilde(tree)
            assert np.abs(consistency_defect(varpi, nu)).max() <= 1e-12
            root = np.zeros(2)
            root[tree.types[0]] = 1.0 / n
            assert_allclose(nu_first(nu) - pair_second(varpi), root, atol=1e-12)


class TestConsistencyClasses:
    def test_sub_consistent(self, cherry, ab):
        nu = offspring_measure(cherry)
        varpi = PairMeasure(ab, pair_measure_tilde(cherry).entries + [[0.0, 0.0], [0.1, 0.0]])
        assert check_consistency(varpi, nu) is ConsistencyClass.SUB_CONSISTENT

    def test_neither(self, cherry, ab):
        nu = offspring_measure(cherry)
        varpi = PairMeasure(ab, [[0.5, 0.0], [0.1, 0.0]])
        assert check_consistency(varpi, nu) is ConsistencyClass.NEITHER

    def test_negative_weights_rejected(self, ab):
        with pytest.raises(DomainError):
            PairMeasure(ab, [[-0.1, 0.0], [0.0, 1.1]])
        with pytest.raises(DomainError):
            OffspringMeasure(ab, {(0, EMPTY_CONFIG): -0.5})


class TestRepair:
    def test_repair_is_consistent_and_close(self, cherry, ab):
        nu = offspring_measure(cherry)
        varpi = PairMeasure(ab, pair_measure_tilde(cherry).entries + [[0.0, 0.0], [0.1, 0.0]])
        for n in (10, 100):
            repaired_pair, repaired = repair_consistency(varpi, nu, n)
            assert check_consistency(repaired_pair, repaired) is ConsistencyClass.CONSISTENT
            assert repaired.mass == pytest.approx(1.0)
            assert tv_distance(repaired, nu) == pytest.approx(0.1 / n)
            assert tv_distance(repaired_pair, varpi) <= 0.1 / n + 1e-12

    def test_distance_scales_like_one_over_n(self, cherry, ab):
        nu = offspring_measure(cherry)
        varpi = PairMeasure(ab, pair_measure_tilde(cherry).entries + [[0.05, 0.0], [0.1, 0.0]])
        ns = np.array([10, 20, 40, 80, 160])
        distances = [tv_distance(repair_consistency(varpi, nu, int(n))[1], nu) for n in ns]
        slope = np.polyfit(np.log(ns), np.log(distances), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.1)

    def test_rejects_non_sub_consistent(self, cherry, ab):
        with pytest.raises(DomainError, match="sub-consistent"):
            repair_consistency(PairMeasure(ab, np.zeros((2, 2))), offspring_measure(cherry), 10)

    def test_level_too_small(self, ab):
        nu = OffspringMeasure(ab, {(0, EMPTY_CONFIG): 1.0})
        with pytest.raises(DomainError):
            repair_consistency(PairMeasure(ab, [[2.0, 0.0], [0.0, 0.0]]), nu, 1)


class TestTruncation:
    def test_truncate_renormalizes(self, cherry):
        nu = offspring_measure(cherry)
        assert mass_upto(nu, 1) == pytest.approx(2 / 3)
        nu_1 = truncate_measure(nu, 1)
        assert nu_1.mass == pytest.approx(1.0)
        assert nu_1.max_count == 0
        assert truncate_measure(nu, 2) is nu

    def test_truncation_pair_consistent(self, cherry):
        varpi_k, nu_k = truncation_pair(offspring_measure(cherry), 2)
        assert check_consistency(varpi_k, nu_k) is ConsistencyClass.CONSISTENT

    def test_no_mass(self, ab):
        nu = OffspringMeasure(ab, {(0, ab.config("a", "a")): 1.0})
        with pytest.raises(DomainError):
            truncate_measure(nu, 1)


class TestShiftInvariance:
    def test_critical_product_measure(self, binary_kernel):
        atoms = [(0, c) for c, _ in binary_kernel.law(0)]
        nu = OffspringMeasure(binary_kernel.alphabet, product_with_kernel(np.array([1.0]), binary_kernel, atoms))
        assert is_shift_invariant(nu)
        assert check_consistency(induced_pair(nu), nu) is ConsistencyClass.CONSISTENT

    def test_finite_tree_is_not(self, cherry):
        assert not is_shift_invariant(offspring_measure(cherry))


class TestCsv:
    def test_offspring_csv(self, cherry, ab):
        nu = offspring_measure(cherry)
        text = offspring_measure_to_csv(nu)
        lines = text.splitlines()
        assert lines[0] == ",".join(OFFSPRING_HEADER)
        assert lines[1].startswith("a,0,,")
        assert lines[2].startswith("a,2,a|b,")
        assert tv_distance(offspring_measure_from_csv(text, ab), nu) == 0.0

    def test_pair_csv_skips_zeros(self, cherry, ab):
        varpi = pair_measure(cherry)
        text = pair_measure_to_csv(varpi)
        assert text == "from,to,weight\na,a,0.5\na,b,0.5\n"
        assert_allclose(pair_measure_from_csv(text, ab).entries, varpi.entries)

    def test_count_mismatch(self, ab):
        with pytest.raises(DomainError):
            offspring_measure_from_csv("type,count,children,weight\na,3,a|b,1.0\n", ab)
