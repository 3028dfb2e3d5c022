import math
from itertools import combinations

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from archsmith.errors import ValidationError
from archsmith.stats import DunnResult, TestResult, dunn, kruskal_wallis, rank_sum

THREE_GROUPS = ([1, 2, 3], [4, 5, 6], [7, 8, 9])


class TestKruskalWallis:
    def test_hand_derived_h(self):
        # Rank sums 6, 15, 24; H = 12/(9*10) * (12 + 75 + 192) - 30 = 7.2.
        result = kruskal_wallis(THREE_GROUPS)
        assert result.statistic == pytest.approx(7.2, abs=1e-9)
        assert result.p_value < 0.05

    def test_identical_groups_degenerate(self):
        result = kruskal_wallis(([5, 5, 5], [5, 5], [5, 5, 5, 5]))
        assert result.statistic == 0.0
        assert result.p_value == 1.0

    def test_matches_scipy_reference(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            groups = [rng.integers(0, 8, size=int(rng.integers(3, 12)))
                      for _ in range(int(rng.integers(2, 5)))]
            ours = kruskal_wallis(groups)
            theirs = scipy.stats.kruskal(*groups)
            assert ours.statistic == pytest.approx(theirs.statistic, abs=1e-9)
            assert ours.p_value == pytest.approx(theirs.pvalue, abs=1e-9)

    @given(st.lists(st.integers(-100, 100), min_size=3, max_size=10, unique=True))
    @settings(max_examples=40)
    def test_invariant_under_monotone_transform(self, values):
        a, b = values[: len(values) // 2], values[len(values) // 2:]
        before = kruskal_wallis([a, b])
        transformed = kruskal_wallis([[math.exp(v / 50) for v in a],
                                      [math.exp(v / 50) for v in b]])
        assert before.statistic == pytest.approx(transformed.statistic, abs=1e-9)

    def test_exact_mode_matches_approx_in_decision_region(self):
        # The chi-square approximation is compared against the permutation
        # oracle where the test actually decides anything: shifted groups.
        rng = np.random.default_rng(17)
        for _ in range(15):
            groups = [rng.normal(loc, 1.0, size=4) for loc in (0.0, 1.5, 3.0)]
            approx = kruskal_wallis(groups, method="approx")
            exact = kruskal_wallis(groups, method="exact")
            assert abs(approx.p_value - exact.p_value) < 0.05

    def test_exact_mode_size_limit(self):
        with pytest.raises(ValidationError, match="exact"):
            kruskal_wallis(([1] * 7, [2] * 7), method="exact")

    def test_empty_group_rejected(self):
        with pytest.raises(ValidationError):
            kruskal_wallis(([1, 2], []))

    def test_p_uniform_under_null(self):
        # Exchangeable pooled data relabeled 1000 times: p-values should be
        # close to uniform (Kolmogorov distance under 0.1).
        rng = np.random.default_rng(8)
        pooled = rng.normal(size=60)
        p_values = []
        for _ in range(1000):
            shuffled = rng.permutation(pooled)
            p_values.append(kruskal_wallis(
                [shuffled[:20], shuffled[20:40], shuffled[40:]]).p_value)
        p_values = np.sort(p_values)
        grid = np.arange(1, 1001) / 1000
        assert np.max(np.abs(p_values - grid)) < 0.1


class TestDunn:
    def test_hand_derived_z_and_p(self):
        # Mean ranks 2, 5, 8; pooled variance N(N+1)/12 = 7.5; pair variance
        # 7.5 * (2/3) = 5, so z = 6/sqrt(5) for the extreme pair.
        result = dunn(THREE_GROUPS)
        assert result.z[2, 0] == pytest.approx(6 / math.sqrt(5), abs=1e-12)
        assert result.p_raw[0, 2] == pytest.approx(0.0072903580915, abs=1e-10)
        assert result.p_raw[0, 1] == pytest.approx(0.1797124948790, abs=1e-10)
        assert result.p_bonferroni[0, 2] == pytest.approx(3 * 0.0072903580915,
                                                          abs=1e-9)

    def test_identical_groups_p_one(self):
        result = dunn(([3, 3], [3, 3, 3], [3]))
        assert np.all(result.p_raw == 1.0)

    def test_exact_permutation_cross_check(self):
        # Enumerate every 3/3/3 split of the pooled ranks and compare the
        # tail mass of the mean-rank difference with the normal approximation.
        result = dunn(THREE_GROUPS)
        values = list(range(1, 10))
        observed = abs(result.mean_ranks[2] - result.mean_ranks[0])
        hits = total = 0
        for g0 in combinations(values, 3):
            rest = [v for v in values if v not in g0]
            for g1 in combinations(rest, 3):
                g2 = [v for v in rest if v not in g1]
                total += 1
                if abs(np.mean(g2) - np.mean(g0)) >= observed - 1e-12:
                    hits += 1
        exact_p = hits / total
        assert abs(result.p_raw[0, 2] - exact_p) < 0.05
        assert result.p_raw[0, 2] < 0.05  # both calls flag the extreme pair

    def test_symmetry_and_diagonal(self):
        result = dunn(THREE_GROUPS)
        assert np.allclose(result.p_raw, result.p_raw.T)
        assert np.allclose(result.z, -result.z.T)
        assert np.all(np.diag(result.p_raw) == 1.0)

    def test_bonferroni_caps_at_one(self):
        result = dunn(([1, 2], [1.5, 2.5], [1.2, 2.2], [1.1, 2.4]))
        assert np.all(result.p_bonferroni <= 1.0)
        assert np.all(result.p_bonferroni >= result.p_raw - 1e-15)

    def test_separated_groups_small_p(self):
        rng = np.random.default_rng(0)
        groups = [rng.normal(loc, 0.5, size=40) for loc in (0.0, 5.0, 10.0)]
        result = dunn(groups)
        for i, j in combinations(range(3), 2):
            assert result.p_raw[i, j] < 0.05


class TestRankSum:
    def test_identical_samples_p_one(self):
        result = rank_sum([1, 2, 3], [1, 2, 3])
        assert result.p_value > 0.99

    def test_disjoint_samples_minimal_u(self):
        result = rank_sum([1, 2, 3], [10, 11, 12])
        assert result.statistic == 0.0
        exact = rank_sum([1, 2, 3], [10, 11, 12], method="exact")
        # Oracle: 20 equally likely splits, the two extremes reach |U-bar|=4.5.
        assert exact.p_value == pytest.approx(2 / 20, abs=1e-12)

    def test_exact_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=4)
        b = rng.normal(size=5)
        ours = rank_sum(a, b, method="exact")
        pooled = np.concatenate([a, b])
        ranks = scipy.stats.rankdata(pooled)
        mean_u = len(a) * len(b) / 2
        observed = abs(ours.statistic - mean_u)
        hits = total = 0
        for chosen in combinations(range(9), 4):
            u = ranks[list(chosen)].sum() - 4 * 5 / 2
            total += 1
            if abs(u - mean_u) >= observed - 1e-12:
                hits += 1
        assert ours.p_value == pytest.approx(hits / total, abs=1e-12)

    def test_matches_scipy_reference(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            a = rng.integers(0, 10, size=int(rng.integers(5, 20)))
            b = rng.integers(0, 10, size=int(rng.integers(5, 20)))
            ours = rank_sum(a, b)
            theirs = scipy.stats.mannwhitneyu(a, b, use_continuity=True,
                                              method="asymptotic")
            assert ours.statistic == pytest.approx(theirs.statistic, abs=1e-9)
            assert ours.p_value == pytest.approx(theirs.pvalue, abs=1e-9)

    def test_exact_within_tolerance_of_approx(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            n1 = int(rng.integers(3, 7))
            n2 = int(rng.integers(3, 13 - n1))
            a, b = rng.normal(size=n1), rng.normal(size=n2)
            approx = rank_sum(a, b, method="approx")
            exact = rank_sum(a, b, method="exact")
            assert abs(approx.p_value - exact.p_value) < 0.05

    def test_p_uniform_under_null(self):
        rng = np.random.default_rng(9)
        pooled = rng.normal(size=50)
        p_values = []
        for _ in range(1000):
            shuffled = rng.permutation(pooled)
            p_values.append(rank_sum(shuffled[:25], shuffled[25:]).p_value)
        p_values = np.sort(p_values)
        grid = np.arange(1, 1001) / 1000
        assert np.max(np.abs(p_values - grid)) < 0.1

    def test_exact_mode_size_limit(self):
        with pytest.raises(ValidationError, match="exact"):
            rank_sum([1] * 7, [2] * 6, method="exact")
