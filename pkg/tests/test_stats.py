import numpy as np
import pytest

from fractalvox.stats import bootstrap_mean_ci, wilcoxon_rank_sum

from oracles import wilcoxon_enumeration_oracle


class TestWilcoxon:
    def test_identical_samples_give_p_one(self):
        res = wilcoxon_rank_sum([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
        assert res.p_value == 1.0

    def test_disjoint_small_samples(self):
        res = wilcoxon_rank_sum([1, 2, 3], [10, 11, 12])
        assert res.exact
        assert res.p_value == pytest.approx(0.1, abs=1e-12)
        assert res.u_statistic == 0.0

    def test_symmetry_in_sample_order(self):
        a = [0.3, 0.5, 0.9, 1.4]
        b = [0.1, 0.2, 0.8]
        assert wilcoxon_rank_sum(a, b).p_value == pytest.approx(
            wilcoxon_rank_sum(b, a).p_value, abs=1e-12)

    def test_exact_path_matches_enumeration_oracle(self):
        rng = np.random.default_rng(4)
        for trial in range(200):
            na = int(rng.integers(3, 6))
            nb = int(rng.integers(3, 6))
            # draw from a coarse grid to get plenty of ties
            a = list(np.round(rng.uniform(0, 1, na), 1))
            b = list(np.round(rng.uniform(0, 1, nb), 1))
            got = wilcoxon_rank_sum(a, b)
            u_ref, p_ref = wilcoxon_enumeration_oracle(a, b)
            assert got.exact
            assert got.u_statistic == pytest.approx(u_ref, abs=1e-12), f"trial {trial}"
            assert got.p_value == pytest.approx(p_ref, abs=1e-12), f"trial {trial}"

    def test_all_size_pairs_up_to_exact_limit(self):
        rng = np.random.default_rng(11)
        for na in range(3, 10):
            for nb in range(3, 10):
                if na + nb > 12:
                    continue
                a = list(rng.normal(size=na))
                b = list(rng.normal(size=nb))
                got = wilcoxon_rank_sum(a, b)
                u_ref, p_ref = wilcoxon_enumeration_oracle(a, b)
                assert got.p_value == pytest.approx(p_ref, abs=1e-12)
                assert got.u_statistic == pytest.approx(u_ref, abs=1e-12)

    def test_normal_approximation_is_sane(self):
        rng = np.random.default_rng(8)
        a = list(rng.normal(0.0, 1.0, 30))
        b = list(rng.normal(2.0, 1.0, 30))
        res = wilcoxon_rank_sum(a, b)
        assert not res.exact
        assert res.p_value < 0.001
        same = wilcoxon_rank_sum(a, a)
        assert same.p_value == 1.0

    def test_approximation_close_to_exact_at_boundary(self):
        rng = np.random.default_rng(21)
        a = list(rng.normal(0, 1, 6))
        b = list(rng.normal(0.5, 1, 6))
        exact = wilcoxon_rank_sum(a, b)
        approx = wilcoxon_rank_sum(a + [a[0]], b)  # pooled 13 -> approximation
        assert exact.exact and not approx.exact
        assert approx.p_value == pytest.approx(exact.p_value, abs=0.15)

    def test_small_samples_rejected(self):
        with pytest.raises(ValueError):
            wilcoxon_rank_sum([1, 2], [3, 4, 5])


class TestBootstrap:
    def test_interval_contains_mean_of_tight_sample(self):
        rng = np.random.default_rng(0)
        lo, hi = bootstrap_mean_ci([5.0, 5.1, 4.9, 5.05], rng)
        assert lo <= 5.01 <= hi
        assert hi - lo < 0.3

    def test_seeded_and_reproducible(self):
        vals = [1.0, 2.0, 3.0, 4.0, 5.0]
        a = bootstrap_mean_ci(vals, np.random.default_rng(7))
        b = bootstrap_mean_ci(vals, np.random.default_rng(7))
        assert a == b

    def test_single_value_degenerates(self):
        assert bootstrap_mean_ci([2.5], np.random.default_rng(0)) == (2.5, 2.5)
