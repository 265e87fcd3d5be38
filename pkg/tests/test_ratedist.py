import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vrstream.ratedist import (
    HIGH,
    LOW,
    UNENCODED,
    RateModel,
    RateModelError,
    RdSampleSet,
    fit_rate_model,
    lloyd_max_two_level,
    rate_of_distortion,
    read_rate_model,
    read_rd_samples,
    stream_rate,
    write_rate_model,
    write_rd_samples,
)

RM = RateModel(sigma=10.0, d_max=46.0)


class TestRate:
    def test_zero_distortion(self):
        assert rate_of_distortion(RM, 0.0) == 1.0

    def test_clipped_at_ceiling(self):
        assert rate_of_distortion(RM, 46.0) == 0.0
        assert rate_of_distortion(RM, 80.0) == 0.0

    def test_reference_value(self):
        # exp(-0.46) from a 30-digit evaluation
        m = RateModel(10.0, 50.0)
        assert rate_of_distortion(m, 46.0) == pytest.approx(0.631283645506925969, rel=1e-14)

    def test_negative_rejected(self):
        with pytest.raises(RateModelError):
            rate_of_distortion(RM, -1.0)

    @given(d1=st.floats(0, 45.9), d2=st.floats(0, 45.9))
    def test_strictly_decreasing_below_ceiling(self, d1, d2):
        # below ~1e-9 apart the two exps can round to the same double
        if d2 - d1 > 1e-9:
            assert rate_of_distortion(RM, d1) > rate_of_distortion(RM, d2)

    def test_stream_rate_extremes(self):
        assert stream_rate(RM, np.full(60, 46.0)) == 0.0
        assert stream_rate(RM, np.zeros(60), K=60) == 60.0

    def test_stream_rate_matches_loop(self):
        d = np.random.default_rng(4).uniform(0, 60, 60)
        expect = sum(oracles.clipped_rate(x, 10.0, 46.0) for x in d)
        assert stream_rate(RM, d) == pytest.approx(expect, rel=1e-13)

    def test_stream_rate_length_checked(self):
        with pytest.raises(RateModelError):
            stream_rate(RM, np.zeros(5), K=6)

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=30), st.randoms())
    @settings(max_examples=50)
    def test_permutation_invariant(self, values, rnd):
        shuffled = list(values)
        rnd.shuffle(shuffled)
        assert stream_rate(RM, values) == pytest.approx(stream_rate(RM, shuffled), rel=1e-12, abs=1e-15)


def _samples(sigma, d_max, ds, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    r = np.array([oracles.clipped_rate(d, sigma, d_max) for d in ds])
    r = r * np.exp(noise * rng.standard_normal(len(ds))) if noise else r
    return np.asarray(ds, dtype=float), r


class TestFit:
    def test_round_trip(self):
        d, r = _samples(10.0, 46.0, [5, 15, 25, 35, 45])
        fit = fit_rate_model(RdSampleSet(d, r))
        assert fit.model.sigma == pytest.approx(10.0, rel=1e-9)
        assert fit.model.amplitude == pytest.approx(1.0, rel=1e-9)
        assert fit.model.d_max == 46.0  # nothing clipped: configured value kept

    def test_ceiling_from_clipped_sample(self):
        d, r = _samples(10.0, 46.0, [5, 15, 25, 35, 45, 46, 50])
        fit = fit_rate_model(RdSampleSet(d, r), d_max=99.0)
        assert fit.model.d_max == 46.0
        assert fit.used == 5

    def test_too_few_samples(self):
        d, r = _samples(10.0, 46.0, [5, 15])
        with pytest.raises(RateModelError, match="insufficient"):
            fit_rate_model(RdSampleSet(d, r))

    def test_noisy_fit(self):
        # multiplicative noise of ~3%, fixed seed
        d, r = _samples(10.0, 46.0, np.linspace(2, 44, 12), noise=0.03, seed=1)
        r = np.minimum.accumulate(r)
        fit = fit_rate_model(RdSampleSet(d, r))
        assert fit.model.sigma == pytest.approx(10.0, rel=0.10)

    def test_samples_validated(self):
        with pytest.raises(RateModelError, match="row 3"):
            RdSampleSet(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.5, 0.7]))
        with pytest.raises(RateModelError, match="strictly increasing"):
            RdSampleSet(np.array([1.0, 1.0, 3.0]), np.array([1.0, 0.5, 0.2]))

    def test_csv_round_trip(self, tmp_path):
        d, r = _samples(4.0, 46.0, [1, 5, 9, 13])
        write_rd_samples(RdSampleSet(d, r), tmp_path / "rd.csv")
        back = read_rd_samples(tmp_path / "rd.csv")
        np.testing.assert_array_equal(back.rate, r)

    def test_csv_header_required(self, tmp_path):
        (tmp_path / "rd.csv").write_text("1,1\n2,0.5\n3,0.2\n")
        with pytest.raises(RateModelError, match="header"):
            read_rd_samples(tmp_path / "rd.csv")

    def test_csv_names_offending_row(self, tmp_path):
        (tmp_path / "rd.csv").write_text("distortion,rate\n1,1\n2,0.5\n3,0.7\n")
        with pytest.raises(RateModelError, match="row 4"):
            read_rd_samples(tmp_path / "rd.csv")

    def test_empty_csv(self, tmp_path):
        (tmp_path / "rd.csv").write_text("")
        with pytest.raises(RateModelError, match="insufficient"):
            read_rd_samples(tmp_path / "rd.csv")

    def test_model_file_round_trip(self, tmp_path):
        m = RateModel(3.3, 41.0, 2.5)
        write_rate_model(m, tmp_path / "m.txt")
        assert read_rate_model(tmp_path / "m.txt") == m


def _wmse(x, w, q):
    return float((w * (x - q) ** 2).sum())


class TestLloydMax:
    def test_equal_values(self):
        tq = lloyd_max_two_level(np.array([7.0, 7.0, 7.0, 50.0]), np.ones(4), 46.0)
        assert tq.levels == (7.0, 7.0)
        assert tq.weighted_mse == 0.0
        assert tq.assignment[3] == UNENCODED

    def test_two_clusters(self):
        tq = lloyd_max_two_level(np.array([1, 1, 1, 9, 9, 9.0]), np.ones(6), 46.0)
        assert tq.levels == (1.0, 9.0)
        assert tq.boundary == 5.0
        assert list(tq.assignment) == [LOW] * 3 + [HIGH] * 3

    def test_all_unencoded(self):
        with pytest.raises(RateModelError):
            lloyd_max_two_level(np.full(4, 46.0), np.ones(4), 46.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_exhaustive_partition(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 40, 20)
        w = rng.uniform(0, 1, 20)
        tq = lloyd_max_two_level(x, w, 46.0)
        assert tq.weighted_mse == pytest.approx(oracles.best_two_partition(x, w), rel=1e-9, abs=1e-12)

    @given(st.lists(st.floats(0, 45), min_size=1, max_size=25), st.integers(0, 2**32 - 1))
    @settings(max_examples=80, deadline=None)
    def test_never_worse_than_one_level(self, values, seed):
        x = np.array(values)
        w = np.random.default_rng(seed).uniform(0.01, 1, len(x))
        tq = lloyd_max_two_level(x, w, 46.0)
        one = _wmse(x, w, (w * x).sum() / w.sum())
        assert tq.weighted_mse <= one + 1e-9 * max(1.0, one)
        assert tq.iterations <= len(x)
        # final assignment is a nearest-level partition
        q = tq.apply(x, 46.0)
        lo, hi = tq.levels
        assert np.all(np.abs(x - q) <= np.minimum(np.abs(x - lo), np.abs(x - hi)) + 1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_error_non_increasing_with_more_iterations(self, seed):
        rng = np.random.default_rng(50 + seed)
        x, w = rng.uniform(0, 40, 20), rng.uniform(0, 1, 20)
        errs = [lloyd_max_two_level(x, w, 46.0, max_iters=k).weighted_mse for k in range(1, 21)]
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))

    def test_single_entry(self):
        tq = lloyd_max_two_level(np.array([4.91383261]), np.array([0.46]), 46.0)
        assert tq.weighted_mse == 0.0 and tq.iterations == 1

    def test_apply_keeps_unencoded(self):
        x = np.array([2.0, 3.0, 46.0, 30.0, 31.0])
        tq = lloyd_max_two_level(x, np.ones(5), 46.0)
        np.testing.assert_allclose(tq.apply(x, 46.0), [2.5, 2.5, 46.0, 30.5, 30.5])
