import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vrstream.viewmodel import (
    ConvergenceError,
    ModelError,
    TransitionModel,
    ViewSpace,
    build_linear_transition,
    cumulative_weights,
    fov_matrix,
    load_transition_csv,
    propagated_weights,
    save_transition_csv,
    steady_state,
)

FOV_K5_A1 = np.array(
    [
        [1, 1, 0, 0, 1],
        [1, 1, 1, 0, 0],
        [0, 1, 1, 1, 0],
        [0, 0, 1, 1, 1],
        [1, 0, 0, 1, 1],
    ]
)


class TestViewSpace:
    def test_fov_must_not_cover_circle(self):
        with pytest.raises(ModelError):
            ViewSpace(5, 2)

    def test_needs_two_angles(self):
        with pytest.raises(ModelError):
            ViewSpace(1, 0)


class TestLinearTransition:
    def test_uniform_kernel_is_circulant(self):
        m = build_linear_transition(ViewSpace(5, 0), 2)
        for k in range(1, 5):
            np.testing.assert_array_equal(m.P[k], np.roll(m.P[0], k))
        np.testing.assert_allclose(steady_state(m).q, np.full(5, 0.2), atol=1e-12)

    def test_three_angle_kernel(self):
        m = build_linear_transition(ViewSpace(3, 0), 1, slope=0.5)
        np.testing.assert_allclose(m.P[0], [0.5, 0.25, 0.25], rtol=0, atol=1e-15)

    def test_hotspots_raise_steady_state(self):
        m = build_linear_transition(ViewSpace(60, 7), 1, [(14, 2.0), (44, 2.0)])
        q = steady_state(m).q
        idx = np.arange(60)

        def dist(h):
            d = np.abs(idx - h) % 60
            return np.minimum(d, 60 - d)

        away = (dist(14) > 1) & (dist(44) > 1)  # outside the v_max band of both hotspots
        assert q[14] > q[away].max()
        assert q[44] > q[away].max()

    def test_band_too_wide(self):
        with pytest.raises(ModelError, match="too wide"):
            build_linear_transition(ViewSpace(5, 0), 3)

    @pytest.mark.parametrize("mult", [0.0, -1.0, 0.5])
    def test_bad_multiplier(self, mult):
        with pytest.raises(ModelError):
            build_linear_transition(ViewSpace(10, 1), 1, [(3, mult)])

    def test_multiplier_that_empties_band_rejected(self):
        with pytest.raises(ModelError, match="in-band"):
            build_linear_transition(ViewSpace(10, 1), 1, [(3, 4.0)])

    @given(K=st.integers(5, 40), v=st.integers(1, 2), mult=st.floats(1.0, 1.9))
    @settings(max_examples=40, deadline=None)
    def test_invariants(self, K, v, mult):
        if 2 * v + 1 > K:
            return
        m = build_linear_transition(ViewSpace(K, 0), v, [(0, mult)])
        assert np.all(m.P >= 0)
        np.testing.assert_allclose(m.P.sum(axis=1), 1.0, atol=1e-12)


class TestTransitionModel:
    def test_rejects_out_of_band_mass(self):
        P = np.full((4, 4), 0.25)
        with pytest.raises(ModelError, match="row 1, column 3"):
            TransitionModel(P, 1)

    def test_rejects_bad_row_sum(self):
        P = np.eye(4) * 0.9
        with pytest.raises(ModelError, match="row 1 sums"):
            TransitionModel(P, 1)

    def test_csv_round_trip(self, tmp_path):
        m = build_linear_transition(ViewSpace(12, 1), 2, [(3, 1.5)])
        save_transition_csv(m, tmp_path / "p.csv")
        back = load_transition_csv(tmp_path / "p.csv", 2)
        np.testing.assert_array_equal(back.P, m.P)

    def test_csv_reports_first_violation(self, tmp_path):
        (tmp_path / "p.csv").write_text("0.5,0.5,0\n0.5,0.5,0\n0,-0.5,1.5\n")
        with pytest.raises(ModelError, match="row 3, column 2"):
            load_transition_csv(tmp_path / "p.csv", 1)

    def test_csv_ragged(self, tmp_path):
        (tmp_path / "p.csv").write_text("1,0\n0,1,0\n")
        with pytest.raises(ModelError, match="row 2"):
            load_transition_csv(tmp_path / "p.csv", 1)


class TestSteadyState:
    def test_doubly_stochastic(self):
        q = steady_state(TransitionModel(np.full((3, 3), 1 / 3), 1)).q
        np.testing.assert_allclose(q, 1 / 3, atol=1e-12)

    def test_matches_dense_eigensolve(self):
        P = oracles.banded_matrix(4, 1, np.random.default_rng(7))
        q = steady_state(TransitionModel(P, 1)).q
        np.testing.assert_allclose(q, oracles.eig_steady_state(P), atol=1e-8)

    def test_fixed_point(self):
        P = oracles.banded_matrix(20, 2, np.random.default_rng(3))
        m = TransitionModel(P, 2)
        q = steady_state(m).q
        assert np.max(np.abs(q @ P - q)) <= 1e-9
        assert abs(q.sum() - 1) <= 1e-12
        np.testing.assert_allclose(q @ P, q, atol=1e-12)

    def test_iteration_cap_reports_failure(self):
        m = build_linear_transition(ViewSpace(60, 7), 1, [(14, 2.0)])
        with pytest.raises(ConvergenceError, match="did not converge"):
            steady_state(m, max_iters=10)


class TestFov:
    def test_matches_published_matrix(self):
        np.testing.assert_array_equal(fov_matrix(ViewSpace(5, 1)).C, FOV_K5_A1)

    def test_zero_width_is_identity(self):
        np.testing.assert_array_equal(fov_matrix(ViewSpace(7, 0)).C, np.eye(7))

    def test_row_sums(self):
        C = fov_matrix(ViewSpace(60, 7)).C
        assert np.all(C.sum(axis=1) == 15)
        for k in range(1, 60):
            np.testing.assert_array_equal(C[k], np.roll(C[k - 1], 1))


class TestPropagatedWeights:
    def test_zero_steps_zero_width(self):
        sp = ViewSpace(6, 0)
        m = build_linear_transition(sp, 1)
        np.testing.assert_array_equal(propagated_weights(sp, m, fov_matrix(sp), 2, 0), np.eye(6)[2])

    def test_zero_steps_is_fov_row(self):
        sp = ViewSpace(5, 1)
        m = build_linear_transition(sp, 1)
        np.testing.assert_array_equal(propagated_weights(sp, m, fov_matrix(sp), 0, 0), [1, 1, 0, 0, 1])

    @pytest.mark.parametrize("k", range(8))
    def test_path_enumeration(self, k):
        P = oracles.banded_matrix(8, 1, np.random.default_rng(11))
        sp, m = ViewSpace(8, 1), TransitionModel(P, 1)
        fov = fov_matrix(sp)
        np.testing.assert_allclose(propagated_weights(sp, m, fov, k, 3), oracles.path_weights(P, 1, k, 3), atol=1e-14)
        np.testing.assert_allclose(
            propagated_weights(sp, m, fov, k, 3, fov_first=True),
            oracles.path_weights_fov_first(P, 1, k, 3),
            atol=1e-14,
        )

    def test_orders_agree_for_circulant_chain(self):
        sp = ViewSpace(12, 2)
        m = build_linear_transition(sp, 2)
        fov = fov_matrix(sp)
        for k in (0, 5):
            np.testing.assert_allclose(
                propagated_weights(sp, m, fov, k, 4),
                propagated_weights(sp, m, fov, k, 4, fov_first=True),
                atol=1e-14,
            )

    @given(seed=st.integers(0, 10_000), n=st.integers(0, 12), k=st.integers(0, 15), first=st.booleans())
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_fov_size(self, seed, n, k, first):
        P = oracles.banded_matrix(16, 2, np.random.default_rng(seed))
        sp, m = ViewSpace(16, 3), TransitionModel(P, 2)
        w = propagated_weights(sp, m, fov_matrix(sp), k, n, fov_first=first)
        assert np.all(w >= 0)
        assert abs(w.sum() - 7) <= 1e-9

    def test_powers_stay_stochastic(self):
        P = oracles.banded_matrix(30, 1, np.random.default_rng(5))
        m = TransitionModel(P, 1)
        for n in range(0, 12):
            np.testing.assert_allclose(m.power(n).sum(axis=1), 1.0, atol=1e-9)

    def test_cumulative_weights_sum_rows(self):
        P = oracles.banded_matrix(10, 1, np.random.default_rng(2))
        sp, m = ViewSpace(10, 1), TransitionModel(P, 1)
        fov = fov_matrix(sp)
        G = cumulative_weights(m, fov, 2, 3)
        expect = sum(propagated_weights(sp, m, fov, 4, 2 + h) for h in range(3))
        np.testing.assert_allclose(G[4], expect, atol=1e-13)

    def test_bad_index(self):
        sp = ViewSpace(5, 1)
        m = build_linear_transition(sp, 1)
        with pytest.raises(IndexError):
            propagated_weights(sp, m, fov_matrix(sp), 5, 0)
