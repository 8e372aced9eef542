"""Loss-model tests.

Frozen oracle for the closed-form evaluation: with A=2, alpha=0.3,
beta=0.2, E=0.5 at X=1e6, D_f=1e5 the model gives
0.5 + 2*10^(-1.8)*10^(-1.0) = 0.5 + 2*10^(-2.8) = 0.5031697863849223
(hand-computed; 10^(-2.8) = 0.001584893192461114).
"""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radvqa.scaling import (
    LossPoint,
    ScalingError,
    ScalingFit,
    fit,
    fit_report,
    mcq_loss_floor,
    predict,
    read_points_csv,
    write_fit_json,
    write_points_csv,
)

TRUTH = ScalingFit(A=2.0, alpha=0.3, beta=0.2, E=0.5)
GRID = [(x, d) for x in (1e6, 1e7, 1e8) for d in (1e5, 1e6, 1e7)]


def grid_points(params: ScalingFit, noise: float = 0.0, seed: int = 0) -> list[LossPoint]:
    rng = np.random.default_rng(seed)
    return [LossPoint(X=x, D_f=d, L=predict(params, x, d) + (rng.normal(0, noise) if noise else 0.0))
            for x, d in GRID]


class TestPredict:
    def test_degenerate_exponents_give_constant(self):
        flat = ScalingFit(A=1.0, alpha=0.0, beta=0.0, E=0.0)
        for x, d in [(1.0, 1.0), (1e3, 1e9), (7.5, 0.2)]:
            assert predict(flat, x, d) == 1.0

    def test_hand_computed_value(self):
        got = predict(TRUTH, 1e6, 1e5)
        assert got == pytest.approx(0.5031697863849223, abs=1e-15)
        assert got == pytest.approx(0.5 + 2.0 * 10 ** -2.8, abs=1e-15)

    def test_limit_approaches_floor(self):
        losses = [predict(TRUTH, 10.0 ** k, 10.0 ** k) for k in range(3, 13)]
        assert all(a > b for a, b in zip(losses, losses[1:]))
        assert losses[-1] == pytest.approx(0.5, abs=1e-4)

    def test_nonpositive_inputs_rejected(self):
        with pytest.raises(ScalingError):
            predict(TRUTH, 0.0, 1e5)
        with pytest.raises(ScalingError):
            predict(TRUTH, 1e5, -3.0)

    @given(a=st.floats(0.1, 10.0), alpha=st.floats(0.05, 1.5), beta=st.floats(0.0, 1.5),
           e=st.floats(0.0, 1.0), u=st.floats(0.0, 5.9), du=st.floats(0.1, 3.0),
           d_exp=st.floats(0.0, 6.0))
    @settings(max_examples=80, deadline=None)
    def test_strictly_decreasing_in_x(self, a, alpha, beta, e, u, du, d_exp):
        params = ScalingFit(A=a, alpha=alpha, beta=beta, E=e)
        d = 10.0 ** d_exp
        assert predict(params, 10.0 ** (u + du), d) < predict(params, 10.0 ** u, d)

    @given(a=st.floats(0.1, 10.0), alpha=st.floats(0.0, 1.5), beta=st.floats(0.05, 1.5),
           e=st.floats(0.0, 1.0), u=st.floats(0.0, 5.9), du=st.floats(0.1, 3.0),
           x_exp=st.floats(0.0, 6.0))
    @settings(max_examples=80, deadline=None)
    def test_strictly_decreasing_in_tokens(self, a, alpha, beta, e, u, du, x_exp):
        params = ScalingFit(A=a, alpha=alpha, beta=beta, E=e)
        x = 10.0 ** x_exp
        assert predict(params, x, 10.0 ** (u + du)) < predict(params, x, 10.0 ** u)


class TestValidation:
    def test_loss_point_requires_positive_fields(self):
        for bad in [dict(X=0, D_f=1, L=1), dict(X=1, D_f=-2, L=1),
                    dict(X=1, D_f=1, L=0), dict(X=float("nan"), D_f=1, L=1)]:
            with pytest.raises(ScalingError):
                LossPoint(**bad)

    def test_fit_params_bounds(self):
        with pytest.raises(ScalingError):
            ScalingFit(A=0.0, alpha=0.1, beta=0.1, E=0.0)
        with pytest.raises(ScalingError):
            ScalingFit(A=1.0, alpha=-0.1, beta=0.1, E=0.0)
        with pytest.raises(ScalingError):
            ScalingFit(A=1.0, alpha=0.1, beta=0.1, E=-1.0)


class TestFit:
    def test_noiseless_round_trip(self):
        got = fit(grid_points(TRUTH))
        for name in ("A", "alpha", "beta", "E"):
            want = getattr(TRUTH, name)
            assert abs(getattr(got, name) - want) / want <= 1e-3, name
        assert got.residual <= 1e-9
        assert got.n_points == 9

    def test_pure_power_law_with_floor_at_bound(self):
        truth = ScalingFit(A=0.5, alpha=0.15, beta=0.35, E=1e-12)
        got = fit(grid_points(truth))
        for name in ("A", "alpha", "beta"):
            want = getattr(truth, name)
            assert abs(getattr(got, name) - want) / want <= 1e-3, name
        assert got.E <= 1e-6

    def test_deterministic(self):
        f1, f2 = fit(grid_points(TRUTH, noise=0.01, seed=4)), fit(grid_points(TRUTH, noise=0.01, seed=4))
        assert (f1.A, f1.alpha, f1.beta, f1.E, f1.residual) == (f2.A, f2.alpha, f2.beta, f2.E, f2.residual)

    def test_noisy_residual_tracks_noise_scale(self):
        got = fit(grid_points(TRUTH, noise=0.01, seed=1))
        assert 0.001 < got.residual < 0.03

    def test_explicit_init_is_honored(self):
        got = fit(grid_points(TRUTH), init=(1.0, 0.1, 0.1, 0.1))
        assert abs(got.A - 2.0) / 2.0 <= 1e-3

    def test_single_x_axis_is_underdetermined(self):
        pts = [LossPoint(X=1e6, D_f=d, L=0.5 + 0.01 * i)
               for i, d in enumerate([1e5, 2e5, 4e5, 8e5, 1.6e6, 3.2e6])]
        with pytest.raises(ScalingError, match="X.*alpha"):
            fit(pts)

    def test_single_token_axis_is_underdetermined(self):
        pts = [LossPoint(X=x, D_f=1e5, L=0.5 + 0.01 * i)
               for i, x in enumerate([1e6, 2e6, 4e6, 8e6, 1.6e7, 3.2e7])]
        with pytest.raises(ScalingError, match="D_f.*beta"):
            fit(pts)

    def test_too_few_points(self):
        with pytest.raises(ScalingError, match="at least 6"):
            fit(grid_points(TRUTH)[:5])

    def test_respects_parameter_bounds(self):
        got = fit(grid_points(TRUTH))
        assert got.A > 0 and got.alpha >= 0 and got.beta >= 0 and got.E >= 0

    def test_covariance_present_with_spare_dof(self):
        got = fit(grid_points(TRUTH, noise=0.01, seed=2))
        assert got.covariance is not None
        assert len(got.covariance) == 4 and all(len(row) == 4 for row in got.covariance)
        assert all(got.covariance[i][i] >= 0 for i in range(4))


class TestFloor:
    def test_four_choices(self):
        assert mcq_loss_floor(4) == pytest.approx(1.386294, abs=1e-6)
        assert mcq_loss_floor(4) == math.log(4)

    def test_two_choices(self):
        assert mcq_loss_floor(2) == pytest.approx(0.6931, abs=1e-4)

    def test_exact_log_identity(self):
        for k in range(2, 11):
            assert mcq_loss_floor(k) == math.log(k)

    def test_rejects_degenerate_or_non_integer(self):
        for bad in (1, 0, -3):
            with pytest.raises(ScalingError):
                mcq_loss_floor(bad)
        with pytest.raises(ScalingError):
            mcq_loss_floor(4.0)
        with pytest.raises(ScalingError):
            mcq_loss_floor(True)


class TestIo:
    def test_csv_round_trip(self, tmp_path):
        pts = grid_points(TRUTH, noise=0.01, seed=3)
        path = tmp_path / "pts.csv"
        write_points_csv(pts, path)
        assert read_points_csv(path) == pts

    def test_csv_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,tokens,loss\n1,2,3\n")
        with pytest.raises(ScalingError, match="header"):
            read_points_csv(path)

    def test_csv_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("X,D_f,L\n1e6,1e5,0.5\n\n1e6,oops,0.5\n")
        with pytest.raises(ScalingError, match="line 4"):
            read_points_csv(path)

    def test_csv_nonpositive_value_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("X,D_f,L\n1e6,1e5,-0.5\n")
        with pytest.raises(ScalingError, match="line 2"):
            read_points_csv(path)

    def test_fit_report_json(self, tmp_path):
        got = fit(grid_points(TRUTH))
        path = tmp_path / "fit.json"
        report = write_fit_json(got, path)
        loaded = json.loads(path.read_text())
        assert loaded == report
        assert loaded["A"] == got.A and loaded["n_points"] == 9

    def test_report_handles_missing_covariance(self):
        report = fit_report(ScalingFit(A=1.0, alpha=0.1, beta=0.1, E=0.0))
        assert report["covariance"] is None
