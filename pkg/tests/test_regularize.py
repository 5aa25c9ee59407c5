"""Vanishing-viscosity limit of the damped wave model."""

import numpy as np
import pytest

from mgtlab import (
    ExteriorInput,
    Potential,
    fit_slope,
    pulse_envelope,
    ramp_envelope,
    solve_linear_mgt,
)
from mgtlab.errors import NotTimeReversalInvariant
from mgtlab.regularize import (
    ibp_residual,
    regularization_sweep,
    solve_regularized,
)

T = 1.0
DT = 2e-3
LADDER = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]


@pytest.fixture(scope="module")
def phi(grid31):
    return ExteriorInput(grid31, grid31.w1, pulse_envelope(T, 4.0))


@pytest.fixture(scope="module")
def ladder(op31, params, phi):
    return regularization_sweep(op31, params, None, None, phi, LADDER, dt=DT, T=T)


def test_eps_zero_is_bit_identical(op31, params, phi):
    base = solve_linear_mgt(op31, params, None, None, phi, dt=DT, T=T)
    reg = solve_regularized(op31, params, None, None, phi, eps=0.0, dt=DT, T=T)
    for a, b in zip(base.slabs(), reg.slabs()):
        assert np.array_equal(a, b)


def test_positive_eps_changes_solution(op31, params, phi):
    base = solve_linear_mgt(op31, params, None, None, phi, dt=DT, T=T)
    reg = solve_regularized(op31, params, None, None, phi, eps=1e-2, dt=DT, T=T)
    assert not np.array_equal(base.slabs()[0], reg.slabs()[0])


def test_negative_eps_rejected(op31, params, phi):
    with pytest.raises(ValueError):
        solve_regularized(op31, params, None, None, phi, eps=-1e-3, dt=DT, T=T)


def test_deviations_strictly_decrease(ladder):
    for col in (ladder.dev_u, ladder.dev_ut, ladder.dev_utt):
        assert all(a > b for a, b in zip(col, col[1:]))


def test_deviation_rate_is_first_order_in_eps(ladder):
    # skip the coarsest rung, it is outside the asymptotic regime
    slope = fit_slope(ladder.eps_values[1:], ladder.dev_u[1:])
    assert slope == pytest.approx(1.0, abs=0.1)


def test_weighted_dissipation_uniformly_bounded(ladder):
    wd = np.asarray(ladder.weighted_dissipation)
    assert np.all(np.isfinite(wd))
    half = max(2, wd.size // 2)
    drift = abs(float(wd.max() - wd[:half].max())) / float(wd.max())
    assert drift <= 0.2


def test_ladder_rows_shape(ladder):
    rows = list(ladder.rows())
    assert len(rows) == len(LADDER) + 1
    assert rows[0][0] == "eps"


def test_rk4_scheme_supported(op31, params, phi):
    traj = solve_regularized(op31, params, None, None, phi, eps=1e-3,
                             dt=DT, T=T, scheme="rk4")
    mid = solve_regularized(op31, params, None, None, phi, eps=1e-3, dt=DT, T=T)
    ref = np.linalg.norm(mid.slabs()[0][:, -1])
    assert np.linalg.norm(traj.slabs()[0][:, -1] - mid.slabs()[0][:, -1]) <= 1e-3 * ref


class TestIBP:
    @staticmethod
    def sources(grid):
        x = grid.nodes()[grid.omega, 0]
        prof = np.exp(-4.0 * x**2)
        F = lambda t: prof * (t**3 * (T - t))
        G = lambda t: prof * ((T - t) ** 3 * t)
        return F, G

    def test_residual_small(self, grid31, op31, params):
        F, G = self.sources(grid31)
        assert ibp_residual(op31, params, None, None, F, G, dt=1e-3, T=T) <= 1e-4

    def test_residual_second_order_in_dt(self, grid31, op31, params):
        F, G = self.sources(grid31)
        res = [ibp_residual(op31, params, None, None, F, G, dt=dt, T=T)
               for dt in (2e-3, 1e-3)]
        assert res[0] / res[1] == pytest.approx(4.0, abs=0.4)

    def test_backward_potential_must_be_invariant(self, grid31, op31, params):
        n = grid31.omega.size
        series = np.linspace(0.0, 1.0, int(round(T / DT)) + 1)[None, :] * np.ones((n, 1))
        q_bad = Potential(grid31, series=series, dt=DT,
                          time_reversal_invariant=False)
        F, G = self.sources(grid31)
        with pytest.raises(NotTimeReversalInvariant):
            ibp_residual(op31, params, None, q_bad, F, G, dt=DT, T=T)
