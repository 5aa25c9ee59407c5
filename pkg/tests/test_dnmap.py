"""Flux traces, pairings, and the two structural identities.

The pairing quadrature is trapezoid in time, so identities that are exact in
the continuum show an O(dt^2) defect here; the tests pin the rates rather
than absolute machine zeros, except where the discrete scheme is itself
symmetric (adjoint identity with a static potential).
"""

import numpy as np
import pytest

from mgtlab import (
    ExteriorInput,
    ExteriorSum,
    Potential,
    adjoint_identity_residual,
    dn_pairing,
    dn_trace,
    integral_identity_residual,
    pairing_matrix,
    pulse_envelope,
    solve_linear_mgt,
)
from mgtlab.errors import ConfigError, SupportError


def make_phi(grid, scale=1.0, T=0.5, window=None, modulation=None):
    window = grid.w1 if window is None else window
    return ExteriorInput(grid, window, pulse_envelope(T, scale, modulation))


def bump_q(grid, base=0.1, amp=0.4, width=3.0):
    x = grid.nodes()[grid.omega, 0]
    return Potential(grid, static=base + amp * np.exp(-width * x**2))


class TestTrace:
    def test_zero_trajectory(self, grid31, op31, params):
        traj = solve_linear_mgt(op31, params, None, None, None, dt=1e-2, T=0.3)
        tr = dn_trace(traj, op31, params)
        assert not tr.values.any()

    def test_trace_supported_on_exterior(self, grid31, op31, params):
        traj = solve_linear_mgt(op31, params, None, None, make_phi(grid31),
                                dt=2e-3, T=0.5)
        tr = dn_trace(traj, op31, params)
        assert tr.trace.support == "exterior"
        assert not tr.values[grid31.omega].any()
        assert np.abs(tr.values[grid31.omega_e]).max() > 0

    def test_linearity(self, grid31, op31, params):
        kw = dict(dt=2e-3, T=0.5)
        t1 = solve_linear_mgt(op31, params, None, None, make_phi(grid31, 1.0), **kw)
        t2 = solve_linear_mgt(op31, params, None, None, make_phi(grid31, 2.0), **kw)
        v1 = dn_trace(t1, op31, params).values
        v2 = dn_trace(t2, op31, params).values
        assert np.allclose(2.0 * v1, v2, atol=1e-10)


class TestPairing:
    def test_bilinear_in_both_slots(self, grid31, op31, params):
        kw = dict(dt=2e-3, T=0.5)
        psi = make_phi(grid31, 1.0, window=grid31.w2)
        t1 = solve_linear_mgt(op31, params, None, None, make_phi(grid31, 1.0), **kw)
        t3 = solve_linear_mgt(op31, params, None, None, make_phi(grid31, 3.0), **kw)
        p1 = dn_pairing(t1, psi, op31, params)
        p3 = dn_pairing(t3, psi, op31, params)
        assert p3 == pytest.approx(3.0 * p1, rel=1e-9)
        double = ExteriorSum([psi, psi], [1.0, 1.0])
        assert dn_pairing(t1, double, op31, params) == pytest.approx(2.0 * p1, rel=1e-12)

    def test_nonlocal_reach_across_windows(self, grid31, op31, params):
        """Input on the left window, test on the right: nonzero coupling."""
        traj = solve_linear_mgt(op31, params, None, None, make_phi(grid31),
                                dt=2e-3, T=0.5)
        psi = make_phi(grid31, window=grid31.w2)
        assert abs(dn_pairing(traj, psi, op31, params)) > 1e-12

    def test_interior_test_field_rejected(self, grid31, op31, params):
        traj = solve_linear_mgt(op31, params, None, None, make_phi(grid31),
                                dt=2e-3, T=0.5)
        bad_prof = np.zeros(grid31.n_total)
        bad_prof[grid31.omega[3]] = 1.0
        bad = ExteriorInput(grid31, grid31.w2, pulse_envelope(0.5), _validate=False)
        bad.profile = bad_prof
        with pytest.raises(SupportError):
            dn_pairing(traj, bad, op31, params)

    def test_unknown_quadrature(self, grid31, op31, params):
        traj = solve_linear_mgt(op31, params, None, None, make_phi(grid31),
                                dt=2e-3, T=0.5)
        with pytest.raises(ConfigError):
            dn_pairing(traj, make_phi(grid31, window=grid31.w2), op31, params,
                       quadrature="simpson")

    def test_quadrature_refinement_order_two(self, grid31, op31, params):
        q = bump_q(grid31)
        psi = make_phi(grid31, window=grid31.w2)
        vals = {}
        for dt in (4e-3, 2e-3, 1e-3, 2.5e-4):
            traj = solve_linear_mgt(op31, params, q, None, make_phi(grid31),
                                    dt=dt, T=0.5)
            vals[dt] = dn_pairing(traj, psi.time_reversed(0.5), op31, params)
        ref = vals[2.5e-4]
        dts = [4e-3, 2e-3, 1e-3]
        errs = [abs(vals[dt] - ref) for dt in dts]
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.25)


class TestPairingMatrix:
    def test_shape_and_reuse(self, grid31, op31, params):
        bank = [make_phi(grid31, s) for s in (1.0, 2.0)]
        tests = [make_phi(grid31, s, window=grid31.w2) for s in (1.0, 0.5, 2.0)]
        M, trajs = pairing_matrix(op31, params, None, bank, tests, dt=2e-3, T=0.5)
        assert M.shape == (2, 3)
        assert len(trajs) == 2
        # entries match a direct pairing against the reversed test field
        direct = dn_pairing(trajs[1], tests[0].time_reversed(0.5), op31, params)
        assert M[1, 0] == pytest.approx(direct, rel=1e-14)

    def test_reverse_flag(self, grid31, op31, params):
        bank = [make_phi(grid31)]
        # asymmetric envelope, so the reversal changes the pairing
        tests = [make_phi(grid31, window=grid31.w2, modulation=[1.0, 2.5])]
        M_rev, _ = pairing_matrix(op31, params, None, bank, tests, dt=2e-3, T=0.5)
        M_raw, trajs = pairing_matrix(op31, params, None, bank, tests,
                                      dt=2e-3, T=0.5, reverse_tests=False)
        direct = dn_pairing(trajs[0], tests[0], op31, params)
        assert M_raw[0, 0] == pytest.approx(direct, rel=1e-14)
        assert M_rev[0, 0] != pytest.approx(M_raw[0, 0], rel=1e-6)


class TestIdentities:
    def test_adjoint_identity_static_q(self, grid31, op31, params):
        q = bump_q(grid31)
        res = adjoint_identity_residual(op31, params, q, make_phi(grid31),
                                        make_phi(grid31, window=grid31.w2),
                                        dt=2e-3, T=0.5)
        assert res <= 1e-9

    def test_integral_identity_order_two(self, grid31, op31, params):
        q1 = bump_q(grid31)
        q2 = bump_q(grid31, base=0.0, amp=0.25, width=2.0)
        phi1 = make_phi(grid31)
        phi2 = make_phi(grid31, window=grid31.w2)
        res = {}
        for dt in (2e-3, 1e-3):
            _, _, res[dt] = integral_identity_residual(op31, params, q1, q2,
                                                       phi1, phi2, dt=dt, T=0.5)
        assert res[1e-3] < res[2e-3]
        assert res[2e-3] / res[1e-3] == pytest.approx(4.0, rel=0.35)

    def test_integral_identity_equal_potentials(self, grid31, op31, params):
        """q1 = q2 static: both sides vanish identically."""
        q = bump_q(grid31)
        lhs, rhs, _ = integral_identity_residual(op31, params, q, q,
                                                 make_phi(grid31),
                                                 make_phi(grid31, window=grid31.w2),
                                                 dt=2e-3, T=0.5)
        assert abs(lhs) <= 1e-12
        assert abs(rhs) <= 1e-12
