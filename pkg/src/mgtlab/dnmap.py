"""Exterior flux traces and their structural identities.

The measurement operator sends exterior data phi to the exterior restriction
of b A d_t(u) + c A u, with u the full (homogeneous + lift) solution. Pairings
against exterior test fields use the fractional bilinear form and trapezoid
quadrature in time, so every identity below holds up to O(dt^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatch, SupportError
from .forward import MGTParams, Potential, StateTrajectory, solve_linear_mgt
from .fracgrid import FracOp, SpaceTimeField, trapezoid_weights

_EPS = np.finfo(float).eps


@dataclass
class DNTrace:
    """Exterior flux trace plus the full-box flux it was cut from."""

    trace: SpaceTimeField
    flux: SpaceTimeField

    @property
    def values(self) -> np.ndarray:
        return self.trace.values


def dn_trace(traj: StateTrajectory, op: FracOp, params: MGTParams) -> DNTrace:
    """Trace (b A d_t(u) + c A u) restricted to the exterior nodes.

    d_t(u) comes from the stored first-derivative component, not from
    re-differencing the trajectory.
    """
    grid = traj.grid
    u_full = traj.full_field(0).values
    ut_full = traj.full_field(1).values
    flux_vals = params.b * ut_full + params.c * u_full
    applied = op.dense() @ flux_vals
    tvals = np.zeros_like(applied)
    tvals[grid.omega_e] = applied[grid.omega_e]
    return DNTrace(trace=SpaceTimeField(grid, tvals, traj.dt, support="exterior"),
                   flux=SpaceTimeField(grid, flux_vals, traj.dt, support="box"))


def _test_field_values(rho, grid, nt, dt) -> np.ndarray:
    """Box-shaped values of an exterior test field; rejects interior support."""
    if isinstance(rho, SpaceTimeField):
        if rho.n_times != nt or abs(rho.dt - dt) > 1e-12 * dt:
            raise ShapeMismatch("test field time axis mismatch")
        vals = rho.values
        if np.any(vals[grid.omega] != 0.0):
            raise SupportError("test field touches the interior")
        return vals
    if hasattr(rho, "components"):
        omega_set = set(grid.omega.tolist())
        for _, prof, _ in rho.components():
            if any(int(i) in omega_set for i in np.flatnonzero(prof)):
                raise SupportError("test field touches the interior")
        return rho.field(nt, dt).values
    raise ShapeMismatch(f"unsupported test field type {type(rho).__name__}")


def dn_pairing(traj: StateTrajectory, rho, op: FracOp, params: MGTParams,
               quadrature: str = "trapezoid") -> float:
    """Duality pairing of the measured flux with an exterior test field.

    <Lambda phi, rho> = int_0^T <A^{s/2}(b d_t(u) + c u), A^{s/2} rho> dt,
    evaluated as flux^T A rho with the volume weight h^d.
    """
    if quadrature != "trapezoid":
        raise ConfigError(f"unsupported quadrature {quadrature!r}")
    grid = traj.grid
    nt, dt = traj.n_times, traj.dt
    rvals = _test_field_values(rho, grid, nt, dt)
    flux = params.b * traj.full_field(1).values + params.c * traj.full_field(0).values
    integrand = np.sum(flux * (op.dense() @ rvals), axis=0)
    w = trapezoid_weights(nt, dt)
    return float(grid.h ** grid.d * np.sum(w * integrand))


def pairing_matrix(op: FracOp, params: MGTParams, q: Potential | None,
                   input_bank, test_bank, *, dt: float, T: float,
                   reverse_tests: bool = True) -> tuple[np.ndarray, list[StateTrajectory]]:
    """Matrix M[i, j] = <Lambda phi_i, rho_j> over an input/test bank.

    With reverse_tests the test fields are the time reversals of `test_bank`,
    which is the combination every identity in this module consumes. Returns
    the trajectories as well so callers can reuse the forward solves.
    """
    trajs = [solve_linear_mgt(op, params, q, None, phi, dt=dt, T=T) for phi in input_bank]
    tests = [r.time_reversed(T) if reverse_tests else r for r in test_bank]
    M = np.empty((len(trajs), len(tests)))
    for i, traj in enumerate(trajs):
        for j, rho in enumerate(tests):
            M[i, j] = dn_pairing(traj, rho, op, params)
    return M, trajs


def adjoint_identity_residual(op: FracOp, params: MGTParams, q: Potential | None,
                              phi1, phi2, *, dt: float, T: float) -> float:
    """Relative defect of <Lambda_q phi1, phi2*> = <Lambda_{q*} phi2, phi1*>."""
    u1 = solve_linear_mgt(op, params, q, None, phi1, dt=dt, T=T)
    lhs = dn_pairing(u1, phi2.time_reversed(T), op, params)
    qstar = q.star() if q is not None else None
    u2 = solve_linear_mgt(op, params, qstar, None, phi2, dt=dt, T=T)
    rhs = dn_pairing(u2, phi1.time_reversed(T), op, params)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), _EPS)


def integral_identity_residual(op: FracOp, params: MGTParams,
                               q1: Potential | None, q2: Potential | None,
                               phi1, phi2, *, dt: float, T: float
                               ) -> tuple[float, float, float]:
    """Both sides of the interior-product identity

        int (q1 - q2*) (u1 - phi1) (u2 - phi2)* = <(Lambda_{q1} - Lambda_{q2*}) phi1, phi2*>

    with u1 driven by (q1, phi1) and u2 by (q2, phi2). Returns (lhs, rhs,
    relative residual). The starred factors are time reversals.
    """
    grid = op.grid
    nt = int(round(T / dt)) + 1
    u1 = solve_linear_mgt(op, params, q1, None, phi1, dt=dt, T=T)
    u2 = solve_linear_mgt(op, params, q2, None, phi2, dt=dt, T=T)

    n = grid.omega.size
    q1_arr = q1.node_array(nt, dt) if q1 is not None else np.zeros((n, nt))
    if q2 is not None:
        q2_star = q2.star().node_array(nt, dt)
    else:
        q2_star = np.zeros((n, nt))
    hom1 = u1.slabs()[0]
    hom2_star = u2.slabs()[0][:, ::-1]
    w = trapezoid_weights(nt, dt)
    lhs = float(grid.h ** grid.d
                * np.sum(w * np.sum((q1_arr - q2_star) * hom1 * hom2_star, axis=0)))

    rho = phi2.time_reversed(T)
    term1 = dn_pairing(u1, rho, op, params)
    q2s_potential = q2.star() if q2 is not None else None
    u1_alt = solve_linear_mgt(op, params, q2s_potential, None, phi1, dt=dt, T=T)
    term2 = dn_pairing(u1_alt, rho, op, params)
    rhs = term1 - term2
    residual = abs(lhs - rhs) / max(abs(lhs), abs(rhs), _EPS)
    return lhs, rhs, residual
