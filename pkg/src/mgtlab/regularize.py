"""Parabolic regularization: add eps * A to the second-derivative damping.

The regularized model replaces the damping row -(alpha I) by -(eps A + alpha I)
in the first-order system. eps = 0 goes through the identical code path as the
base solver (the extra term is assembled as eps * A even then), so the two
agree bit for bit. The sweep measures how the regularized solutions approach
the base one as eps shrinks, plus the eps-weighted dissipation that stays
bounded along the ladder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NotTimeReversalInvariant
from .forward import (
    MGTParams,
    Potential,
    StateTrajectory,
    _solve_core,
    solve_backward_adjoint,
    solve_linear_mgt,
    system_third_derivative,
)
from .fracgrid import FracOp, trapezoid_weights

_EPS = np.finfo(float).eps


def solve_regularized(op: FracOp, params: MGTParams, q: Potential | None = None,
                      F=None, phi=None, *, eps: float, dt: float, T: float,
                      scheme: str = "implicit-midpoint") -> StateTrajectory:
    """Linear solve with the extra eps * A second-derivative damping."""
    if eps < 0:
        raise ValueError(f"regularization strength must be >= 0, got {eps}")
    return _solve_core(op, params, q, F, phi, dt=dt, T=T, scheme=scheme, eps=eps)


@dataclass
class RegularizationLadder:
    """Per-eps deviations from the eps = 0 reference solve."""

    eps_values: list[float]
    dev_u: list[float]
    dev_ut: list[float]
    dev_utt: list[float]
    weighted_dissipation: list[float]

    def rows(self):
        yield ["eps", "dev_u", "dev_ut", "dev_utt", "weighted_dissipation"]
        for j, e in enumerate(self.eps_values):
            yield [e, self.dev_u[j], self.dev_ut[j], self.dev_utt[j],
                   self.weighted_dissipation[j]]


def _sup_l2(grid, slab) -> float:
    vol = grid.h ** grid.d
    return float(np.sqrt(vol * np.max(np.sum(slab * slab, axis=0))))


def regularization_sweep(op: FracOp, params: MGTParams, q: Potential | None,
                         F, phi, eps_ladder, *, dt: float, T: float
                         ) -> RegularizationLadder:
    """Deviation table along a strictly decreasing eps ladder.

    Columns: sup-in-time interior L2 deviations of (u, u', u'') from the
    unregularized solve, and eps^{1/2} ||A^{s/2} u''||_{L2(0,T; L2)}.
    """
    eps_values = [float(e) for e in eps_ladder]
    if not eps_values or any(b - a >= 0 for a, b in zip(eps_values, eps_values[1:])):
        raise ConfigError("eps ladder must be nonempty and strictly decreasing")
    grid = op.grid
    A = op.omega_block()
    ref = solve_linear_mgt(op, params, q, F, phi, dt=dt, T=T)
    ru, rut, rutt = ref.slabs()
    w = trapezoid_weights(ref.n_times, dt)
    vol = grid.h ** grid.d
    dev_u, dev_ut, dev_utt, wdiss = [], [], [], []
    for e in eps_values:
        traj = solve_regularized(op, params, q, F, phi, eps=e, dt=dt, T=T)
        u, ut, utt = traj.slabs()
        dev_u.append(_sup_l2(grid, u - ru))
        dev_ut.append(_sup_l2(grid, ut - rut))
        dev_utt.append(_sup_l2(grid, utt - rutt))
        quad = vol * np.sum(utt * (A @ utt), axis=0)
        wdiss.append(float(np.sqrt(e * np.sum(w * np.maximum(quad, 0.0)))))
    return RegularizationLadder(eps_values=eps_values, dev_u=dev_u, dev_ut=dev_ut,
                                dev_utt=dev_utt, weighted_dissipation=wdiss)


def ibp_residual(op: FracOp, params: MGTParams, q1: Potential | None,
                 q2: Potential | None, F, G, *, dt: float, T: float) -> float:
    """Relative defect of int <u''', v> dt = -int <u, v'''> dt.

    u solves the forward problem with potential q1 and source F; v solves the
    backward problem with time-reversal-invariant q2 and source G. Third
    derivatives come from the respective evolution laws, not from triple
    differencing.
    """
    if q2 is not None and not q2.time_reversal_invariant:
        raise NotTimeReversalInvariant("backward potential must be flagged invariant")
    grid = op.grid
    u = solve_linear_mgt(op, params, q1, F, None, dt=dt, T=T)
    v = solve_backward_adjoint(op, params, q2, G, dt=dt, T=T)
    u_s = u.slabs()[0]
    v_s = v.slabs()[0]
    uttt = system_third_derivative(u, op, params, q1)
    vttt = system_third_derivative(v, op, params, q2)
    w = trapezoid_weights(u.n_times, dt)
    vol = grid.h ** grid.d
    lhs = float(vol * np.sum(w * np.sum(uttt * v_s, axis=0)))
    rhs = float(vol * np.sum(w * np.sum(u_s * vttt, axis=0)))
    return abs(lhs + rhs) / max(abs(lhs), abs(rhs), _EPS)
