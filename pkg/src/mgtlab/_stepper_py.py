"""Pure-numpy time stepping kernels (fallback backend).

The first-order system for Y = (u, u_t, u_tt) on the interior dofs is stepped
with the implicit midpoint rule. The 3n implicit solve is reduced exactly, by
block elimination, to one n x n solve per step:

    K z3 = r3 - G1 (r1 + gamma r2) - G2 r2,
    z2 = r2 + gamma z3,   z1 = r1 + gamma r2 + gamma^2 z3,
    Y_{m+1} = 2 Z - Y_m,

with gamma = dt/2, G1 = gamma (c A + Q), G2 = gamma b A and
K = I + gamma D + gamma^2 b A + gamma^3 (c A + Q), D the second-derivative
damping matrix (alpha I plus any parabolic regularization term).

The compiled backend in `_stepper.pyx` implements the identical recurrence;
`_backend` picks one at import time.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import BlowUp, SingularStepMatrix

BLOWUP_LIMIT = 1e12


def _factor(K: np.ndarray):
    try:
        lu, piv = scipy.linalg.lu_factor(K, check_finite=False)
    except (ValueError, scipy.linalg.LinAlgError) as exc:
        raise SingularStepMatrix(str(exc)) from exc
    d = np.abs(np.diag(lu))
    if not np.all(np.isfinite(lu)) or d.min() == 0.0:
        raise SingularStepMatrix("implicit step matrix is singular")
    return lu, piv


def midpoint_loop(K, G1, G2, gamma, fmid):
    """Static-matrix implicit midpoint loop.

    Parameters: K, G1, G2 as in the module docstring (all (n, n)); fmid is the
    (M, n) array of midpoint source samples. Zero initial data. Returns
    (u, ut, utt), each (M+1, n).
    """
    n = K.shape[0]
    M = fmid.shape[0]
    lu_piv = _factor(K)
    u = np.zeros((M + 1, n))
    ut = np.zeros((M + 1, n))
    utt = np.zeros((M + 1, n))
    g2 = gamma * gamma
    for m in range(M):
        y1, y2, y3 = u[m], ut[m], utt[m]
        w = y1 + gamma * y2
        rhs = y3 + gamma * fmid[m]
        rhs -= G1 @ w
        rhs -= G2 @ y2
        z3 = scipy.linalg.lu_solve(lu_piv, rhs, check_finite=False)
        u[m + 1] = 2.0 * (w + g2 * z3) - y1
        ut[m + 1] = 2.0 * (y2 + gamma * z3) - y2
        utt[m + 1] = 2.0 * z3 - y3
        if not (np.abs(u[m + 1]).max() < BLOWUP_LIMIT):
            raise BlowUp(f"|u| exceeded {BLOWUP_LIMIT:g} at step {m + 1}")
    return u, ut, utt


def midpoint_loop_tq(Kbase, G1base, G2, gamma, fmid, qmid):
    """Time-dependent-potential variant: refactors K every step.

    Kbase and G1base must contain no potential term; qmid is the (M, n) array
    of midpoint potential samples folded in as diagonal updates.
    """
    n = Kbase.shape[0]
    M = fmid.shape[0]
    g2 = gamma * gamma
    g3 = gamma * g2
    u = np.zeros((M + 1, n))
    ut = np.zeros((M + 1, n))
    utt = np.zeros((M + 1, n))
    diag = np.arange(n)
    for m in range(M):
        y1, y2, y3 = u[m], ut[m], utt[m]
        Km = Kbase.copy()
        Km[diag, diag] += g3 * qmid[m]
        lu_piv = _factor(Km)
        w = y1 + gamma * y2
        rhs = y3 + gamma * fmid[m]
        rhs -= G1base @ w
        rhs -= gamma * (qmid[m] * w)
        rhs -= G2 @ y2
        z3 = scipy.linalg.lu_solve(lu_piv, rhs, check_finite=False)
        u[m + 1] = 2.0 * (w + g2 * z3) - y1
        ut[m + 1] = 2.0 * (y2 + gamma * z3) - y2
        utt[m + 1] = 2.0 * z3 - y3
        if not (np.abs(u[m + 1]).max() < BLOWUP_LIMIT):
            raise BlowUp(f"|u| exceeded {BLOWUP_LIMIT:g} at step {m + 1}")
    return u, ut, utt


def rk4_loop(CAQ, BA, D, fnode, fmid, dt, qnode=None, qmid=None):
    """Classic rk4 on the same first-order system (cross-validation scheme).

    CAQ = c A + diag(static q), BA = b A, D = damping matrix. If the potential
    is time dependent, qnode/qmid hold its node and midpoint samples and CAQ
    must contain no potential. Not a hot path; lives only in this backend and
    is shared by both.
    """
    n = CAQ.shape[0]
    M = fmid.shape[0]
    u = np.zeros((M + 1, n))
    ut = np.zeros((M + 1, n))
    utt = np.zeros((M + 1, n))

    def deriv(y1, y2, y3, f, qv):
        d3 = -(CAQ @ y1) - BA @ y2 - D @ y3 + f
        if qv is not None:
            d3 -= qv * y1
        return y2, y3, d3

    for m in range(M):
        y1, y2, y3 = u[m], ut[m], utt[m]
        fn = fnode[m]
        fm = fmid[m]
        fn1 = fnode[m + 1]
        qn = qnode[m] if qnode is not None else None
        qm = qmid[m] if qmid is not None else None
        qn1 = qnode[m + 1] if qnode is not None else None
        a1, b1, c1 = deriv(y1, y2, y3, fn, qn)
        a2, b2, c2 = deriv(y1 + 0.5 * dt * a1, y2 + 0.5 * dt * b1, y3 + 0.5 * dt * c1, fm, qm)
        a3, b3, c3 = deriv(y1 + 0.5 * dt * a2, y2 + 0.5 * dt * b2, y3 + 0.5 * dt * c2, fm, qm)
        a4, b4, c4 = deriv(y1 + dt * a3, y2 + dt * b3, y3 + dt * c3, fn1, qn1)
        u[m + 1] = y1 + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        ut[m + 1] = y2 + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
        utt[m + 1] = y3 + dt / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4)
        if not (np.abs(u[m + 1]).max() < BLOWUP_LIMIT):
            raise BlowUp(f"|u| exceeded {BLOWUP_LIMIT:g} at step {m + 1}")
    return u, ut, utt
