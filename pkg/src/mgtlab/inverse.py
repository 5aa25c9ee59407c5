"""Reconstruction algorithms driven by exterior measurements.

Five inversions live here: Runge-type interior steering, static potential
recovery (Born step plus Newton refinement), Taylor-coefficient recovery of a
smooth nonlinearity, stagewise peeling of polyhomogeneous amplitudes, and
recovery of quadratic Westervelt coefficients. The measured objects are
exterior flux traces and their pairings; interior fields enter only where the
algorithm itself constructs them (steered divisors, synthetic ground truth).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dnmap import dn_trace, pairing_matrix
from .envelopes import interior_plateau_profile, pulse_envelope
from .errors import (
    EmptyBank,
    IllConditioned,
    ShapeMismatch,
    SmallDivisor,
)
from .forward import (
    ExteriorInput,
    ExteriorSum,
    MGTParams,
    Potential,
    StateTrajectory,
    _solve_core,
    solve_linear_mgt,
    solve_semilinear_mgt,
    solve_westervelt,
)
from .fracgrid import FracOp, SpaceTimeField, trapezoid_weights

_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# small shared helpers


def _st_dot(grid, dt, a: np.ndarray, b: np.ndarray) -> float:
    w = trapezoid_weights(a.shape[1], dt)
    return float(grid.h ** grid.d * np.sum(w * np.sum(a * b, axis=0)))


def _st_norm(grid, dt, a: np.ndarray) -> float:
    return np.sqrt(max(_st_dot(grid, dt, a, a), 0.0))


def relative_error(grid, recovered: np.ndarray, truth: np.ndarray) -> float:
    """h-weighted relative L2 error of a static interior field."""
    rec = np.asarray(recovered, dtype=float)
    tru = np.asarray(truth, dtype=float)
    denom = np.sqrt(np.sum(tru * tru))
    if denom == 0.0:
        return float(np.sqrt(np.sum(rec * rec)))
    return float(np.sqrt(np.sum((rec - tru) ** 2)) / denom)


def make_input_bank(grid, window, T: float, size: int, scale: float = 1.0,
                    label_prefix: str = "phi") -> list[ExteriorInput]:
    """Bank of exterior inputs on one window: a shared bump profile modulated
    by Legendre polynomials in time for temporal richness."""
    if size < 1:
        raise EmptyBank("bank size must be >= 1")
    bank = []
    for k in range(size):
        mod = np.zeros(k + 1)
        mod[k] = 1.0
        # Legendre P_k mapped to [0, T], in ascending power-basis coefficients
        leg = np.polynomial.legendre.Legendre(mod, domain=[0.0, T])
        coeffs = leg.convert(kind=np.polynomial.Polynomial).coef
        env = pulse_envelope(T, scale=scale, modulation=coeffs)
        bank.append(ExteriorInput(grid, window, env, label=f"{label_prefix}{k}"))
    return bank


def add_trace_noise(trace_values: np.ndarray, level: float, rng) -> np.ndarray:
    """Additive Gaussian noise scaled to the trace sup norm."""
    if level <= 0:
        return trace_values
    scale = level * np.max(np.abs(trace_values))
    return trace_values + scale * rng.standard_normal(trace_values.shape)


# ---------------------------------------------------------------------------
# Runge steering


@dataclass
class RungeProblem:
    """Ridge least-squares steering of interior fields toward a target."""

    target: np.ndarray            # interior slab (n_omega, nt)
    bank: list
    lam: float
    coefficients: np.ndarray
    residual: float               # absolute space-time misfit
    target_norm: float
    fields: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def relative_residual(self) -> float:
        return self.residual / max(self.target_norm, _EPS)

    def steered_slab(self) -> np.ndarray:
        out = np.zeros_like(self.target)
        for c, w in zip(self.coefficients, self.fields):
            out += c * w
        return out

    def combination(self) -> ExteriorSum:
        return ExteriorSum(self.bank, self.coefficients)


def runge_control(op: FracOp, params: MGTParams, q: Potential | None,
                  target, bank: Sequence, lam: float, *, dt: float, T: float,
                  solutions: Sequence[StateTrajectory] | None = None) -> RungeProblem:
    """Least-squares steering: minimize ||sum_i c_i w_i - target||^2 + lam ||c||^2
    where w_i is the interior (homogeneous) part of the solution driven by the
    i-th bank member."""
    bank = list(bank)
    if not bank:
        raise EmptyBank("runge_control needs a nonempty input bank")
    grid = op.grid
    if isinstance(target, SpaceTimeField):
        tgt = target.on(grid.omega)
    else:
        tgt = np.asarray(target, dtype=float)
    if solutions is None:
        solutions = [solve_linear_mgt(op, params, q, None, phi, dt=dt, T=T)
                     for phi in bank]
    fields = [traj.slabs()[0] for traj in solutions]
    if any(w.shape != tgt.shape for w in fields):
        raise ShapeMismatch("target and bank solutions live on different axes")
    m = len(fields)
    G = np.empty((m, m))
    rhs = np.empty(m)
    for i, wi in enumerate(fields):
        rhs[i] = _st_dot(grid, dt, wi, tgt)
        for j in range(i, m):
            G[i, j] = G[j, i] = _st_dot(grid, dt, wi, fields[j])
    coeff = np.linalg.solve(G + lam * np.eye(m), rhs)
    mis = sum(c * w for c, w in zip(coeff, fields)) - tgt
    return RungeProblem(target=tgt, bank=bank, lam=float(lam), coefficients=coeff,
                        residual=_st_norm(grid, dt, mis),
                        target_norm=_st_norm(grid, dt, tgt), fields=fields)


def steer_to_plateau(op: FracOp, params: MGTParams, q: Potential | None,
                     bank: Sequence, *, dt: float, T: float, lam: float = 1e-10,
                     envelope=None, inner_frac: float = 0.8) -> RungeProblem:
    """Steer the interior field toward (mollified interior indicator) x (pulse)."""
    grid = op.grid
    env = pulse_envelope(T) if envelope is None else envelope
    nt = int(round(T / dt)) + 1
    prof = interior_plateau_profile(grid, inner_frac)[grid.omega]
    tgt = np.outer(prof, env.value(dt * np.arange(nt)))
    return runge_control(op, params, q, tgt, bank, lam, dt=dt, T=T)


# ---------------------------------------------------------------------------
# reconstruction report


@dataclass
class ReconstructionReport:
    method: str
    recovered: dict[str, np.ndarray]
    rel_error: float | None
    lam: float
    condition: float
    iterations: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def rows(self):
        yield ["method", "quantity", "rel_error", "lambda", "condition"]
        for name in self.recovered:
            yield [self.method, name, self.rel_error, self.lam, self.condition]


def _tikhonov_lstsq(M: np.ndarray, d: np.ndarray, lam: float | None,
                    rel_floor: float = 1e-8) -> tuple[np.ndarray, float, float]:
    """SVD-Tikhonov solve; returns (x, lam_used, effective condition).

    lam=None picks rel_floor * sigma_1^2, scaling with the map.
    """
    U, sv, Vt = np.linalg.svd(M, full_matrices=False)
    if sv.size == 0 or sv[0] == 0.0:
        raise IllConditioned("assembled map is identically zero")
    if lam is None:
        lam = rel_floor * sv[0] ** 2
    cond = sv[0] / np.sqrt(sv[-1] ** 2 + lam)
    if cond > 1e12:
        raise IllConditioned(f"effective condition {cond:.3e} > 1e12")
    filt = sv / (sv**2 + lam)
    x = Vt.T @ (filt * (U.T @ d))
    return x, float(lam), float(cond)


# ---------------------------------------------------------------------------
# potential recovery


def recover_q(op: FracOp, params: MGTParams, data: np.ndarray,
              q_prior: Potential | None, input_bank: Sequence, test_bank: Sequence,
              lam: float | None = None, newton_iters: int = 0, *,
              dt: float, T: float, truth: np.ndarray | None = None
              ) -> ReconstructionReport:
    """Static potential from the pairing matrix <Lambda_{q_true} phi_i, rho_j*>.

    Born step: expand the flux-pairing identity around the prior, so the data
    misfit equals the interior integral of delta_q against products of
    prior-field solutions; solve for delta_q by Tikhonov least squares.
    Newton refinement repeats the Born step at the updated potential.
    """
    if len(input_bank) == 0 or len(test_bank) == 0:
        raise EmptyBank("q-recovery needs nonempty input and test banks")
    data = np.asarray(data, dtype=float)
    if data.shape != (len(input_bank), len(test_bank)):
        raise ShapeMismatch(f"data shape {data.shape} incompatible with banks")
    grid = op.grid
    n = grid.omega.size
    nt = int(round(T / dt)) + 1
    w_t = trapezoid_weights(nt, dt)
    vol = grid.h ** grid.d

    q_cur = q_prior if q_prior is not None else Potential.constant(grid, 0.0)
    if not q_cur.is_static:
        raise ShapeMismatch("q-recovery expects a static prior")
    total = q_cur.static.copy()
    iterations: list[dict] = []
    lam_used, cond = 0.0, 0.0

    n_outer = 1 + max(0, int(newton_iters))
    for it in range(n_outer):
        P0, trajs_in = pairing_matrix(op, params, q_cur, input_bank, test_bank,
                                      dt=dt, T=T, reverse_tests=True)
        trajs_test = [solve_linear_mgt(op, params, q_cur, None, phi, dt=dt, T=T)
                      for phi in test_bank]
        rows = np.empty((len(input_bank) * len(test_bank), n))
        rhs = np.empty(len(input_bank) * len(test_bank))
        for i, ti in enumerate(trajs_in):
            wi = ti.slabs()[0]
            for j, tj in enumerate(trajs_test):
                wj_star = tj.slabs()[0][:, ::-1]
                rows[i * len(test_bank) + j] = vol * ((wi * wj_star) @ w_t)
                rhs[i * len(test_bank) + j] = data[i, j] - P0[i, j]
        delta, lam_used, cond = _tikhonov_lstsq(rows, rhs, lam)
        total = total + delta
        step = float(np.sqrt(np.sum(delta**2)))
        entry = {"iteration": it, "step_norm": step}
        if truth is not None:
            entry["rel_error"] = relative_error(grid, total, truth)
        iterations.append(entry)
        q_cur = Potential(grid, static=total)

    rel = relative_error(grid, total, truth) if truth is not None else None
    return ReconstructionReport(method="q-born-newton", recovered={"q": total},
                                rel_error=rel, lam=lam_used, condition=cond,
                                iterations=iterations,
                                extras={"newton_iters": int(newton_iters)})


# ---------------------------------------------------------------------------
# source-from-trace least squares (shared by the Taylor and Westervelt paths)


def _source_from_trace(op: FracOp, params: MGTParams, q: Potential | None,
                       target_trace: np.ndarray, weight_slab: np.ndarray, *,
                       dt: float, T: float, lam: float | None = None
                       ) -> tuple[np.ndarray, float, float]:
    """Invert the linear map (interior source m) -> (exterior flux trace).

    Candidate sources are c * weight_slab with one nodal coefficient per
    interior row, so each column of the least-squares map is the trace of a
    forward solve driven from a single node; the weight carries the known
    time structure of the source being sought. Returns the coefficient
    vector plus (lam, condition).

    The map smooths hard, so the default Tikhonov floor is far lighter than
    the one used for pairing-based recovery; it suits noiseless traces. Pass
    lam explicitly when the traces carry noise.
    """
    grid = op.grid
    n = grid.omega.size
    w_col = np.sqrt(trapezoid_weights(weight_slab.shape[1], dt) * grid.h ** grid.d)
    ext = grid.omega_e

    cols = []
    for j in range(n):
        S = np.zeros_like(weight_slab)
        S[j] = weight_slab[j]
        traj = _solve_core(op, params, q, None, None, dt=dt, T=T, extra_source=S)
        tr = dn_trace(traj, op, params).trace.values[ext]
        cols.append((tr * w_col).ravel())
    M = np.column_stack(cols)
    d = (np.asarray(target_trace)[ext] * w_col).ravel()
    x, lam_used, cond = _tikhonov_lstsq(M, d, lam, rel_floor=1e-13)
    return x, lam_used, cond


def masked_pointwise_fit(numer: np.ndarray, divisor: np.ndarray,
                         floor_frac: float = 0.1,
                         time_range: tuple[int, int] | None = None
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Per-node least-squares ratio numer/divisor over times where the divisor
    stays above floor_frac of its global max. Returns (coefficients, node mask)."""
    div_max = float(np.max(np.abs(divisor)))
    if div_max == 0.0:
        raise SmallDivisor("divisor is identically zero")
    mask = np.abs(divisor) >= floor_frac * div_max
    if time_range is not None:
        keep = np.zeros(divisor.shape[1], dtype=bool)
        keep[time_range[0]:time_range[1]] = True
        mask &= keep[None, :]
    if not mask.any():
        raise SmallDivisor("no node/time passes the divisor floor")
    num = np.where(mask, numer * divisor, 0.0).sum(axis=1)
    den = np.where(mask, divisor * divisor, 0.0).sum(axis=1)
    coef = np.zeros(divisor.shape[0])
    ok = den > 0
    coef[ok] = num[ok] / den[ok]
    return coef, ok


# ---------------------------------------------------------------------------
# Taylor-coefficient recovery of a smooth nonlinearity


def generate_trace_family(op: FracOp, params: MGTParams, q: Potential | None, g,
                          Phi, amplitudes: Sequence[float], *, dt: float, T: float,
                          tol: float = 1e-10, max_iter: int = 200,
                          noise: float = 0.0, rng=None) -> dict[float, np.ndarray]:
    """Exterior traces of the nonlinear solves with data amp * Phi."""
    out = {}
    for amp in amplitudes:
        phi = Phi.scaled(amp) if amp != 0.0 else None
        if g is None:
            traj = solve_linear_mgt(op, params, q, None, phi, dt=dt, T=T)
        else:
            traj = solve_semilinear_mgt(op, params, q, g, phi, dt=dt, T=T,
                                        tol=tol, max_iter=max_iter)
        tr = dn_trace(traj, op, params).trace.values
        if noise > 0.0:
            tr = add_trace_noise(tr, noise, rng)
        out[float(amp)] = tr
    return out


_CENTRAL_STENCILS = {
    2: ((1.0, 1), (-2.0, 0), (1.0, -1)),
    3: ((0.5, 2), (-1.0, 1), (1.0, -1), (-0.5, -2)),
}


def central_quotient(family: dict[float, np.ndarray], order: int, eps: float) -> np.ndarray:
    """N-th central difference quotient of an amplitude-indexed family."""
    if order not in _CENTRAL_STENCILS:
        raise ShapeMismatch(f"central stencil only tabulated for orders {sorted(_CENTRAL_STENCILS)}")
    acc = None
    for wgt, mult in _CENTRAL_STENCILS[order]:
        key = float(mult * eps)
        if key not in family:
            raise ShapeMismatch(f"family lacks amplitude {key}")
        term = wgt * family[key]
        acc = term if acc is None else acc + term
    return acc / eps**order


def taylor_quotient_amplitudes(order: int, eps: float) -> list[float]:
    return sorted({float(m * eps) for _, m in _CENTRAL_STENCILS[order]} | {0.0})


def recover_g_taylor(op: FracOp, params: MGTParams, q: Potential | None,
                     family: dict[float, np.ndarray], Phi, eps_amp: float, *,
                     dt: float, T: float, orders: Sequence[int] = (2,),
                     lam: float | None = None, divisor_floor: float = 0.1,
                     truth: dict[int, np.ndarray] | None = None
                     ) -> ReconstructionReport:
    """Taylor coefficients d_tau^N g(0) from exterior traces of an eps-family.

    For each order N (2 then 3): the N-th central amplitude-quotient of the
    traces is the trace of a linear solve whose source is minus the chain-rule
    combination of lower derivative fields. The source is recovered by
    regularized least squares on the source-to-trace map over candidates
    c(x) * v1(x,t)^N, lower-order terms are subtracted first; on the fitted
    span the floored division by v1^N reproduces the nodal coefficients, so
    the divisor check only gates which nodes count as observed.
    """
    grid = op.grid
    orders = sorted(int(N) for N in orders)
    if any(N not in (2, 3) for N in orders):
        raise ShapeMismatch("Taylor recovery implemented for orders 2 and 3")
    v1 = solve_linear_mgt(op, params, q, None, Phi, dt=dt, T=T).slabs()[0]
    recovered: dict[str, np.ndarray] = {}
    errors = {}
    conds = []
    lam_used = 0.0
    coeff2 = None
    for N in orders:
        D = central_quotient(family, N, eps_amp)
        if N == 3:
            if coeff2 is None:
                raise ShapeMismatch("order 3 requires order 2 in the same run")
            v2 = _solve_core(op, params, q, None, None, dt=dt, T=T,
                             extra_source=-(coeff2[:, None] * v1**2)).slabs()[0]
            known = _solve_core(op, params, q, None, None, dt=dt, T=T,
                                extra_source=-3.0 * coeff2[:, None] * v1 * v2)
            D = D - dn_trace(known, op, params).trace.values
        coeff, lam_used, cond = _source_from_trace(
            op, params, q, D, -(v1**N), dt=dt, T=T, lam=lam)
        conds.append(cond)
        _, node_mask = masked_pointwise_fit(coeff[:, None] * v1**N, v1**N,
                                            divisor_floor)
        if N == 2:
            coeff2 = coeff
            recovered["d2g"] = coeff
        else:
            recovered["d3g"] = coeff
        if truth is not None and N in truth:
            errors[f"order{N}"] = relative_error(grid, coeff, truth[N])
    rel = max(errors.values()) if errors else None
    return ReconstructionReport(method="g-taylor", recovered=recovered,
                                rel_error=rel, lam=lam_used,
                                condition=max(conds) if conds else 0.0,
                                extras={"errors": errors, "eps_amp": eps_amp,
                                        "mask_fraction": float(np.mean(node_mask))})


# ---------------------------------------------------------------------------
# polyhomogeneous peeling


def generate_solution_family(op: FracOp, params: MGTParams, q: Potential | None,
                             g, Phi, amplitudes: Sequence[float], *, dt: float,
                             T: float, tol: float = 1e-10, max_iter: int = 200
                             ) -> dict[float, StateTrajectory]:
    out = {}
    for amp in amplitudes:
        phi = Phi.scaled(amp) if amp != 0.0 else None
        out[float(amp)] = solve_semilinear_mgt(op, params, q, g, phi, dt=dt, T=T,
                                               tol=tol, max_iter=max_iter)
    return out


def _observed_nonlinearity(op, params, q, traj: StateTrajectory, Phi, amp: float,
                           *, dt: float, T: float) -> np.ndarray:
    """g(u_eps) observed as the defect of the linear operator on u_eps.

    The third derivative is centered-differenced from the stored second
    derivative, so the observation does not reuse the solver's internal
    source bookkeeping. End nodes are copied from their neighbors and should
    be excluded by the caller's time mask.
    """
    A = op.omega_block()
    u, ut, utt = traj.slabs()
    nt = traj.n_times
    uttt = np.empty_like(utt)
    uttt[:, 2:-2] = (-utt[:, 4:] + 8.0 * utt[:, 3:-1]
                     - 8.0 * utt[:, 1:-3] + utt[:, :-4]) / (12.0 * dt)
    for j in (1, -2):
        uttt[:, j] = (utt[:, j + 1] - utt[:, j - 1]) / (2.0 * dt)
    uttt[:, 0] = uttt[:, 1]
    uttt[:, -1] = uttt[:, -2]
    qarr = q.node_array(nt, dt) if q is not None else 0.0
    lifted = np.zeros_like(u)
    if Phi is not None and amp != 0.0:
        grid = op.grid
        rows = op.dense()[grid.omega, :]
        t = dt * np.arange(nt)
        for a, prof, env in Phi.scaled(amp).components():
            col = rows @ prof
            sig = params.b * env.value(t, 1) + params.c * env.value(t, 0)
            lifted -= a * np.outer(col, sig)
    Lu = uttt + params.alpha * utt + params.b * (A @ ut) + params.c * (A @ u) + qarr * u
    return lifted - Lu


def recover_polyhomogeneous(op: FracOp, params: MGTParams, q: Potential | None,
                            family: dict[float, StateTrajectory], Phi,
                            exponents: Sequence[float], *, dt: float, T: float,
                            divisor_floor: float = 0.1, joint: bool = False,
                            truth: Sequence[float] | None = None
                            ) -> ReconstructionReport:
    """Stagewise amplitude recovery for g(u) = sum_k alpha_k |u|^{r_k} u.

    At the smallest family amplitude, the observed nonlinearity is fitted
    against the regressors |u|^{r_k} u in ascending exponent order, each stage
    subtracting the previous ones (set `joint` to fit all stages at once).
    Also reports the decay slope of ||v - u_eps/eps|| against eps, whose
    theoretical value is r_1.
    """
    grid = op.grid
    exps = [float(r) for r in exponents]
    if not exps or sorted(exps) != exps:
        raise ShapeMismatch("exponents must be given in ascending order")
    amps = sorted(a for a in family if a > 0)
    if not amps:
        raise EmptyBank("family holds no positive amplitudes")

    # decay slope of the first-order approximation error
    v1 = solve_linear_mgt(op, params, q, None, Phi, dt=dt, T=T).slabs()[0]
    devs = []
    for a in amps:
        ua = family[a].slabs()[0]
        devs.append(_st_norm(grid, dt, v1 - ua / a))
    slope = None
    if len(amps) >= 2:
        slope = float(np.polyfit(np.log(amps), np.log(np.maximum(devs, _EPS)), 1)[0])

    obs, regs, masks = {}, {}, {}
    for a in amps:
        u = family[a].slabs()[0]
        umax = float(np.max(np.abs(u)))
        if umax == 0.0:
            raise SmallDivisor("solution field vanishes; nothing to peel")
        mask = np.abs(u) >= divisor_floor * umax
        mask[:, 0] = mask[:, -1] = False
        if not mask.any():
            raise SmallDivisor("no node/time passes the divisor floor")
        obs[a] = _observed_nonlinearity(op, params, q, family[a], Phi, a,
                                        dt=dt, T=T)
        regs[a] = [np.abs(u) ** r * u for r in exps]
        masks[a] = mask

    def masked_dot(a, x, y):
        return float(np.sum(np.where(masks[a], x * y, 0.0)))

    L = len(exps)
    if joint:
        Gm = np.zeros((L, L))
        rhs = np.zeros(L)
        for a in amps:
            for i in range(L):
                rhs[i] += masked_dot(a, regs[a][i], obs[a])
                for j in range(i, L):
                    Gm[i, j] += masked_dot(a, regs[a][i], regs[a][j])
        Gm = Gm + np.triu(Gm, 1).T
        alphas = np.linalg.solve(Gm, rhs)
    else:
        # Stagewise peel: the stage-k projection at amplitude a carries an
        # O(a^{r_{k+1}-r_k}) shadow of the next stage, so the coefficient is
        # read off as the a->0 intercept over the ladder before subtracting.
        resid = {a: obs[a].copy() for a in amps}
        alphas = []
        for k in range(L):
            vals = []
            for a in amps:
                den = masked_dot(a, regs[a][k], regs[a][k])
                if den <= 0:
                    raise SmallDivisor("regressor vanishes on the admissible set")
                vals.append(masked_dot(a, regs[a][k], resid[a]) / den)
            if len(amps) >= 2 and k + 1 < L:
                gap = exps[k + 1] - exps[k]
                X = np.column_stack([np.ones(len(amps)),
                                     np.power(amps, gap)])
                a_k = float(np.linalg.lstsq(X, np.asarray(vals), rcond=None)[0][0])
            else:
                a_k = vals[-1]
            alphas.append(a_k)
            for a in amps:
                resid[a] = resid[a] - a_k * regs[a][k]
        alphas = np.asarray(alphas)

    rel = None
    if truth is not None:
        tru = np.asarray(list(truth), dtype=float)
        rel = float(np.linalg.norm(alphas - tru) / max(np.linalg.norm(tru), _EPS))
    return ReconstructionReport(method="polyhomogeneous-peel",
                                recovered={"alphas": np.asarray(alphas)},
                                rel_error=rel, lam=0.0, condition=0.0,
                                extras={"decay_slope": slope,
                                        "decay_norms": devs,
                                        "amplitudes": amps,
                                        "joint": bool(joint)})


# ---------------------------------------------------------------------------
# Westervelt coefficient recovery


def _mixed_trace_quotient(op, params, nl, phi1, phi2, eta, *, dt, T,
                          tol, max_iter, noise=0.0, rng=None) -> np.ndarray:
    """Second mixed amplitude-quotient of exterior traces, four nonlinear solves."""
    acc = None
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            phi = ExteriorSum([phi1, phi2], [s1 * eta, s2 * eta])
            traj = solve_westervelt(op, params, nl, phi, dt=dt, T=T,
                                    tol=tol, max_iter=max_iter)
            tr = dn_trace(traj, op, params).trace.values
            if noise > 0.0:
                tr = add_trace_noise(tr, noise, rng)
            term = s1 * s2 * tr
            acc = term if acc is None else acc + term
    return acc / (4.0 * eta**2)


def recover_westervelt_beta(op: FracOp, params: MGTParams, nl, phi1, phi2,
                            eta: float, *, dt: float, T: float,
                            lam: float | None = None, divisor_floor: float = 0.1,
                            tol: float = 1e-10, max_iter: int = 200,
                            truth: np.ndarray | float | None = None,
                            noise: float = 0.0, rng=None) -> ReconstructionReport:
    """Pressure-form coefficient from polarized second trace quotients.

    The mixed quotient solves the linear problem with source
    2 d_t^2(beta v1 v2); the source is recovered from traces over nodal
    candidates carrying that time structure, integrated twice in time
    (vanishing data), and divided by the product v1 v2. Only exterior traces
    of the nonlinear solves feed the inversion.
    """
    grid = op.grid
    D = _mixed_trace_quotient(op, params, nl, phi1, phi2, eta, dt=dt, T=T,
                              tol=tol, max_iter=max_iter, noise=noise, rng=rng)
    t1 = solve_linear_mgt(op, params, None, None, phi1, dt=dt, T=T)
    t2 = solve_linear_mgt(op, params, None, None, phi2, dt=dt, T=T)
    u1, u1t, u1tt = t1.slabs()
    u2, u2t, u2tt = t2.slabs()
    ddt2_prod = u1tt * u2 + 2.0 * u1t * u2t + u1 * u2tt
    chat, lam_used, cond = _source_from_trace(op, params, None, D,
                                              2.0 * ddt2_prod, dt=dt, T=T, lam=lam)
    m_hat = 2.0 * chat[:, None] * ddt2_prod
    once = cumulative_trapezoid(m_hat / 2.0, dx=dt, axis=1, initial=0.0)
    twice = cumulative_trapezoid(once, dx=dt, axis=1, initial=0.0)
    coeff, node_mask = masked_pointwise_fit(twice, u1 * u2, divisor_floor)
    rel = None
    if truth is not None:
        tru = np.full(grid.omega.size, truth) if np.isscalar(truth) else np.asarray(truth)
        rel = relative_error(grid, coeff[node_mask], tru[node_mask])
    return ReconstructionReport(method="westervelt-beta",
                                recovered={"beta": coeff},
                                rel_error=rel, lam=lam_used, condition=cond,
                                extras={"eta": eta, "mask_fraction":
                                        float(np.mean(node_mask))})


def recover_westervelt_kappa(op: FracOp, params: MGTParams, nl, phi1, phi2,
                             eta: float, *, dt: float, T: float,
                             lam: float | None = None, divisor_floor: float = 0.1,
                             tol: float = 1e-10, max_iter: int = 200,
                             truth: np.ndarray | float | None = None,
                             noise: float = 0.0, rng=None) -> ReconstructionReport:
    """Velocity-potential coefficient via polarized quotients.

    Same pipeline as the beta recovery with source 2 d_t(kappa d_t(v1) d_t(v2)),
    one time integration, and division by d_t(v1) d_t(v2). Choose phi data with
    antiderivative envelopes so the time-derivative fields are the steered ones.
    """
    grid = op.grid
    D = _mixed_trace_quotient(op, params, nl, phi1, phi2, eta, dt=dt, T=T,
                              tol=tol, max_iter=max_iter, noise=noise, rng=rng)
    t1 = solve_linear_mgt(op, params, None, None, phi1, dt=dt, T=T)
    t2 = solve_linear_mgt(op, params, None, None, phi2, dt=dt, T=T)
    _, u1t, u1tt = t1.slabs()
    _, u2t, u2tt = t2.slabs()
    ddt_prod = u1tt * u2t + u1t * u2tt
    chat, lam_used, cond = _source_from_trace(op, params, None, D,
                                              2.0 * ddt_prod, dt=dt, T=T, lam=lam)
    m_hat = 2.0 * chat[:, None] * ddt_prod
    once = cumulative_trapezoid(m_hat / 2.0, dx=dt, axis=1, initial=0.0)
    coeff, node_mask = masked_pointwise_fit(once, u1t * u2t, divisor_floor)
    rel = None
    if truth is not None:
        tru = np.full(grid.omega.size, truth) if np.isscalar(truth) else np.asarray(truth)
        rel = relative_error(grid, coeff[node_mask], tru[node_mask])
    return ReconstructionReport(method="westervelt-kappa",
                                recovered={"kappa": coeff},
                                rel_error=rel, lam=lam_used, condition=cond,
                                extras={"eta": eta, "mask_fraction":
                                        float(np.mean(node_mask))})
