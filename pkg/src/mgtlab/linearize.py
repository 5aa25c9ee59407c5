"""Higher-order linearization of the semilinear solution map.

Given a bank of exterior inputs phi_1..phi_m and amplitudes eps, the solution
map eps -> u^eps is differentiated in two independent ways: solving the
linearized equations whose sources come from the combinatorial chain rule
(set partitions, excluding the single-block term), and forming nested
difference quotients of nonlinear solves. Agreement of the two is the main
correctness check of this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    MissingDerivative,
    OrderTooLarge,
    ShapeMismatch,
)
from .forward import (
    ExteriorSum,
    MGTParams,
    Potential,
    StateTrajectory,
    _solve_core,
    solve_linear_mgt,
    solve_semilinear_mgt,
    xnorm_slabs,
)
from .fracgrid import FracOp, SpaceTimeField

_TINY = 1e-300

BELL = (1, 1, 2, 5, 15, 52, 203, 877, 4140)  # Bell(0..8)


@dataclass(frozen=True)
class Partition:
    """Set partition of {1..N}, blocks sorted by their minima."""

    blocks: tuple[tuple[int, ...], ...]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def order(self) -> int:
        return sum(len(b) for b in self.blocks)


def enumerate_partitions(N: int) -> list[Partition]:
    """All set partitions of {1..N} via restricted-growth strings."""
    if not 1 <= N <= 8:
        raise OrderTooLarge(f"partition order {N} outside 1..8")
    out: list[Partition] = []
    labels = [0] * N

    def rec(i: int, n_used: int):
        if i == N:
            blocks = [[] for _ in range(n_used)]
            for pos, lab in enumerate(labels):
                blocks[lab].append(pos + 1)
            out.append(Partition(tuple(tuple(b) for b in blocks)))
            return
        for lab in range(n_used + 1):
            labels[i] = lab
            rec(i + 1, max(n_used, lab + 1))

    rec(0, 0)
    return out


def proper_partitions(N: int) -> list[Partition]:
    """Partitions with at least two blocks (the chain-rule source set)."""
    return [p for p in enumerate_partitions(N) if p.n_blocks > 1]


def faa_di_bruno_source(g, base_u, derivative_bank, indices: Sequence[int],
                        grid=None, dt=None):
    """Slashed chain-rule source for the order-N linearized equation.

    sum over partitions pi of {1..N} with >= 2 blocks of
        d_tau^{|pi|} g(u) * prod over blocks B of v_{indices[B]},
    where v_key comes from `derivative_bank` keyed by sorted direction
    multisets. `base_u` and the bank entries are interior slabs (n_omega, nt);
    pass grid and dt to get the result wrapped as a SpaceTimeField.
    """
    indices = tuple(int(k) for k in indices)
    N = len(indices)
    if not 1 <= N <= 8:
        raise OrderTooLarge(f"linearization order {N} outside 1..8")
    if isinstance(base_u, SpaceTimeField):
        base = base_u.on(base_u.grid.omega)
    else:
        base = np.asarray(base_u, dtype=float)
    total = np.zeros_like(base)
    if g is not None:
        for part in proper_partitions(N):
            term = g.d_tau(part.n_blocks, base)
            for block in part.blocks:
                key = tuple(sorted(indices[i - 1] for i in block))
                if key not in derivative_bank:
                    raise MissingDerivative(f"bank lacks direction multiset {key}")
                term = term * derivative_bank[key]
            total = total + term
    if grid is not None:
        return SpaceTimeField.from_omega(grid, total, dt)
    return total


# ---------------------------------------------------------------------------
# the stack of linearized solves


@dataclass
class LinearizationStack:
    """Base nonlinear solve at amplitude eps plus its derivative fields.

    Derivatives are keyed by sorted multisets of 0-based input directions and
    filled on demand, lower orders first. The frozen potential of every
    linearized solve is q + d_tau g(u^eps); at eps = 0 with g(0) = g'(0) = 0
    that reduces to the potential-only problem.
    """

    op: FracOp
    params: MGTParams
    q: Potential | None
    g: object | None
    phi_bank: list
    eps: np.ndarray
    dt: float
    T: float
    scheme: str = "implicit-midpoint"
    base: StateTrajectory | None = None
    extra_potential: np.ndarray | None = None
    bank: dict = field(default_factory=dict)
    trajs: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.phi_bank)

    def _check_indices(self, indices) -> tuple[int, ...]:
        key = tuple(sorted(int(k) for k in indices))
        if not 1 <= len(key) <= 8:
            raise OrderTooLarge(f"derivative order {len(key)} outside 1..8")
        if any(k < 0 or k >= self.m for k in key):
            raise ShapeMismatch(f"direction out of range for bank of size {self.m}")
        return key

    def trajectory(self, indices) -> StateTrajectory:
        key = self._check_indices(indices)
        if key not in self.trajs:
            self._ensure(key)
        return self.trajs[key]

    def derivative(self, indices) -> np.ndarray:
        key = self._check_indices(indices)
        if key not in self.bank:
            self._ensure(key)
        return self.bank[key]

    def _ensure(self, key: tuple[int, ...]):
        if len(key) == 1:
            traj = _solve_core(self.op, self.params, self.q, None, self.phi_bank[key[0]],
                               dt=self.dt, T=self.T, scheme=self.scheme,
                               extra_potential=self.extra_potential)
        else:
            for part in proper_partitions(len(key)):
                for block in part.blocks:
                    sub = tuple(sorted(key[i - 1] for i in block))
                    if sub not in self.bank:
                        self._ensure(sub)
            base_u = self.base.slabs()[0]
            src = faa_di_bruno_source(self.g, base_u, self.bank, key)
            traj = _solve_core(self.op, self.params, self.q, None, None,
                               dt=self.dt, T=self.T, scheme=self.scheme,
                               extra_potential=self.extra_potential,
                               extra_source=-src)
        self.trajs[key] = traj
        self.bank[key] = traj.slabs()[0]


def build_stack(op: FracOp, params: MGTParams, q: Potential | None, g,
                phi_bank: Sequence, eps=None, *, dt: float, T: float,
                scheme: str = "implicit-midpoint", tol: float = 1e-10,
                max_iter: int = 200) -> LinearizationStack:
    phi_bank = list(phi_bank)
    if not 1 <= len(phi_bank) <= 4:
        raise ConfigError("input bank must hold between 1 and 4 fields")
    m = len(phi_bank)
    eps = np.zeros(m) if eps is None else np.asarray(eps, dtype=float)
    if eps.shape != (m,):
        raise ShapeMismatch(f"eps shape {eps.shape} != ({m},)")
    phi = ExteriorSum(phi_bank, eps) if np.any(eps) else None
    if g is None:
        base = solve_linear_mgt(op, params, q, None, phi, dt=dt, T=T, scheme=scheme)
    else:
        base = solve_semilinear_mgt(op, params, q, g, phi, dt=dt, T=T,
                                    tol=tol, max_iter=max_iter, scheme=scheme)
    extra = None
    if g is not None:
        dg = g.d_tau(1, base.slabs()[0])
        if np.any(dg):
            extra = dg
    return LinearizationStack(op=op, params=params, q=q, g=g, phi_bank=phi_bank,
                              eps=eps, dt=dt, T=T, scheme=scheme, base=base,
                              extra_potential=extra)


def solve_linearized(stack: LinearizationStack, indices) -> SpaceTimeField:
    """u-component of the order-len(indices) derivative field."""
    return stack.trajectory(indices).u


# ---------------------------------------------------------------------------
# difference quotients


def _triple(traj: StateTrajectory):
    return traj.slabs()


def _solution_cache(op, params, q, g, phi_bank, dt, T, scheme, tol, max_iter):
    cache: dict[tuple, tuple] = {}

    def solve(eps_vec: np.ndarray):
        key = tuple(float(e) for e in eps_vec)
        if key not in cache:
            phi = ExteriorSum(phi_bank, eps_vec) if np.any(eps_vec) else None
            if g is None:
                traj = solve_linear_mgt(op, params, q, None, phi, dt=dt, T=T, scheme=scheme)
            else:
                traj = solve_semilinear_mgt(op, params, q, g, phi, dt=dt, T=T,
                                            tol=tol, max_iter=max_iter, scheme=scheme)
            cache[key] = _triple(traj)
        return cache[key]

    return solve


def _nested_quotient(solve, eps, indices, etas, variant):
    """Recursive stencil evaluation; innermost index applied last."""
    if not indices:
        return solve(eps)
    k = indices[-1]
    eta = etas[len(indices) - 1]
    e_k = np.zeros_like(eps)
    e_k[k] = 1.0
    rest = indices[:-1]
    if variant == "central":
        hi = _nested_quotient(solve, eps + eta * e_k, rest, etas, variant)
        lo = _nested_quotient(solve, eps - eta * e_k, rest, etas, variant)
        return tuple((a - b) / (2.0 * eta) for a, b in zip(hi, lo))
    hi = _nested_quotient(solve, eps + eta * e_k, rest, etas, variant)
    lo = _nested_quotient(solve, eps, rest, etas, variant)
    return tuple((a - b) / eta for a, b in zip(hi, lo))


def _eta_list(eta, N):
    if np.isscalar(eta):
        return [float(eta)] * N
    etas = [float(e) for e in eta]
    if len(etas) != N:
        raise ShapeMismatch(f"need {N} step sizes, got {len(etas)}")
    return etas


def diff_quotient_solution_map(op: FracOp, params: MGTParams, q: Potential | None,
                               g, phi_bank: Sequence, indices, eta, eps=None, *,
                               dt: float, T: float, variant: str = "one-sided",
                               scheme: str = "implicit-midpoint", tol: float = 1e-10,
                               max_iter: int = 200) -> StateTrajectory:
    """Nested difference quotient of the solution map along `indices`.

    Returns a trajectory whose components are the quotient triple; its
    exterior datum is exact (phi_k for order one, none for higher orders,
    since the data dependence is affine in eps).
    """
    phi_bank = list(phi_bank)
    indices = tuple(int(k) for k in indices)
    if not 1 <= len(indices) <= 8:
        raise OrderTooLarge(f"quotient order {len(indices)} outside 1..8")
    if variant not in ("one-sided", "central"):
        raise ConfigError(f"unknown quotient variant {variant!r}")
    m = len(phi_bank)
    eps = np.zeros(m) if eps is None else np.asarray(eps, dtype=float)
    etas = _eta_list(eta, len(indices))
    solve = _solution_cache(op, params, q, g, phi_bank, dt, T, scheme, tol, max_iter)
    u, ut, utt = _nested_quotient(solve, eps, indices, etas, variant)
    grid = op.grid
    phi = phi_bank[indices[0]] if len(indices) == 1 else None

    def embed(arr):
        return SpaceTimeField.from_omega(grid, np.ascontiguousarray(arr), dt)

    return StateTrajectory(grid=grid, dt=dt, u=embed(u), ut=embed(ut), utt=embed(utt),
                           phi=phi, scheme=scheme)


@dataclass
class ConvergenceReport:
    """Relative quotient-vs-linearized errors along an eta ladder."""

    order: int
    indices: tuple[int, ...]
    etas: list[float]
    errors: list[float]
    slope: float | None

    def rows(self):
        yield ["order", "indices", "eta", "error", "slope"]
        tag = "+".join(str(k) for k in self.indices)
        for eta, err in zip(self.etas, self.errors):
            yield [self.order, tag, eta, err, self.slope]


def fit_slope(xs, ys) -> float | None:
    """Least-squares slope of log(y) against log(x), ignoring zero entries."""
    pairs = [(x, y) for x, y in zip(xs, ys) if y > 0 and x > 0]
    if len(pairs) < 2:
        return None
    lx = np.log([p[0] for p in pairs])
    ly = np.log([p[1] for p in pairs])
    return float(np.polyfit(lx, ly, 1)[0])


def linearization_convergence_report(stack: LinearizationStack, indices,
                                     etas: Sequence[float],
                                     variant: str = "central",
                                     tol: float = 1e-10,
                                     max_iter: int = 200) -> ConvergenceReport:
    """Compare the linearized field against nested quotients of the full map."""
    indices = tuple(int(k) for k in indices)
    v = stack.trajectory(indices)
    vu, vut, vutt = v.slabs()
    scale = max(xnorm_slabs(stack.op, vu, vut, vutt), _TINY)
    solve = _solution_cache(stack.op, stack.params, stack.q, stack.g, stack.phi_bank,
                            stack.dt, stack.T, stack.scheme, tol, max_iter)
    errors = []
    for eta in etas:
        qu, qut, qutt = _nested_quotient(solve, stack.eps.copy(), indices,
                                         _eta_list(eta, len(indices)), variant)
        err = xnorm_slabs(stack.op, qu - vu, qut - vut, qutt - vutt) / scale
        errors.append(err)
    return ConvergenceReport(order=len(indices), indices=indices,
                             etas=[float(e) for e in etas], errors=errors,
                             slope=fit_slope(etas, errors))


# ---------------------------------------------------------------------------
# derivatives of the measurement map


def dn_derivative(stack: LinearizationStack, indices, psi) -> float:
    """Pairing of the order-N derivative flux with the exterior test field."""
    from .dnmap import dn_pairing

    traj = stack.trajectory(indices)
    return dn_pairing(traj, psi, stack.op, stack.params)


def dn_derivative_quotient(op: FracOp, params: MGTParams, q: Potential | None,
                           g, phi_bank: Sequence, indices, psi, eta, eps=None, *,
                           dt: float, T: float, variant: str = "central",
                           scheme: str = "implicit-midpoint", tol: float = 1e-10,
                           max_iter: int = 200) -> float:
    """Same derivative via nested quotients of the nonlinear pairing map."""
    from .dnmap import dn_pairing

    phi_bank = list(phi_bank)
    indices = tuple(int(k) for k in indices)
    m = len(phi_bank)
    eps0 = np.zeros(m) if eps is None else np.asarray(eps, dtype=float)
    etas = _eta_list(eta, len(indices))
    cache: dict[tuple, tuple] = {}

    def solve(eps_vec: np.ndarray):
        key = tuple(float(e) for e in eps_vec)
        if key not in cache:
            phi = ExteriorSum(phi_bank, eps_vec) if np.any(eps_vec) else None
            if g is None:
                traj = solve_linear_mgt(op, params, q, None, phi, dt=dt, T=T, scheme=scheme)
            else:
                traj = solve_semilinear_mgt(op, params, q, g, phi, dt=dt, T=T,
                                            tol=tol, max_iter=max_iter, scheme=scheme)
            cache[key] = (dn_pairing(traj, psi, op, params),)
        return cache[key]

    return _nested_quotient(solve, eps0, indices, etas, variant)[0]
