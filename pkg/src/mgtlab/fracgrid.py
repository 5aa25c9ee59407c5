"""Truncated-box grids and the discrete spectral fractional Laplacian.

The domain of interest Omega sits strictly inside a truncated box of
half-width L with homogeneous Dirichlet conditions on the box boundary. The
nonlocal operator is realized as the spectral s-power of the box second
difference Laplacian: if T = V diag(lambda) V^T is the (dense) eigensystem of
the base operator, then

    A_s = V diag(lambda^s) V^T.

Every downstream identity (energy balance, integration by parts, interior vs
exterior coupling) only uses symmetry and positivity of A_s together with the
Omega / Omega_e index split, both of which hold here exactly. The off-diagonal
block A_s[Omega, W] is nonzero for any exterior window W, which is what makes
exterior inputs and measurements informative about the interior.

One eigendecomposition is shared by all powers on a given grid; grids are
desk scale (N_tot <= 256 in 1d, <= 32^2 in 2d) so dense algebra is fine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from . import serial
from .errors import (
    EmptySetError,
    NonPositiveExponent,
    OverlapError,
    ShapeMismatch,
    SupportError,
)

__all__ = [
    "Grid",
    "FracOp",
    "SpaceTimeField",
    "build_grid",
    "standard_grid",
    "build_fracop",
    "frac_apply",
    "frac_pairing",
    "check_operator_laws",
    "OperatorLawReport",
    "trapezoid_weights",
    "st_inner",
    "st_norm",
    "save_fracop",
    "load_fracop",
]

_MAX_DENSE_1D = 256
_MAX_DENSE_2D = 32 * 32


@dataclass(frozen=True)
class Grid:
    """Index bookkeeping for the truncated box.

    Nodes per axis sit at x_i = -L + (i+1) h, i = 0..N-1, h = 2L/(N+1); the
    box boundary itself carries the homogeneous Dirichlet condition and is not
    represented. In 2d the flat index is ix * N + iy (row major).

    `omega` is the contiguous interior block, `omega_e` its complement within
    the box, and `w1`, `w2` are nonempty measurement/input windows inside
    `omega_e`.
    """

    d: int
    L: float
    N: int
    h: float
    omega: np.ndarray
    omega_e: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    @property
    def n_total(self) -> int:
        return self.N**self.d

    def axis_coords(self) -> np.ndarray:
        return -self.L + self.h * (np.arange(self.N) + 1.0)

    def nodes(self) -> np.ndarray:
        """Physical coordinates of all box nodes, shape (n_total, d)."""
        x = self.axis_coords()
        if self.d == 1:
            return x[:, None]
        xx, yy = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def omega_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_total, dtype=bool)
        mask[self.omega] = True
        return mask


def _as_ranges(spec, d: int) -> list[tuple[int, int]]:
    """Normalize an index-range spec to one (lo, hi) half-open pair per axis."""
    if d == 1:
        if len(spec) == 2 and all(np.isscalar(v) for v in spec):
            return [(int(spec[0]), int(spec[1]))]
        raise ShapeMismatch(f"1d range spec must be (lo, hi), got {spec!r}")
    ranges = [tuple(int(v) for v in r) for r in spec]
    if len(ranges) != d or any(len(r) != 2 for r in ranges):
        raise ShapeMismatch(f"{d}d range spec must give (lo, hi) per axis, got {spec!r}")
    return ranges


def _block_indices(ranges: Sequence[tuple[int, int]], N: int, d: int) -> np.ndarray:
    if d == 1:
        lo, hi = ranges[0]
        return np.arange(lo, hi, dtype=int)
    (lox, hix), (loy, hiy) = ranges
    ix = np.arange(lox, hix, dtype=int)
    iy = np.arange(loy, hiy, dtype=int)
    return (ix[:, None] * N + iy[None, :]).ravel()


def build_grid(d, L, N, omega_spec, w1_spec, w2_spec) -> Grid:
    """Build the truncated-box grid with interior block and exterior windows.

    Parameters
    ----------
    d : 1 or 2.
    L : box half-width, > 0.
    N : nodes per axis, >= 8.
    omega_spec : per-axis half-open index ranges for the interior block,
        strictly inside the box (so the exterior is nonempty on every side).
    w1_spec, w2_spec : windows, either index ranges (interpreted per axis as
        for omega_spec) or explicit flat index arrays. Must be nonempty and
        disjoint from omega.
    """
    if d not in (1, 2):
        raise ShapeMismatch(f"d must be 1 or 2, got {d}")
    if N < 8:
        raise EmptySetError(f"N >= 8 required, got {N}")
    if L <= 0:
        raise ShapeMismatch("L must be positive")
    h = 2.0 * L / (N + 1)
    n_total = N**d

    om_ranges = _as_ranges(omega_spec, d)
    for lo, hi in om_ranges:
        if not (0 < lo < hi < N):
            raise OverlapError(
                f"interior range ({lo}, {hi}) must sit strictly inside the box (0, {N})"
            )
    omega = _block_indices(om_ranges, N, d)
    if omega.size == 0:
        raise EmptySetError("interior block is empty")

    omega_mask = np.zeros(n_total, dtype=bool)
    omega_mask[omega] = True
    omega_e = np.flatnonzero(~omega_mask)
    if omega_e.size == 0:
        raise EmptySetError("exterior is empty")

    def window(spec, name: str) -> np.ndarray:
        if isinstance(spec, np.ndarray) or (
            isinstance(spec, (list, tuple)) and spec and not np.isscalar(spec[0]) and d == 1
        ):
            idx = np.asarray(spec, dtype=int).ravel()
        else:
            try:
                idx = _block_indices(_as_ranges(spec, d), N, d)
            except ShapeMismatch:
                idx = np.asarray(spec, dtype=int).ravel()
        if idx.size == 0:
            raise EmptySetError(f"window {name} is empty")
        if idx.min() < 0 or idx.max() >= n_total:
            raise ShapeMismatch(f"window {name} indices out of range")
        if omega_mask[idx].any():
            raise OverlapError(f"window {name} intersects the interior block")
        return np.unique(idx)

    w1 = window(w1_spec, "w1")
    w2 = window(w2_spec, "w2")
    return Grid(d=d, L=float(L), N=int(N), h=h, omega=np.sort(omega),
                omega_e=omega_e, w1=w1, w2=w2)


def standard_grid(d: int = 1, L: float = 2.0, N: int = 63,
                  interior: tuple[float, float] = (-1.0, 1.0),
                  window_nodes: int = 5) -> Grid:
    """Canonical setup: Omega = nodes in `interior`, windows hugging the box edges.

    In 1d, w1 is the `window_nodes` leftmost and w2 the rightmost exterior
    nodes. In 2d the same construction is applied to the first axis (left and
    right exterior strips of `window_nodes` columns).
    """
    h = 2.0 * L / (N + 1)
    x = -L + h * (np.arange(N) + 1.0)
    inside = np.flatnonzero((x > interior[0]) & (x < interior[1]))
    lo, hi = int(inside[0]), int(inside[-1]) + 1
    if d == 1:
        return build_grid(1, L, N, (lo, hi), (0, window_nodes), (N - window_nodes, N))
    omega_spec = ((lo, hi), (lo, hi))
    w1_spec = ((0, window_nodes), (0, N))
    w2_spec = ((N - window_nodes, N), (0, N))
    return build_grid(2, L, N, omega_spec, w1_spec, w2_spec)


class FracOp:
    """Spectral s-power of the box-Dirichlet Laplacian on a fixed grid.

    Attributes
    ----------
    grid : Grid
    s : float, >= 0 (s = 0 gives the identity).
    eigvecs : (n_total, n_total) orthonormal columns of the base operator.
    eigvals : ascending positive base eigenvalues.
    multiplier : eigvals**s.
    """

    def __init__(self, grid: Grid, s: float, eigvecs: np.ndarray, eigvals: np.ndarray):
        if s < 0:
            raise NonPositiveExponent(f"fractional exponent must be >= 0, got {s}")
        self.grid = grid
        self.s = float(s)
        self.eigvecs = eigvecs
        self.eigvals = eigvals
        self.multiplier = eigvals**self.s
        self._dense: np.ndarray | None = None
        self._omega_block: np.ndarray | None = None

    @property
    def n_total(self) -> int:
        return self.grid.n_total

    @property
    def lambda_min(self) -> float:
        return float(self.eigvals[0])

    def dense(self) -> np.ndarray:
        """Materialized A_s = V diag(lambda^s) V^T (cached)."""
        if self._dense is None:
            self._dense = (self.eigvecs * self.multiplier) @ self.eigvecs.T
        return self._dense

    def omega_block(self) -> np.ndarray:
        """Interior Galerkin block A_s[omega, omega] (cached)."""
        if self._omega_block is None:
            om = self.grid.omega
            self._omega_block = self.dense()[np.ix_(om, om)]
        return self._omega_block

    def coupling(self, idx: np.ndarray) -> np.ndarray:
        """Interior-to-`idx` block A_s[omega, idx]."""
        return self.dense()[np.ix_(self.grid.omega, np.asarray(idx, dtype=int))]

    def power(self, s: float) -> "FracOp":
        """Another power sharing this operator's eigendecomposition."""
        return FracOp(self.grid, s, self.eigvecs, self.eigvals)

    def half_norm(self, vec: np.ndarray) -> float:
        """|| A_s^{1/2} v || without the volume weight (plain l2)."""
        coeff = self.eigvecs.T @ vec
        return float(np.sqrt(np.sum(self.multiplier * coeff**2)))


def _base_eigensystem(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    h2 = grid.h * grid.h
    diag = np.full(grid.N, 2.0 / h2)
    off = np.full(grid.N - 1, -1.0 / h2)
    vals1, vecs1 = scipy.linalg.eigh_tridiagonal(diag, off)
    if grid.d == 1:
        return vals1, vecs1
    # 2d: Kronecker sum of two copies of the 1d operator.
    vals = (vals1[:, None] + vals1[None, :]).ravel()
    vecs = np.kron(vecs1, vecs1)
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def build_fracop(grid: Grid, s: float) -> FracOp:
    """Eigendecompose the base Laplacian once and attach the power s."""
    cap = _MAX_DENSE_1D if grid.d == 1 else _MAX_DENSE_2D
    if grid.n_total > cap:
        raise ShapeMismatch(
            f"dense eigendecomposition capped at {cap} nodes in {grid.d}d, got {grid.n_total}"
        )
    vals, vecs = _base_eigensystem(grid)
    return FracOp(grid, s, vecs, vals)


def frac_apply(op: FracOp, values: np.ndarray) -> np.ndarray:
    """Apply A_s to a box field, columnwise over any trailing time axis."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != op.n_total:
        raise ShapeMismatch(
            f"field has leading dimension {values.shape[0]}, grid has {op.n_total} nodes"
        )
    return op.dense() @ values


def frac_pairing(op: FracOp, f: np.ndarray, g: np.ndarray) -> float:
    """Bilinear form f . (A_s g) of two box snapshots (no volume weight).

    In eigen-coordinates this is sum_k lambda_k^s fhat_k ghat_k; callers that
    approximate space-time integrals multiply by h^d and time weights.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (op.n_total,) or g.shape != (op.n_total,):
        raise ShapeMismatch("pairing expects two box snapshots")
    return float(f @ (op.dense() @ g))


@dataclass
class OperatorLawReport:
    symmetry_residual: float
    psd_min: float
    semigroup_residual: float
    poincare_margin: float
    lambda_min: float
    identity_residual: float | None = None

    def ok(self, sym_tol: float = 1e-10, semi_tol: float = 1e-9) -> bool:
        return (
            self.symmetry_residual <= sym_tol
            and self.psd_min >= -1e-10
            and self.semigroup_residual <= semi_tol
            and self.poincare_margin <= 1.0 + 1e-8
        )


def check_operator_laws(ops: Sequence[FracOp], n_samples: int = 1000, seed: int = 0) -> OperatorLawReport:
    """Measure symmetry, positivity, the power semigroup law and the Poincare bound.

    All operators must share one grid (and hence one eigendecomposition).
    Matrix residuals are Frobenius-relative (the operators' norms grow like
    lambda_max^s, so absolute residuals would scale with the grid). The
    Poincare check samples `n_samples` Gaussian vectors u and verifies, for
    every ordered pair of exponents t <= s in `ops`,

        || A^{t/2} u || <= lambda_min^{(t-s)/2} || A^{s/2} u ||,

    reporting the worst ratio/bound margin (<= 1 means the bound holds).
    """
    if not ops:
        raise EmptySetError("no operators to check")
    base = ops[0]
    for op in ops[1:]:
        if op.grid is not base.grid and not np.array_equal(op.eigvals, base.eigvals):
            raise ShapeMismatch("operator-law check requires a shared grid")

    sym = max(
        float(np.linalg.norm(op.dense() - op.dense().T, "fro")
              / max(np.linalg.norm(op.dense(), "fro"), 1.0))
        for op in ops
    )
    psd_min = min(float(op.multiplier.min()) for op in ops)

    semi = 0.0
    for i, opa in enumerate(ops):
        for opb in ops[i:]:
            target = (base.eigvecs * (base.eigvals ** (opa.s + opb.s))) @ base.eigvecs.T
            resid = np.linalg.norm(opa.dense() @ opb.dense() - target, "fro")
            semi = max(semi, float(resid / max(np.linalg.norm(target, "fro"), 1.0)))

    ident = None
    for op in ops:
        if op.s == 1.0:
            h2 = base.grid.h**2
            if base.grid.d == 1:
                lap = (
                    np.diag(np.full(base.grid.N, 2.0 / h2))
                    + np.diag(np.full(base.grid.N - 1, -1.0 / h2), 1)
                    + np.diag(np.full(base.grid.N - 1, -1.0 / h2), -1)
                )
            else:
                eye = np.eye(base.grid.N)
                lap1 = (
                    np.diag(np.full(base.grid.N, 2.0 / h2))
                    + np.diag(np.full(base.grid.N - 1, -1.0 / h2), 1)
                    + np.diag(np.full(base.grid.N - 1, -1.0 / h2), -1)
                )
                lap = np.kron(lap1, eye) + np.kron(eye, lap1)
            ident = float(np.linalg.norm(op.dense() - lap, "fro")
                          / np.linalg.norm(lap, "fro"))

    rng = np.random.default_rng(seed)
    u = rng.standard_normal((base.n_total, n_samples))
    coeff2 = (base.eigvecs.T @ u) ** 2
    lam = base.eigvals
    lam_min = float(lam[0])
    exponents = sorted({op.s for op in ops})
    margin = 0.0
    for i, t in enumerate(exponents):
        nt = np.sqrt(np.sum((lam**t)[:, None] * coeff2, axis=0))
        for s in exponents[i:]:
            ns = np.sqrt(np.sum((lam**s)[:, None] * coeff2, axis=0))
            bound = lam_min ** ((t - s) / 2.0)
            margin = max(margin, float(np.max(nt / (bound * ns))))
    return OperatorLawReport(
        symmetry_residual=sym,
        psd_min=psd_min,
        semigroup_residual=semi,
        poincare_margin=margin,
        lambda_min=lam_min,
        identity_residual=ident,
    )


# ---------------------------------------------------------------------------
# Space-time fields


@dataclass
class SpaceTimeField:
    """A real field on grid x time nodes with a declared support tag.

    values has shape (n_total, M+1); column m is the snapshot at t = m dt.
    Entries off the tagged index set are exactly zero ("box" allows all).
    """

    grid: Grid
    values: np.ndarray
    dt: float
    support: str = "box"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.n_total:
            raise ShapeMismatch(
                f"values must be (n_total, M+1); got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ShapeMismatch("field contains non-finite entries")
        if self.support not in ("box", "omega", "exterior"):
            raise SupportError(f"unknown support tag {self.support!r}")
        off = self._off_support_indices()
        if off is not None and self.values[off].any():
            raise SupportError(f"nonzero entries off the tagged set {self.support!r}")

    def _off_support_indices(self):
        if self.support == "omega":
            return self.grid.omega_e
        if self.support == "exterior":
            return self.grid.omega
        return None

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return self.dt * (self.n_times - 1)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_times)

    def on(self, idx: np.ndarray) -> np.ndarray:
        """Rows of the field at the given node indices."""
        return self.values[np.asarray(idx, dtype=int)]

    def time_reverse(self) -> "SpaceTimeField":
        """h*(t) = h(T - t): reverse the time axis (values only, no sign flips)."""
        return SpaceTimeField(self.grid, self.values[:, ::-1].copy(), self.dt, self.support)

    def copy(self) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.values.copy(), self.dt, self.support)

    @classmethod
    def zeros(cls, grid: Grid, n_times: int, dt: float, support: str = "box") -> "SpaceTimeField":
        return cls(grid, np.zeros((grid.n_total, n_times)), dt, support)

    @classmethod
    def from_omega(cls, grid: Grid, omega_values: np.ndarray, dt: float) -> "SpaceTimeField":
        """Embed an (n_omega, M+1) slab as an omega-supported box field."""
        vals = np.zeros((grid.n_total, omega_values.shape[1]))
        vals[grid.omega] = omega_values
        return cls(grid, vals, dt, "omega")


def trapezoid_weights(n_times: int, dt: float) -> np.ndarray:
    w = np.full(n_times, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def st_inner(f: SpaceTimeField, g: SpaceTimeField) -> float:
    """Trapezoid-in-time, h^d-weighted space-time inner product."""
    if f.values.shape != g.values.shape:
        raise ShapeMismatch("space-time inner product needs matching shapes")
    w = trapezoid_weights(f.n_times, f.dt)
    return float(f.grid.h**f.grid.d * np.sum(w * np.sum(f.values * g.values, axis=0)))


def st_norm(f: SpaceTimeField) -> float:
    return float(np.sqrt(max(st_inner(f, f), 0.0)))


# ---------------------------------------------------------------------------
# Optional eigendecomposition cache


def save_fracop(op: FracOp, path: str) -> None:
    """Persist the shared eigensystem (binary payload + JSON sidecar)."""
    n = op.n_total
    payload = np.concatenate([op.eigvals, op.eigvecs.ravel()])
    serial.write_array(
        path,
        payload,
        meta={"N_tot": n, "L": op.grid.L, "h": op.grid.h, "layout": "eigvals;eigvecs"},
    )


def load_fracop(grid: Grid, s: float, path: str) -> FracOp:
    payload, meta = serial.read_array(path)
    n = grid.n_total
    if meta["N_tot"] != n or abs(meta["h"] - grid.h) > 1e-14:
        raise ShapeMismatch("cached eigensystem does not match this grid")
    vals = payload[:n]
    vecs = payload[n:].reshape(n, n)
    return FracOp(grid, s, vecs, vals)
