"""Grid bookkeeping and the spectral operator against closed-form oracles.

The base operator is the tridiagonal second-difference matrix with Dirichlet
ends, whose eigenpairs are known exactly:

    lambda_k = (2/h^2) (1 - cos(k pi / (N+1))),   k = 1..N
    v_k(i)  ~ sin(i k pi / (N+1)).

Every fractional power is a function of this one eigensystem, so the closed
form pins down the whole operator family independently of the implementation.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgtlab import (
    FracOp,
    build_fracop,
    build_grid,
    check_operator_laws,
    frac_apply,
    frac_pairing,
    load_fracop,
    save_fracop,
    st_inner,
    st_norm,
    standard_grid,
    trapezoid_weights,
)
from mgtlab.errors import (
    EmptySetError,
    NonPositiveExponent,
    OverlapError,
    ShapeMismatch,
)
from mgtlab.fracgrid import SpaceTimeField


def closed_form_eigvals(N: int, L: float) -> np.ndarray:
    h = 2.0 * L / (N + 1)
    k = np.arange(1, N + 1)
    return (2.0 / h**2) * (1.0 - np.cos(k * np.pi / (N + 1)))


class TestGrid:
    def test_standard_grid_layout(self, grid31):
        g = grid31
        assert g.n_total == 31
        assert g.h == pytest.approx(2.0 * g.L / (g.N + 1))
        # interior strictly between the windows
        assert g.omega.min() > g.w1.max()
        assert g.omega.max() < g.w2.min()
        # interior nodes really sit in (-1, 1)
        x = g.nodes()[g.omega, 0]
        assert np.all((x > -1.0) & (x < 1.0))

    def test_partition_of_box(self, grid31):
        g = grid31
        joined = np.sort(np.concatenate([g.omega, g.omega_e]))
        assert np.array_equal(joined, np.arange(g.n_total))
        assert not np.intersect1d(g.w1, g.omega).size
        assert not np.intersect1d(g.w2, g.omega).size

    def test_window_overlap_rejected(self):
        with pytest.raises(OverlapError):
            build_grid(1, 2.0, 31, (5, 26), (0, 8), (26, 31))

    def test_empty_window_rejected(self):
        with pytest.raises(EmptySetError):
            build_grid(1, 2.0, 31, (5, 26), (0, 0), (26, 31))

    def test_interior_must_be_strict(self):
        with pytest.raises(OverlapError):
            build_grid(1, 2.0, 31, (0, 31), (0, 3), (28, 31))

    def test_2d_indexing(self):
        g = standard_grid(d=2, N=15, window_nodes=2)
        assert g.n_total == 225
        nodes = g.nodes()
        assert nodes.shape == (225, 2)
        # w1 is the left strip: first axis coordinate below the interior
        assert nodes[g.w1, 0].max() < nodes[g.omega, 0].min()


class TestEigensystem:
    def test_base_eigenvalues_closed_form(self, grid31, op31):
        expected = closed_form_eigvals(grid31.N, grid31.L)
        assert np.allclose(op31.eigvals, expected, rtol=0, atol=1e-10)

    def test_multiplier_is_power(self, op31):
        assert np.allclose(op31.multiplier, op31.eigvals**1.3, rtol=1e-14)

    def test_s_zero_is_identity(self, grid31):
        op0 = build_fracop(grid31, 0.0)
        assert np.allclose(op0.dense(), np.eye(grid31.n_total), atol=1e-12)

    def test_s_one_matches_stencil(self, grid31):
        """A_1 applied to a field reproduces the second-difference stencil."""
        op1 = build_fracop(grid31, 1.0)
        rng = np.random.default_rng(0)
        u = rng.standard_normal(grid31.n_total)
        got = frac_apply(op1, u)
        padded = np.concatenate([[0.0], u, [0.0]])
        expected = (2.0 * padded[1:-1] - padded[:-2] - padded[2:]) / grid31.h**2
        assert np.allclose(got, expected, atol=1e-9)

    def test_negative_exponent_rejected(self, grid31):
        with pytest.raises(NonPositiveExponent):
            FracOp(grid31, -0.5, np.eye(grid31.n_total), np.ones(grid31.n_total))

    def test_dense_cap(self):
        g = standard_grid(N=255)
        build_fracop(g, 1.0)  # under the cap, fine
        with pytest.raises(ShapeMismatch):
            build_fracop(standard_grid(N=257, L=2.0), 1.0)


class TestOperatorLaws:
    def test_report_passes_bars(self, grid31):
        ops = [build_fracop(grid31, s) for s in (0.6, 1.0, 1.3)]
        rep = check_operator_laws(ops, n_samples=200, seed=3)
        assert rep.symmetry_residual <= 1e-10
        assert rep.psd_min >= 0.0
        assert rep.semigroup_residual <= 1e-9
        assert rep.poincare_margin <= 1.0 + 1e-8
        assert rep.identity_residual <= 1e-8
        assert rep.ok()

    def test_semigroup_direct(self, op31):
        """A_s A_t = A_{s+t} through the shared eigensystem."""
        op_a, op_b, op_ab = op31.power(0.4), op31.power(0.9), op31.power(1.3)
        prod = op_a.dense() @ op_b.dense()
        assert np.linalg.norm(prod - op_ab.dense(), "fro") <= 1e-9

    def test_poincare_scalar(self, op31):
        rng = np.random.default_rng(7)
        lam_min = op31.lambda_min
        for _ in range(50):
            u = rng.standard_normal(op31.n_total)
            lhs = np.linalg.norm(u)
            rhs = op31.power(0.5).half_norm(u)  # ||A^{s/2}u|| with s = 1
            assert lhs <= rhs / np.sqrt(lam_min) * (1 + 1e-12)

    def test_mismatched_grids_rejected(self, op31):
        other = build_fracop(standard_grid(N=47), 1.3)
        with pytest.raises(ShapeMismatch):
            check_operator_laws([op31, other], n_samples=10)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(-5.0, 5.0, allow_nan=False), seed=st.integers(0, 2**16))
def test_frac_apply_linearity(scale, seed):
    grid = standard_grid(N=31)
    op = build_fracop(grid, 1.1)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(grid.n_total)
    v = rng.standard_normal(grid.n_total)
    lhs = frac_apply(op, scale * u + v)
    rhs = scale * frac_apply(op, u) + frac_apply(op, v)
    assert np.allclose(lhs, rhs, atol=1e-8 * max(1.0, abs(scale)))


def test_pairing_symmetry(op31, rng):
    f = rng.standard_normal(op31.n_total)
    g = rng.standard_normal(op31.n_total)
    assert frac_pairing(op31, f, g) == pytest.approx(frac_pairing(op31, g, f), abs=1e-9)


def test_pairing_positive(op31, rng):
    f = rng.standard_normal(op31.n_total)
    assert frac_pairing(op31, f, f) >= 0.0


class TestSpaceTimeField:
    def test_support_enforced(self, grid31):
        vals = np.ones((grid31.n_total, 4))
        with pytest.raises(Exception):
            SpaceTimeField(grid31, vals, 0.1, support="omega")
        vals2 = np.zeros((grid31.n_total, 4))
        vals2[grid31.omega] = 1.0
        f = SpaceTimeField(grid31, vals2, 0.1, support="omega")
        assert f.T == pytest.approx(0.3)

    def test_time_reverse_involution(self, grid31, rng):
        vals = rng.standard_normal((grid31.n_total, 6))
        f = SpaceTimeField(grid31, vals, 0.05)
        assert np.array_equal(f.time_reverse().time_reverse().values, f.values)

    def test_trapezoid_weights_sum(self):
        w = trapezoid_weights(11, 0.1)
        assert w.sum() == pytest.approx(1.0)
        assert w[0] == w[-1] == pytest.approx(0.05)

    def test_st_inner_constant(self, grid31):
        """Constant field: inner product equals volume * T exactly."""
        f = SpaceTimeField(grid31, np.ones((grid31.n_total, 11)), 0.1)
        expected = grid31.h * grid31.n_total * 1.0
        assert st_inner(f, f) == pytest.approx(expected)
        assert st_norm(f) == pytest.approx(np.sqrt(expected))


def test_save_load_roundtrip(tmp_path, grid31, op31):
    path = str(tmp_path / "eig.bin")
    save_fracop(op31, path)
    loaded = load_fracop(grid31, 1.3, path)
    assert np.array_equal(loaded.eigvals, op31.eigvals)
    assert np.array_equal(loaded.eigvecs, op31.eigvecs)

    # corrupt payload -> checksum failure
    raw = bytearray(open(path, "rb").read())
    raw[100] ^= 0xFF
    open(path, "wb").write(bytes(raw))
    with pytest.raises(IOError):
        load_fracop(grid31, 1.3, path)


def test_load_grid_mismatch(tmp_path, op31):
    path = str(tmp_path / "eig.bin")
    save_fracop(op31, path)
    with pytest.raises(ShapeMismatch):
        load_fracop(standard_grid(N=47), 1.3, path)
