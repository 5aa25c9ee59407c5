"""Experiment runner: JSON config in, deterministic artifacts out.

One executable (`mgtlab`) with a subcommand per pipeline. Every run writes a
`manifest.json` (config hash, version, timestamps, artifact list, check
summary) plus CSV tables and raw float64 field dumps. Timestamps live only in
the manifest, so reruns with the same config and seed produce byte-identical
CSV and binary outputs.

Config schema (JSON object; unknown keys are rejected):

    pipeline      one of the PIPELINES keys (CLI subcommand overrides this)
    grid          {"N": int, "d": 1|2, "L": float, "window_nodes": int}
    s             fractional power in (0, 2]
    params        {"alpha": float, "b": float > 0, "c": float}
    dt, T         time step and horizon, T/dt integral
    potential     spec (see below); acts as the prior in invert-q
    potential2    second potential for the identities pipeline
    truth_potential   data-generating potential for invert-q
    nonlinearity  spec (see below)
    bank          {"window": "w1"|"w2", "size": int, "scale": float}
    test_bank     same shape, default window "w2"
    solver        {"tol": float, "max_iter": int, "scheme": str}
    ladders       {"dts": [...], "eta": [...], "amplitudes": [...],
                   "eps_reg": [...]}
    inversion     {"lam": float|null, "newton_iters": int, "noise": float,
                   "seed": int, "eps_amp": float, "eta": float,
                   "orders": [2[,3]]}
    output        default run directory (overridden by --out)

Potential specs: {"kind": "none"} | {"kind": "constant", "value": v}
| {"kind": "bump", "base": v, "amplitude": a, "width": w}
| {"kind": "cosine", "base": v, "amplitude": a, "width": w,
   "time_reversal_invariant": true}.

Nonlinearity specs: {"kind": "none"}
| {"kind": "polynomial", "terms": [[coeff, power], ...]}
| {"kind": "polyhomogeneous", "terms": [[coeff, exponent], ...]}
| {"kind": "westervelt-beta", "coef": v} | {"kind": "westervelt-kappa", "coef": v}.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import math
import os
import sys
from typing import Any, Callable

import click
import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    EmptyBank,
    IllConditioned,
    MGTLabError,
    SmallDivisor,
)
from .fracgrid import FracOp, Grid, build_fracop, standard_grid
from .forward import (
    ExteriorInput,
    MGTParams,
    PolynomialType,
    Polyhomogeneous,
    Potential,
    WesterveltBeta,
    WesterveltKappa,
    energy_identity_check,
    mms_convergence,
    solve_linear_mgt,
    solve_semilinear_mgt,
    solve_westervelt,
)
from .dnmap import (
    adjoint_identity_residual,
    integral_identity_residual,
    pairing_matrix,
)
from .linearize import build_stack, linearization_convergence_report
from .inverse import (
    generate_solution_family,
    generate_trace_family,
    make_input_bank,
    recover_g_taylor,
    recover_polyhomogeneous,
    recover_q,
    recover_westervelt_beta,
    recover_westervelt_kappa,
    taylor_quotient_amplitudes,
)
from .regularize import ibp_residual, regularization_sweep
from .serial import ensure_dir, write_array, write_csv, write_json

EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_INVERSION = 3

_TOP_KEYS = {
    "pipeline", "grid", "s", "params", "dt", "T", "potential", "potential2",
    "truth_potential", "nonlinearity", "bank", "test_bank", "solver",
    "ladders", "inversion", "output",
}

_DEFAULTS: dict[str, Any] = {
    "grid": {"N": 47, "d": 1, "L": 2.0, "window_nodes": 5},
    "s": 1.3,
    "params": {"alpha": 0.8, "b": 1.0, "c": 0.7},
    "dt": 2e-3,
    "T": 1.0,
    "potential": {"kind": "constant", "value": 0.2},
    "potential2": {"kind": "none"},
    "truth_potential": {"kind": "none"},
    "nonlinearity": {"kind": "none"},
    "bank": {"window": "w1", "size": 4, "scale": 6.0},
    "test_bank": {"window": "w2", "size": 4, "scale": 1.0},
    "solver": {"tol": 1e-10, "max_iter": 200, "scheme": "implicit-midpoint"},
    "ladders": {"dts": [4e-3, 2e-3, 1e-3], "eta": [1e-1, 5e-2, 2.5e-2, 1.25e-2],
                "amplitudes": [0.4, 0.2, 0.1, 0.05],
                "eps_reg": [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]},
    "inversion": {"lam": None, "newton_iters": 5, "noise": 0.0, "seed": 0,
                  "eps_amp": 0.05, "eta": 0.05, "orders": [2]},
    "output": "runs/out",
}


# kind-discriminated sections are replaced wholesale; the rest merge key-wise
_SPEC_SECTIONS = {"potential", "potential2", "truth_potential", "nonlinearity"}


def _merge_section(name: str, given: Any) -> Any:
    base = _DEFAULTS[name]
    if not isinstance(base, dict):
        return base if given is None else given
    if given is None:
        return dict(base)
    if not isinstance(given, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    if name in _SPEC_SECTIONS:
        return dict(given)
    unknown = set(given) - set(base)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    merged = dict(base)
    merged.update(given)
    return merged


@dataclasses.dataclass
class ExperimentConfig:
    """Validated, fully defaulted experiment description."""

    pipeline: str
    raw: dict

    @classmethod
    def load(cls, path: str, pipeline: str | None = None) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data, pipeline)

    @classmethod
    def from_dict(cls, data: dict, pipeline: str | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = {"pipeline": pipeline or data.get("pipeline")}
        if cfg["pipeline"] not in PIPELINES:
            raise ConfigError(
                f"pipeline must be one of {sorted(PIPELINES)}, got {cfg['pipeline']!r}")
        for key in _TOP_KEYS - {"pipeline"}:
            cfg[key] = _merge_section(key, data.get(key))
        out = cls(pipeline=cfg["pipeline"], raw=cfg)
        out._validate()
        return out

    def _validate(self) -> None:
        c = self.raw
        if c["dt"] <= 0 or c["T"] <= 0:
            raise ConfigError("dt and T must be positive")
        steps = c["T"] / c["dt"]
        if abs(round(steps) - steps) > 1e-8 * max(steps, 1.0):
            raise ConfigError(f"dt={c['dt']} does not divide T={c['T']}")
        if not 0.0 < c["s"] <= 2.0:
            raise ConfigError(f"s must lie in (0, 2], got {c['s']}")
        if c["params"]["b"] <= 0:
            raise ConfigError("params.b must be positive")
        for name in ("potential", "potential2", "truth_potential"):
            self._check_spec(name, c[name], _POTENTIAL_KINDS)
        self._check_spec("nonlinearity", c["nonlinearity"], _NONLINEARITY_KINDS)
        for name in ("bank", "test_bank"):
            spec = c[name]
            if spec["window"] not in ("w1", "w2"):
                raise ConfigError(f"{name}.window must be 'w1' or 'w2'")
            if int(spec["size"]) < 1:
                raise ConfigError(f"{name}.size must be >= 1")
        inv = c["inversion"]
        if inv["noise"] < 0:
            raise ConfigError("inversion.noise must be >= 0")
        if inv["noise"] > 0 and inv.get("seed") is None:
            raise ConfigError("inversion.seed is required when noise > 0")
        if any(int(N) not in (2, 3) for N in inv["orders"]):
            raise ConfigError("inversion.orders entries must be 2 or 3")
        for name, ladder in c["ladders"].items():
            if not ladder or any(v <= 0 for v in ladder):
                raise ConfigError(f"ladders.{name} must be positive and non-empty")

    @staticmethod
    def _check_spec(name: str, spec: Any, kinds: dict) -> None:
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ConfigError(f"{name} must be an object with a 'kind' key")
        kind = spec["kind"]
        if kind not in kinds:
            raise ConfigError(f"{name}.kind must be one of {sorted(kinds)}")
        unknown = set(spec) - kinds[kind] - {"kind"}
        if unknown:
            raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")

    def canonical_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def __getitem__(self, key: str) -> Any:
        return self.raw[key]


_POTENTIAL_KINDS = {
    "none": set(),
    "constant": {"value"},
    "bump": {"base", "amplitude", "width"},
    "cosine": {"base", "amplitude", "width", "time_reversal_invariant"},
}

_NONLINEARITY_KINDS = {
    "none": set(),
    "polynomial": {"terms"},
    "polyhomogeneous": {"terms"},
    "westervelt-beta": {"coef"},
    "westervelt-kappa": {"coef"},
}


# ---------------------------------------------------------------------------
# builders


def _build_grid_op(cfg: ExperimentConfig) -> tuple[Grid, FracOp]:
    g = cfg["grid"]
    grid = standard_grid(d=int(g["d"]), L=float(g["L"]), N=int(g["N"]),
                         window_nodes=int(g["window_nodes"]))
    return grid, build_fracop(grid, float(cfg["s"]))


def _bump_values(grid: Grid, spec: dict) -> np.ndarray:
    xo = grid.nodes()[grid.omega, 0]
    return spec["base"] + spec["amplitude"] * np.exp(-spec["width"] * xo**2)


def _build_potential(grid: Grid, spec: dict, dt: float, T: float) -> Potential | None:
    kind = spec["kind"]
    if kind == "none":
        return None
    if kind == "constant":
        return Potential.constant(grid, float(spec["value"]))
    if kind == "bump":
        return Potential(grid, static=_bump_values(grid, spec))
    # cosine: static bump modulated by cos(pi t / T), symmetric about T/2
    nt = int(round(T / dt)) + 1
    t = dt * np.arange(nt)
    series = np.outer(_bump_values(grid, spec), np.cos(np.pi * (t - T / 2) / T))
    return Potential(grid, series=series, dt=dt,
                     time_reversal_invariant=bool(spec["time_reversal_invariant"]))


def _build_nonlinearity(spec: dict):
    kind = spec["kind"]
    if kind == "none":
        return None
    if kind == "polynomial":
        return PolynomialType([(float(c), int(p)) for c, p in spec["terms"]])
    if kind == "polyhomogeneous":
        return Polyhomogeneous([(float(c), float(r)) for c, r in spec["terms"]])
    if kind == "westervelt-beta":
        return WesterveltBeta(float(spec["coef"]))
    return WesterveltKappa(float(spec["coef"]))


def _build_bank(grid: Grid, spec: dict, T: float) -> list[ExteriorInput]:
    window = grid.w1 if spec["window"] == "w1" else grid.w2
    return make_input_bank(grid, window, T, size=int(spec["size"]),
                           scale=float(spec["scale"]),
                           label_prefix=spec["window"])


def _interior_bump(grid: Grid, width: float = 2.0) -> np.ndarray:
    xo = grid.nodes()[grid.omega, 0]
    return np.exp(-width * xo**2)


# ---------------------------------------------------------------------------
# manifest


@dataclasses.dataclass
class RunManifest:
    pipeline: str
    config_hash: str
    version: str
    started: str
    finished: str = ""
    out_dir: str = ""
    artifacts: list[str] = dataclasses.field(default_factory=list)
    checks: list[dict] = dataclasses.field(default_factory=list)

    def add_check(self, name: str, value: float | None, threshold: float | None,
                  passed: bool) -> None:
        self.checks.append({
            "name": name,
            "value": None if value is None else float(value),
            "threshold": None if threshold is None else float(threshold),
            "passed": bool(passed),
        })

    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def write(self) -> str:
        path = os.path.join(self.out_dir, "manifest.json")
        write_json(path, dataclasses.asdict(self))
        return path


def emit_report(manifest: RunManifest) -> str:
    """Human-readable pass/fail summary next to the machine outputs."""
    lines = [f"pipeline: {manifest.pipeline}",
             f"config: {manifest.config_hash}",
             f"artifacts: {len(manifest.artifacts)}"]
    for c in manifest.checks:
        status = "PASS" if c["passed"] else "FAIL"
        val = "n/a" if c["value"] is None else f"{c['value']:.6e}"
        thr = "" if c["threshold"] is None else f" (threshold {c['threshold']:.3e})"
        lines.append(f"[{status}] {c['name']}: {val}{thr}")
    if not manifest.checks:
        lines.append("no checks ran")
    text = "\n".join(lines) + "\n"
    path = os.path.join(manifest.out_dir, "summary.txt")
    with open(path, "w") as fh:
        fh.write(text)
    return text


# ---------------------------------------------------------------------------
# pipelines


def _fit_with_r2(xs, ys) -> tuple[float, float]:
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), r2


def _solve_by_kind(op, params, q, g, phi, cfg):
    sol = cfg["solver"]
    if g is None:
        return solve_linear_mgt(op, params, q, None, phi, dt=cfg["dt"],
                                T=cfg["T"], scheme=sol["scheme"])
    if getattr(g, "variant", None) in ("westervelt-beta", "westervelt-kappa"):
        return solve_westervelt(op, params, g, phi, dt=cfg["dt"], T=cfg["T"],
                                tol=sol["tol"], max_iter=sol["max_iter"],
                                scheme=sol["scheme"])
    return solve_semilinear_mgt(op, params, q, g, phi, dt=cfg["dt"], T=cfg["T"],
                                tol=sol["tol"], max_iter=sol["max_iter"],
                                scheme=sol["scheme"])


def run_forward(cfg: ExperimentConfig, out: str, rng) -> tuple[list[str], list]:
    grid, op = _build_grid_op(cfg)
    params = MGTParams(**cfg["params"])
    q = _build_potential(grid, cfg["potential"], cfg["dt"], cfg["T"])
    g = _build_nonlinearity(cfg["nonlinearity"])
    bank = _build_bank(grid, cfg["bank"], cfg["T"])
    traj = _solve_by_kind(op, params, q, g, bank[0], cfg)
    traj.save(out, "trajectory")
    artifacts = [os.path.join(out, f"trajectory_{name}.bin")
                 for name in ("u", "ut", "utt")]
    artifacts.append(os.path.join(out, "trajectory_meta.json"))
    ledger = energy_identity_check(traj, op, params, q)
    csv_path = os.path.join(out, "energy.csv")
    rows = iter(ledger.rows())
    header = next(rows)
    write_csv(csv_path, header, rows)
    artifacts.append(csv_path)
    finite = all(np.all(np.isfinite(s)) for s in traj.slabs())
    checks = [("trajectory_finite", None, None, finite),
              ("energy_max_residual", ledger.max_residual, None, True)]
    return artifacts, checks


def run_sweep(cfg: ExperimentConfig, out: str, rng) -> tuple[list[str], list]:
    grid, op = _build_grid_op(cfg)
    params = MGTParams(**cfg["params"])
    q = _build_potential(grid, cfg["potential"], cfg["dt"], cfg["T"])
    from .envelopes import pulse_envelope

    dts = cfg["ladders"]["dts"]
    errors, order = mms_convergence(op, params, q, pulse_envelope(cfg["T"], 1.0),
                                    _interior_bump(grid), dts, T=cfg["T"],
                                    scheme=cfg["solver"]["scheme"])
    _, r2 = _fit_with_r2(dts, errors)
    csv_path = os.path.join(out, "mms_ladder.csv")
    write_csv(csv_path, ["dt", "error"], zip(dts, errors))
    sl_path = os.path.join(out, "mms_order.csv")
    write_csv(sl_path, ["order", "r_squared"], [[order, r2]])
    checks = [("mms_order", order, None, abs(order - 2.0) <= 0.2)]
    return [csv_path, sl_path], checks


def run_dn(cfg: ExperimentConfig, out: str, rng) -> tuple[list[str], list]:
    grid, op = _build_grid_op(cfg)
    params = MGTParams(**cfg["params"])
    q = _build_potential(grid, cfg["potential"], cfg["dt"], cfg["T"])
    bank = _build_bank(grid, cfg["bank"], cfg["T"])
    tests = _build_bank(grid, cfg["test_bank"], cfg["T"])
    M, _ = pairing_matrix(op, params, q, bank, tests, dt=cfg["dt"], T=cfg["T"])
    csv_path = os.path.join(out, "pairings.csv")
    write_csv(csv_path, ["input", "test", "pairing"],
              [[i, j, M[i, j]] for i in range(M.shape[0]) for j in range(M.shape[1])])
    arr_path = os.path.join(out, "pairings.f64")
    write_array(arr_path, M, {"rows": "inputs", "cols": "tests"})
    checks = [("pairings_finite", float(np.max(np.abs(M))), None,
               bool(np.all(np.isfinite(M))))]
    return [csv_path, arr_path], checks


def run_identities(cfg: ExperimentConfig, out: str, rng) -> tuple[list[str], list]:
    grid, op = _build_grid_op(cfg)
    params = MGTParams(**cfg["params"])
    dt, T = cfg["dt"], cfg["T"]
    q1 = _build_potential(grid, cfg["potential"], dt, T)
    q2 = _build_potential(grid, cfg["potential2"], dt, T)
    bank = _build_bank(grid, cfg["bank"], T)
    tests = _build_bank(grid, cfg["test_bank"], T)
    phi1, phi2 = bank[0], tests[0]

    adj = adjoint_identity_residual(op, params, q1, phi1, phi2, dt=dt, T=T)
    _, _, integ = integral_identity_residual(op, params, q1, q2, phi1, phi2,
                                             dt=dt, T=T)
    prof = _interior_bump(grid)
    ibp = ibp_residual(op, params, q1, q2,
                       lambda t: prof * (t**3 * (T - t)),
                       lambda t: prof * ((T - t) ** 3 * t), dt=dt, T=T)
    thr = 1e-6
    rows = [["adjoint", adj, thr, adj <= thr],
            ["integral", integ, thr, integ <= thr],
            ["ibp", ibp, thr, ibp <= thr]]
    csv_path = os.path.join(out, "identities.csv")
    write_csv(csv_path, ["identity", "residual", "threshold", "passed"], rows)
    checks = [(f"{name}_residual", val, thr, ok) for name, val, thr, ok in rows]
    return [csv_path], checks


def run_linearize(cfg: ExperimentConfig, out: str, rng) -> tuple[list[str], list]:
    grid, op = _build_grid_op(cfg)
    params = MGTParams(**cfg["params"])
    q = _build_potential(grid, cfg["potential"], cfg["dt"], cfg["T"])
    g = _build_nonlinearity(cfg["nonlinearity"])
    bank = _build_bank(grid, cfg["bank"], cfg["T"])
    sol = cfg["solver"]
    etas = cfg["ladders"]["eta"]
    stack = build_stack(op, params, q, g, bank[:1], dt=cfg["dt"], T=cfg["T"],
                        scheme=sol["scheme"], tol=sol["tol"],
                        max_iter=sol["max_iter"])
    table_rows = []
    slope_rows = []
    checks = []
    for order, indices in ((1, (0,)), (2, (0, 0))):
        for variant, floor in (("one-sided", 1.0), ("central", 1.8)):
            rep = linearization_convergence_report(stack, indices, etas,
                                                   variant=variant)
            for eta, err in zip(rep.etas, rep.errors):
                table_rows.append([order, variant, eta, err])
            if rep.slope is None:
                slope_rows.append([order, variant, "", ""])
                checks.append((f"order{order}_{variant}_slope", None, floor, True))
                continue
            _, r2 = _fit_with_r2(rep.etas, rep.errors)
            slope_rows.append([order, variant, rep.slope, r2])
            checks.append((f"order{order}_{variant}_slope", rep.slope, floor,
                           rep.slope >= floor))
    ladder_path = os.path.join(out, "linearization_ladder.csv")
    write_csv(ladder_path, ["order", "variant", "eta", "error"], table_rows)
    slope_path = os.path.join(out, "linearization_slopes.csv")
    write_csv(slope_path, ["order", "variant", "slope", "r_squared"], slope_rows)
    return [ladder_path, slope_path], checks


def run_invert_q(cfg: ExperimentConfig, out: str, rng) -> tuple[list[str], list]:
    grid, op = _build_grid_op(cfg)
    params = MGTParams(**cfg["params"])
    dt, T = cfg["dt"], cfg["T"]
    prior = _build_potential(grid, cfg["potential"], dt, T)
    truth = _build_potential(grid, cfg["truth_potential"], dt, T)
    if truth is None:
        raise ConfigError("invert-q needs truth_potential")
    bank = _build_bank(grid, cfg["bank"], T)
    tests = _build_bank(grid, cfg["test_bank"], T)
    inv = cfg["inversion"]
    data, _ = pairing_matrix(op, params, truth, bank, tests, dt=dt, T=T)
    if inv["noise"] > 0:
        data = data + inv["noise"] * np.max(np.abs(data)) * rng.standard_normal(data.shape)
    rep = recover_q(op, params, data, prior, bank, tests, lam=inv["lam"],
                    newton_iters=int(inv["newton_iters"]), dt=dt, T=T,
                    truth=truth.static)
    arr_path = os.path.join(out, "q_recovered.f64")
    write_array(arr_path, rep.recovered["q"], {"nodes": "omega"})
    it_path = os.path.join(out, "q_iterations.csv")
    write_csv(it_path, ["iteration", "step_norm", "rel_error"],
              [[e["iteration"], e["step_norm"], e.get("rel_error", "")]
               for e in rep.iterations])
    sm_path = os.path.join(out, "q_report.csv")
    write_csv(sm_path, ["rel_error", "lam", "condition"],
              [[rep.rel_error, rep.lam, rep.condition]])
    checks = [("q_rel_error", rep.rel_error, 0.02 if inv["newton_iters"] else 0.10,
               rep.rel_error <= (0.02 if inv["newton_iters"] else 0.10))]
    return [arr_path, it_path, sm_path], checks


def run_invert_g(cfg: ExperimentConfig, out: str, rng) -> tuple[list[str], list]:
    grid, op = _build_grid_op(cfg)
    params = MGTParams(**cfg["params"])
    dt, T = cfg["dt"], cfg["T"]
    q = _build_potential(grid, cfg["potential"], dt, T)
    g = _build_nonlinearity(cfg["nonlinearity"])
    if not isinstance(g, PolynomialType):
        raise ConfigError("invert-g needs a polynomial nonlinearity")
    bank = _build_bank(grid, cfg["bank"], T)
    inv = cfg["inversion"]
    orders = tuple(int(N) for N in inv["orders"])
    eps_amp = float(inv["eps_amp"])
    amps = sorted({a for N in orders for a in taylor_quotient_amplitudes(N, eps_amp)})
    fam = generate_trace_family(op, params, q, g, bank[0], amps, dt=dt, T=T,
                                tol=cfg["solver"]["tol"],
                                max_iter=cfg["solver"]["max_iter"],
                                noise=inv["noise"], rng=rng)
    n = grid.omega.size
    truth = {}
    for N in orders:
        coeff = sum((np.broadcast_to(np.asarray(c, float), (n,))
                     for c, p in g.terms if int(p) == N), np.zeros(n))
        truth[N] = float(math.factorial(N)) * coeff
    rep = recover_g_taylor(op, params, q, fam, bank[0], eps_amp, dt=dt, T=T,
                           orders=orders, lam=inv["lam"], truth=truth)
    artifacts = []
    for key, arr in rep.recovered.items():
        path = os.path.join(out, f"{key}.f64")
        write_array(path, arr, {"nodes": "omega"})
        artifacts.append(path)
    sm_path = os.path.join(out, "g_report.csv")
    write_csv(sm_path, ["order", "rel_error", "lam", "condition"],
              [[N, rep.extras["errors"].get(f"order{N}", ""), rep.lam,
                rep.condition] for N in orders])
    artifacts.append(sm_path)
    err2 = rep.extras["errors"].get("order2")
    checks = [("d2g_rel_error", err2, 0.05, err2 is not None and err2 <= 0.05)]
    return artifacts, checks


def run_invert_poly(cfg: ExperimentConfig, out: str, rng) -> tuple[list[str], list]:
    grid, op = _build_grid_op(cfg)
    params = MGTParams(**cfg["params"])
    dt, T = cfg["dt"], cfg["T"]
    q = _build_potential(grid, cfg["potential"], dt, T)
    g = _build_nonlinearity(cfg["nonlinearity"])
    if not isinstance(g, Polyhomogeneous):
        raise ConfigError("invert-poly needs a polyhomogeneous nonlinearity")
    bank = _build_bank(grid, cfg["bank"], T)
    amps = cfg["ladders"]["amplitudes"]
    fam = generate_solution_family(op, params, q, g, bank[0], amps, dt=dt, T=T,
                                   tol=cfg["solver"]["tol"],
                                   max_iter=cfg["solver"]["max_iter"])
    exps = [r for _, r in g.terms]
    truth = [c for c, _ in g.terms]
    peel = recover_polyhomogeneous(op, params, q, fam, bank[0], exps, dt=dt,
                                   T=T, truth=truth)
    both = recover_polyhomogeneous(op, params, q, fam, bank[0], exps, dt=dt,
                                   T=T, joint=True, truth=truth)
    ap = peel.recovered["alphas"]
    aj = both.recovered["alphas"]
    mutual = float(np.linalg.norm(ap - aj) / max(np.linalg.norm(aj), 1e-300))
    dec_path = os.path.join(out, "poly_decay.csv")
    write_csv(dec_path, ["amplitude", "deviation"],
              zip(peel.extras["amplitudes"], peel.extras["decay_norms"]))
    al_path = os.path.join(out, "poly_alphas.csv")
    write_csv(al_path, ["exponent", "alpha_peel", "alpha_joint", "alpha_true"],
              zip(exps, ap, aj, truth))
    slope = peel.extras["decay_slope"]
    checks = [("decay_slope", slope, exps[0], abs(slope - exps[0]) <= 0.1),
              ("alphas_rel_error", peel.rel_error, 0.05, peel.rel_error <= 0.05),
              ("peel_vs_joint", mutual, 0.02, mutual <= 0.02)]
    return [dec_path, al_path], checks


def run_invert_westervelt(cfg: ExperimentConfig, out: str, rng) -> tuple[list[str], list]:
    grid, op = _build_grid_op(cfg)
    params = MGTParams(**cfg["params"])
    dt, T = cfg["dt"], cfg["T"]
    nl = _build_nonlinearity(cfg["nonlinearity"])
    kind = getattr(nl, "variant", None)
    if kind not in ("westervelt-beta", "westervelt-kappa"):
        raise ConfigError("invert-westervelt needs a westervelt nonlinearity")
    bank = _build_bank(grid, cfg["bank"], T)
    tests = _build_bank(grid, cfg["test_bank"], T)
    inv = cfg["inversion"]
    recover = (recover_westervelt_beta if kind == "westervelt-beta"
               else recover_westervelt_kappa)
    coef = float(cfg["nonlinearity"]["coef"])
    rep = recover(op, params, nl, bank[0], tests[0], float(inv["eta"]), dt=dt,
                  T=T, lam=inv["lam"], tol=cfg["solver"]["tol"],
                  max_iter=cfg["solver"]["max_iter"], truth=coef,
                  noise=inv["noise"], rng=rng)
    name = "beta" if kind == "westervelt-beta" else "kappa"
    arr_path = os.path.join(out, f"{name}_recovered.f64")
    write_array(arr_path, rep.recovered[name], {"nodes": "omega"})
    sm_path = os.path.join(out, f"{name}_report.csv")
    write_csv(sm_path, ["rel_error", "lam", "condition", "mask_fraction"],
              [[rep.rel_error, rep.lam, rep.condition,
                rep.extras["mask_fraction"]]])
    checks = [(f"{name}_rel_error", rep.rel_error, 0.05, rep.rel_error <= 0.05)]
    return [arr_path, sm_path], checks


def run_regularize(cfg: ExperimentConfig, out: str, rng) -> tuple[list[str], list]:
    grid, op = _build_grid_op(cfg)
    params = MGTParams(**cfg["params"])
    dt, T = cfg["dt"], cfg["T"]
    q = _build_potential(grid, cfg["potential"], dt, T)
    bank = _build_bank(grid, cfg["bank"], T)
    ladder = regularization_sweep(op, params, q, None, bank[0],
                                  cfg["ladders"]["eps_reg"], dt=dt, T=T)
    rows = iter(ladder.rows())
    header = next(rows)
    csv_path = os.path.join(out, "regularization.csv")
    write_csv(csv_path, header, rows)
    mono = all(
        all(np.diff(col) < 0)
        for col in (ladder.dev_u, ladder.dev_ut, ladder.dev_utt))
    wd = np.asarray(ladder.weighted_dissipation)
    half = max(2, wd.size // 2)
    drift = abs(float(wd.max() - wd[:half].max())) / float(wd.max())
    checks = [("deviations_monotone", None, None, mono),
              ("weighted_bound_drift", drift, 0.2, drift <= 0.2)]
    return [csv_path], checks


PIPELINES: dict[str, Callable] = {
    "forward": run_forward,
    "dn": run_dn,
    "sweep": run_sweep,
    "identities": run_identities,
    "linearize": run_linearize,
    "invert-q": run_invert_q,
    "invert-g": run_invert_g,
    "invert-poly": run_invert_poly,
    "invert-westervelt": run_invert_westervelt,
    "regularize": run_regularize,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   seed: int | None = None) -> RunManifest:
    out = ensure_dir(out_dir or cfg["output"])
    if seed is None:
        seed = int(cfg["inversion"]["seed"])
    rng = np.random.default_rng(seed)
    manifest = RunManifest(
        pipeline=cfg.pipeline,
        config_hash=cfg.canonical_hash(),
        version=__version__,
        started=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        out_dir=out,
    )
    artifacts, checks = PIPELINES[cfg.pipeline](cfg, out, rng)
    manifest.artifacts = [os.path.relpath(p, out) for p in artifacts]
    for name, value, threshold, passed in checks:
        manifest.add_check(name, value, threshold, passed)
    manifest.finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
    manifest.write()
    return manifest


# ---------------------------------------------------------------------------
# CLI


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Numerical experiments for nonlocal third-order wave models.

    Thread counts follow the MGTLAB_THREADS environment variable (applied at
    package import, see the package docstring).
    """


def _run_cli(pipeline: str, config: str, out: str | None, seed: int | None,
             quiet: bool) -> None:
    try:
        cfg = ExperimentConfig.load(config, pipeline)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        manifest = run_experiment(cfg, out, seed)
    except (IllConditioned, SmallDivisor, EmptyBank) as exc:
        click.echo(f"inversion failed: {exc}", err=True)
        sys.exit(EXIT_INVERSION)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except MGTLabError as exc:
        click.echo(f"solver failed: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    text = emit_report(manifest)
    if not quiet:
        click.echo(text, nl=False)
    sys.exit(0)


def _register(pipeline: str) -> None:
    @main.command(name=pipeline, help=f"Run the {pipeline} pipeline.")
    @click.option("--config", required=True, type=click.Path(), metavar="PATH")
    @click.option("--out", default=None, type=click.Path(), metavar="DIR")
    @click.option("--seed", default=None, type=click.IntRange(min=0))
    @click.option("--quiet", is_flag=True, default=False)
    def _cmd(config: str, out: str | None, seed: int | None, quiet: bool,
             _pipeline: str = pipeline) -> None:
        _run_cli(_pipeline, config, out, seed, quiet)


for _name in PIPELINES:
    _register(_name)


if __name__ == "__main__":
    main()
