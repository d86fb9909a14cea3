"""Configuration, sweep orchestration and CSV/SVG output for the studies.

Every study returns a :class:`StudyResult` and, when given an output
directory, writes its CSV tables, an SVG plot and ``manifest.json``
(configuration, seed, coefficient constants and library versions).
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import yaml

from .fem import PlaneWaveSource, SingularSystemError, WindowedWaveSource, assemble, quasioptimality_report
from .mesh import generate_mesh
from .pml import (
    MediumSpec,
    PmlSetup,
    ScalingFunction,
    operator_consistency_residual,
    plane_wave_field,
    re_part_spectrum,
    scan_constants,
)
from .radial import RadialConvergenceError, modal_error_rows, modal_solution, pml_truncation_error
from .smoothstep import plateau
from .space import TabulatedField, build_space
from .torus import (
    TorusField,
    TorusGrid,
    auto_mu,
    classify_derivative_growth,
    decompose_solution,
    make_phi_tr,
    multi_indices,
    spectral_derivative,
)

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "StudyResult",
    "load_config",
    "run_pml_sweep",
    "run_pollution_study",
    "run_decomposition_study",
    "run_coefficient_check",
    "run_eta_bound",
    "eval_eta_bound",
    "eval_eta_bound_log",
    "tabulate_reference",
]

VERSION = "0.1.0"


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """All study parameters; see the README for the file schema.

    ``medium`` and ``source`` are small dicts with a ``kind`` key; the
    ``decompose`` and ``eta_bound`` dicts hold study-specific settings and are
    merged over the defaults.
    """

    R_scat: float = 0.5
    R1: float = 1.0
    R2: float = 1.25
    R_tr: float = 1.5
    obstacle_radius: Optional[float] = None
    theta: float = math.pi / 4
    eps: float = 1e-4
    k_list: list = field(default_factory=lambda: [10.0, 20.0, 40.0])
    R_tr_list: Optional[list] = None
    C1: float = 0.5
    C2: float = 1.5
    p_fixed: Optional[int] = None
    h_arm_hk: float = 0.5
    medium: dict = field(default_factory=lambda: {"kind": "radial_bump", "amplitude": 0.5})
    source: dict = field(default_factory=lambda: {"kind": "plane_wave", "angle": 0.0})
    decompose: dict = field(default_factory=dict)
    eta_bound: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "results"

    DECOMPOSE_DEFAULTS = {
        "R_sharp": 3.2,
        "mu": 4.0,
        "delta": 0.2,
        "m_max": 6,
        "source": {"kind": "windowed", "R_in": 0.2, "R_out": 0.8, "waves": [[1.0, 1.0, 0.3], [1.0, 3.0, 2.0]]},
    }
    ETA_DEFAULTS = {"h": 0.05, "p": 4, "k": 20.0, "M": 0.0, "sigma": 1.0, "C1": 1.0, "C2": 1.0, "CN": 1.0, "N": 3, "p_max": 30}

    def __post_init__(self):
        self.k_list = [float(k) for k in np.atleast_1d(self.k_list)]
        if self.R_tr_list is not None:
            self.R_tr_list = [float(r) for r in np.atleast_1d(self.R_tr_list)]
        self.decompose = {**self.DECOMPOSE_DEFAULTS, **(self.decompose or {})}
        self.eta_bound = {**self.ETA_DEFAULTS, **(self.eta_bound or {})}
        self.validate()

    def validate(self):
        if not (0 < self.R_scat < self.R1 < self.R2):
            raise ConfigError("need 0 < R_scat < R1 < R2")
        for R in [self.R_tr] + list(self.R_tr_list or []):
            if not R > self.R1:
                raise ConfigError("every R_tr must exceed R1")
        if self.obstacle_radius is not None and not (0 < self.obstacle_radius < self.R_scat):
            raise ConfigError("obstacle radius must lie in (0, R_scat)")
        if not (self.eps <= self.theta <= math.pi / 2 - self.eps):
            raise ConfigError("theta must lie in [eps, pi/2 - eps]")
        if not self.k_list or min(self.k_list) <= 0:
            raise ConfigError("k_list must hold positive wavenumbers")
        if self.C1 <= 0 or self.C2 <= 0 or self.h_arm_hk <= 0:
            raise ConfigError("C1, C2 and h_arm_hk must be positive")
        if self.p_fixed is not None and int(self.p_fixed) < 1:
            raise ConfigError("p_fixed must be at least 1")
        if self.medium.get("kind") not in ("homogeneous", "radial_bump", "plateau"):
            raise ConfigError("medium.kind must be homogeneous, radial_bump or plateau")
        if self.source.get("kind") not in ("plane_wave", "windowed"):
            raise ConfigError("source.kind must be plane_wave or windowed")
        dc = self.decompose
        if not dc["R_sharp"] > self.R_tr:
            raise ConfigError("decompose.R_sharp must exceed R_tr")
        if not (dc["delta"] > 0 and self.R1 * (1 + 2 * dc["delta"]) < self.R_tr):
            raise ConfigError("decompose.delta must satisfy R1 (1 + 2 delta) < R_tr")
        if dc["mu"] != "auto" and not float(dc["mu"]) > 2:
            raise ConfigError("decompose.mu must exceed 2 or be 'auto'")
        if int(dc["m_max"]) < 4:
            raise ConfigError("decompose.m_max must be at least 4")

    # builders -------------------------------------------------------------
    def setup(self, R_tr: Optional[float] = None) -> PmlSetup:
        return PmlSetup(self.theta, ScalingFunction(self.R1, self.R2), self.R_tr if R_tr is None else R_tr, eps=self.eps)

    def build_medium(self) -> MediumSpec:
        m = self.medium
        if m["kind"] == "homogeneous":
            return MediumSpec.homogeneous(self.R_scat)
        if m["kind"] == "radial_bump":
            return MediumSpec.radial_bump(self.R_scat, float(m.get("amplitude", 0.5)))
        amp = float(m.get("amplitude", 0.5))
        inner = float(m.get("inner", 0.5 * self.R_scat))
        outer = float(m.get("outer", self.R_scat))
        if not (0 <= inner < outer <= self.R_scat) or amp <= -1:
            raise ConfigError("plateau medium needs 0 <= inner < outer <= R_scat and amplitude > -1")
        return MediumSpec(
            R_scat=self.R_scat,
            radial_c_inv2=lambda r: 1.0 + amp * plateau(r, inner, outer),
            name=f"plateau({amp:g},{inner:g},{outer:g})",
            breaks=(inner, outer),
        )

    def build_source(self, spec: Optional[dict] = None):
        s = self.source if spec is None else spec
        if s["kind"] == "plane_wave":
            return PlaneWaveSource(float(s.get("angle", 0.0)), self.R_scat, self.R1)
        waves = tuple(tuple(float(v) for v in w) for w in s.get("waves", ()))
        if any(len(w) != 3 for w in waves):
            raise ConfigError("each windowed wave is [amplitude, multiple of k, angle]")
        R_out = float(s.get("R_out", self.R1))
        if R_out > self.R1:
            raise ConfigError("windowed source must be supported in B_R1")
        return WindowedWaveSource(float(s.get("R_in", 0.0)), R_out, waves)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a YAML or JSON file (JSON is valid YAML) into an :class:`ExperimentConfig`.

    Raises
    ------
    ConfigError
        For unknown keys, unreadable files or invalid values.
    """
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class StudyResult:
    """Rows of the main table, property checks and written files."""

    name: str
    columns: list
    rows: list
    checks: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.checks.values())

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def failures(self):
        return {k: v for k, v in self.checks.items() if not v["ok"]}


# output ---------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        return float(o) if np.isfinite(o) else str(float(o))
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    return o


def write_manifest(out: Path, study: str, cfg: ExperimentConfig, result: StudyResult, constants: dict):
    import matplotlib

    man = {
        "study": study,
        "package_version": VERSION,
        "config": cfg.as_dict(),
        "seed": cfg.seed,
        "constants": constants,
        "checks": result.checks,
        "extra": result.extra,
        "files": sorted(Path(f).name for f in result.files),
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__, "matplotlib": matplotlib.__version__},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(_jsonable(man), indent=2, sort_keys=True) + "\n")
    return path


def _svg_plot(path: Path, series, xlabel, ylabel, title, logy=True):
    """Line plot of ``series = [(label, x, y, style), ...]`` as a self-contained SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "pmlhp"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, x, y, style in series:
        ax.plot(x, y, style, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _finish(result: StudyResult, cfg: ExperimentConfig, out, plot=None, extra_tables=()):
    if out is None:
        return result
    out = Path(out)
    result.files.append(write_csv(out / f"{result.name}.csv", result.columns, result.rows))
    for fname, cols, rows in extra_tables:
        result.files.append(write_csv(out / fname, cols, rows))
    if plot is not None:
        result.files.append(plot(out))
    constants = scan_constants(cfg.setup(), cfg.build_medium()).as_dict()
    result.files.append(write_manifest(out, result.name, cfg, result, constants))
    return result


def _check(ok, **info):
    return {"ok": bool(ok), **info}


# PML sweep ------------------------------------------------------------------


def _linear_fit(x, y):
    A = np.polyfit(x, y, 1)
    pred = np.polyval(A, x)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / sst if sst > 0 else 1.0
    return float(A[0]), float(A[1]), r2


def run_pml_sweep(cfg: ExperimentConfig, out=None, method: str = "analytic") -> StudyResult:
    """Relative PML truncation error over ``k_list`` (and ``R_tr_list``).

    Rows ``(k, theta, R_tr, x, err_ratio, err, g_norm, n_modes)`` with
    ``x = k (R_tr - R1) tan(theta)``; the fit of ``log err_ratio`` against
    ``x`` is reported when at least three distinct ``x`` carry a nonzero
    ratio.  The checked property is that ``err_ratio`` strictly decreases
    along increasing ``x``.

    Raises
    ------
    RadialConvergenceError
        From the oracle, with the failing ``(k, n)`` in the message.
    """
    medium = cfg.build_medium()
    if not medium.is_radial:
        raise ConfigError("the PML sweep needs a radially symmetric medium")
    source = cfg.build_source()
    rows, mode_rows = [], []
    tan = math.tan(cfg.theta)
    for R_tr in cfg.R_tr_list or [cfg.R_tr]:
        setup = cfg.setup(R_tr)
        for k in cfg.k_list:
            try:
                rec = pml_truncation_error(k, setup, medium, source, obstacle_radius=cfg.obstacle_radius, method=method)
            except RadialConvergenceError as exc:
                raise RadialConvergenceError(f"k={k:g}, R_tr={R_tr:g}: {exc}") from exc
            x = k * (R_tr - cfg.R1) * tan
            rows.append((k, cfg.theta, R_tr, x, rec["ratio"], rec["err"], rec["g_norm"], rec["n_modes"]))
            mode_rows.extend(modal_error_rows(rec, k, cfg.theta, R_tr))
    rows.sort(key=lambda r: (r[3], r[0], r[2]))
    mode_rows.sort(key=lambda r: (r[0], r[2], r[3]))
    cols = ["k", "theta", "R_tr", "x", "err_ratio", "err", "g_norm", "n_modes"]
    res = StudyResult("pml_sweep", cols, rows)
    x = np.array([r[3] for r in rows])
    ratio = np.array([r[4] for r in rows])
    pos = ratio > 0
    fit = None
    if np.unique(x[pos]).size >= 3:
        slope, icpt, r2 = _linear_fit(x[pos], np.log(ratio[pos]))
        fit = {"slope": slope, "intercept": icpt, "r2": r2, "n_points": int(pos.sum())}
        res.checks["fit_negative_slope"] = _check(slope < 0, slope=slope, r2=r2)
    res.extra["fit"] = fit if fit is not None else "skipped"
    if len(rows) > 1:
        xs_order = np.argsort(x, kind="stable")
        rr = ratio[xs_order]
        nz = rr[rr > 0]
        tail_zero = np.all(rr[nz.size:] == 0) if nz.size < rr.size else True
        dec = bool(np.all(np.diff(nz) < 0) and tail_zero and np.all(np.diff(x[xs_order]) > 0))
        res.checks["strictly_decreasing"] = _check(dec, ratios=ratio.tolist())

    def plot(o):
        series = [("err_ratio", x[pos], ratio[pos], "o")]
        if fit is not None:
            xx = np.linspace(x[pos].min(), x[pos].max(), 50)
            series.append((f"fit slope {fit['slope']:.3g}", xx, np.exp(fit["intercept"] + fit["slope"] * xx), "-"))
        return _svg_plot(o / "pml_sweep.svg", series, "k (R_tr - R1) tan(theta)", "relative PML error", "PML truncation error")

    mode_cols = ["k", "theta", "R_tr", "n", "err_mode", "err_total"]
    return _finish(res, cfg, out, plot, [("pml_sweep_modes.csv", mode_cols, mode_rows)])


# pollution study --------------------------------------------------------------


def tabulate_reference(space, reference) -> TabulatedField:
    """Evaluate ``reference(points) -> (values, gradients)`` once at all quadrature points."""
    vals, grads = [], []
    for cells in space.chunks():
        x, _, _, _ = space.cell_tables(cells)
        v, g = reference(x.reshape(-1, 2))
        vals.append(np.asarray(v).reshape(x.shape[:2]))
        grads.append(np.asarray(g).reshape(x.shape))
    return TabulatedField(np.concatenate(vals), np.concatenate(grads))


def hp_rule(cfg: ExperimentConfig, k: float):
    """``(h, p)`` of the hp arm: ``p = max(2, ceil(C2 ln k))`` (or ``p_fixed``), ``h = C1 p / k``."""
    p = int(cfg.p_fixed) if cfg.p_fixed is not None else max(2, math.ceil(cfg.C2 * math.log(k)))
    return cfg.C1 * p / k, p


def run_pollution_study(cfg: ExperimentConfig, out=None) -> StudyResult:
    """hp arm against the fixed-``hk`` lowest-order arm.

    Rows ``(k, arm, h, p, dofs, rel_err_H1k, C_qo)``.  The reference is the
    modal solution of the same layer problem.  A failed solve is recorded
    as a row with NaN errors and the study continues.
    """
    setup = cfg.setup()
    medium = cfg.build_medium()
    source = cfg.build_source()
    rows, errors = [], {}
    for k in cfg.k_list:
        ref = modal_solution(k, setup, medium, source, obstacle_radius=cfg.obstacle_radius)
        arms = {"hp": hp_rule(cfg, k), "h": (cfg.h_arm_hk / k, 1)}
        for arm, (h, p) in arms.items():
            t0 = time.perf_counter()
            try:
                space = build_space(generate_mesh(cfg.R_tr, h, cfg.obstacle_radius), p)
                system = assemble(space, setup, medium, k, source)
                rep = quasioptimality_report(space, system, tabulate_reference(space, ref), k)
                rows.append((k, arm, h, p, space.dim, rep["rel_err"], rep["C_qo"]))
            except (SingularSystemError, np.linalg.LinAlgError, MemoryError, ValueError) as exc:
                errors[f"{arm}@{k:g}"] = f"{type(exc).__name__}: {exc}"
                rows.append((k, arm, h, p, -1, float("nan"), float("nan")))
            errors.setdefault("_seconds", {})[f"{arm}@{k:g}"] = round(time.perf_counter() - t0, 3)
    rows.sort(key=lambda r: (r[1], r[0]))
    cols = ["k", "arm", "h", "p", "dofs", "rel_err_H1k", "C_qo"]
    res = StudyResult("pollution_study", cols, rows)
    res.extra["timings"] = errors.pop("_seconds", {})
    res.extra["errors"] = errors
    res.checks["solves_succeeded"] = _check(not errors, errors=errors)
    cq = np.array([r[6] for r in rows], dtype=float)
    res.checks["C_qo_at_least_one"] = _check(np.all(cq[np.isfinite(cq)] >= 1.0), C_qo=cq.tolist())
    hp = [r for r in rows if r[1] == "hp" and np.isfinite(r[6])]
    if len(hp) > 1:
        v = [r[6] for r in hp]
        res.checks["hp_C_qo_spread"] = _check(max(v) / min(v) <= 2.0, spread=max(v) / min(v))
    ha = sorted((r for r in rows if r[1] == "h" and np.isfinite(r[5])), key=lambda r: r[0])
    if len(ha) > 1:
        growth = ha[-1][5] / ha[0][5]
        res.checks["h_arm_pollution"] = _check(growth >= 1.5, growth=growth, k_lo=ha[0][0], k_hi=ha[-1][0])

    def plot(o):
        series = []
        for arm, marker in (("hp", "o"), ("h", "s")):
            sel = [r for r in rows if r[1] == arm and np.isfinite(r[5])]
            series.append((f"{arm} arm rel. error", [r[0] for r in sel], [r[5] for r in sel], marker + "-"))
            series.append((f"{arm} arm C_qo", [r[0] for r in sel], [r[6] for r in sel], marker + ":"))
        return _svg_plot(o / "pollution_study.svg", series, "k", "relative H1_k error / C_qo", "hp versus h refinement")

    return _finish(res, cfg, out, plot)


# decomposition study ----------------------------------------------------------------


def _sample_on_torus(grid: TorusGrid, fn, R_tr: float):
    r = grid.radius()
    inside = r < R_tr
    vals = np.zeros(grid.shape, dtype=complex)
    vals[inside] = fn(grid.points()[inside.ravel()])
    return TorusField(vals, grid)


def run_decomposition_study(cfg: ExperimentConfig, out=None) -> StudyResult:
    """Split the homogeneous-medium layer solution into high, low and layer parts.

    For each ``k`` the modal solution is sampled on the torus (zero outside
    ``B_{R_tr}``) and split with cutoff scale ``mu``.  Rows:
    ``(k, N, mu, norm_v_low, high_norm, ratio, growth_class, growth_r2,
    growth_C, reconstruction_error)`` where on ``B_{R1(1+delta)}``

    * ``high_norm = ||v_High|| + k^-2 ||Lap v_High||`` and
    * ``ratio = k^2 (||v_High|| + k^-1 |v_High|_{H^1}) / ||g||``, the data
      ``g`` of ``(P - k^2) v = g`` rescaled to the semiclassical ``k^-2 g``.

    Raises
    ------
    ValueError
        If the torus grid misses the Nyquist rule.
    """
    dc = cfg.decompose
    if cfg.obstacle_radius is not None:
        raise ConfigError("the decomposition study has no obstacle")
    setup = cfg.setup()
    medium = MediumSpec.homogeneous(cfg.R_scat)
    source = cfg.build_source(dc["source"])
    delta = float(dc["delta"])
    m_max = int(dc["m_max"])
    rows, tables = [], []
    for k in cfg.k_list:
        grid = TorusGrid.for_wavenumber(k, float(dc["R_sharp"]))
        if "N" in dc:
            grid = TorusGrid(float(dc["R_sharp"]), int(dc["N"]))
        grid.check_resolution(k)
        sol = modal_solution(k, setup, medium, source)
        v = _sample_on_torus(grid, sol.evaluate, cfg.R_tr)
        g = _sample_on_torus(grid, lambda x: source.data(k, x), cfg.R_tr)
        phi = make_phi_tr(grid, cfg.R1, delta)
        mu = auto_mu(phi * v, k) if dc["mu"] == "auto" else float(dc["mu"])
        dec = decompose_solution(v, phi, mu, k, cfg.R1, delta)
        region = grid.radius() <= cfg.R1 * (1 + delta)
        vh = dec.v_High
        grads = [spectral_derivative(vh, a) for a in multi_indices(1, 2)]
        h1 = math.sqrt(sum(d.norm(region) ** 2 for d in grads))
        lap = spectral_derivative(vh, (2, 0)) + spectral_derivative(vh, (0, 2))
        high_norm = vh.norm(region) + lap.norm(region) / k**2
        ratio = k**2 * (vh.norm(region) + h1 / k) / g.norm()
        w_norm = (phi * v).norm()
        per_order = []
        for m in range(m_max + 1):
            best = 0.0
            for a in multi_indices(m, 2):
                nrm = spectral_derivative(dec.v_Low, a).norm()
                best = max(best, nrm)
                tables.append((k, f"({a[0]},{a[1]})", nrm, (k * math.sqrt(2 * mu)) ** m * w_norm))
            per_order.append(best)
        cl = classify_derivative_growth(per_order, k)
        rows.append((k, grid.N, mu, dec.v_Low.norm(), high_norm, ratio, cl["cls"], cl["r2"], cl["C"],
                     dec.reconstruction_error(v) / max(v.norm(), 1e-300)))
    rows.sort(key=lambda r: r[0])
    cols = ["k", "N", "mu", "norm_v_low", "high_norm", "ratio", "growth_class", "growth_r2", "growth_C", "reconstruction_error"]
    res = StudyResult("decomposition", cols, rows)
    ratios = [r[5] for r in rows]
    if len(rows) > 1:
        res.checks["ratio_bounded"] = _check(max(ratios) / min(ratios) <= 2.0, spread=max(ratios) / min(ratios))
    res.checks["v_low_entire"] = _check(all(r[6] == "entire" and r[7] >= 0.9 for r in rows),
                                        classes=[r[6] for r in rows], r2=[r[7] for r in rows])
    res.checks["reconstruction"] = _check(all(r[9] <= 1e-13 for r in rows))
    res.checks["low_pass_bound"] = _check(all(t[2] <= t[3] * (1 + 1e-12) for t in tables))
    tables.sort(key=lambda t: (t[0], sum(int(c) for c in t[1][1:-1].split(",")), t[1]))

    def plot(o):
        series = []
        for k in sorted({t[0] for t in tables}):
            m = list(range(m_max + 1))
            norms = [max(t[2] for t in tables if t[0] == k and sum(int(c) for c in t[1][1:-1].split(",")) == mm) for mm in m]
            series.append((f"k={k:g}", m, norms, "o-"))
        return _svg_plot(o / "decomposition.svg", series, "|alpha|", "max ||d^alpha v_Low||", "Low-frequency derivative growth")

    extra = []
    for k in sorted({t[0] for t in tables}):
        extra.append((f"decomposition_derivatives_k{k:g}.csv", ["alpha", "norm", "bound"],
                      [(t[1], t[2], t[3]) for t in tables if t[0] == k]))
    return _finish(res, cfg, out, plot, extra)


# coefficient checks -------------------------------------------------------------


def run_coefficient_check(cfg: ExperimentConfig, out=None, n_samples: int = 100) -> StudyResult:
    """Operator consistency on random layer points and the ``Re D`` ellipticity scan.

    Rows ``(check, d, theta, value, threshold, ok)``: the largest consistency
    residual over ``n_samples`` random ``(x, a, k)`` with ``r`` in
    ``(R1, R_tr)`` and ``k`` in ``[1, 50]``, and the smallest eigenvalue of
    ``Re D`` over ``r`` in ``[R1, 2 R2]`` for angles in
    ``[pi/12, 5 pi/12]`` and ``d = 2, 3``.  A second table
    ``coefficients_scan.csv`` lists ``alpha``, ``beta`` and the smallest
    eigenvalue of ``Re D`` (2D) on an ``(r, theta)`` grid over the layer.
    """
    rng = np.random.default_rng(cfg.seed)
    medium = cfg.build_medium()
    rows = []
    for d in (2, 3):
        setup = PmlSetup(cfg.theta, ScalingFunction(cfg.R1, cfg.R2), cfg.R_tr, d=d, eps=cfg.eps)
        worst = 0.0
        for _ in range(n_samples):
            z = rng.normal(size=d)
            r = rng.uniform(cfg.R1, cfg.R_tr)
            x = r * z / np.linalg.norm(z)
            a = rng.normal(size=d)
            k = rng.uniform(1.0, 50.0)
            worst = max(worst, float(operator_consistency_residual(setup, medium, plane_wave_field(k, a), x[None])[0]))
        rows.append(("consistency", d, cfg.theta, worst, 1e-8, worst <= 1e-8))
    r = np.linspace(cfg.R1, 2 * cfg.R2, 400)
    for d in (2, 3):
        for th in np.linspace(math.pi / 12, math.pi / 2 - math.pi / 12, 11):
            setup = PmlSetup(float(th), ScalingFunction(cfg.R1, cfg.R2), max(cfg.R_tr, 2 * cfg.R2), d=d, eps=cfg.eps)
            lo = float(re_part_spectrum(setup, r).min())
            rows.append(("ellipticity", d, float(th), lo, 0.05, lo >= 0.05))
    scan = []
    rs = np.linspace(cfg.R1, cfg.R_tr, 51)
    for th in np.linspace(math.pi / 12, math.pi / 2 - math.pi / 12, 11):
        setup = PmlSetup(float(th), ScalingFunction(cfg.R1, cfg.R2), cfg.R_tr, eps=cfg.eps)
        q = setup.radial(rs)
        lam = re_part_spectrum(setup, rs)[:, 0]
        for i, rr in enumerate(rs):
            a, b = q["alpha"][i], q["beta"][i]
            scan.append((float(rr), float(th), float(lam[i]), a.real, a.imag, b.real, b.imag))
    cols = ["check", "d", "theta", "value", "threshold", "ok"]
    res = StudyResult("coefficients", cols, rows)
    res.checks["consistency"] = _check(all(r[5] for r in rows if r[0] == "consistency"),
                                       worst=max(r[3] for r in rows if r[0] == "consistency"))
    ell = [r for r in rows if r[0] == "ellipticity"]
    res.checks["ellipticity"] = _check(all(r[5] for r in ell), min_eigenvalue=min(r[3] for r in ell))

    def plot(o):
        series = []
        for d in (2, 3):
            sel = [r for r in ell if r[1] == d]
            series.append((f"d={d}", [r[2] for r in sel], [r[3] for r in sel], "o-"))
        series.append(("threshold", [ell[0][2], ell[-1][2]], [0.05, 0.05], "k--"))
        return _svg_plot(o / "coefficients.svg", series, "theta", "min eig Re D", "Ellipticity of the layer coefficients", logy=False)

    scan_cols = ["r", "theta", "re_lambda_min", "alpha_re", "alpha_im", "beta_re", "beta_im"]
    return _finish(res, cfg, out, plot, [("coefficients_scan.csv", scan_cols, scan)])


# eta bound --------------------------------------------------------------------


def eval_eta_bound(h, p, k, M, sigma, C1, C2, CN, N) -> float:
    """``C1 (hk/p)(1 + hk/p) + C2 k^M ((h/(h+sigma))^p + k (hk/(sigma p))^p) + CN k^(1-N)``.

    Raises
    ------
    ValueError
        If any of the constants or discretization parameters is not positive.
    """
    if min(h, p, k, sigma, C1, C2, CN) <= 0:
        raise ValueError("all constants must be positive")
    t = h * k / p
    return float(C1 * t * (1 + t) + C2 * k**M * ((h / (h + sigma)) ** p + k * (t / sigma) ** p) + CN * k ** (1 - N))


def eval_eta_bound_log(h, p, k, M, sigma, C1, C2, CN, N) -> float:
    """The same bound assembled from logarithms of each term (independent route)."""
    if min(h, p, k, sigma, C1, C2, CN) <= 0:
        raise ValueError("all constants must be positive")
    lk = math.log(k)
    logs = [
        math.log(C1) + math.log(h) + lk - math.log(p) + math.log1p(h * k / p),
        math.log(C2) + M * lk + p * (math.log(h) - math.log(h + sigma)),
        math.log(C2) + (M + 1) * lk + p * (math.log(h) + lk - math.log(sigma) - math.log(p)),
        math.log(CN) + (1 - N) * lk,
    ]
    return math.fsum(math.exp(v) for v in logs)


def run_eta_bound(cfg: ExperimentConfig, out=None) -> StudyResult:
    """Evaluate the bound at the configured point and scan ``p`` at fixed ``h, k``.

    Rows ``(h, p, k, hk_over_p, value, value_log)`` for ``p`` from the
    configured value up to ``p_max``.  Checked: both routes agree to
    ``1e-12`` relative and the value is nonincreasing in ``p`` while
    ``hk/p < sigma``.
    """
    e = cfg.eta_bound
    args = {key: float(e[key]) for key in ("h", "k", "M", "sigma", "C1", "C2", "CN", "N")}
    rows = []
    for p in range(int(e["p"]), int(e["p_max"]) + 1):
        a = dict(args, p=p)
        rows.append((a["h"], p, a["k"], a["h"] * a["k"] / p, eval_eta_bound(**a), eval_eta_bound_log(**a)))
    cols = ["h", "p", "k", "hk_over_p", "value", "value_log"]
    res = StudyResult("eta_bound", cols, rows)
    rel = max(abs(r[4] - r[5]) / abs(r[5]) for r in rows)
    res.checks["dual_route"] = _check(rel <= 1e-12, max_rel_diff=rel)
    sel = [r for r in rows if r[3] < args["sigma"]]
    mono = all(b[4] <= a[4] * (1 + 1e-14) for a, b in zip(sel, sel[1:]))
    res.checks["nonincreasing_in_p"] = _check(mono)
    res.extra["value"] = rows[0][4]

    def plot(o):
        return _svg_plot(o / "eta_bound.svg", [("bound", [r[1] for r in rows], [r[4] for r in rows], "o-")],
                         "p", "bound value", "Best-approximation bound")

    return _finish(res, cfg, out, plot)


STUDIES = {
    "pml-sweep": run_pml_sweep,
    "pollution-study": run_pollution_study,
    "decompose": run_decomposition_study,
    "check-coefficients": run_coefficient_check,
    "eta-bound": run_eta_bound,
}
