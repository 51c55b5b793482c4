"""End-to-end experiments: hypothesis reports, processes, solutions and rate fits.

All entry points take an :class:`~evolproc.config.ExperimentConfig` (or a
path) and return plain data; the ``write_*`` helpers turn them into the
files the command line promises.  Work over the parameter grid runs in a
thread pool; results are gathered in grid order so reports do not depend on
the pool size.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from ._io import atomic_write_json, atomic_write_text, dumps_json
from .config import ExperimentConfig, load_config, validate
from .errors import EvolProcError
from .family import eta, measure_family, xi
from .problems import (
    Bundle,
    ReactionDiffusionConfig,
    ScalarConfig,
    WaveConfig,
    build_reaction_diffusion,
    build_scalar,
    build_wave,
    coefficient_gap,
    cosine_states,
    fractional_gap,
)
from .process import (
    EvolutionProcess,
    TimeGrid,
    check_process_axioms,
    process_distance,
    propagate,
)
from .semigroup import Contour, SemigroupEvaluator
from .semilinear import (
    absorbing_check,
    ball_samples,
    dissipativity,
    gamma,
    sampled_lipschitz,
    solution_distance,
    solve_semilinear,
)

log = logging.getLogger(__name__)

REPORT_SCHEMA = "evolproc.report/1"
SLOPE_FACTOR = 0.9
WAVE_RATE_TOL = 0.15


# --------------------------------------------------------------------------- setup


def as_config(cfg) -> ExperimentConfig:
    if isinstance(cfg, ExperimentConfig):
        return cfg
    if isinstance(cfg, dict):
        return validate(cfg)
    return load_config(cfg)


def problem_config(cfg: ExperimentConfig):
    c = cfg["coefficients"]
    window = tuple(cfg["sample_window"] or (cfg["grid"]["tau"], cfg["grid"]["t_end"]))
    if cfg.problem == "reaction-diffusion":
        return ReactionDiffusionConfig(n_cells=c["n_cells"], a=c["a"], a_grad_x=c["a_grad_x"], f=c["f"],
                                       eps_list=cfg.param_list, growth_rho=c["growth_rho"], delta=c["delta"],
                                       window=window)
    if cfg.problem == "wave":
        return WaveConfig(n_modes=c["n_modes"], a=c["a"], alpha_list=cfg["alpha_list"], f=c["f"], window=window)
    return ScalarConfig(a=c["a"], f=c["f"], eps_list=cfg.param_list, window=window)


def bundle_builder(cfg: ExperimentConfig) -> Callable[[float, float | None], Bundle]:
    pc = problem_config(cfg)
    if cfg.problem == "reaction-diffusion":
        return lambda eps, radius=None: build_reaction_diffusion(pc, eps, radius)
    if cfg.problem == "wave":
        def wave(eps, radius=None):
            b = build_wave(pc, 1.0 - eps)
            if radius is not None and not b.F.is_zero:
                b.F = b.F.with_cutoff(radius)
            return b
        return wave
    return lambda eps, radius=None: build_scalar(pc, eps, radius)


def make_contour(cfg: ExperimentConfig) -> Contour:
    c = cfg["contour"]
    return Contour(phi=c["phi"], reach=c["reach"], panel_nodes=c["panel_nodes"], panel_ratio=c["panel_ratio"],
                   quadrature=c["quadrature"], nodes_per_ray=c["nodes_per_ray"])


def make_grid(cfg: ExperimentConfig) -> TimeGrid:
    return TimeGrid(**cfg["grid"])


def sample_times(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = cfg["sample_window"] or (cfg["grid"]["tau"], cfg["grid"]["t_end"])
    s = cfg["samples"]
    return np.linspace(lo, hi, s["t"]), np.linspace(lo, hi, s["tau"])


def initial_states(cfg: ExperimentConfig, bundle: Bundle) -> np.ndarray:
    s, init = cfg["samples"], cfg["initial_state"]
    if bundle.kind == "reaction-diffusion":
        return cosine_states(bundle.space, s["initial_states"], init["radius"], init["seed"])
    return ball_samples(bundle.space, init["radius"], s["initial_states"], init["seed"])


def build_proc(cfg: ExperimentConfig, bundle: Bundle, grid: TimeGrid | None = None,
               measure_tolerance: bool = False, threads: int = 1) -> EvolutionProcess:
    tol = cfg["tolerances"]
    ev = SemigroupEvaluator(bundle.fam, make_contour(cfg))
    grid = make_grid(cfg) if grid is None else grid
    return propagate(ev, grid, cfg["phi_method"], measure_tolerance, threads,
                     tol=tol["neumann_tol"], max_iter=tol["neumann_max_iter"])


def _solve(cfg: ExperimentConfig, proc: EvolutionProcess, F, u0):
    tol = cfg["tolerances"]
    return solve_semilinear(proc, F, u0, tol=tol["picard_tol"], max_iter=tol["picard_max_iter"],
                            blowup=tol["blowup"])


def provenance(cfg: ExperimentConfig) -> dict:
    return {
        "config_sha256": cfg.sha256,
        "config_source": cfg.source,
        "version": __version__,
        "settings": {k: cfg[k] for k in ("grid", "contour", "tolerances", "phi_method", "samples",
                                         "theta", "reference_time", "cutoff", "sample_window")},
    }


def _pool_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _plain(obj):
    """Convert numpy scalars/arrays to JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------- slopes


@dataclass(frozen=True)
class SlopeFit:
    slope: float | None
    intercept: float | None
    exact: bool
    n_points: int

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "exact": self.exact, "n_points": self.n_points}


def fit_slope(x, y, floor: float = 1e-300) -> SlopeFit:
    """Least-squares slope of ``log y`` against ``log x``.

    A series that is identically zero is flagged ``exact`` and has no slope;
    isolated zeros are dropped.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y) & (y > floor) & (x > 0)
    if not ok.any():
        return SlopeFit(None, None, bool(np.all(np.nan_to_num(y) == 0)), 0)
    if ok.sum() < 2:
        return SlopeFit(None, None, False, int(ok.sum()))
    slope, icpt = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
    return SlopeFit(float(slope), float(icpt), False, int(ok.sum()))


# --------------------------------------------------------------------------- rates


@dataclass
class RateReport:
    eps_grid: list[float]
    theta: float
    eta_vals: list
    xi_vals: list
    gamma_vals: list
    ell_vals: list
    rho_vals: list
    process_err: list
    solution_err: list
    fitted_slopes: dict = field(default_factory=dict)
    fitted_K: float | None = None
    window: list[float] = field(default_factory=list)
    reference_time: float = 1.0
    tau_set: list[float] = field(default_factory=list)
    cutoff_radius: float | None = None
    extra: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    failure: dict | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.assert_envelopes()

    def assert_envelopes(self) -> None:
        """``ell = max(eta^theta, xi^theta)`` and ``rho = max(ell, gamma)`` entrywise."""
        for e, x, g, l, r in zip(self.eta_vals, self.xi_vals, self.gamma_vals, self.ell_vals, self.rho_vals):
            if None in (e, x, l):
                continue
            assert l == max(e**self.theta, x**self.theta), "ell envelope mismatch"
            if g is not None and r is not None:
                assert r == max(l, g), "rho envelope mismatch"

    @property
    def ok(self) -> bool:
        return self.failure is None and all(c.get("passed") for c in self.checks.values())

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["schema"] = REPORT_SCHEMA
        d["ok"] = self.ok
        return _plain(d)

    def rates_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["eps", "eta", "xi", "gamma", "ell", "rho", "process_err", "solution_err"]
        extra_cols = sorted(k for k, v in self.extra.items() if isinstance(v, list) and len(v) == len(self.eps_grid))
        w.writerow(cols + extra_cols)
        series = [self.eps_grid, self.eta_vals, self.xi_vals, self.gamma_vals, self.ell_vals, self.rho_vals,
                  self.process_err, self.solution_err] + [self.extra[k] for k in extra_cols]
        for row in zip(*series):
            w.writerow(["" if v is None else repr(float(v)) for v in row])
        return buf.getvalue()


def _envelopes(eta_v, xi_v, gam_v, theta):
    ell = [None if None in (e, x) else max(e**theta, x**theta) for e, x in zip(eta_v, xi_v)]
    rho = [None if None in (l, g) else max(l, g) for l, g in zip(ell, gam_v)]
    return ell, rho


def _rate_checks(eps, series: dict, fits: dict, theta: float, problem: str) -> dict:
    checks = {}

    def slope(name):
        f = fits[name]
        return None if f["exact"] else f["slope"]

    def exact(name):
        return fits[name]["exact"]

    # process: slope(err) >= 0.9 * theta * slope(ell); all-exact counts as passed
    if exact("process_err") and exact("ell"):
        checks["process_rate"] = {"passed": True, "exact": True}
    else:
        s_err, s_ell = slope("process_err"), slope("ell")
        if s_err is None or s_ell is None:
            checks["process_rate"] = {"passed": False, "reason": "missing slope"}
        else:
            need = SLOPE_FACTOR * theta * s_ell
            checks["process_rate"] = {"passed": s_err >= need, "slope": s_err, "threshold": need,
                                      "strict_threshold": SLOPE_FACTOR * s_ell,
                                      "passed_strict": s_err >= SLOPE_FACTOR * s_ell}
    drivers = [theta * slope(n) for n in ("eta", "xi") if slope(n) is not None]
    if slope("gamma") is not None:
        drivers.append(slope("gamma"))
    if exact("solution_err") and not drivers:
        checks["solution_rate"] = {"passed": True, "exact": True}
    else:
        s_sol = slope("solution_err")
        if s_sol is None or not drivers:
            checks["solution_rate"] = {"passed": False, "reason": "missing slope"}
        else:
            need = SLOPE_FACTOR * min(drivers)
            checks["solution_rate"] = {"passed": s_sol >= need, "slope": s_sol, "threshold": need}
    if problem == "wave" and "lambda_gap" in fits:
        s = fits["lambda_gap"]["slope"]
        checks["wave_rate"] = {"passed": s is not None and abs(s - 1.0) <= WAVE_RATE_TOL, "slope": s,
                               "target": 1.0, "tolerance": WAVE_RATE_TOL}
    return checks


def run_rate_experiment(config, threads: int = 1, seed: int | None = None) -> tuple[RateReport, dict]:
    """Measure eta, xi, gamma and the process/solution errors over the parameter grid.

    Returns the report and a dict of trajectories keyed by parameter value
    (``0.0`` is the limit problem) for CSV output.
    """
    cfg = as_config(config)
    if seed is not None:
        cfg = ExperimentConfig({**cfg.data, "initial_state": {**cfg["initial_state"], "seed": int(seed)}},
                               cfg.source)
    eps_grid = cfg.param_list
    theta = cfg["theta"]
    grid = make_grid(cfg)
    ref = grid.index_of(grid.tau + cfg["reference_time"])
    t_s, tau_s = sample_times(cfg)
    builder = bundle_builder(cfg)
    n = len(eps_grid)
    none = [None] * n
    report_kw = dict(eps_grid=list(eps_grid), theta=theta, window=[float(t_s[0]), float(t_s[-1])],
                     reference_time=cfg["reference_time"], tau_set=[grid.tau], provenance=provenance(cfg))
    trajectories: dict = {}
    stage = "build"
    try:
        b0 = builder(0.0, None)
        stage = "process"
        p0 = build_proc(cfg, b0, measure_tolerance=True)
        axioms0 = check_process_axioms(p0)
        stage = "solution"
        u0s = initial_states(cfg, b0)
        radius = cfg["cutoff"]["radius"]
        if radius is None:
            e_max = max(float(_solve(cfg, p0, b0.F, u).y_norms.max()) for u in u0s)
            radius = cfg["cutoff"]["factor"] * max(e_max, 1e-12)
        stage = "build"
        b0 = builder(0.0, radius)
        stage = "solution"
        tr0 = [_solve(cfg, p0, b0.F, u) for u in u0s]
        trajectories[0.0] = tr0[0]
    except EvolProcError as exc:
        log.error("stage %s failed for the limit problem: %s", stage, exc)
        rep = RateReport(eta_vals=none, xi_vals=none, gamma_vals=none, ell_vals=none, rho_vals=none,
                         process_err=none, solution_err=none,
                         failure={"stage": stage, "eps": 0.0, "message": str(exc)}, **report_kw)
        return rep, trajectories
    u_samples = ball_samples(b0.space, radius, cfg["samples"]["u"], cfg["initial_state"]["seed"])

    def one(eps):
        out = {"eps": eps}
        st = "build"
        try:
            b = builder(eps, radius)
            st = "hypotheses"
            out["eta"] = eta(b.fam, b0.fam, t_s)
            out["xi"] = xi(b.fam, b0.fam, t_s, tau_s)
            out["gamma"] = gamma(b.F, b0.F, t_s, u_samples)
            if b.kind == "wave":
                out["lambda_gap"] = fractional_gap(problem_config(cfg), 1.0 - eps, t_s)
            if b.kind == "reaction-diffusion":
                out["coef_gap"] = coefficient_gap(problem_config(cfg), eps, t_s)
            st = "process"
            p = build_proc(cfg, b, grid)
            out["process_err"] = float(process_distance(p, p0, "X")[ref])
            out["process_err_xy"] = float(process_distance(p, p0, "XY")[ref])
            st = "solution"
            trs = [_solve(cfg, p, b.F, u) for u in u0s]
            out["solution_err"] = float(solution_distance(trs[0], tr0[0], b.space)[ref])
            out["sup_distance"] = float(max(solution_distance(a, c, b.space).max() for a, c in zip(trs, tr0)))
            out["traj"] = trs[0]
        except EvolProcError as exc:
            log.error("stage %s failed at eps=%g: %s", st, eps, exc)
            out["failure"] = {"stage": st, "eps": eps, "message": str(exc)}
        return out

    results = _pool_map(one, list(eps_grid), threads)
    col = lambda k: [r.get(k) for r in results]  # noqa: E731
    eta_v, xi_v, gam_v = col("eta"), col("xi"), col("gamma")
    ell, rho = _envelopes(eta_v, xi_v, gam_v, theta)
    extra = {"process_err_xy": col("process_err_xy"), "sup_distance": col("sup_distance")}
    for k in ("lambda_gap", "coef_gap"):
        if any(v is not None for v in col(k)):
            extra[k] = col(k)
    extra["limit_axioms"] = axioms0.as_dict()
    extra["initial_state_y_norms"] = [float(np.linalg.norm(b0.space.factor("Y") @ u)) for u in u0s]
    failures = [r["failure"] for r in results if "failure" in r]
    for r in results:
        if "traj" in r:
            trajectories[r["eps"]] = r["traj"]
    series = {"eta": eta_v, "xi": xi_v, "gamma": gam_v, "ell": ell, "rho": rho,
              "process_err": col("process_err"), "solution_err": col("solution_err"),
              "sup_distance": extra["sup_distance"]}
    if "lambda_gap" in extra:
        series["lambda_gap"] = extra["lambda_gap"]
    fits = {k: fit_slope(eps_grid, [np.nan if v is None else v for v in vals]).as_dict()
            for k, vals in series.items()}
    checks = {} if failures else _rate_checks(eps_grid, series, fits, theta, cfg.problem)
    rep = RateReport(eta_vals=eta_v, xi_vals=xi_v, gamma_vals=gam_v, ell_vals=ell, rho_vals=rho,
                     process_err=col("process_err"), solution_err=col("solution_err"), fitted_slopes=fits,
                     fitted_K=axioms0.fitted_K, cutoff_radius=float(radius), extra=extra, checks=checks,
                     failure=failures[0] if failures else None, **report_kw)
    return rep, trajectories


def _eps_tag(eps: float) -> str:
    return f"{eps:g}"


def write_rate_outputs(rep: RateReport, trajectories: dict, out: Path) -> list[Path]:
    out = Path(out)
    paths = [atomic_write_json(out / "report.json", rep.as_dict()),
             atomic_write_text(out / "rates.csv", rep.rates_csv())]
    for eps, tr in sorted(trajectories.items()):
        p = out / f"trajectory_eps_{_eps_tag(eps)}.csv"
        tr.to_csv(p)
        paths.append(p)
    return paths


# --------------------------------------------------------------------------- other subcommands


def check_hypotheses(config, threads: int = 1) -> dict:
    """Sector, Hölder, distance and Lipschitz measurements for every parameter value."""
    cfg = as_config(config)
    t_s, tau_s = sample_times(cfg)
    builder = bundle_builder(cfg)
    radius = cfg["cutoff"]["radius"]
    b0 = builder(0.0, radius)
    per_ray = cfg["samples"]["lambda_per_ray"]
    phi = cfg["contour"]["phi"]
    u_samples = ball_samples(b0.space, radius or cfg["initial_state"]["radius"], cfg["samples"]["u"],
                             cfg["initial_state"]["seed"])

    def one(eps):
        b = b0 if eps == 0 else builder(eps, radius)
        rep = measure_family(b.fam, t_s, phi, per_ray).as_dict()
        rep["eta"] = eta(b.fam, b0.fam, t_s)
        rep["xi"] = xi(b.fam, b0.fam, t_s, tau_s)
        rep["gamma"] = gamma(b.F, b0.F, t_s, u_samples)
        rep["nonlinearity"] = {
            "lip_const": b.F.lip_const, "raw_lip_const": b.F.raw_lip_const, "bound_const": b.F.bound_const,
            "cutoff_radius": b.F.cutoff_radius,
            "sampled_lip": sampled_lipschitz(b.F, t_s[:3], u_samples) if not b.F.is_zero else 0.0,
        }
        if b.F.scalar is not None and not b.F.is_zero:
            d = dissipativity(b.F.scalar, t_s[:3])
            rep["dissipativity"] = {"omega": d.omega, "N": d.N, "holds": d.holds}
        if b.kind == "reaction-diffusion":
            rep["coef_gap"] = coefficient_gap(problem_config(cfg), eps, t_s)
            rep["probe"] = b.info["probe"]
        if b.kind == "wave":
            rep["lambda_gap"] = fractional_gap(problem_config(cfg), 1.0 - eps, t_s)
        return rep

    params = [0.0] + list(cfg.param_list)
    reports = _pool_map(one, params, threads)
    return _plain({"schema": REPORT_SCHEMA, "kind": "hypotheses", "window": [float(t_s[0]), float(t_s[-1])],
                   "families": reports, "provenance": provenance(cfg)})


def run_propagate(config, eps: float = 0.0, threads: int = 1) -> tuple[EvolutionProcess, dict]:
    """Build one process with its measured tolerance and run the axiom checks."""
    cfg = as_config(config)
    b = bundle_builder(cfg)(eps, None)
    proc = build_proc(cfg, b, measure_tolerance=True, threads=threads)
    axioms = check_process_axioms(proc).as_dict()
    axioms["phi_delta"] = proc.delta
    return proc, _plain({"schema": REPORT_SCHEMA, "kind": "process_axioms", "epsilon": eps,
                         "grid": proc.grid.as_dict(), "axioms": axioms, "provenance": provenance(cfg)})


def run_solve(config, threads: int = 1, seed: int | None = None) -> tuple[dict, dict]:
    """Trajectories for the limit problem and every parameter value (with the cut-off)."""
    rep, trajectories = run_rate_experiment(config, threads, seed)
    summary = {"schema": REPORT_SCHEMA, "kind": "solution", "cutoff_radius": rep.cutoff_radius,
               "eps_grid": rep.eps_grid, "solution_err": rep.solution_err,
               "sup_distance": rep.extra.get("sup_distance"), "failure": rep.failure,
               "trajectories": {(_eps_tag(e)): {"iterations": tr.iterations, "max_y_norm": float(tr.y_norms.max())}
                                for e, tr in sorted(trajectories.items())},
               "provenance": rep.provenance}
    return _plain(summary), trajectories


def run_absorbing_experiment(config, threads: int = 1):
    """Absorbing-ball evidence over a long horizon, covered by unit windows."""
    cfg = as_config(config)
    ab = cfg["absorbing"]
    if ab is None:
        raise EvolProcError("config has no 'absorbing' block")
    pc = problem_config(cfg)
    pc = ReactionDiffusionConfig(n_cells=ab["n_cells"], a=pc.a, a_grad_x=pc.a_grad_x, f=ab["f"],
                                 eps_list=ab["eps_list"], growth_rho=pc.growth_rho, delta=pc.delta,
                                 window=(0.0, ab["window"]))
    n_win = int(round(ab["horizon"] / ab["window"]))
    tau0 = cfg["grid"]["tau"]
    grids = [TimeGrid(tau0 + k * ab["window"], tau0 + (k + 1) * ab["window"], ab["n_steps"]) for k in range(n_win)]

    def family(eps):
        b = build_reaction_diffusion(pc, eps)
        return b, [build_proc(cfg, b, g) for g in grids]

    built = _pool_map(family, list(ab["eps_list"]), threads)
    states = cosine_states(built[0][0].space, ab["n_initial"], ab["radius"], ab["seed"])
    tol = cfg["tolerances"]
    rep = absorbing_check([p for _, p in built], [b.F for b, _ in built], list(states), ab["horizon"],
                          t_samples=np.linspace(0, ab["window"], 3), tol=tol["picard_tol"],
                          max_iter=tol["picard_max_iter"], blowup=tol["blowup"])
    d = rep.as_dict()
    d.update({"schema": REPORT_SCHEMA, "kind": "absorbing", "eps_list": list(ab["eps_list"]),
              "initial_y_norms": [float(np.linalg.norm(built[0][0].space.factor("Y") @ u)) for u in states],
              "provenance": provenance(cfg)})
    return rep, _plain(d)


def report_text(obj) -> str:
    return dumps_json(_plain(obj))


__all__ = [
    "RateReport",
    "SlopeFit",
    "check_hypotheses",
    "fit_slope",
    "run_absorbing_experiment",
    "run_propagate",
    "run_rate_experiment",
    "run_solve",
    "write_rate_outputs",
]
